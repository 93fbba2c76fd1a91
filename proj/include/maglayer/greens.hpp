#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <string>
#include <type_traits>

#include "dual.hpp"
#include "errors.hpp"
#include "model.hpp"
#include "specfun.hpp"

namespace maglayer {

struct SeriesControl {
    enum class Tail { direct, accelerated };

    double abs_tol = 1e-13;
    long n_max = 2000000;
    Tail tail_mode = Tail::accelerated;
    double planar_coincidence = 1e-9;  // absolute length; callers scale it by a1
    double pole_guard = 1e-10;         // in units of |B|
    SpecFunAccuracy special{};

    void validate() const {
        if (!(abs_tol > 0.0)) throw domain_error("abs_tol must be positive");
        if (n_max < 32) throw domain_error("n_max must be at least 32");
        special.validate();
    }
};

struct KernelPoint {
    Vec2 x;
    double x3 = 0.0;
};

// Phase-free part of a kernel together with the magnetic phase exp(-i B/2 x^x').
template <class T>
struct KernelValue {
    cplx phase{1.0, 0.0};
    T amp{};
};

namespace detail {

inline constexpr double inv4pi = 0.25 / std::numbers::pi;

template <class T>
T u_param(const T& z, double kn2, double absB) {
    return (absB - z + kn2) / (2.0 * absB);
}

// Throws if u sits on (or within the guard of) a Gamma/psi pole.
template <class T>
bool near_pole(const T& u, double guard) {
    double ur = re(u);
    if constexpr (std::is_same_v<T, std::complex<double>>)
        if (std::abs(u.imag()) > guard) return false;
    if (ur > 0.5) return false;
    return std::abs(ur - std::nearbyint(ur)) <= guard;
}

inline double level_at(double u, double kn2, double absB) {
    // inverse of u_param for the nearest pole
    return absB - 2.0 * absB * std::nearbyint(u) + kn2;
}

// Bernoulli polynomials B_1..B_5 at c.
template <class T>
std::array<T, 6> bernoulli_1_5(const T& c) {
    T c2 = c * c, c3 = c2 * c, c4 = c3 * c, c5 = c4 * c;
    return {T(0.0),
            c - 0.5,
            c2 - c + 1.0 / 6.0,
            c3 - 1.5 * c2 + 0.5 * c,
            c4 - 2.0 * c3 + c2 - 1.0 / 30.0,
            c5 - 2.5 * c4 + (5.0 / 3.0) * c3 - c / 6.0};
}

// sum_{n>=1} cos(2 pi n x)/n^{2m}, 0 <= x <= 1, m = 1..5
inline double cos_zeta(int m, double x) {
    double b;
    switch (m) {
    case 1: b = x * x - x + 1.0 / 6.0; break;
    case 2: b = x * x * (x * x - 2.0 * x + 1.0) - 1.0 / 30.0; break;
    case 3: b = std::pow(x, 6) - 3 * std::pow(x, 5) + 2.5 * std::pow(x, 4) - 0.5 * x * x + 1.0 / 42.0; break;
    case 4:
        b = std::pow(x, 8) - 4 * std::pow(x, 7) + (14.0 / 3.0) * std::pow(x, 6) - (7.0 / 3.0) * std::pow(x, 4) +
            (2.0 / 3.0) * x * x - 1.0 / 30.0;
        break;
    case 5:
        b = std::pow(x, 10) - 5 * std::pow(x, 9) + 7.5 * std::pow(x, 8) - 7 * std::pow(x, 6) + 5 * std::pow(x, 4) -
            1.5 * x * x + 5.0 / 66.0;
        break;
    default: throw domain_error("cos_zeta: order out of range");
    }
    double twopi = 2.0 * std::numbers::pi, fact = std::tgamma(2.0 * m + 1.0);
    double sign = (m % 2 == 1) ? 1.0 : -1.0;
    return sign * std::pow(twopi, 2 * m) * b / (2.0 * fact);
}

// C_E + psi(t) + (pi/2) cot(pi t), t in (0,1)
inline double wall_bracket(double t) {
    return euler_gamma + digamma(t) + 0.5 * std::numbers::pi / std::tan(std::numbers::pi * t);
}

// (1/2 pi d) sum_n [ln((pi n)^2/2|B|d^2) - psi(u_n)] sin(pi n t1) sin(pi n t2), t = x3/d.
template <class T>
T transverse_log_series(double t1, double t2, const T& z, const LayerGeometry& g, const SeriesControl& ctrl) {
    using std::log;
    const double absB = g.absB();
    const double alpha = std::numbers::pi * std::numbers::pi / (2.0 * absB * g.d * g.d);
    const T c = (absB - z) / (2.0 * absB);
    const double guard = 0.5 * ctrl.pole_guard;
    const double wtol = chi_zero_tol * 0.5 * g.d;

    long n_direct;
    if (ctrl.tail_mode == SeriesControl::Tail::accelerated) {
        double need = 16.0 * std::sqrt(std::max(mag(c), 1.0) / alpha);
        n_direct = std::max<long>(64, static_cast<long>(std::ceil(need)));
    } else {
        double e1 = std::abs(0.5 - mag(c)) + 1.0;
        n_direct = static_cast<long>(std::ceil(e1 / (alpha * ctrl.abs_tol)));
    }
    if (n_direct > ctrl.n_max) {
        if (ctrl.tail_mode == SeriesControl::Tail::accelerated)
            throw convergence_error("transverse series: n_max too small for this energy");
        n_direct = ctrl.n_max;
    }

    T sum = T(0.0);
    std::array<double, 6> partial{};  // sum_{n<=N} w_n / n^{2m}
    const double pi = std::numbers::pi;
    for (long n = 1; n <= n_direct; ++n) {
        double w = std::sin(pi * n * t1) * std::sin(pi * n * t2);
        double nn = double(n) * double(n);
        T u = c + alpha * nn;
        if (near_pole(u, guard)) {
            if (std::abs(w) <= wtol) continue;
            throw pole_error("energy on a modified Landau level", re(z));
        }
        sum = sum + (log(alpha * nn) - digamma(u)) * w;
        if (ctrl.tail_mode == SeriesControl::Tail::accelerated) {
            double inv = w;
            for (int m = 1; m <= 5; ++m) {
                inv /= nn;
                partial[m] += inv;
            }
        }
    }
    if (ctrl.tail_mode == SeriesControl::Tail::accelerated) {
        // ln A - psi(A + c) ~ sum_m (-1)^m B_m(c) / (m A^m), A = alpha n^2
        const double xs = 0.5 * (t1 + t2), xd = 0.5 * std::abs(t1 - t2);
        auto bern = bernoulli_1_5(c);
        double apow = 1.0;
        for (int m = 1; m <= 5; ++m) {
            apow /= alpha;
            double full = 0.5 * (cos_zeta(m, xd) - cos_zeta(m, xs));
            double tail = full - partial[m];
            double sgn = (m % 2) ? -1.0 : 1.0;
            sum = sum + bern[m] * (sgn * apow / m * tail);
        }
    }
    return sum / (2.0 * pi * g.d);
}

} // namespace detail

// Regularized diagonal kernel Q0(kappa3; z).
template <class T>
T q0_amp(double kappa3, const T& z, const LayerGeometry& g, const SeriesControl& ctrl = {}) {
    if (!(kappa3 > 0.0 && kappa3 < g.d)) throw domain_error("q0: height must lie in (0,d)");
    const double t = kappa3 / g.d;
    T s = detail::transverse_log_series(t, t, z, g, ctrl);
    return s + detail::wall_bracket(t) / (4.0 * std::numbers::pi * g.d);
}

// Two points on the same vertical line, x3 != x3'.
template <class T>
T q_vertical_amp(double x3, double x3p, const T& z, const LayerGeometry& g, const SeriesControl& ctrl = {}) {
    const double t1 = x3 / g.d, t2 = x3p / g.d;
    T s = detail::transverse_log_series(t1, t2, z, g, ctrl);
    const double k = 1.0 / (4.0 * std::numbers::pi * g.d);
    return s + k * (detail::wall_bracket(0.5 * (t1 + t2)) - detail::wall_bracket(0.5 * std::abs(t1 - t2)));
}

// (1/4 pi) e^{-|B| r^2/4} Gamma(u) U(u,1;|B| r^2/2) with u = (|B|-z)/2|B|
template <class T>
T g2d_amp(double r2, const T& z, const LayerGeometry& g, const SpecFunAccuracy& acc = {}) {
    if (!(r2 > 0.0)) throw domain_error("g2d: coincident points");
    const double absB = g.absB();
    T u = detail::u_param(z, 0.0, absB);
    if (detail::near_pole(u, 0.5e-10)) throw pole_error("energy on a planar Landau level", re(z));
    return detail::inv4pi * gaussian_gamma_tricomi(u, 0.5 * absB * r2, acc);
}

inline cplx magnetic_phase(const Vec2& x, const Vec2& xp, double B) {
    return std::polar(1.0, -0.5 * B * wedge(x, xp));
}

// Transverse series sum_n G2D(z - (pi n/d)^2) chi_n chi_n', phase stripped.
template <class T>
T g0_amp(double r2, double x3, double x3p, const T& z, const LayerGeometry& g, const SeriesControl& ctrl = {}) {
    if (!(r2 > 0.0)) throw domain_error("g0_layer: planar-coincident points need the vertical formula");
    const double absB = g.absB(), pi = std::numbers::pi;
    const double s = 0.5 * absB * r2, r = std::sqrt(r2);
    const double guard = 0.5 * ctrl.pole_guard;
    const double rho_lim = std::exp(-pi * r / g.d);
    const double norm = 2.0 / g.d * detail::inv4pi;
    T sum = T(0.0);
    double prev = -1.0;
    for (long n = 1; n <= ctrl.n_max; ++n) {
        const double kn2 = (pi * n / g.d) * (pi * n / g.d);
        T u = detail::u_param(z, kn2, absB);
        const double w = std::sin(pi * n * x3 / g.d) * std::sin(pi * n * x3p / g.d);
        double size;
        if (detail::near_pole(u, guard)) {
            if (std::abs(w) * 2.0 / g.d <= chi_zero_tol) continue;
            throw pole_error("energy on a modified Landau level", detail::level_at(re(u), kn2, absB));
        }
        T k = gaussian_gamma_tricomi(u, s, ctrl.special);
        sum = sum + k * (w * norm);
        size = mag(k) * norm;
        if (re(u) > 1.0 && prev > 0.0) {
            double rho = std::max(size / prev, rho_lim);
            if (rho < 1.0 && 2.0 * size * rho / (1.0 - rho) < ctrl.abs_tol) return sum;
        }
        prev = size;
    }
    throw convergence_error("g0_layer: transverse series did not converge within n_max");
}

template <class T>
KernelValue<T> q_kernel(const KernelPoint& a, const KernelPoint& b, const T& z, const LayerGeometry& g,
                        const SeriesControl& ctrl = {}) {
    const Vec2 dx = a.x - b.x;
    const double r2 = dx.x * dx.x + dx.y * dx.y;
    if (std::sqrt(r2) < ctrl.planar_coincidence) {
        if (std::abs(a.x3 - b.x3) <= 1e-14 * g.d) return {cplx(1.0, 0.0), q0_amp(a.x3, z, g, ctrl)};
        return {cplx(1.0, 0.0), q_vertical_amp(a.x3, b.x3, z, g, ctrl)};
    }
    return {magnetic_phase(a.x, b.x, g.B), g0_amp(r2, a.x3, b.x3, z, g, ctrl)};
}

namespace detail {

template <class F>
cplx dispatch_energy(const cplx& z, F&& f) {
    if (z.imag() == 0.0) return cplx(f(z.real()));
    return f(z);
}

} // namespace detail

inline cplx g2d_free(const Vec2& x, const Vec2& xp, const cplx& z, const LayerGeometry& g,
                     const SpecFunAccuracy& acc = {}) {
    const Vec2 dx = x - xp;
    const double r2 = dx.x * dx.x + dx.y * dx.y;
    if (r2 == 0.0) throw domain_error("g2d_free: coincident points (logarithmic singularity)");
    cplx amp = detail::dispatch_energy(z, [&](const auto& zz) { return cplx(g2d_amp(r2, zz, g, acc)); });
    return magnetic_phase(x, xp, g.B) * amp;
}

inline cplx g0_layer(const KernelPoint& a, const KernelPoint& b, const cplx& z, const LayerGeometry& g,
                     const SeriesControl& ctrl = {}) {
    const Vec2 dx = a.x - b.x;
    const double r2 = dx.x * dx.x + dx.y * dx.y;
    cplx amp = detail::dispatch_energy(z, [&](const auto& zz) { return cplx(g0_amp(r2, a.x3, b.x3, zz, g, ctrl)); });
    return magnetic_phase(a.x, b.x, g.B) * amp;
}

inline cplx q0_regularized(double kappa3, const cplx& z, const LayerGeometry& g, const SeriesControl& ctrl = {}) {
    return detail::dispatch_energy(z, [&](const auto& zz) { return cplx(q0_amp(kappa3, zz, g, ctrl)); });
}

inline cplx q_element(const KernelPoint& a, const KernelPoint& b, const cplx& z, const LayerGeometry& g,
                      const SeriesControl& ctrl = {}) {
    return detail::dispatch_energy(z, [&](const auto& zz) {
        auto kv = q_kernel(a, b, zz, g, ctrl);
        return kv.phase * cplx(kv.amp);
    });
}

} // namespace maglayer
