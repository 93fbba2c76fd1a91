#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <type_traits>

#include "dual.hpp"
#include "errors.hpp"

namespace maglayer {

inline constexpr double euler_gamma = 0.57721566490153286060651209;

struct SpecFunAccuracy {
    double rel_tol = 1e-13;
    int max_terms = 4000;
    double crossover_x = 30.0;

    void validate() const {
        if (!(rel_tol > 0.0 && rel_tol <= 1e-6))
            throw domain_error("rel_tol must lie in (0, 1e-6]");
        if (max_terms < 64) throw domain_error("max_terms must be at least 64");
        if (!(crossover_x > 0.0)) throw domain_error("crossover_x must be positive");
    }
};

struct SignedLog {
    double value;
    int sign;
};

namespace detail {

inline bool is_nonpositive_integer(double x) { return x <= 0.0 && x == std::nearbyint(x); }

template <class T>
bool at_pole(const T& x) {
    if constexpr (std::is_same_v<T, std::complex<double>>)
        return x.imag() == 0.0 && is_nonpositive_integer(x.real());
    else
        return is_nonpositive_integer(re(x));
}

} // namespace detail

inline SignedLog log_gamma(double x) {
    if (detail::is_nonpositive_integer(x)) throw pole_error("log_gamma: pole", x);
    int sign = 1;
    if (x < 0.0) {
        // Gamma alternates sign between consecutive negative integers.
        long k = static_cast<long>(std::ceil(-x));
        sign = (k % 2 == 0) ? 1 : -1;
    }
    return {std::lgamma(x), sign};
}

template <class T>
T digamma(T x) {
    using std::cos;
    using std::log;
    using std::sin;
    if (detail::at_pole(x)) throw pole_error("digamma: pole", re(x));
    T acc = T(0.0);
    if (re(x) < 0.0) {
        // Reflection on the reduced argument keeps cot accurate next to the poles.
        T xr = x - std::nearbyint(re(x));
        T pxr = std::numbers::pi * xr;
        acc = acc - std::numbers::pi * cos(pxr) / sin(pxr);
        x = 1.0 - x;
    }
    while (re(x) < 10.0) {
        acc = acc - 1.0 / x;
        x = x + 1.0;
    }
    static constexpr double c[] = {1.0 / 12,   -1.0 / 120, 1.0 / 252,        -1.0 / 240,
                                   1.0 / 132,  -691.0 / 32760, 1.0 / 12, -3617.0 / 8160};
    T inv2 = 1.0 / (x * x);
    T series = T(0.0);
    for (int k = 7; k >= 0; --k) series = (series + c[k]) * inv2;
    return acc + log(x) - 0.5 / x - series;
}

// Physicists' Hermite polynomial by the three-term recurrence.
inline double hermite_h(int l, double x) {
    if (l < 0) throw domain_error("hermite_h: negative order");
    double h0 = 1.0;
    if (l == 0) return h0;
    double h1 = 2.0 * x;
    for (int k = 1; k < l; ++k) {
        double h2 = 2.0 * x * h1 - 2.0 * k * h0;
        h0 = h1;
        h1 = h2;
    }
    return h1;
}

// Orthonormal Hermite function (2^l l! sqrt(pi))^{-1/2} e^{-y^2/2} H_l(y); no overflow for large l.
inline double hermite_function(int l, double y) {
    if (l < 0) throw domain_error("hermite_function: negative order");
    double f0 = std::exp(-0.5 * y * y) / std::sqrt(std::sqrt(std::numbers::pi));
    if (l == 0) return f0;
    double f1 = std::numbers::sqrt2 * y * f0;
    for (int k = 1; k < l; ++k) {
        double f2 = std::sqrt(2.0 / (k + 1)) * y * f1 - std::sqrt(double(k) / (k + 1)) * f0;
        f0 = f1;
        f1 = f2;
    }
    return f1;
}

inline double bessel_k0(double x) {
    if (!(x > 0.0)) throw domain_error("bessel_k0: argument must be positive");
    if (x <= 2.0) {
        double q = 0.25 * x * x;
        double term = 1.0, i0 = 1.0, tail = 0.0, harmonic = 0.0;
        for (int k = 1; k < 60; ++k) {
            term *= q / (double(k) * k);
            harmonic += 1.0 / k;
            i0 += term;
            tail += term * harmonic;
            if (term * harmonic < 1e-17 * tail) break;
        }
        return -(std::log(0.5 * x) + euler_gamma) * i0 + tail;
    }
    // Steed's continued fraction (Temme's CF2) at order zero.
    const double a1 = 0.25;
    double b = 2.0 * (1.0 + x), d = 1.0 / b, h = d, delh = d;
    double q1 = 0.0, q2 = 1.0, q = a1, c = a1, a = -a1;
    double s = 1.0 + q * delh;
    for (int i = 2; i < 10000; ++i) {
        a -= 2 * (i - 1);
        c = -a * c / i;
        double qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh = (b * d - 1.0) * delh;
        h += delh;
        double dels = q * delh;
        s += dels;
        if (std::abs(dels / s) < 1e-17) break;
    }
    return std::sqrt(std::numbers::pi / (2.0 * x)) * std::exp(-x) / s;
}

namespace detail {

// value = m * exp(e); keeps huge/tiny magnitudes representable.
template <class T>
struct Scaled {
    T m;
    double e;
    T get() const {
        using std::exp;
        return m * std::exp(e);
    }
};

template <class T>
T log_gamma_real(const T& a) {
    if constexpr (std::is_same_v<T, Dual>) {
        return Dual(std::lgamma(a.v), digamma(a.v) * a.d);
    } else {
        return std::lgamma(a);
    }
}

// -[M(a,1,x) ln x + sum_k (a)_k/(k!)^2 (psi(a+k) - 2 psi(k+1)) x^k]
template <class T>
bool w_log_series(const T& a, double x, const SpecFunAccuracy& acc, T& out) {
    T t = T(1.0);
    T psa = digamma(a);
    double ps1 = -euler_gamma;
    T msum = T(0.0), ssum = T(0.0);
    const double lx = std::log(x);
    const double amag = mag(a);
    for (int k = 0; k < acc.max_terms; ++k) {
        msum = msum + t;
        ssum = ssum + t * (psa - 2.0 * ps1);
        T ak = a + double(k);
        t = t * ak * (x / ((k + 1.0) * (k + 1.0)));
        psa = psa + 1.0 / ak;
        ps1 += 1.0 / (k + 1.0);
        if (k > amag + 2.0) {
            double bound = mag(t) * (std::abs(lx) + mag(psa) + 2.0 * std::abs(ps1) + 1.0);
            if (bound <= acc.rel_tol * 1e-2 * mag(msum * lx + ssum)) {
                out = -(msum * lx + ssum);
                return true;
            }
        }
    }
    return false;
}

// Gamma(a) x^{-a} sum_k ((a)_k)^2/k! (-1/x)^k, truncated at the smallest term.
template <class T>
bool w_asymptotic(const T& a, double x, const SpecFunAccuracy& acc, Scaled<T>& out) {
    if constexpr (std::is_same_v<T, std::complex<double>>) {
        return false;
    } else {
        using std::exp;
        T term = T(1.0), sum = T(1.0);
        double prev = 1.0;
        bool ok = false;
        for (int k = 0; k < acc.max_terms; ++k) {
            T ak = a + double(k);
            term = term * ak * ak / (-(k + 1.0) * x);
            double tm = mag(term);
            if (tm > prev) break;
            sum = sum + term;
            prev = tm;
            if (tm <= acc.rel_tol * 1e-2 * mag(sum)) {
                ok = true;
                break;
            }
        }
        if (!ok) return false;
        double ar = re(a);
        double sign = 1.0;
        if (ar < 0.0) sign = double(log_gamma(ar).sign);
        T lg = log_gamma_real(a) - a * std::log(x);
        double e = re(lg);
        out = {sign * sum * exp(lg - e), e};
        return true;
    }
}

// Integral representation int_0^inf e^{-x t} (t/(1+t))^a dt/t in y = ln t
// by the trapezoid rule around the peak of the concave exponent; Re a > 0.
template <class T>
Scaled<T> w_quadrature(const T& a, double x) {
    using std::exp;
    const double ar = re(a);
    const double q = ar / x;
    const double tpk = 2.0 * q / (1.0 + std::sqrt(1.0 + 4.0 * q));
    const double ypk = std::log(tpk);
    const double curv = tpk * (x + ar / ((1.0 + tpk) * (1.0 + tpk)));
    const double h = std::min(0.15, 0.5 / std::sqrt(curv));
    auto expo = [&](double y) -> T {
        double ey = std::exp(y);
        return -x * ey - a * std::log1p(1.0 / ey);
    };
    const T fpk = expo(ypk);
    const double ref = re(fpk);
    T sum = exp(fpk - ref);
    for (int dir = -1; dir <= 1; dir += 2) {
        for (int k = 1; k < 100000; ++k) {
            T f = expo(ypk + dir * k * h);
            double g = re(f) - ref;
            if (g < -46.0) break;
            sum = sum + exp(f - ref);
        }
    }
    return {sum * h, ref};
}

template <class T>
Scaled<T> w_direct(const T& a, double x, const SpecFunAccuracy& acc) {
    if (x >= acc.crossover_x) {
        Scaled<T> s{};
        if (w_asymptotic(a, x, acc, s)) return s;
    }
    if (x <= 2.0 && mag(a) * x <= 2.25) {
        T v{};
        if (w_log_series(a, x, acc, v)) return {v, 0.0};
    }
    if (re(a) >= 3.0) return w_quadrature(a, x);
    throw convergence_error("gamma_tricomi: no regime reached the target");
}

template <class T>
Scaled<T> gamma_tricomi_scaled(const T& a, double x, const SpecFunAccuracy& acc) {
    if (!(x > 0.0)) throw domain_error("gamma_tricomi: x must be positive");
    if (at_pole(a)) throw pole_error("gamma_tricomi: Gamma pole", re(a));
    const double ar = re(a);
    if (ar >= 3.0 || (x <= 2.0 && mag(a) * x <= 2.25)) return w_direct(a, x, acc);
    if (x >= acc.crossover_x) {
        Scaled<T> s{};
        if (w_asymptotic(a, x, acc, s)) return s;
    }
    // Downward recurrence in a, stable for the recessive solution:
    // (a-1) W(a-1) = (2a+x-1) W(a) - a W(a+1).
    const int steps = static_cast<int>(std::ceil(3.0 - ar));
    T top = a + double(steps);
    Scaled<T> w1 = w_direct(top, x, acc);
    Scaled<T> w2 = w_direct(top + 1.0, x, acc);
    double e = std::max(w1.e, w2.e);
    T hi = w1.m * std::exp(w1.e - e);
    T hi2 = w2.m * std::exp(w2.e - e);
    T cur = top;
    for (int k = 0; k < steps; ++k) {
        T lower = ((2.0 * cur + x - 1.0) * hi - cur * hi2) / (cur - 1.0);
        hi2 = hi;
        hi = lower;
        cur = cur - 1.0;
    }
    return {hi, e};
}

} // namespace detail

// Gamma(a) U(a,1;x), the combination that enters the magnetic kernel.
template <class T>
T gamma_tricomi(const T& a, double x, const SpecFunAccuracy& acc = {}) {
    return detail::gamma_tricomi_scaled(a, x, acc).get();
}

// e^{-x/2} Gamma(a) U(a,1;x), evaluated without intermediate overflow.
template <class T>
T gaussian_gamma_tricomi(const T& a, double x, const SpecFunAccuracy& acc = {}) {
    auto s = detail::gamma_tricomi_scaled(a, x, acc);
    s.e -= 0.5 * x;
    return s.get();
}

inline double tricomi_u_1(double a, double x, const SpecFunAccuracy& acc = {}) {
    if (!(x > 0.0)) throw domain_error("tricomi_u_1: x must be positive");
    if (detail::is_nonpositive_integer(a)) {
        // U(-m,1,x) = (-1)^m m! L_m(x)
        int m = static_cast<int>(-a);
        double l0 = 1.0, l1 = 1.0 - x;
        if (m == 0) return 1.0;
        for (int k = 1; k < m; ++k) {
            double l2 = ((2.0 * k + 1.0 - x) * l1 - k * l0) / (k + 1.0);
            l0 = l1;
            l1 = l2;
        }
        double fact = std::exp(std::lgamma(m + 1.0));
        return (m % 2 ? -1.0 : 1.0) * fact * l1;
    }
    auto s = detail::gamma_tricomi_scaled(a, x, acc);
    SignedLog lg = log_gamma(a);
    return s.m * lg.sign * std::exp(s.e - lg.value);
}

} // namespace maglayer
