#pragma once

#include <cmath>
#include <complex>

namespace maglayer {

// Forward-mode derivative carrier. Only what the kernels need.
struct Dual {
    double v = 0.0;
    double d = 0.0;

    constexpr Dual() = default;
    constexpr Dual(double value) : v(value) {}
    constexpr Dual(double value, double deriv) : v(value), d(deriv) {}

    Dual& operator+=(const Dual& o) { v += o.v; d += o.d; return *this; }
    Dual& operator-=(const Dual& o) { v -= o.v; d -= o.d; return *this; }
    Dual& operator*=(const Dual& o) { d = d * o.v + v * o.d; v *= o.v; return *this; }
    Dual& operator/=(const Dual& o) {
        d = (d * o.v - v * o.d) / (o.v * o.v);
        v /= o.v;
        return *this;
    }
};

inline Dual operator-(const Dual& a) { return {-a.v, -a.d}; }
inline Dual operator+(Dual a, const Dual& b) { return a += b; }
inline Dual operator-(Dual a, const Dual& b) { return a -= b; }
inline Dual operator*(Dual a, const Dual& b) { return a *= b; }
inline Dual operator/(Dual a, const Dual& b) { return a /= b; }
inline Dual operator+(Dual a, double b) { a.v += b; return a; }
inline Dual operator+(double b, Dual a) { a.v += b; return a; }
inline Dual operator-(Dual a, double b) { a.v -= b; return a; }
inline Dual operator-(double b, const Dual& a) { return {b - a.v, -a.d}; }
inline Dual operator*(Dual a, double b) { return {a.v * b, a.d * b}; }
inline Dual operator*(double b, Dual a) { return {a.v * b, a.d * b}; }
inline Dual operator/(Dual a, double b) { return {a.v / b, a.d / b}; }
inline Dual operator/(double b, const Dual& a) { return {b / a.v, -b * a.d / (a.v * a.v)}; }

inline Dual exp(const Dual& a) { double e = std::exp(a.v); return {e, e * a.d}; }
inline Dual log(const Dual& a) { return {std::log(a.v), a.d / a.v}; }
inline Dual log1p(const Dual& a) { return {std::log1p(a.v), a.d / (1.0 + a.v)}; }
inline Dual sqrt(const Dual& a) { double s = std::sqrt(a.v); return {s, 0.5 * a.d / s}; }
inline Dual sin(const Dual& a) { return {std::sin(a.v), std::cos(a.v) * a.d}; }
inline Dual cos(const Dual& a) { return {std::cos(a.v), -std::sin(a.v) * a.d}; }
inline Dual abs(const Dual& a) { return a.v < 0 ? -a : a; }

// Uniform accessors so templated numerics can branch on the real part.
inline double re(double x) { return x; }
inline double re(const Dual& x) { return x.v; }
inline double re(const std::complex<double>& x) { return x.real(); }

inline double mag(double x) { return std::abs(x); }
inline double mag(const Dual& x) { return std::abs(x.v); }
inline double mag(const std::complex<double>& x) { return std::abs(x); }

inline double value_of(double x) { return x; }
inline double value_of(const Dual& x) { return x.v; }

inline double deriv_of(double) { return 0.0; }
inline double deriv_of(const Dual& x) { return x.d; }

} // namespace maglayer
