#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace maglayer {

using cplx = std::complex<double>;

inline constexpr double chi_zero_tol = 1e-12;
inline constexpr double level_merge_rel = 1e-9;

struct Vec2 {
    double x = 0.0, y = 0.0;
    Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    double norm() const { return std::hypot(x, y); }
};

// x ^ x' = x1 x2' - x2 x1'
inline double wedge(const Vec2& u, const Vec2& v) { return u.x * v.y - u.y * v.x; }

struct LayerGeometry {
    double d = 1.0;
    double B = 2.0 * std::numbers::pi;

    double absB() const { return std::abs(B); }
    void validate() const {
        if (!(d > 0.0)) throw config_error("layer width d must be positive");
        if (B == 0.0 || !std::isfinite(B)) throw config_error("field B must be finite and nonzero");
    }
};

struct PlanarLattice {
    double a1 = 1.0;
    double b1 = 0.0;
    double b2 = 1.0;

    Vec2 a() const { return {a1, 0.0}; }
    Vec2 b() const { return {b1, b2}; }
    double area() const { return a1 * std::abs(b2); }
    Vec2 at(double s, double t) const { return a() * s + b() * t; }
    Vec2 cell(long la, long lb) const { return a() * double(la) + b() * double(lb); }
    void validate() const {
        if (!(a1 > 0.0)) throw config_error("lattice a1 must be positive");
        if (b2 == 0.0) throw config_error("lattice b2 must be nonzero");
    }
};

struct Impurity {
    double s = 0.0;  // along a
    double t = 0.0;  // along b
    double x3 = 0.5;
};

struct ImpuritySet {
    std::vector<Impurity> points;

    std::size_t size() const { return points.size(); }
    void validate(const LayerGeometry& g, const PlanarLattice& lat) const {
        if (points.empty()) throw config_error("impurity set is empty");
        for (const auto& p : points) {
            if (!(p.s >= 0.0 && p.s < 1.0 && p.t >= 0.0 && p.t < 1.0))
                throw config_error("impurity cell coordinates must lie in [0,1)");
            if (!(p.x3 > 0.0 && p.x3 < g.d)) throw config_error("impurity height must lie inside (0,d)");
        }
        for (std::size_t i = 0; i < points.size(); ++i)
            for (std::size_t j = i + 1; j < points.size(); ++j) {
                Vec2 dv = lat.at(points[i].s, points[i].t) - lat.at(points[j].s, points[j].t);
                if (dv.norm() < 1e-9 * lat.a1 && std::abs(points[i].x3 - points[j].x3) < 1e-12 * g.d)
                    throw config_error("impurities must be pairwise distinct");
            }
    }
};

// One inter-cell block: A(lambda + kappa_i, kappa_j) = value with lambda = (la, lb).
struct HoppingBlock {
    int i = 0, j = 0;
    long la = 0, lb = 0;
    cplx value{};
};

struct CouplingMatrix {
    enum class Kind { diagonal, general };
    Kind kind = Kind::diagonal;
    std::vector<double> alpha;        // per impurity (diagonal part, both kinds)
    std::vector<HoppingBlock> blocks; // general kind only, off-diagonal blocks
    double c1 = 0.0, c2 = 1.0;        // decay certificate
};

struct FluxData {
    double xi = 0.0;
    double eta = 0.0;
    long N = 0;
    long M = 1;
};

struct LevelEntry {
    double energy = 0.0;
    std::vector<std::pair<int, int>> pairs;  // (l, n)
    bool orphan = false;
};

struct LevelTable {
    std::vector<LevelEntry> levels;
    double E_max = 0.0;

    std::size_t size() const { return levels.size(); }
    const LevelEntry& operator[](std::size_t i) const { return levels[i]; }
};

inline double modified_landau_level(int l, int n, const LayerGeometry& g) {
    if (l < 0 || n < 1) throw domain_error("modified_landau_level: need l >= 0, n >= 1");
    double k = std::numbers::pi * n / g.d;
    return g.absB() * (2.0 * l + 1.0) + k * k;
}

inline double transverse_mode(int n, double x3, const LayerGeometry& g) {
    return std::sqrt(2.0 / g.d) * std::sin(n * std::numbers::pi * x3 / g.d);
}

namespace detail {

// Continued-fraction convergents of x, first one within tol with denominator <= cap.
inline std::optional<std::pair<long, long>> rationalize(double x, long cap, double tol) {
    double rem = x;
    long p0 = 1, q0 = 0, p1 = static_cast<long>(std::floor(rem)), q1 = 1;
    rem -= std::floor(rem);
    for (int it = 0; it < 64; ++it) {
        if (q1 > cap) break;
        if (std::abs(x - double(p1) / double(q1)) <= tol) return std::make_pair(p1, q1);
        if (rem == 0.0) break;
        rem = 1.0 / rem;
        double a = std::floor(rem);
        rem -= a;
        if (a > 1e15) break;
        long an = static_cast<long>(a);
        long p2 = an * p1 + p0, q2 = an * q1 + q0;
        p0 = p1; q0 = q1; p1 = p2; q1 = q2;
    }
    return std::nullopt;
}

} // namespace detail

inline FluxData flux_data(const LayerGeometry& g, const PlanarLattice& lat, long max_denominator = 100) {
    if (!(lat.area() > 0.0)) throw config_error("cell area must be positive");
    FluxData f;
    f.xi = g.B / (2.0 * std::numbers::pi);
    f.eta = lat.a1 * lat.b2 * f.xi;
    auto r = detail::rationalize(f.eta, max_denominator, 1e-12 * std::max(1.0, std::abs(f.eta)));
    if (!r || r->first == 0)
        throw irrational_flux_error("flux per cell " + std::to_string(f.eta) +
                                    " is not rational with denominator <= " + std::to_string(max_denominator));
    f.N = r->first;
    f.M = r->second;
    return f;
}

// Detects (pi/d)^2 : |B| = p : q with q <= cap; only then can levels collide.
inline std::optional<std::pair<long, long>> transverse_field_ratio(const LayerGeometry& g, long cap = 1000000) {
    double k = std::numbers::pi / g.d;
    double x = k * k / g.absB();
    return detail::rationalize(x, cap, 1e-13 * x);
}

inline bool level_is_orphan(const std::vector<std::pair<int, int>>& pairs, const ImpuritySet& imp,
                            const LayerGeometry& g) {
    for (auto [l, n] : pairs)
        for (const auto& p : imp.points)
            if (std::abs(transverse_mode(n, p.x3, g)) > chi_zero_tol) return false;
    return true;
}

inline LevelTable level_table(const LayerGeometry& g, double E_max, const ImpuritySet* imp = nullptr) {
    if (!(E_max > modified_landau_level(0, 1, g))) throw domain_error("E_max must exceed the lowest level");
    std::vector<std::tuple<double, int, int>> all;
    for (int n = 1;; ++n) {
        if (modified_landau_level(0, n, g) > E_max) break;
        for (int l = 0;; ++l) {
            double e = modified_landau_level(l, n, g);
            if (e > E_max) break;
            all.emplace_back(e, l, n);
        }
    }
    std::sort(all.begin(), all.end());
    LevelTable t;
    t.E_max = E_max;
    const double tol = level_merge_rel * g.absB();
    for (const auto& [e, l, n] : all) {
        if (!t.levels.empty() && e - t.levels.back().energy <= tol) {
            t.levels.back().pairs.emplace_back(l, n);
        } else {
            t.levels.push_back({e, {{l, n}}, false});
        }
    }
    if (imp)
        for (auto& lv : t.levels) lv.orphan = level_is_orphan(lv.pairs, *imp, g);
    return t;
}

// One representative per planar position (smallest height), in order of first appearance.
inline ImpuritySet reduced_impurity_set(const ImpuritySet& imp) {
    ImpuritySet out;
    for (const auto& p : imp.points) {
        auto same = [&](const Impurity& q) { return std::abs(p.s - q.s) < 1e-12 && std::abs(p.t - q.t) < 1e-12; };
        auto it = std::find_if(out.points.begin(), out.points.end(), same);
        if (it == out.points.end()) out.points.push_back(p);
        else if (p.x3 < it->x3) *it = p;
    }
    return out;
}

struct ModelConfig {
    LayerGeometry geom;
    PlanarLattice lat;
    ImpuritySet imp;
    CouplingMatrix coupling;
    FluxData flux;

    Vec2 site(std::size_t i) const { return lat.at(imp.points[i].s, imp.points[i].t); }
    std::size_t sites() const { return imp.size(); }

    // A(gamma, gamma') for gamma = cell_i + kappa_i, gamma' = cell_j + kappa_j; same covariance as the kernel.
    cplx coupling_element(std::size_t i, long ia, long ib, std::size_t j, long ja, long jb) const {
        const long la = ia - ja, lb = ib - jb;
        cplx h{};
        if (la == 0 && lb == 0 && i == j) h += coupling.alpha[i];
        if (coupling.kind == CouplingMatrix::Kind::general) {
            for (const auto& blk : coupling.blocks)
                if (blk.i == int(i) && blk.j == int(j) && blk.la == la && blk.lb == lb) h += blk.value;
        }
        if (h == cplx{}) return h;
        Vec2 diff = lat.cell(la, lb) + site(i) - site(j);
        Vec2 mu = lat.cell(ja, jb);
        return h * std::polar(1.0, -0.5 * geom.B * wedge(diff, mu));
    }

    // Adds the Hermitian partner of every block and rejects inconsistent pairs.
    void complete_coupling() {
        if (coupling.alpha.size() != imp.size()) throw config_error("need one coupling constant per impurity");
        if (coupling.kind != CouplingMatrix::Kind::general) return;
        std::map<std::tuple<int, int, long, long>, cplx> table;
        for (const auto& b : coupling.blocks) {
            if (b.i < 0 || b.j < 0 || b.i >= int(imp.size()) || b.j >= int(imp.size()))
                throw config_error("hopping block refers to an unknown impurity");
            if (b.i == b.j && b.la == 0 && b.lb == 0)
                throw config_error("on-site terms belong to the diagonal coupling constants");
            table[{b.i, b.j, b.la, b.lb}] += b.value;
        }
        auto partner = [&](int i, int j, long la, long lb, cplx v) {
            Vec2 kdiff = site(j) - site(i);
            return std::conj(v) * std::polar(1.0, 0.5 * geom.B * wedge(kdiff, lat.cell(la, lb)));
        };
        auto snapshot = table;
        for (const auto& [key, v] : snapshot) {
            auto [i, j, la, lb] = key;
            cplx want = partner(i, j, la, lb, v);
            auto it = table.find({j, i, -la, -lb});
            if (it == table.end()) {
                table[{j, i, -la, -lb}] = want;
            } else if (std::abs(it->second - want) > 1e-12 * (1.0 + std::abs(want))) {
                throw config_error("hopping blocks are not Hermitian");
            }
        }
        coupling.blocks.clear();
        double c1 = 0.0;
        for (const auto& [key, v] : table) {
            auto [i, j, la, lb] = key;
            coupling.blocks.push_back({i, j, la, lb, v});
            double dist = (lat.cell(la, lb) + site(i) - site(j)).norm();
            c1 = std::max(c1, std::abs(v) * std::exp(coupling.c2 * dist));
        }
        if (coupling.c1 == 0.0) coupling.c1 = c1;
        else if (c1 > coupling.c1 * (1 + 1e-12)) throw config_error("hopping blocks violate the decay certificate");
    }

    double coupling_range() const {
        double r = 0.0;
        for (const auto& b : coupling.blocks) r = std::max(r, (lat.cell(b.la, b.lb) + site(b.i) - site(b.j)).norm());
        return r;
    }

    static ModelConfig make(LayerGeometry g, PlanarLattice lat, ImpuritySet imp, CouplingMatrix c,
                            long max_denominator = 100) {
        g.validate();
        lat.validate();
        imp.validate(g, lat);
        ModelConfig m{g, lat, std::move(imp), std::move(c), {}};
        m.flux = flux_data(g, lat, max_denominator);
        m.complete_coupling();
        return m;
    }
};

// Lattice (a, M b) with impurity copies kappa + m b, m = 0..M-1. origin[k] = (original index, m).
struct EnlargedCell {
    PlanarLattice lat;
    ImpuritySet imp;
    std::vector<std::pair<std::size_t, long>> origin;
};

inline EnlargedCell enlarged_cell(const ModelConfig& cfg) {
    const long M = cfg.flux.M;
    EnlargedCell out;
    out.lat = {cfg.lat.a1, cfg.lat.b1 * M, cfg.lat.b2 * M};
    for (long m = 0; m < M; ++m)
        for (std::size_t i = 0; i < cfg.imp.size(); ++i) {
            const auto& p = cfg.imp.points[i];
            out.imp.points.push_back({p.s, (p.t + m) / double(M), p.x3});
            out.origin.emplace_back(i, m);
        }
    return out;
}

} // namespace maglayer
