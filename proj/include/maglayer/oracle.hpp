#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <tuple>
#include <vector>

#include "solver.hpp"

namespace maglayer {

struct FiniteCloud {
    int R = 0;
    double lo = 0.0, hi = 0.0;
    std::size_t sites = 0;
    std::vector<double> eigenvalues;
};

// Point interactions on the square window |la|, |lb| <= R of the crystal, with the Krein matrix
// [Q(g,g';z) + A(g,g')] assembled from the layer kernels directly (no Bloch reduction).
class FiniteLattice {
public:
    struct Pair {
        int a, b;
        cplx phase;
        int key;
    };
    struct Key {
        double r2, h1, h2;
        bool coincident;
    };

    FiniteLattice(const ModelConfig& cfg, int R, const SeriesControl& ctrl = {}) : cfg_(cfg), R_(R), ctrl_(ctrl) {
        if (R < 0) throw config_error("oracle window radius must be nonnegative");
        for (long lb = -R; lb <= R; ++lb)
            for (long la = -R; la <= R; ++la)
                for (std::size_t i = 0; i < cfg.imp.size(); ++i) {
                    sites_.push_back({cfg.lat.cell(la, lb) + cfg.site(i), cfg.imp.points[i].x3});
                    origin_.push_back({i, la, lb});
                }
        ctrl_.planar_coincidence = ctrl.planar_coincidence * cfg.lat.a1;
        const std::size_t n = sites_.size();
        std::map<std::tuple<long long, long long, long long, bool>, int> index;
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b < n; ++b) {
                const Vec2 dx = sites_[a].x - sites_[b].x;
                const double r2 = dx.x * dx.x + dx.y * dx.y;
                const bool coinc = std::sqrt(r2) < ctrl_.planar_coincidence;
                const double h1 = std::min(sites_[a].x3, sites_[b].x3), h2 = std::max(sites_[a].x3, sites_[b].x3);
                auto key = std::make_tuple(std::llround((coinc ? 0.0 : r2) * 1e9), std::llround(h1 * 1e12),
                                           std::llround(h2 * 1e12), coinc);
                auto it = index.find(key);
                if (it == index.end()) {
                    it = index.emplace(key, int(keys_.size())).first;
                    keys_.push_back({coinc ? 0.0 : r2, h1, h2, coinc});
                }
                cplx ph = coinc ? cplx(1.0, 0.0) : magnetic_phase(sites_[a].x, sites_[b].x, cfg.geom.B);
                pairs_.push_back({int(a), int(b), ph, it->second});
            }
        A_ = MatrixC::Zero(n, n);
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b < n; ++b) {
                auto [i, la, lb] = origin_[a];
                auto [j, ma, mb] = origin_[b];
                A_(a, b) = cfg.coupling_element(i, la, lb, j, ma, mb);
            }
    }

    int R() const { return R_; }
    std::size_t size() const { return sites_.size(); }
    const std::vector<KernelPoint>& sites() const { return sites_; }
    const std::vector<Key>& keys() const { return keys_; }
    const MatrixC& coupling() const { return A_; }
    const ModelConfig& config() const { return cfg_; }

    // distance of a site from the window centre in cell units
    long ring(std::size_t a) const { return std::max(std::labs(std::get<1>(origin_[a])), std::labs(std::get<2>(origin_[a]))); }

    double amplitude(const Key& k, double z) const {
        if (k.coincident) {
            if (std::abs(k.h1 - k.h2) <= 1e-14 * cfg_.geom.d) return q0_amp(k.h1, z, cfg_.geom, ctrl_);
            return q_vertical_amp(k.h1, k.h2, z, cfg_.geom, ctrl_);
        }
        return g0_amp(k.r2, k.h1, k.h2, z, cfg_.geom, ctrl_);
    }

    std::vector<double> amplitudes(double z) const {
        std::vector<double> v;
        v.reserve(keys_.size());
        for (const auto& k : keys_) v.push_back(amplitude(k, z));
        return v;
    }

    template <class V>
    MatrixC assemble(const std::vector<V>& amps) const {
        MatrixC X = A_;
        for (const auto& p : pairs_) X(p.a, p.b) += p.phase * cplx(amps[p.key]);
        return X;
    }

    // Element by element from q_element, the reference assembly.
    MatrixC q_matrix_direct(double z) const {
        const std::size_t n = size();
        MatrixC X(n, n);
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b < n; ++b) X(a, b) = q_element(sites_[a], sites_[b], cplx(z), cfg_.geom, ctrl_);
        return X + A_;
    }

    MatrixC q_matrix(double z) const { return assemble(amplitudes(z)); }

    // Uniform Gershgorin bound on the eigenvalues of the Krein matrix.
    double row_bound(double z) const {
        auto amps = amplitudes(z);
        std::vector<double> row(size(), 0.0);
        for (const auto& p : pairs_) row[p.a] += p.a == p.b ? amps[p.key] : std::abs(amps[p.key]);
        for (std::size_t a = 0; a < size(); ++a)
            for (std::size_t b = 0; b < size(); ++b) row[a] += a == b ? A_(a, b).real() : std::abs(A_(a, b));
        return *std::max_element(row.begin(), row.end());
    }

private:
    ModelConfig cfg_;
    int R_;
    SeriesControl ctrl_;
    std::vector<KernelPoint> sites_;
    std::vector<std::tuple<std::size_t, long, long>> origin_;
    std::vector<Key> keys_;
    std::vector<Pair> pairs_;
    MatrixC A_;
};

inline MatrixC finite_q_matrix(int R, double z, const ModelConfig& cfg, const SeriesControl& ctrl = {}) {
    return FiniteLattice(cfg, R, ctrl).q_matrix_direct(z);
}

struct OracleControl {
    double energy_tol = 1e-10;   // times |B|
    double probe_offset = 1e-6;  // times the free gap width
    double cheb_tol = 1e-13;
    SeriesControl series;
};

// All eigenvalues of the finite system in (lo, hi), a subinterval of one free gap (lo may be -inf).
// Each sorted eigencurve of the Krein matrix is monotone in z, so it has at most one root there.
inline FiniteCloud finite_eigenvalues(const FiniteLattice& fl, double lo, double hi, const OracleControl& oc = {}) {
    const auto& g = fl.config().geom;
    const double absB = g.absB();
    const double E_top = std::max(hi, modified_landau_level(0, 1, g)) + 2.0 * absB;
    auto table = level_table(g, E_top);
    int gi = 0;
    while (gi < int(table.size()) && table[gi].energy < hi - 1e-12 * absB) ++gi;
    if (gi >= int(table.size())) throw domain_error("oracle: gap above the level window");
    const double b = table[gi].energy;
    double a;
    if (gi == 0) {
        double dist = absB;
        while (fl.row_bound(b - dist) >= 0.0) {
            dist *= 2.0;
            if (dist > 1e9) throw convergence_error("oracle: no spectral floor");
        }
        a = b - dist;
    } else
        a = table[gi - 1].energy;
    if (std::isfinite(lo) && lo < a - 1e-12 * absB) throw domain_error("oracle: range crosses a Landau level");
    GapInterpolant ip(a, b, gi > 0, true, fl.keys().size(), [&](double z) { return fl.amplitudes(z); }, oc.cheb_tol,
                      10.0 * oc.series.abs_tol, 10);
    auto X = [&](double z) { return fl.assemble(ip.values(z)); };

    const double w = b - a, delta = oc.probe_offset * w;
    const double zlo = std::isfinite(lo) && lo > a ? std::max(lo, a + delta) : (gi == 0 ? a : a + delta);
    const double zhi = std::min(hi, b - delta);
    Eigen::VectorXd mlo = hermitian_eigenvalues(X(zlo)), mhi = hermitian_eigenvalues(X(zhi));
    FiniteCloud out;
    out.R = fl.R();
    out.lo = lo;
    out.hi = hi;
    out.sites = fl.size();
    const double etol = oc.energy_tol * absB;
    for (Eigen::Index j = 0; j < mlo.size(); ++j) {
        if (!(mlo(j) < 0.0 && mhi(j) > 0.0)) continue;
        auto f = [&](double z) { return hermitian_eigenvalues(X(z))(j); };
        std::uintmax_t it = 200;
        auto r = boost::math::tools::toms748_solve(f, zlo, zhi, mlo(j), mhi(j),
                                                   [&](double x, double y) { return std::abs(y - x) <= etol; }, it);
        out.eigenvalues.push_back(0.5 * (r.first + r.second));
    }
    std::sort(out.eigenvalues.begin(), out.eigenvalues.end());
    return out;
}

inline FiniteCloud finite_eigenvalues(int R, double lo, double hi, const ModelConfig& cfg, const OracleControl& oc = {}) {
    return finite_eigenvalues(FiniteLattice(cfg, R, oc.series), lo, hi, oc);
}

inline double hausdorff_distance(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.empty() || b.empty()) return std::numeric_limits<double>::infinity();
    auto one = [](const std::vector<double>& x, const std::vector<double>& y) {
        double worst = 0.0;
        for (double v : x) {
            double best = std::numeric_limits<double>::infinity();
            for (double u : y) best = std::min(best, std::abs(u - v));
            worst = std::max(worst, best);
        }
        return worst;
    };
    return std::max(one(a, b), one(b, a));
}

struct Containment {
    bool contained = true;
    double margin = 0.0;      // allowed excess beyond the hull
    double worst_excess = 0.0;
};

inline Containment cloud_in_hull(const FiniteCloud& c, double E_min, double E_max, double margin_fraction) {
    Containment r;
    r.margin = margin_fraction * (E_max - E_min);
    for (double E : c.eigenvalues) r.worst_excess = std::max({r.worst_excess, E_min - E, E - E_max});
    r.contained = r.worst_excess <= r.margin;
    return r;
}

} // namespace maglayer
