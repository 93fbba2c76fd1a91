#pragma once

#include <boost/math/tools/toms748_solve.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <mutex>
#include <numbers>
#include <string>
#include <thread>
#include <vector>

#include "bloch.hpp"

namespace maglayer {

struct SolverControl {
    double root_tol = 1e-10;
    double energy_tol = 1e-10;   // times |B|
    double degen_tol = 1e-6;     // times |B|
    double probe_offset = 1e-6;  // times the gap width
    double E_max = 0.0;          // <= 0: halfway between the 8th and 9th level
    int grid1 = 16, grid2 = 16;
    unsigned jobs = 1;
    double coverage_limit = 0.2;
    double cheb_tol = 1e-13;
    int cheb_max_depth = 10;
    double zero_test = 1e-8;     // |Q~+A~| below this counts as vanishing at a level
    SeriesControl series;
};

inline double default_energy_window(const LayerGeometry& g, std::size_t count = 8) {
    double E = 2.0 * modified_landau_level(0, 1, g);
    for (;;) {
        auto t = level_table(g, E);
        if (t.size() > count) return 0.5 * (t[count - 1].energy + t[count].energy);
        E *= 1.5;
    }
}

// Piecewise Chebyshev interpolant of a vector of functions on [a, b], each multiplied by a weight
// vanishing at the pole endpoints so that what is interpolated is analytic on the closed interval.
class GapInterpolant {
public:
    struct Piece {
        double a, b;
        int n;
        std::vector<double> c;  // c[key * n + k], c_0 already halved
    };

    GapInterpolant() = default;

    template <class F>
    GapInterpolant(double a, double b, bool lo_pole, bool hi_pole, std::size_t nkeys, F&& f, double tol,
                   double abs_floor, int max_depth)
        : a_(a), b_(b), lo_pole_(lo_pole), hi_pole_(hi_pole), nkeys_(nkeys), floor_(abs_floor) {
        auto g = [&](double z) {
            std::vector<double> v = f(z);
            const double w = weight(z);
            for (auto& x : v) x *= w;
            return v;
        };
        build(a, b, g, tol, max_depth, 0);
        std::sort(pieces_.begin(), pieces_.end(), [](const Piece& x, const Piece& y) { return x.a < y.a; });
    }

    double lo() const { return a_; }
    double hi() const { return b_; }
    std::size_t keys() const { return nkeys_; }
    const std::vector<Piece>& pieces() const { return pieces_; }

    double weight(double z) const {
        const double L = b_ - a_;
        double w = 1.0;
        if (lo_pole_) w *= (z - a_) / L;
        if (hi_pole_) w *= (b_ - z) / L;
        return w;
    }

    std::size_t piece_of(double z) const {
        for (std::size_t i = 0; i + 1 < pieces_.size(); ++i)
            if (z < pieces_[i].b) return i;
        return pieces_.size() - 1;
    }

    static double local(const Piece& p, double z) { return (2.0 * z - p.a - p.b) / (p.b - p.a); }

    std::vector<double> values(double z) const {
        const Piece& p = pieces_[piece_of(z)];
        const double x = local(p, z), w = weight(z);
        std::vector<double> out(nkeys_);
        for (std::size_t k = 0; k < nkeys_; ++k) {
            const double* c = p.c.data() + k * p.n;
            double b1 = 0.0, b2 = 0.0;
            for (int i = p.n - 1; i >= 1; --i) {
                double t = c[i] + 2.0 * x * b1 - b2;
                b2 = b1;
                b1 = t;
            }
            out[k] = (c[0] + x * b1 - b2) / w;
        }
        return out;
    }

private:
    template <class G>
    void build(double a, double b, G& g, double tol, int max_depth, int depth) {
        std::vector<std::vector<double>> vals;  // vals[node][key]
        int n = 27;
        std::vector<std::vector<double>> prev;
        for (;;) {
            vals.assign(n, {});
            for (int j = 0; j < n; ++j) {
                if (!prev.empty() && j % 3 == 1) {
                    vals[j] = std::move(prev[j / 3]);
                    continue;
                }
                const double x = std::cos((2.0 * j + 1.0) * std::numbers::pi / (2.0 * n));
                vals[j] = g(0.5 * (a + b) + 0.5 * (b - a) * x);
            }
            Piece p{a, b, n, std::vector<double>(nkeys_ * n, 0.0)};
            std::vector<double> cs(n * n);
            for (int k = 0; k < n; ++k)
                for (int j = 0; j < n; ++j) cs[k * n + j] = std::cos(k * (2.0 * j + 1.0) * std::numbers::pi / (2.0 * n));
            double global = 0.0;
            for (std::size_t key = 0; key < nkeys_; ++key)
                for (int k = 0; k < n; ++k) {
                    double s = 0.0;
                    for (int j = 0; j < n; ++j) s += vals[j][key] * cs[k * n + j];
                    s *= 2.0 / n;
                    if (k == 0) s *= 0.5;
                    p.c[key * n + k] = s;
                    global = std::max(global, std::abs(s));
                }
            bool ok = true;
            for (std::size_t key = 0; key < nkeys_ && ok; ++key) {
                const double* c = p.c.data() + key * n;
                double big = 0.0;
                for (int k = 0; k < n; ++k) big = std::max(big, std::abs(c[k]));
                double tail = std::max({std::abs(c[n - 1]), std::abs(c[n - 2]), std::abs(c[n - 3])});
                ok = tail <= tol * big + floor_ + 1e-3 * tol * global;
            }
            if (ok) {
                pieces_.push_back(std::move(p));
                return;
            }
            if (n >= 243) break;
            prev = std::move(vals);
            n *= 3;
        }
        if (depth >= max_depth) throw convergence_error("Chebyshev interpolant did not converge on a gap");
        const double m = 0.5 * (a + b);
        build(a, m, g, tol, max_depth, depth + 1);
        build(m, b, g, tol, max_depth, depth + 1);
    }

    double a_ = 0.0, b_ = 1.0;
    bool lo_pole_ = false, hi_pole_ = false;
    std::size_t nkeys_ = 0;
    double floor_ = 0.0;  // noise level of the sampled functions
    std::vector<Piece> pieces_;
};

enum class RootStatus { interior_root, touch_lo, touch_hi, extended };

inline const char* status_name(RootStatus s) {
    switch (s) {
    case RootStatus::interior_root: return "interior-root";
    case RootStatus::touch_lo: return "endpoint-touch-lo";
    case RootStatus::touch_hi: return "endpoint-touch-hi";
    case RootStatus::extended: return "extended-by-continuity";
    }
    return "?";
}

struct BandValue {
    double E = 0.0;
    RootStatus status = RootStatus::interior_root;
    double residual = 0.0;
    int gap = -1;
};

struct GapInterval {
    double lo = -std::numeric_limits<double>::infinity();
    double hi = 0.0;
    std::vector<double> merged_levels;
    int first_gap = 0, last_gap = 0;
};

class BandEngine;

// Q~(p;z)+A~(p) at one quasi-momentum, through the gap interpolants or exactly.
class FiberPoint {
public:
    FiberPoint(const BandEngine& e, const QuasiMomentum& p);

    const QuasiMomentum& momentum() const { return p_; }
    const MatrixC& coupling() const { return A_; }
    MatrixC value(double z) const;
    MatrixC value_exact(double z) const;
    Eigen::VectorXd mu(double z) const { return hermitian_eigenvalues(value(z)); }
    Eigen::VectorXd mu_exact(double z) const { return hermitian_eigenvalues(value_exact(z)); }

private:
    const std::vector<cplx>& gap_coefs(int g, std::size_t piece) const;

    const BandEngine* e_;
    QuasiMomentum p_;
    MatrixC A_;
    std::vector<cplx> w_;
    mutable std::vector<std::vector<std::vector<cplx>>> cache_;  // [gap][piece] -> n * D * D
};

class BandEngine {
public:
    BandEngine(const ModelConfig& cfg, const SolverControl& ctrl = {})
        : cfg_(cfg), ctrl_(ctrl),
          E_max_(ctrl.E_max > 0.0 ? ctrl.E_max : default_energy_window(cfg.geom)),
          fiber_(cfg, E_max_, ctrl.series) {
        table_ = level_table(cfg.geom, E_max_, &cfg.imp);
        if (ctrl_.grid1 < 4 || ctrl_.grid2 < 4) throw config_error("scan grid must be at least 4x4");
        absB_ = cfg.geom.absB();
        z_floor_ = find_floor();
        const std::size_t L = table_.size();
        interp_.reserve(L);
        for (std::size_t g = 0; g < L; ++g)
            interp_.emplace_back(gap_lo(int(g)), gap_hi(int(g)), g > 0, true, fiber_.keys().size(),
                                 [&](double z) { return fiber_.amplitudes(z); }, ctrl_.cheb_tol,
                                 10.0 * ctrl_.series.abs_tol, ctrl_.cheb_max_depth);
        scan_ranks();
    }

    const ModelConfig& config() const { return cfg_; }
    const SolverControl& control() const { return ctrl_; }
    const Fiber& fiber() const { return fiber_; }
    const LevelTable& levels() const { return table_; }
    std::size_t level_count() const { return table_.size(); }
    std::size_t dim() const { return fiber_.dim(); }
    double E_max() const { return E_max_; }
    double z_floor() const { return z_floor_; }
    double energy_tol() const { return ctrl_.energy_tol * absB_; }
    double degen_tol() const { return ctrl_.degen_tol * absB_; }
    long degeneracy() const { return fiber_.M(); }

    double gap_lo(int g) const { return g == 0 ? z_floor_ : table_[g - 1].energy; }
    double gap_hi(int g) const { return table_[g].energy; }
    double gap_width(int g) const { return gap_hi(g) - gap_lo(g); }
    const GapInterpolant& interpolant(int g) const { return interp_[g]; }

    int gap_of(double z) const {
        if (z < z_floor_ || z >= table_.levels.back().energy) return -1;
        for (std::size_t g = 0; g < table_.size(); ++g)
            if (z < table_[g].energy) return int(g);
        return -1;
    }

    // max over the scan grid of the residue Gram rank, per level
    const std::vector<int>& max_rank() const { return rbar_; }
    int expected_rank(std::size_t level) const {
        if (table_[level].orphan) return 0;
        return int(std::min<long>(fiber_.N() * long(table_[level].pairs.size()), long(dim())));
    }

    int band_count() const {
        int s = 0;
        for (int r : rbar_) s += r;
        return s;
    }

    // Band k (1-based) lives in gaps lo_k+1 .. hi_k.
    std::pair<int, int> span(int k) const {
        const int D = int(dim());
        int lo = -1, hi = -1, acc = 0;
        for (std::size_t i = 0; i < rbar_.size(); ++i) {
            if (D + acc < k) lo = int(i);
            acc += rbar_[i];
            if (hi < 0 && acc >= k) hi = int(i);
        }
        return {lo, hi};
    }

    GapInterval interval_of_band(int k) const {
        auto [lo, hi] = span(k);
        GapInterval iv;
        iv.lo = lo < 0 ? -std::numeric_limits<double>::infinity() : table_[lo].energy;
        iv.hi = table_[hi].energy;
        iv.first_gap = lo + 1;
        iv.last_gap = hi;
        for (int i = lo + 1; i < hi; ++i) iv.merged_levels.push_back(table_[i].energy);
        return iv;
    }

    // Distinct band intervals in ascending order.
    std::vector<GapInterval> build_intervals() const {
        std::vector<GapInterval> out;
        for (int k = 1; k <= band_count(); ++k) {
            GapInterval iv = interval_of_band(k);
            bool seen = false;
            for (const auto& o : out) seen = seen || (o.first_gap == iv.first_gap && o.last_gap == iv.last_gap);
            if (!seen) out.push_back(iv);
        }
        return out;
    }

    std::vector<QuasiMomentum> grid(int G1, int G2, long j = 0) const {
        std::vector<QuasiMomentum> out;
        out.reserve(std::size_t(G1) * G2);
        const double M = double(fiber_.M());
        for (int b = 0; b < G2; ++b)
            for (int a = 0; a < G1; ++a) out.push_back({double(a) / (G1 * M), double(b) / G2, j});
        return out;
    }
    std::vector<QuasiMomentum> grid() const { return grid(ctrl_.grid1, ctrl_.grid2); }

    FiberPoint at(const QuasiMomentum& p) const { return FiberPoint(*this, p); }

    int gram_rank(const MatrixC& G) const {
        Eigen::SelfAdjointEigenSolver<MatrixC> es(0.5 * (G + G.adjoint()), Eigen::EigenvaluesOnly);
        const auto& ev = es.eigenvalues();
        const double smax = std::max(std::abs(ev.maxCoeff()), std::abs(ev.minCoeff()));
        if (!(smax > 1e-12 * absB_)) return 0;
        int r = 0;
        for (Eigen::Index k = 0; k < ev.size(); ++k) r += ev(k) > rank_tol * smax;
        return r;
    }

    // Residue data with D from exact evaluations below the level.
    ResidueData residue(const QuasiMomentum& p, std::size_t level) const {
        return residue_data(fiber_, p, table_[level], gap_width(int(level)));
    }

    // All complete bands at p, through the counting function
    // R(p;z) = D - n_-(X(p;z)) + sum_{eps<z} rbar_eps; band k is inf{z : R >= k}.
    std::vector<BandValue> dispersion(const QuasiMomentum& p) const {
        FiberPoint fp = at(p);
        return dispersion(fp);
    }

    std::vector<BandValue> dispersion(const FiberPoint& fp) const {
        const int K = band_count(), D = int(dim());
        std::vector<int> S(rbar_.size() + 1, 0);
        for (std::size_t i = 0; i < rbar_.size(); ++i) S[i + 1] = S[i] + rbar_[i];
        std::vector<BandValue> out;
        out.reserve(K);
        for (int k = 1; k <= K; ++k) {
            auto [lo, hi] = span(k);
            bool done = false;
            for (int g = std::max(0, lo + 1); g <= hi && !done; ++g) {
                const int m = D + S[g] - k;
                if (m < 0) continue;
                if (m >= D) {
                    out.push_back({gap_lo(g), RootStatus::touch_lo, 0.0, g});
                    done = true;
                    break;
                }
                auto r = root_in_gap(fp, g, m);
                if (r) {
                    out.push_back(*r);
                    done = true;
                }
            }
            if (!done) out.push_back({gap_hi(hi), RootStatus::touch_hi, 0.0, hi});
        }
        return out;
    }

    // Root of the sorted eigencurve m (0-based) in gap g, or a touch of the lower end.
    std::optional<BandValue> root_in_gap(const FiberPoint& fp, int g, int m) const {
        const double a = gap_lo(g), b = gap_hi(g), w = b - a;
        const double delta = ctrl_.probe_offset * w;
        auto f = [&](double z) { return fp.mu(z)(m); };
        // a deeper probe whose sign is trusted only above the rounding level of the diverging curves
        auto deep = [&](double z, int& sign) {
            Eigen::VectorXd v = fp.mu(z);
            const double scale = v.cwiseAbs().maxCoeff();
            sign = std::abs(v(m)) > 1e-11 * scale ? (v(m) > 0.0 ? 1 : -1) : 0;
            return v(m);
        };
        double lo = g == 0 ? a : a + delta, hi = b - delta;
        double flo = f(lo);
        if (flo >= 0.0) {
            if (g == 0) throw convergence_error("eigencurve nonnegative at the spectral floor");
            int sg;
            double z = a + delta * 1e-3, fd = deep(z, sg);
            if (sg >= 0) return BandValue{a, RootStatus::touch_lo, 0.0, g};
            hi = lo;
            lo = z;
            flo = fd;
        } else {
            double fhi = f(hi);
            if (fhi <= 0.0) {
                int sg;
                double z = b - delta * 1e-3, fd = deep(z, sg);
                if (sg <= 0) return std::nullopt;
                lo = hi;
                flo = fhi;
                hi = z;
            }
        }
        double E = bracket_root(f, lo, hi, flo, f(hi));
        try {
            return polish(fp, g, m, E);
        } catch (const pole_error&) {
            // the root sits within the kernel pole guard of a level: the value is the level itself
            if (g > 0 && E - a < b - E) return BandValue{a, RootStatus::touch_lo, 0.0, g};
            return BandValue{b, RootStatus::touch_hi, 0.0, g};
        }
    }

    // max over the scan grid of the top eigenvalue of Q~(p;eps)+A~(p) at a level without a pole
    double max_on_grid_at_level(std::size_t level) const {
        double best = -std::numeric_limits<double>::infinity();
        for (const auto& p : grid()) best = std::max(best, at(p).mu_exact(table_[level].energy).maxCoeff());
        return best;
    }

private:
    template <class F>
    double bracket_root(F&& f, double lo, double hi, double flo, double fhi) const {
        if (flo == 0.0) return lo;
        if (fhi == 0.0) return hi;
        const double etol = energy_tol();
        std::uintmax_t it = 200;
        auto tol = [&](double x, double y) { return std::abs(y - x) <= 0.01 * etol; };
        auto r = boost::math::tools::toms748_solve(f, lo, hi, flo, fhi, tol, it);
        return 0.5 * (r.first + r.second);
    }

    BandValue polish(const FiberPoint& fp, int g, int m, double E) const {
        const double a = gap_lo(g), b = gap_hi(g);
        auto fe = [&](double z) { return fp.mu_exact(z)(m); };
        double v = fe(E);
        if (std::abs(v) <= ctrl_.root_tol) return {E, RootStatus::interior_root, v, g};
        const double etol = energy_tol();
        double step = std::max(1e-9 * (b - a), etol);
        double lo = E, hi = E, flo = v, fhi = v;
        for (int i = 0; i < 40 && flo * fhi > 0.0; ++i) {
            if (v > 0.0) {
                hi = lo;
                fhi = flo;
                lo = std::max(E - step, a + 1e-12 * (b - a));
                flo = fe(lo);
            } else {
                lo = hi;
                flo = fhi;
                hi = std::min(E + step, b - 1e-12 * (b - a));
                fhi = fe(hi);
            }
            step *= 8.0;
        }
        if (flo * fhi > 0.0) throw convergence_error("exact eigencurve has no sign change near the interpolated root");
        std::uintmax_t it = 200;
        auto tol = [&](double x, double y) { return std::abs(y - x) <= etol; };
        auto r = boost::math::tools::toms748_solve(fe, lo, hi, flo, fhi, tol, it);
        double z1 = 0.5 * (r.first + r.second);
        double v1 = fe(z1);
        return {z1, RootStatus::interior_root, v1, g};
    }

    // Gershgorin bound for X(p;z) uniform in p: below every eigenvalue is negative.
    double row_bound(double z) const {
        auto amps = fiber_.amplitudes(z);
        const std::size_t D = dim();
        std::vector<double> bound(D, 0.0);
        for (const auto& t : fiber_.terms()) {
            const bool self = t.i == t.j && t.la == 0 && t.lb == 0;
            bound[t.i] += self ? amps[t.key] : std::abs(amps[t.key]);
        }
        for (const auto& t : fiber_.coupling_terms()) {
            const bool self = t.i == t.j && t.la == 0 && t.lb == 0;
            bound[t.i] += self ? t.value.real() : std::abs(t.value);
        }
        return *std::max_element(bound.begin(), bound.end());
    }

    double find_floor() const {
        const double e0 = table_[0].energy;
        double dist = absB_;
        for (int i = 0; i < 80; ++i) {
            if (row_bound(e0 - dist) < 0.0) return e0 - dist;
            dist *= 2.0;
        }
        throw convergence_error("no spectral floor found below the lowest level");
    }

    void scan_ranks() {
        rbar_.assign(table_.size(), 0);
        for (const auto& p : grid())
            for (std::size_t i = 0; i < table_.size(); ++i)
                if (!table_[i].orphan) rbar_[i] = std::max(rbar_[i], gram_rank(fiber_.gram(p, table_[i])));
    }

    ModelConfig cfg_;
    SolverControl ctrl_;
    double E_max_;
    Fiber fiber_;
    LevelTable table_;
    double absB_ = 1.0;
    double z_floor_ = 0.0;
    std::vector<GapInterpolant> interp_;
    std::vector<int> rbar_;
};

inline FiberPoint::FiberPoint(const BandEngine& e, const QuasiMomentum& p)
    : e_(&e), p_(p), A_(e.fiber().atilde(p)), w_(e.fiber().term_weights(p)) {
    cache_.resize(e.level_count());
}

inline const std::vector<cplx>& FiberPoint::gap_coefs(int g, std::size_t piece) const {
    auto& slot = cache_[g];
    const auto& ip = e_->interpolant(g);
    if (slot.empty()) slot.resize(ip.pieces().size());
    auto& c = slot[piece];
    if (!c.empty()) return c;
    const auto& pc = ip.pieces()[piece];
    const std::size_t D = e_->dim();
    const int n = pc.n;
    c.assign(std::size_t(n) * D * D, cplx{});
    const auto& terms = e_->fiber().terms();
    for (std::size_t t = 0; t < terms.size(); ++t) {
        const double* k = pc.c.data() + std::size_t(terms[t].key) * n;
        cplx* out = c.data() + (std::size_t(terms[t].i) * D + terms[t].j);
        for (int q = 0; q < n; ++q) out[std::size_t(q) * D * D] += w_[t] * k[q];
    }
    if (e_->fiber().flipped())
        for (auto& x : c) x = std::conj(x);
    return c;
}

inline MatrixC FiberPoint::value(double z) const {
    const int g = e_->gap_of(z);
    if (g < 0) return value_exact(z);
    const auto& ip = e_->interpolant(g);
    const std::size_t pi = ip.piece_of(z);
    const auto& pc = ip.pieces()[pi];
    const auto& c = gap_coefs(g, pi);
    const std::size_t D = e_->dim(), DD = D * D;
    const double x = GapInterpolant::local(pc, z), w = ip.weight(z);
    std::vector<cplx> b1(DD), b2(DD);
    for (int q = pc.n - 1; q >= 1; --q) {
        const cplx* cq = c.data() + std::size_t(q) * DD;
        for (std::size_t e = 0; e < DD; ++e) {
            cplx t = cq[e] + 2.0 * x * b1[e] - b2[e];
            b2[e] = b1[e];
            b1[e] = t;
        }
    }
    MatrixC X(D, D);
    for (std::size_t i = 0; i < D; ++i)
        for (std::size_t j = 0; j < D; ++j) {
            const std::size_t e = i * D + j;
            X(i, j) = (c[e] + x * b1[e] - b2[e]) / w;
        }
    return X + A_;
}

inline MatrixC FiberPoint::value_exact(double z) const { return e_->fiber().qtilde(p_, cplx(z)).value; }

// Sorted eigenvalues of Q~(p;z)+A~(p), evaluated exactly. Near a level the diverging curves overflow.
inline Eigen::VectorXd mu_eigencurves(const BandEngine& e, const QuasiMomentum& p, double z) {
    try {
        return e.at(p).mu_exact(z);
    } catch (const pole_error& err) {
        int r = 0;
        for (std::size_t i = 0; i < e.level_count(); ++i)
            if (std::abs(e.levels()[i].energy - err.where) < 1e-8 * e.config().geom.absB())
                r = e.gram_rank(e.fiber().gram(p, e.levels()[i]));
        throw pole_error(std::string(err.what()) + "; diverging curves: " + std::to_string(r), err.where);
    }
}

struct DispersionSurface {
    int band = 0;
    int G1 = 0, G2 = 0;
    long j = 0;
    GapInterval parent;
    std::vector<QuasiMomentum> points;
    std::vector<double> E;
    std::vector<RootStatus> status;
    std::vector<double> residual;
};

namespace detail {

template <class F>
void parallel_for(std::size_t count, unsigned jobs, F&& f) {
    jobs = std::max(1u, std::min<unsigned>(jobs, unsigned(count)));
    if (jobs == 1) {
        for (std::size_t i = 0; i < count; ++i) f(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr first;
    std::mutex mu;
    for (unsigned t = 0; t < jobs; ++t)
        pool.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < count;) {
                try {
                    f(i);
                } catch (...) {
                    std::lock_guard lk(mu);
                    if (!first) first = std::current_exception();
                }
            }
        });
    for (auto& th : pool) th.join();
    if (first) std::rethrow_exception(first);
}

} // namespace detail

// One surface per band on the G1 x G2 vertex grid of the magnetic torus, fiber copy j.
inline std::vector<DispersionSurface> scan_torus(const BandEngine& e, int G1, int G2, long j = 0,
                                                 unsigned jobs = 0) {
    if (G1 < 4 || G2 < 4) throw config_error("scan grid must be at least 4x4");
    if (jobs == 0) jobs = e.control().jobs;
    const auto pts = e.grid(G1, G2, j);
    const int K = e.band_count();
    std::vector<std::vector<BandValue>> vals(pts.size());
    std::vector<char> ok(pts.size(), 0);
    detail::parallel_for(pts.size(), jobs, [&](std::size_t i) {
        try {
            vals[i] = e.dispersion(pts[i]);
            ok[i] = 1;
        } catch (const pole_error&) {
        } catch (const convergence_error&) {
        }
    });
    std::size_t missing = std::count(ok.begin(), ok.end(), 0);
    if (double(missing) > e.control().coverage_limit * double(pts.size()))
        throw coverage_error("more than the allowed fraction of grid points has no dispersion root");

    std::vector<DispersionSurface> out(K);
    for (int k = 0; k < K; ++k) {
        auto& s = out[k];
        s.band = k + 1;
        s.G1 = G1;
        s.G2 = G2;
        s.j = j;
        s.parent = e.interval_of_band(k + 1);
        s.points = pts;
        s.E.assign(pts.size(), std::numeric_limits<double>::quiet_NaN());
        s.status.assign(pts.size(), RootStatus::extended);
        s.residual.assign(pts.size(), 0.0);
        for (std::size_t i = 0; i < pts.size(); ++i)
            if (ok[i]) {
                s.E[i] = vals[i][k].E;
                s.status[i] = vals[i][k].status;
                s.residual[i] = vals[i][k].residual;
            }
        // continuity extension from defined neighbours on the periodic grid
        std::vector<char> def(ok);
        for (std::size_t pass = 0; pass < pts.size() && std::count(def.begin(), def.end(), 0); ++pass) {
            std::vector<char> next = def;
            for (int b = 0; b < G2; ++b)
                for (int a = 0; a < G1; ++a) {
                    std::size_t i = std::size_t(b) * G1 + a;
                    if (def[i]) continue;
                    double sum = 0.0;
                    int cnt = 0;
                    const int nb[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
                    for (auto& d : nb) {
                        std::size_t q = std::size_t((b + d[1] + G2) % G2) * G1 + (a + d[0] + G1) % G1;
                        if (def[q]) {
                            sum += s.E[q];
                            ++cnt;
                        }
                    }
                    if (cnt) {
                        double lo = std::isfinite(s.parent.lo) ? s.parent.lo : e.z_floor();
                        s.E[i] = std::clamp(sum / cnt, lo, s.parent.hi);
                        next[i] = 1;
                    }
                }
            def = std::move(next);
        }
    }
    return out;
}

inline std::vector<DispersionSurface> scan_torus(const BandEngine& e) {
    return scan_torus(e, e.control().grid1, e.control().grid2);
}

enum class MultCase { generic_split, persists, enlarged, general };

inline const char* case_name(MultCase c) {
    switch (c) {
    case MultCase::generic_split: return "generic-split";
    case MultCase::persists: return "persists";
    case MultCase::enlarged: return "enlarged";
    case MultCase::general: return "general";
    }
    return "?";
}

struct MultiplicityEntry {
    std::size_t level = 0;
    std::size_t point = 0;
    int rank = 0;
    bool d_invertible = true;
    double d_norm = 0.0;  // smallest singular value of D, 0 when absent
    MultCase tag = MultCase::general;
    long d_lo = 0, d_hi = 0;
};

struct LevelSummary {
    std::size_t level = 0;
    double energy = 0.0;
    std::vector<std::pair<int, int>> pairs;
    bool orphan = false;
    bool persists = false;
    long d_min = 0, d_max = 0;
    int count_i = 0, count_ii = 0, count_iii = 0, count_general = 0;
};

struct MultiplicityReport {
    std::vector<MultiplicityEntry> entries;
    std::vector<LevelSummary> levels;
};

inline MultiplicityEntry classify_point(const BandEngine& e, const QuasiMomentum& p, std::size_t level) {
    const auto& lv = e.levels()[level];
    const long NJ = e.fiber().N() * long(lv.pairs.size());
    const long D = long(e.dim());
    ResidueData rd = e.residue(p, level);
    MultiplicityEntry m;
    m.level = level;
    m.rank = rd.rank;
    m.d_invertible = rd.d_invertible;
    if (rd.D_op.size()) {
        Eigen::JacobiSVD<MatrixC> svd(rd.D_op);
        m.d_norm = svd.singularValues()(svd.singularValues().size() - 1);
    }
    if (D == 1) {
        if (rd.rank == 1) {
            m.tag = MultCase::generic_split;
            m.d_lo = m.d_hi = NJ - 1;
        } else if (std::abs(rd.D_op(0, 0)) > e.control().zero_test) {
            m.tag = MultCase::persists;
            m.d_lo = m.d_hi = NJ;
        } else {
            m.tag = MultCase::enlarged;
            m.d_invertible = false;
            m.d_lo = m.d_hi = NJ + 1;
        }
        return m;
    }
    m.tag = MultCase::general;
    if (rd.d_invertible) m.d_lo = m.d_hi = NJ - rd.rank;
    else {
        m.d_lo = NJ - rd.rank;
        m.d_hi = NJ + D - rd.rank;
    }
    return m;
}

inline MultiplicityReport classify_multiplicity(const BandEngine& e, const std::vector<QuasiMomentum>& pts,
                                                unsigned jobs = 0) {
    if (jobs == 0) jobs = e.control().jobs;
    const std::size_t L = e.level_count();
    MultiplicityReport rep;
    rep.entries.resize(L * pts.size());
    detail::parallel_for(rep.entries.size(), jobs, [&](std::size_t idx) {
        std::size_t lv = idx / pts.size(), pi = idx % pts.size();
        rep.entries[idx] = classify_point(e, pts[pi], lv);
        rep.entries[idx].point = pi;
    });
    for (std::size_t lv = 0; lv < L; ++lv) {
        LevelSummary s;
        s.level = lv;
        s.energy = e.levels()[lv].energy;
        s.pairs = e.levels()[lv].pairs;
        s.orphan = e.levels()[lv].orphan;
        s.d_min = std::numeric_limits<long>::max();
        s.d_max = std::numeric_limits<long>::min();
        std::size_t positive = 0;
        for (std::size_t pi = 0; pi < pts.size(); ++pi) {
            const auto& m = rep.entries[lv * pts.size() + pi];
            s.d_min = std::min(s.d_min, m.d_lo);
            s.d_max = std::max(s.d_max, m.d_hi);
            positive += m.d_lo > 0;
            switch (m.tag) {
            case MultCase::generic_split: ++s.count_i; break;
            case MultCase::persists: ++s.count_ii; break;
            case MultCase::enlarged: ++s.count_iii; break;
            case MultCase::general: ++s.count_general; break;
            }
        }
        s.persists = 2 * positive > pts.size();
        rep.levels.push_back(std::move(s));
    }
    return rep;
}

inline MultiplicityReport classify_multiplicity(const BandEngine& e) { return classify_multiplicity(e, e.grid()); }

struct Band {
    int id = 0;
    double E_min = 0.0, E_max = 0.0;
    long degeneracy = 1;
    GapInterval parent;
    bool degenerate_point = false;
    bool touches_lo = false, touches_hi = false;
    int extended_points = 0;
};

struct LevelBandCount {
    std::size_t level = 0;
    int bands = 0;     // bands whose interval ends at this level
    int expected = 0;  // min(N |J|, |K~|), zero for orphans
    bool agrees = true;
};

struct BandStructure {
    std::vector<Band> bands;
    std::vector<LevelSummary> point_spectrum;
    std::vector<LevelBandCount> counts;
};

inline BandStructure assemble_bands(const BandEngine& e, const std::vector<DispersionSurface>& surfaces,
                                    const MultiplicityReport* mult = nullptr) {
    BandStructure bs;
    for (const auto& s : surfaces) {
        Band b;
        b.id = s.band;
        b.parent = s.parent;
        b.degeneracy = e.degeneracy();
        b.E_min = *std::min_element(s.E.begin(), s.E.end());
        b.E_max = *std::max_element(s.E.begin(), s.E.end());
        b.degenerate_point = b.E_max - b.E_min < e.degen_tol();
        for (auto st : s.status) {
            b.touches_lo = b.touches_lo || st == RootStatus::touch_lo;
            b.touches_hi = b.touches_hi || st == RootStatus::touch_hi;
            b.extended_points += st == RootStatus::extended;
        }
        bs.bands.push_back(b);
    }
    for (std::size_t i = 0; i < e.level_count(); ++i) {
        LevelBandCount c;
        c.level = i;
        c.bands = e.max_rank()[i];
        c.expected = e.expected_rank(i);
        c.agrees = c.bands == c.expected;
        bs.counts.push_back(c);
    }
    if (mult)
        for (const auto& s : mult->levels)
            if (s.persists) bs.point_spectrum.push_back(s);
    return bs;
}

struct GapPreservation {
    bool preserved = false;
    bool node_placement = false;     // chi_n vanishes at every impurity height for all (l,n) in J
    bool nonpositive = false;        // max_p of the top eigenvalue of Q~(p;eps)+A~(p) is <= 0
    double max_value = std::numeric_limits<double>::quiet_NaN();
    double worst_inside = std::numeric_limits<double>::quiet_NaN();  // a band value inside the gap, if any
};

// Is the free gap (eps_{i-1}, eps_i) free of band values on the scanned grid?
inline GapPreservation gap_preservation_check(const BandEngine& e, std::size_t level,
                                              const std::vector<DispersionSurface>& surfaces) {
    GapPreservation out;
    const double lo = level == 0 ? -std::numeric_limits<double>::infinity() : e.levels()[level - 1].energy;
    const double hi = e.levels()[level].energy;
    out.preserved = true;
    for (const auto& s : surfaces)
        for (double E : s.E)
            if (E > lo && E < hi) {
                out.preserved = false;
                out.worst_inside = E;
            }
    out.node_placement = true;
    for (auto [l, n] : e.levels()[level].pairs)
        for (const auto& site : e.fiber().sites())
            out.node_placement = out.node_placement &&
                                 std::abs(transverse_mode(n, site.h, e.config().geom)) <= chi_zero_tol;
    if (out.node_placement) {
        out.max_value = e.max_on_grid_at_level(level);
        out.nonpositive = out.max_value <= 0.0;
    }
    return out;
}

struct GenericGate {
    bool generic = true;
    std::vector<std::string> warnings;
};

// U-set membership at a probe point: generic rank and invertible D at every level in range.
inline GenericGate generic_gate(const BandEngine& e, const QuasiMomentum& probe) {
    GenericGate g;
    for (std::size_t i = 0; i < e.level_count(); ++i) {
        if (e.levels()[i].orphan) continue;
        ResidueData rd = e.residue(probe, i);
        const int want = e.expected_rank(i);
        if (rd.rank != want) {
            g.generic = false;
            g.warnings.push_back("level " + std::to_string(i) + ": residue rank " + std::to_string(rd.rank) +
                                 " differs from " + std::to_string(want) + "; reporting multiplicity bounds");
        } else if (!rd.d_invertible) {
            g.generic = false;
            g.warnings.push_back("level " + std::to_string(i) + ": D is singular at the probe point");
        }
    }
    return g;
}

inline QuasiMomentum probe_point(const BandEngine& e) {
    return {0.2718281828 / double(e.fiber().M()), 0.3141592654, 0};
}

struct SpectrumReport {
    BandStructure bands;
    MultiplicityReport multiplicity;
    std::vector<DispersionSurface> surfaces;
    GenericGate gate;
};

inline SpectrumReport full_spectrum(const BandEngine& e) {
    SpectrumReport r;
    r.gate = generic_gate(e, probe_point(e));
    r.surfaces = scan_torus(e);
    r.multiplicity = classify_multiplicity(e);
    r.bands = assemble_bands(e, r.surfaces, &r.multiplicity);
    return r;
}

} // namespace maglayer
