#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <tuple>
#include <vector>

#include "errors.hpp"
#include "greens.hpp"
#include "model.hpp"

namespace maglayer {

using MatrixC = Eigen::MatrixXcd;

// p1 in [0, 1/M), p2 in [0, 1); j selects the fiber copy for rational flux.
struct QuasiMomentum {
    double p1 = 0.0;
    double p2 = 0.0;
    long j = 0;
};

inline cplx basis_phase(long la, long lb, double p1, double p2, long N) {
    const double t = double(la) * p1 + double(lb) * p2 + 0.5 * double(N) * double(la) * double(lb);
    return std::polar(1.0, -2.0 * std::numbers::pi * t);
}

inline cplx basis_phase(long la, long lb, const QuasiMomentum& p, long N) { return basis_phase(la, lb, p.p1, p.p2, N); }

inline constexpr int psi0_l_max = 60;

// Generalized eigenfunction of the planar operator at quasi-momentum q and Landau index l.
inline cplx psi0(const Vec2& x, double q, int l, const LayerGeometry& g, const PlanarLattice& lat, double eta) {
    if (l < 0 || l > psi0_l_max) throw domain_error("psi0: Landau index out of range");
    const double absB = g.absB(), pi = std::numbers::pi;
    const double y = x.y + lat.b2 * q / eta;
    const double ph = pi * lat.b1 * q * q / (lat.a1 * eta) + 2.0 * pi * x.x / lat.a1 * (eta * x.y / (2.0 * lat.b2) + q);
    return std::pow(absB, 0.25) / std::sqrt(lat.a1) * hermite_function(l, std::sqrt(absB) * y) * std::polar(1.0, ph);
}

// N^{-1/2} sum_m e^{2 pi i m (p2+k)/N} conj psi0(gamma; p1 + eta j + m, l); eta = N/M of the lattice.
inline cplx delta_tilde(const Vec2& gamma, const QuasiMomentum& p, long k, int l, const LayerGeometry& g,
                        const PlanarLattice& lat, const FluxData& f, double abs_tol = 1e-15) {
    const long N = std::labs(f.N);
    const double eta = std::abs(f.eta), absB = g.absB();
    if (k < 0 || k >= N) throw domain_error("delta_tilde: k out of range");
    const double q0 = p.p1 + eta * double(p.j);
    // centre of the Gaussian in m, then walk outwards until the envelope is negligible
    const double centre = -(gamma.y * eta / lat.b2 + q0);
    const long mc = std::lround(centre);
    const double step = std::sqrt(absB) * lat.b2 / eta;
    const double hermite_room = std::sqrt(2.0 * l + 1.0);
    cplx s{};
    for (long dm = 0;; ++dm) {
        bool any = false;
        for (long m : {mc + dm, mc - dm}) {
            if (dm == 0 && m != mc) continue;
            const double yy = std::abs(double(m) - centre) * step;
            const double env = yy > hermite_room ? std::exp(-0.5 * (yy - hermite_room) * (yy - hermite_room)) : 1.0;
            if (env > abs_tol) any = true;
            s += std::polar(1.0, 2.0 * std::numbers::pi * double(m) * (p.p2 + double(k)) / double(N)) *
                 std::conj(psi0(gamma, q0 + double(m), l, g, lat, eta));
            if (dm == 0) break;
        }
        if (!any && dm > 2) break;
    }
    return s / std::sqrt(double(N));
}

namespace detail {

inline double laguerre(int l, double x) {
    double a = 1.0;
    if (l == 0) return a;
    double b = 1.0 - x;
    for (int k = 1; k < l; ++k) {
        double c = ((2.0 * k + 1.0 - x) * b - k * a) / (k + 1.0);
        a = b;
        b = c;
    }
    return b;
}

} // namespace detail

struct QTildeMatrix {
    MatrixC Q;
    MatrixC A;
    MatrixC value;  // Q + A
    cplx z;
    double lattice_radius = 0.0;
};

struct ResidueData {
    MatrixC G;
    int rank = 0;
    MatrixC kernel_basis;
    MatrixC D_op;
    bool d_invertible = true;
};

inline constexpr double rank_tol = 1e-9;
inline constexpr double d_invert_tol = 1e-6;

// Fiber problem of the (possibly enlarged) cell with integer flux. A negative field is handled
// by conjugation: X_B(p) = conj X_{|B|}(-p) with conjugated hopping.
class Fiber {
public:
    struct Site {
        Vec2 x;
        double h;
    };
    struct AmpKey {
        double r2;
        double h1, h2;
        bool coincident;
    };
    struct Term {
        int i, j;
        long la, lb;
        cplx phase;
        int key;
    };
    struct CouplingTerm {
        int i, j;
        long la, lb;
        cplx value;
    };

    Fiber(const ModelConfig& cfg, double z_max, const SeriesControl& ctrl = {},
          std::optional<double> radius = std::nullopt)
        : ctrl_(ctrl), cfg_(cfg) {
        flipped_ = cfg.geom.B < 0.0;
        geom_ = {cfg.geom.d, cfg.geom.absB()};
        N_ = std::labs(cfg.flux.N);
        M_ = cfg.flux.M;
        eta_ = std::abs(cfg.flux.eta);
        ModelConfig c = cfg;
        c.geom = geom_;
        if (flipped_)
            for (auto& b : c.coupling.blocks) b.value = std::conj(b.value);
        c.flux.N = N_;
        c.flux.eta = eta_;
        enl_ = enlarged_cell(c);
        for (const auto& p : enl_.imp.points) sites_.push_back({enl_.lat.at(p.s, p.t), p.x3});
        ctrl_.planar_coincidence = ctrl.planar_coincidence * cfg.lat.a1;
        radius_ = radius ? *radius : lattice_radius(z_max);
        build_terms();
        build_coupling(c);
    }

    std::size_t dim() const { return sites_.size(); }
    long N() const { return N_; }
    long M() const { return M_; }
    double eta() const { return eta_; }
    const LayerGeometry& geom() const { return geom_; }
    const std::vector<Site>& sites() const { return sites_; }
    const std::vector<AmpKey>& keys() const { return keys_; }
    const std::vector<Term>& terms() const { return terms_; }
    const SeriesControl& control() const { return ctrl_; }
    double radius() const { return radius_; }
    const ModelConfig& config() const { return cfg_; }
    const EnlargedCell& cell() const { return enl_; }
    const std::vector<CouplingTerm>& coupling_terms() const { return coupling_; }
    bool flipped() const { return flipped_; }

    // phase * e(p) per term, in the order of terms()
    std::vector<cplx> term_weights(const QuasiMomentum& p) const {
        auto [p1, p2] = internal_momentum(p);
        std::vector<cplx> w;
        w.reserve(terms_.size());
        for (const auto& t : terms_)
            w.push_back(t.phase * std::polar(1.0, -2.0 * std::numbers::pi * (double(t.la) * p1 + double(t.lb) * p2)));
        return w;
    }

    // Smallest R with e^{-|B| R^2/4} (1+R)^s below abs_tol, s from the most negative u over the window.
    double lattice_radius(double z_max) const {
        const double absB = geom_.absB(), pi = std::numbers::pi;
        const double u1 = (absB - z_max + (pi / geom_.d) * (pi / geom_.d)) / (2.0 * absB);
        const double s = 2.0 * std::max(0.0, -u1) + 2.0;
        double R = 0.5;
        while (-absB * R * R / 4.0 + s * std::log1p(R) > std::log(ctrl_.abs_tol)) R += 0.05;
        return R + 1.0;
    }

    // Internal quasi-momentum of the enlarged-cell problem.
    std::pair<double, double> internal_momentum(const QuasiMomentum& p) const {
        double p1 = p.p1 + eta_ * double(p.j), p2 = p.p2;
        if (flipped_) return {-p1, -p2};
        return {p1, p2};
    }

    template <class T>
    T amplitude(const AmpKey& k, const T& z) const {
        if (k.coincident) {
            if (std::abs(k.h1 - k.h2) <= 1e-14 * geom_.d) return q0_amp(k.h1, z, geom_, ctrl_);
            return q_vertical_amp(k.h1, k.h2, z, geom_, ctrl_);
        }
        return g0_amp(k.r2, k.h1, k.h2, z, geom_, ctrl_);
    }

    template <class T>
    std::vector<T> amplitudes(const T& z) const {
        std::vector<T> out;
        out.reserve(keys_.size());
        for (const auto& k : keys_) out.push_back(amplitude(k, z));
        return out;
    }

    // sum over terms of phase * e(p) * values[key]; X is conjugated back for a negative field
    template <class V>
    MatrixC assemble(const QuasiMomentum& p, const std::vector<V>& values) const {
        auto [p1, p2] = internal_momentum(p);
        const std::size_t D = dim();
        MatrixC X = MatrixC::Zero(D, D);
        for (const auto& t : terms_) {
            cplx e = std::polar(1.0, -2.0 * std::numbers::pi * (double(t.la) * p1 + double(t.lb) * p2));
            X(t.i, t.j) += t.phase * e * cplx(values[t.key]);
        }
        if (flipped_) X = X.conjugate().eval();
        return X;
    }

    MatrixC atilde(const QuasiMomentum& p) const {
        auto [p1, p2] = internal_momentum(p);
        const std::size_t D = dim();
        MatrixC X = MatrixC::Zero(D, D);
        for (const auto& t : coupling_)
            X(t.i, t.j) += t.value * std::polar(1.0, -2.0 * std::numbers::pi * (double(t.la) * p1 + double(t.lb) * p2));
        if (flipped_) X = X.conjugate().eval();
        return X;
    }

    QTildeMatrix qtilde(const QuasiMomentum& p, const cplx& z) const {
        QTildeMatrix out;
        // for a negative field the final conjugation also reflects z
        if (z.imag() == 0.0) out.Q = assemble(p, amplitudes(z.real()));
        else out.Q = assemble(p, amplitudes(flipped_ ? std::conj(z) : z));
        out.A = atilde(p);
        out.value = out.Q + out.A;
        out.z = z;
        out.lattice_radius = radius_;
        return out;
    }

    MatrixC dqtilde_dz(const QuasiMomentum& p, double z) const {
        auto amps = amplitudes(Dual{z, 1.0});
        std::vector<double> d;
        d.reserve(amps.size());
        for (const auto& a : amps) d.push_back(a.d);
        return assemble(p, d);
    }

    // sum_lambda P_l(lambda + kappa_i, kappa_j) e^{i B/2 kappa_i ^ lambda} e_lambda(p)
    MatrixC projector_sum(const QuasiMomentum& p, int l) const {
        const double absB = geom_.absB();
        std::vector<double> vals;
        vals.reserve(keys_.size());
        for (const auto& k : keys_) {
            double s = k.coincident ? 0.0 : 0.5 * absB * k.r2;
            vals.push_back(absB / (2.0 * std::numbers::pi) * std::exp(-0.5 * s) * detail::laguerre(l, s));
        }
        return assemble(p, vals);
    }

    // Products chi_n(h_i) chi_n(h_j) summed over the degeneracy set, absolute value per pair.
    double pole_weight(int i, int j, const LevelEntry& lv) const {
        double w = 0.0;
        for (auto [l, n] : lv.pairs)
            w += std::abs(transverse_mode(n, sites_[i].h, geom_) * transverse_mode(n, sites_[j].h, geom_));
        return w;
    }

    double pole_weight_heights(double h1, double h2, const LevelEntry& lv) const {
        double w = 0.0;
        for (auto [l, n] : lv.pairs) w += std::abs(transverse_mode(n, h1, geom_) * transverse_mode(n, h2, geom_));
        return w;
    }

    MatrixC gram(const QuasiMomentum& p, const LevelEntry& lv) const {
        const std::size_t D = dim();
        MatrixC G = MatrixC::Zero(D, D);
        std::map<int, MatrixC> cache;
        for (auto [l, n] : lv.pairs) {
            auto it = cache.find(l);
            if (it == cache.end()) it = cache.emplace(l, projector_sum(p, l)).first;
            for (std::size_t i = 0; i < D; ++i)
                for (std::size_t j = 0; j < D; ++j)
                    G(i, j) += transverse_mode(n, sites_[i].h, geom_) * transverse_mode(n, sites_[j].h, geom_) *
                               it->second(i, j);
        }
        return G;
    }

    // Gram matrix of the explicitly assembled vectors chi_n(kappa_3) delta~_kappa(p;k,l).
    MatrixC gram_from_vectors(const QuasiMomentum& p, const LevelEntry& lv) const {
        const std::size_t D = dim();
        const long rows = N_ * long(lv.pairs.size());
        MatrixC V(rows, D);
        auto [p1, p2] = internal_momentum(p);
        FluxData f{0.0, double(N_), N_, 1};
        QuasiMomentum q{p1, p2, 0};
        for (std::size_t c = 0; c < D; ++c)
            for (std::size_t s = 0; s < lv.pairs.size(); ++s) {
                auto [l, n] = lv.pairs[s];
                for (long k = 0; k < N_; ++k)
                    V(long(s) * N_ + k, c) =
                        transverse_mode(n, sites_[c].h, geom_) * delta_tilde(sites_[c].x, q, k, l, geom_, enl_.lat, f);
            }
        MatrixC G = V.adjoint() * V;
        if (flipped_) G = G.conjugate().eval();
        return G;
    }

private:
    static long ceil_div_pos(double x) { return static_cast<long>(std::ceil(x)); }

    void build_terms() {
        const std::size_t D = sites_.size();
        const Vec2 a = enl_.lat.a(), b = enl_.lat.b();
        const double area = enl_.lat.area();
        std::map<std::tuple<long long, long long, long long, bool>, int> index;
        const double B = geom_.B;
        for (std::size_t i = 0; i < D; ++i)
            for (std::size_t j = 0; j < D; ++j) {
                const Vec2 delta = sites_[i].x - sites_[j].x;
                const double reach = radius_ + delta.norm();
                const long na = ceil_div_pos(reach * b.norm() / area) + 1;
                const long nb = ceil_div_pos(reach * a.norm() / area) + 1;
                for (long la = -na; la <= na; ++la)
                    for (long lb = -nb; lb <= nb; ++lb) {
                        const Vec2 lam = enl_.lat.cell(la, lb);
                        const Vec2 sep = lam + delta;
                        const double r = sep.norm();
                        if (r > radius_) continue;
                        const bool coinc = r < ctrl_.planar_coincidence;
                        const double h1 = std::min(sites_[i].h, sites_[j].h), h2 = std::max(sites_[i].h, sites_[j].h);
                        const double r2 = coinc ? 0.0 : r * r;
                        auto key = std::make_tuple(std::llround(r2 * 1e9), std::llround(h1 * 1e12),
                                                   std::llround(h2 * 1e12), coinc);
                        auto it = index.find(key);
                        if (it == index.end()) {
                            it = index.emplace(key, int(keys_.size())).first;
                            keys_.push_back({r2, h1, h2, coinc});
                        }
                        const double arg = -0.5 * B * wedge(lam + sites_[i].x, sites_[j].x) +
                                           0.5 * B * wedge(sites_[i].x, lam) -
                                           std::numbers::pi * double(N_) * double(la) * double(lb);
                        terms_.push_back({int(i), int(j), la, lb, std::polar(1.0, arg), it->second});
                    }
            }
    }

    // Enlarged site (la, lb') + kappa_hat_i sits in original cell (la, M lb' + m_i).
    void build_coupling(const ModelConfig& c) {
        const long M = M_;
        const double B = geom_.B;
        auto add = [&](int i, int j, long la, long lb, cplx h) {
            const Vec2 lam = enl_.lat.cell(la, lb);
            const double arg = 0.5 * B * wedge(sites_[i].x, lam) - std::numbers::pi * double(N_) * double(la) * double(lb);
            coupling_.push_back({i, j, la, lb, h * std::polar(1.0, arg)});
        };
        const std::size_t D = sites_.size();
        for (std::size_t i = 0; i < D; ++i)
            for (std::size_t j = 0; j < D; ++j) {
                auto [oi, mi] = enl_.origin[i];
                auto [oj, mj] = enl_.origin[j];
                if (i == j) {
                    cplx h = c.coupling_element(oi, 0, mi, oj, 0, mj);
                    if (h != cplx{}) add(int(i), int(j), 0, 0, h);
                }
                if (c.coupling.kind != CouplingMatrix::Kind::general) continue;
                for (const auto& blk : c.coupling.blocks) {
                    if (blk.i != int(oi) || blk.j != int(oj)) continue;
                    long num = blk.lb - mi + mj;
                    if (num % M != 0) continue;
                    long lbp = num / M;
                    long la = blk.la;
                    if (i == j && la == 0 && lbp == 0) continue;  // already in the diagonal entry
                    cplx h = c.coupling_element(oi, la, M * lbp + mi, oj, 0, mj);
                    if (h != cplx{}) add(int(i), int(j), la, lbp, h);
                }
            }
    }

    SeriesControl ctrl_;
    ModelConfig cfg_;
    LayerGeometry geom_;
    EnlargedCell enl_;
    std::vector<Site> sites_;
    std::vector<AmpKey> keys_;
    std::vector<Term> terms_;
    std::vector<CouplingTerm> coupling_;
    double radius_ = 0.0;
    long N_ = 1, M_ = 1;
    double eta_ = 1.0;
    bool flipped_ = false;
};

inline Eigen::VectorXd hermitian_eigenvalues(const MatrixC& X) {
    MatrixC H = 0.5 * (X + X.adjoint());
    Eigen::SelfAdjointEigenSolver<MatrixC> es(H, Eigen::EigenvaluesOnly);
    return es.eigenvalues();
}

// G, rank and kernel at a level; D from three offsets below the level with Richardson extrapolation.
// xeval evaluates Q~+A~ at real z; gap is the width of the free gap below the level.
inline ResidueData residue_data(const Fiber& f, const QuasiMomentum& p, const LevelEntry& lv, double gap,
                                const std::function<MatrixC(double)>& xeval) {
    ResidueData r;
    r.G = f.gram(p, lv);
    MatrixC H = 0.5 * (r.G + r.G.adjoint());
    Eigen::SelfAdjointEigenSolver<MatrixC> es(H);
    const auto& ev = es.eigenvalues();
    const std::size_t D = f.dim();
    const double smax = std::max(std::abs(ev.maxCoeff()), std::abs(ev.minCoeff()));
    const double floor_abs = 1e-12 * f.geom().absB();
    std::vector<int> ker;
    for (std::size_t k = 0; k < D; ++k) {
        if (smax > floor_abs && ev(k) > rank_tol * smax) ++r.rank;
        else ker.push_back(int(k));
    }
    r.kernel_basis = MatrixC(D, ker.size());
    for (std::size_t c = 0; c < ker.size(); ++c) r.kernel_basis.col(c) = es.eigenvectors().col(ker[c]);
    if (ker.empty()) {
        r.D_op = MatrixC(0, 0);
        r.d_invertible = true;
        return r;
    }
    const double h = 1e-4 * gap;
    MatrixC K = r.kernel_basis;
    MatrixC D1 = K.adjoint() * xeval(lv.energy - h) * K;
    MatrixC D2 = K.adjoint() * xeval(lv.energy - 2.0 * h) * K;
    MatrixC D4 = K.adjoint() * xeval(lv.energy - 4.0 * h) * K;
    r.D_op = (8.0 * D1 - 6.0 * D2 + D4) / 3.0;
    Eigen::JacobiSVD<MatrixC> svd(r.D_op);
    const auto& sv = svd.singularValues();
    const double big = sv.size() ? sv(0) : 0.0, small = sv.size() ? sv(sv.size() - 1) : 0.0;
    r.d_invertible = big > 0.0 && small > d_invert_tol * big;
    return r;
}

inline ResidueData residue_data(const Fiber& f, const QuasiMomentum& p, const LevelEntry& lv, double gap) {
    return residue_data(f, p, lv, gap, [&](double z) { return f.qtilde(p, cplx(z)).value; });
}

// Partial double series sum_{l<=L, n<=Nn} chi chi (eps - z)^{-2} S_l(p); every term is PSD.
inline MatrixC dqtilde_dz_series(const Fiber& f, const QuasiMomentum& p, double z, int L, int Nn) {
    const std::size_t D = f.dim();
    MatrixC out = MatrixC::Zero(D, D);
    for (int l = 0; l <= L; ++l) {
        MatrixC S = f.projector_sum(p, l);
        for (int n = 1; n <= Nn; ++n) {
            double e = modified_landau_level(l, n, f.geom());
            double w = 1.0 / ((e - z) * (e - z));
            for (std::size_t i = 0; i < D; ++i)
                for (std::size_t j = 0; j < D; ++j)
                    out(i, j) += w * transverse_mode(n, f.sites()[i].h, f.geom()) *
                                 transverse_mode(n, f.sites()[j].h, f.geom()) * S(i, j);
        }
    }
    return out;
}

} // namespace maglayer
