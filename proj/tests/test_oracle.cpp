#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "maglayer/oracle.hpp"

using namespace maglayer;
constexpr double pi = std::numbers::pi;

namespace {

ModelConfig mono(double x3 = 0.37, double alpha = 0.0) {
    CouplingMatrix c;
    c.alpha = {alpha};
    return ModelConfig::make({1.0, 2 * pi}, {1.0, 0.0, 1.0}, {{{0.0, 0.0, x3}}}, c);
}

ModelConfig poly() {
    CouplingMatrix c;
    c.kind = CouplingMatrix::Kind::general;
    c.alpha = {0.3, -0.2};
    c.blocks = {{0, 1, 0, 0, cplx(0.05, 0.02)}, {0, 0, 1, 0, cplx(0.01, -0.03)}};
    return ModelConfig::make({1.0, 2 * pi}, {1.0, 0.0, 1.0}, {{{0.0, 0.0, 0.3}, {0.5, 0.4, 0.62}}}, c);
}

double eps(int l, int n) { return modified_landau_level(l, n, {1.0, 2 * pi}); }

} // namespace

TEST(FiniteQMatrix, SingleSiteIsScalarKernel) {
    for (double z : {-4.0, 10.0, 30.0}) {
        auto X = finite_q_matrix(0, z, mono(0.37, 0.25));
        ASSERT_EQ(X.rows(), 1);
        EXPECT_NEAR(X(0, 0).real(), q0_regularized(0.37, z, {1.0, 2 * pi}).real() + 0.25, 1e-13);
        EXPECT_EQ(X(0, 0).imag(), 0.0);
    }
}

TEST(FiniteQMatrix, HermitianWithHopping) {
    FiniteLattice fl(poly(), 2);
    EXPECT_EQ(fl.size(), 50u);
    for (double z : {-3.0, 0.5 * (eps(0, 1) + eps(1, 1)), 0.5 * (eps(0, 2) + eps(2, 1))}) {
        MatrixC X = fl.q_matrix_direct(z);
        EXPECT_LT((X - X.adjoint()).norm(), 1e-10 * X.norm());
        // keyed assembly reproduces the element-wise one
        EXPECT_LT((fl.q_matrix(z) - X).norm(), 1e-12 * X.norm());
    }
    EXPECT_GT(fl.coupling().cwiseAbs().maxCoeff(), 0.0);
}

TEST(FiniteQMatrix, EigenvaluesIncreaseInsideGap) {
    FiniteLattice fl(poly(), 1);
    for (auto [a, b] : {std::pair{-20.0, eps(0, 1)}, {eps(0, 1), eps(1, 1)}}) {
        const double w = b - a;
        Eigen::VectorXd prev = hermitian_eigenvalues(fl.q_matrix(a + 1e-3 * w));
        for (int k = 1; k < 40; ++k) {
            Eigen::VectorXd cur = hermitian_eigenvalues(fl.q_matrix(a + (1e-3 + k * 0.998 / 40) * w));
            for (Eigen::Index j = 0; j < cur.size(); ++j) EXPECT_GT(cur(j), prev(j));
            prev = cur;
        }
    }
}

TEST(FiniteEigenvalues, SingleSiteScalarRoot) {
    for (double alpha : {-0.4, 0.0, 0.6}) {
        auto cfg = mono(0.37, alpha);
        auto c = finite_eigenvalues(0, -INFINITY, eps(0, 1), cfg);
        ASSERT_EQ(c.eigenvalues.size(), 1u);
        const double E = c.eigenvalues[0];
        const double h = 1e-6;
        auto f = [&](double z) { return q0_regularized(0.37, z, cfg.geom).real() + alpha; };
        EXPECT_LT(f(E - h), 0.0);
        EXPECT_GT(f(E + h), 0.0);
        EXPECT_LT(std::abs(f(E)), 1e-7);
    }
}

TEST(FiniteEigenvalues, CountScalesWithWindow) {
    auto cfg = mono();
    for (int R = 1; R <= 3; ++R) {
        const std::size_t n = (2 * R + 1) * (2 * R + 1);
        auto c0 = finite_eigenvalues(R, -INFINITY, eps(0, 1), cfg);
        EXPECT_EQ(c0.eigenvalues.size(), n) << "R=" << R;
        EXPECT_EQ(c0.sites, n);
        auto c1 = finite_eigenvalues(R, eps(0, 1), eps(1, 1), cfg);
        EXPECT_EQ(c1.eigenvalues.size(), n) << "R=" << R;
        for (double E : c1.eigenvalues) {
            EXPECT_GT(E, eps(0, 1));
            EXPECT_LT(E, eps(1, 1));
        }
    }
    FiniteLattice fl(poly(), 1);
    EXPECT_EQ(finite_eigenvalues(fl, -INFINITY, eps(0, 1)).eigenvalues.size(), 18u);
}

TEST(FiniteEigenvalues, SubrangeSelectsSubset) {
    auto cfg = mono();
    auto all = finite_eigenvalues(2, -INFINITY, eps(0, 1), cfg);
    const double mid = all.eigenvalues[12];
    auto part = finite_eigenvalues(2, mid - 1e-6, eps(0, 1), cfg);
    EXPECT_EQ(part.eigenvalues.size(), 13u);
    EXPECT_NEAR(part.eigenvalues.front(), mid, 1e-8);
    EXPECT_THROW(finite_eigenvalues(2, 0.5 * eps(0, 1), 0.5 * (eps(0, 1) + eps(1, 1)), cfg), domain_error);
}

TEST(Hausdorff, Basics) {
    EXPECT_EQ(hausdorff_distance({1.0, 2.0}, {1.0, 2.0}), 0.0);
    EXPECT_DOUBLE_EQ(hausdorff_distance({0.0}, {0.0, 3.0}), 3.0);
    EXPECT_DOUBLE_EQ(hausdorff_distance({0.0, 1.0, 5.0}, {1.2, 4.0}), 1.2);
    EXPECT_TRUE(std::isinf(hausdorff_distance({}, {1.0})));
}

TEST(Oracle, CloudsConvergeIntoFirstBand) {
    auto cfg = mono();
    BandEngine e(cfg, SolverControl{});
    auto s = scan_torus(e, 16, 16, 0, 1);
    auto bs = assemble_bands(e, s, nullptr);
    const Band& b0 = bs.bands.front();
    std::vector<double> surface(s.front().E.begin(), s.front().E.end());
    std::vector<std::vector<double>> clouds;
    std::vector<double> to_band;
    for (int R = 1; R <= 3; ++R) {
        auto c = finite_eigenvalues(R, -INFINITY, e.levels()[0].energy, cfg);
        clouds.push_back(c.eigenvalues);
        to_band.push_back(hausdorff_distance(c.eigenvalues, surface));
        EXPECT_TRUE(cloud_in_hull(c, b0.E_min, b0.E_max, 0.05).contained) << "R=" << R;
    }
    EXPECT_GT(to_band[0], to_band[1]);
    EXPECT_GT(to_band[1], to_band[2]);
    EXPECT_GT(hausdorff_distance(clouds[0], clouds[1]), hausdorff_distance(clouds[1], clouds[2]));
}
