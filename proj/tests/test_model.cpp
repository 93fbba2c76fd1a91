#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <numbers>
#include <set>

#include "maglayer/model.hpp"

using namespace maglayer;
constexpr double pi = std::numbers::pi;

TEST(FluxData, Examples) {
    PlanarLattice lat{1.0, 0.0, 1.0};
    auto f = flux_data({1.0, 2 * pi}, lat);
    EXPECT_NEAR(f.xi, 1.0, 1e-15);
    EXPECT_NEAR(f.eta, 1.0, 1e-15);
    EXPECT_EQ(f.N, 1);
    EXPECT_EQ(f.M, 1);
    f = flux_data({1.0, pi}, lat);
    EXPECT_EQ(f.N, 1);
    EXPECT_EQ(f.M, 2);
    f = flux_data({1.0, 4 * pi / 3}, lat, 10);
    EXPECT_EQ(f.N, 2);
    EXPECT_EQ(f.M, 3);
}

TEST(FluxData, IrrationalRejected) {
    PlanarLattice lat{1.0, 0.0, 1.0};
    EXPECT_THROW(flux_data({1.0, 2.0}, lat, 100), irrational_flux_error);  // eta = 1/pi
}

TEST(FluxData, Consistency) {
    for (double B : {2 * pi, pi, 4 * pi / 3, 6 * pi, -pi}) {
        PlanarLattice lat{1.3, 0.2, 0.8};
        double Beff = B / (1.3 * 0.8);
        auto f = flux_data({1.0, Beff}, lat);
        EXPECT_NEAR(f.eta * 2 * pi / (lat.a1 * lat.b2), Beff, 1e-12 * std::abs(Beff));
        EXPECT_NEAR(double(f.N) / f.M, f.eta, 1e-12);
        EXPECT_EQ(std::gcd(f.N, f.M), 1);
    }
}

TEST(ModifiedLandauLevel, Examples) {
    LayerGeometry g{1.0, 2 * pi};
    EXPECT_NEAR(modified_landau_level(0, 1, g), 2 * pi + pi * pi, 1e-13);
    EXPECT_NEAR(modified_landau_level(1, 2, g), 6 * pi + 4 * pi * pi, 1e-12);
    LayerGeometry g2{1.0, 2 * pi * pi};
    EXPECT_NEAR(modified_landau_level(0, 3, g2), 11 * pi * pi, 1e-12);
    EXPECT_NEAR(modified_landau_level(2, 1, g2), 11 * pi * pi, 1e-12);
}

TEST(LevelTable, IrrationalRatioHasSimpleLevels) {
    LayerGeometry g{1.0, 2 * pi};
    EXPECT_FALSE(transverse_field_ratio(g).has_value());
    auto t = level_table(g, 50 * g.absB());
    ASSERT_GT(t.size(), 50u);
    for (std::size_t i = 0; i < t.size(); ++i) {
        EXPECT_EQ(t[i].pairs.size(), 1u);
        if (i) EXPECT_GT(t[i].energy, t[i - 1].energy);
    }
}

TEST(LevelTable, CollisionsFoundByEnumeration) {
    LayerGeometry g{1.0, 2 * pi * pi};
    auto ratio = transverse_field_ratio(g);
    ASSERT_TRUE(ratio.has_value());
    EXPECT_EQ(ratio->first, 1);
    EXPECT_EQ(ratio->second, 2);
    auto t = level_table(g, 12 * pi * pi);
    bool found = false;
    for (const auto& lv : t.levels)
        if (std::abs(lv.energy - 11 * pi * pi) < 1e-9) {
            EXPECT_EQ(lv.pairs.size(), 2u);
            found = true;
        }
    EXPECT_TRUE(found);
    // brute force: every pair up to E_max appears exactly once
    std::set<std::pair<int, int>> seen;
    for (const auto& lv : t.levels)
        for (auto pr : lv.pairs) {
            EXPECT_TRUE(seen.insert(pr).second);
            EXPECT_NEAR(modified_landau_level(pr.first, pr.second, g), lv.energy, 1e-9 * g.absB());
        }
    for (int n = 1; n < 10; ++n)
        for (int l = 0; l < 20; ++l)
            if (modified_landau_level(l, n, g) <= t.E_max) EXPECT_TRUE(seen.count({l, n}));
}

TEST(LevelTable, PrefixPreserving) {
    LayerGeometry g{1.0, 2 * pi};
    auto a = level_table(g, 80.0), b = level_table(g, 200.0);
    ASSERT_LE(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].energy, b[i].energy);
}

TEST(LevelTable, NodeImpurityMakesOrphans) {
    LayerGeometry g{1.0, 2 * pi};
    ImpuritySet imp{{{0.0, 0.0, 0.5}}};
    auto t = level_table(g, 120.0, &imp);
    int orphans = 0;
    for (const auto& lv : t.levels) {
        bool n2 = lv.pairs.size() == 1 && lv.pairs[0].second == 2;
        bool even = lv.pairs[0].second % 2 == 0;
        EXPECT_EQ(lv.orphan, even);
        orphans += n2;
    }
    EXPECT_GT(orphans, 0);
    ImpuritySet generic{{{0.0, 0.0, 0.37}}};
    for (const auto& lv : level_table(g, 120.0, &generic).levels) EXPECT_FALSE(lv.orphan);
}

TEST(TransverseMode, Examples) {
    LayerGeometry g{1.0, 2 * pi};
    EXPECT_NEAR(transverse_mode(2, 0.5, g), 0.0, 1e-15);
    EXPECT_NEAR(transverse_mode(1, 0.5, g), std::sqrt(2.0), 1e-15);
    LayerGeometry g2{1.7, 1.0};
    for (int n = 1; n <= 5; ++n) {
        double norm = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
            [&](double x) { return std::pow(transverse_mode(n, x, g2), 2); }, 0.0, g2.d, 5, 1e-14);
        EXPECT_NEAR(norm, 1.0, 1e-12);
    }
}

TEST(ReducedImpuritySet, Examples) {
    ImpuritySet one{{{0.0, 0.0, 0.3}}};
    EXPECT_EQ(reduced_impurity_set(one).size(), 1u);
    ImpuritySet stacked{{{0.0, 0.0, 0.7}, {0.0, 0.0, 0.3}}};
    auto r = reduced_impurity_set(stacked);
    ASSERT_EQ(r.size(), 1u);
    EXPECT_EQ(r.points[0].x3, 0.3);
    ImpuritySet two{{{0.0, 0.0, 0.3}, {0.5, 0.5, 0.3}}};
    EXPECT_EQ(reduced_impurity_set(two).size(), 2u);
    auto rr = reduced_impurity_set(r);
    EXPECT_EQ(rr.size(), r.size());
    EXPECT_EQ(rr.points[0].x3, r.points[0].x3);
}

TEST(EnlargedCell, Construction) {
    LayerGeometry g{1.0, pi};
    PlanarLattice lat{1.0, 0.0, 1.0};
    CouplingMatrix c;
    c.alpha = {0.0};
    auto cfg = ModelConfig::make(g, lat, {{{0.25, 0.5, 0.3}}}, c);
    ASSERT_EQ(cfg.flux.M, 2);
    auto e = enlarged_cell(cfg);
    EXPECT_EQ(e.imp.size(), 2u);
    EXPECT_EQ(flux_data(g, e.lat).N, cfg.flux.N);
    EXPECT_EQ(flux_data(g, e.lat).M, 1);

    LayerGeometry g3{1.0, 2 * pi / 3};
    auto cfg3 = ModelConfig::make(g3, lat, {{{0.0, 0.0, 0.3}}}, c);
    ASSERT_EQ(cfg3.flux.M, 3);
    auto e3 = enlarged_cell(cfg3);
    ASSERT_EQ(e3.imp.size(), 3u);
    for (long m = 0; m < 3; ++m) {
        Vec2 pos = e3.lat.at(e3.imp.points[m].s, e3.imp.points[m].t);
        EXPECT_NEAR(pos.x, 0.0, 1e-14);
        EXPECT_NEAR(pos.y, double(m), 1e-14);
    }
}

TEST(Coupling, HermitianCompletionAndCovariance) {
    LayerGeometry g{1.0, 2 * pi};
    PlanarLattice lat{1.0, 0.0, 1.0};
    CouplingMatrix c;
    c.kind = CouplingMatrix::Kind::general;
    c.alpha = {0.2, -0.1};
    c.blocks = {{0, 1, 1, 0, cplx(0.05, 0.02)}, {0, 0, 0, 1, cplx(0.01, 0.0)}};
    auto cfg = ModelConfig::make(g, lat, {{{0.0, 0.0, 0.3}, {0.5, 0.5, 0.6}}}, c);
    EXPECT_EQ(cfg.coupling.blocks.size(), 4u);
    EXPECT_GT(cfg.coupling.c1, 0.0);
    // A(gamma', gamma) = conj A(gamma, gamma') for sites in arbitrary cells
    for (long a = -2; a <= 2; ++a)
        for (long b = -2; b <= 2; ++b)
            for (std::size_t i = 0; i < 2; ++i)
                for (std::size_t j = 0; j < 2; ++j) {
                    cplx x = cfg.coupling_element(i, a + 1, b - 1, j, 1, -1);
                    cplx y = cfg.coupling_element(j, 1, -1, i, a + 1, b - 1);
                    EXPECT_LT(std::abs(x - std::conj(y)), 1e-14);
                }
    // magnetic covariance matches the kernel: A(g - l, g' - l) = e^{i B/2 (g - g')^l} A(g, g')
    for (auto [la, lb] : {std::pair{1L, 0L}, {0L, 1L}, {-2L, 3L}}) {
        Vec2 lam = lat.cell(la, lb);
        Vec2 g1 = lat.cell(2, 0) + cfg.site(0), g2 = lat.cell(1, 0) + cfg.site(1);
        cplx x = cfg.coupling_element(0, 2 - la, -lb, 1, 1 - la, -lb);
        cplx y = std::polar(1.0, 0.5 * g.B * wedge(g1 - g2, lam)) * cfg.coupling_element(0, 2, 0, 1, 1, 0);
        EXPECT_LT(std::abs(x - y), 1e-14);
        EXPECT_GT(std::abs(y), 0.0);
    }
    // inconsistent partner is rejected
    CouplingMatrix bad = c;
    bad.blocks.push_back({1, 0, -1, 0, cplx(7.0, 0.0)});
    EXPECT_THROW(ModelConfig::make(g, lat, {{{0.0, 0.0, 0.3}, {0.5, 0.5, 0.6}}}, bad), config_error);
}

TEST(ModelConfig, ValidationErrors) {
    CouplingMatrix c;
    c.alpha = {0.0};
    PlanarLattice lat{1.0, 0.0, 1.0};
    EXPECT_THROW(ModelConfig::make({0.0, 2 * pi}, lat, {{{0, 0, 0.3}}}, c), config_error);
    EXPECT_THROW(ModelConfig::make({1.0, 0.0}, lat, {{{0, 0, 0.3}}}, c), config_error);
    EXPECT_THROW(ModelConfig::make({1.0, 2 * pi}, lat, {{{0, 0, 1.3}}}, c), config_error);
    EXPECT_THROW(ModelConfig::make({1.0, 2 * pi}, lat, {{{0, 0, 0.3}, {0, 0, 0.3}}}, c), config_error);
    EXPECT_THROW(ModelConfig::make({1.0, 2 * pi}, {0.0, 0.0, 1.0}, {{{0, 0, 0.3}}}, c), config_error);
}
