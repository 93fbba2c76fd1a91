#include <gtest/gtest.h>

#include <json.hpp>

#include <boost/math/tools/roots.hpp>

#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "cli.hpp"

using namespace maglayer;
namespace fs = std::filesystem;
constexpr double pi = std::numbers::pi;

namespace {

struct Result {
    int code;
    std::string out, err;
};

class Cli : public ::testing::Test {
protected:
    fs::path dir;

    void SetUp() override {
        dir = fs::temp_directory_path() /
              ("maglayer_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }

    std::string config(const std::string& name, const std::string& body) {
        auto p = dir / (name + ".yaml");
        std::ofstream(p) << body << "output: {directory: " << (dir / name).string() << "}\n";
        return p.string();
    }

    Result run(std::vector<std::string> args) {
        args.insert(args.begin(), "maglayer");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        int code = cli::run(int(argv.size()), argv.data(), out, err);
        return {code, out.str(), err.str()};
    }

    static std::string slurp(const fs::path& p) {
        std::ifstream f(p, std::ios::binary);
        return {std::istreambuf_iterator<char>(f), {}};
    }

    static std::vector<std::string> lines(const std::string& s) {
        std::vector<std::string> v;
        std::stringstream ss(s);
        for (std::string l; std::getline(ss, l);) v.push_back(l);
        return v;
    }
};

const std::string mono = "geometry: {d: 1.0, B_over_pi: 2}\n"
                         "impurities: [{s: 0, t: 0, x3: 0.37}]\n"
                         "coupling: {alpha: [0.0]}\n";

} // namespace

TEST_F(Cli, LevelsTable) {
    auto c = config("lv", mono + "numerics: {E_max: 60}\n");
    auto r = run({"--config", c, "levels"});
    ASSERT_EQ(r.code, 0) << r.err;
    auto L = lines(r.out);
    ASSERT_GE(L.size(), 2u);
    EXPECT_EQ(L[0], "index,energy,pairs,orphan");
    EXPECT_EQ(L[1], "0," + cli::fmt(2 * pi + pi * pi) + ",\"(0,1)\",false");
    EXPECT_EQ(slurp(dir / "lv" / "levels.csv"), r.out);

    auto d = config("deg", "geometry: {d: 1.0, B: " + cli::fmt(2 * pi * pi) +
                               "}\nimpurities: [{x3: 0.37}]\nnumerics: {E_max: 120, max_denominator: 1000}\n");
    auto rd = run({"--config", d, "levels"});
    // the field is irrational with respect to the unit cell
    EXPECT_EQ(rd.code, 2);
    auto d2 = config("deg2", "geometry: {d: 1.0, B: " + cli::fmt(2 * pi * pi) +
                                 "}\nlattice: {a1: 1.0, b1: 0.0, b2: " + cli::fmt(1.0 / pi) +
                                 "}\nimpurities: [{x3: 0.37}]\nnumerics: {E_max: 120}\n");
    rd = run({"--config", d2, "levels"});
    ASSERT_EQ(rd.code, 0) << rd.err;
    int doubles = 0;
    for (const auto& l : lines(rd.out)) doubles += l.find(");(") != std::string::npos;
    EXPECT_GE(doubles, 1);
}

TEST_F(Cli, QevalJson) {
    auto c = config("q", mono);
    auto r = run({"--config", c, "qeval", "--p1", "0.1", "--p2", "0.3", "--z", "5.5"});
    ASSERT_EQ(r.code, 0) << r.err;
    auto j = nlohmann::json::parse(r.out);
    EXPECT_TRUE(j["hermitian"].get<bool>());
    EXPECT_EQ(j["dim"], 1);
    EXPECT_LE(j["max_abs_imag_diagonal"].get<double>(), 1e-10);
    EXPECT_GT(j["truncation"]["lattice_radius"].get<double>(), 0.0);
    auto again = run({"--config", c, "qeval", "--p1", "0.1", "--p2", "0.3", "--z", "5.5"});
    EXPECT_EQ(again.out, r.out);

    auto pole = run({"--config", c, "qeval", "--p1", "0.1", "--p2", "0.3", "--z", cli::fmt(2 * pi + pi * pi)});
    EXPECT_EQ(pole.code, 3);
    EXPECT_NE(pole.err.find("level 0"), std::string::npos) << pole.err;
}

TEST_F(Cli, BandsMonoatomic) {
    auto c = config("b", mono + "numerics: {grid: [8, 6]}\n");
    auto r = run({"--config", c, "bands"});
    ASSERT_EQ(r.code, 0) << r.err;
    auto rows = lines(slurp(dir / "b" / "bands.csv"));
    EXPECT_EQ(rows.size(), 1u + 8u);  // one band per scanned gap
    auto surf = lines(slurp(dir / "b" / "surfaces.csv"));
    EXPECT_EQ(surf.size(), 1u + 8u * 8u * 6u);
    EXPECT_EQ(lines(slurp(dir / "b" / "point_spectrum.csv")).size(), 1u);
    auto m = nlohmann::json::parse(slurp(dir / "b" / "manifest.json"));
    for (const char* k : {"abs_tol", "n_max", "grid", "E_max_effective", "energy_tol", "degen_tol", "probe_offset",
                          "zero_test", "cheb_tol", "root_tol", "pole_guard"})
        EXPECT_TRUE(m["config"]["numerics"].contains(k)) << k;
    EXPECT_TRUE(m["versions"].contains("maglayer"));
    EXPECT_TRUE(m["timings"].contains("scan"));

    // byte-identical across runs and worker counts
    const std::string bands = slurp(dir / "b" / "bands.csv"), surfaces = slurp(dir / "b" / "surfaces.csv");
    auto r2 = run({"--config", c, "--jobs", "3", "bands"});
    ASSERT_EQ(r2.code, 0);
    EXPECT_EQ(slurp(dir / "b" / "bands.csv"), bands);
    EXPECT_EQ(slurp(dir / "b" / "surfaces.csv"), surfaces);
}

TEST_F(Cli, BandsHalfFluxDegeneracy) {
    auto c = config("h", "geometry: {d: 1.0, B_over_pi: 1}\nimpurities: [{x3: 0.37}]\nnumerics: {grid: 6}\n");
    auto r = run({"--config", c, "bands"});
    ASSERT_EQ(r.code, 0) << r.err;
    auto rows = lines(slurp(dir / "h" / "bands.csv"));
    ASSERT_GT(rows.size(), 1u);
    for (std::size_t k = 1; k < rows.size(); ++k) {
        std::stringstream ss(rows[k]);
        std::string f;
        for (int col = 0; col < 4; ++col) std::getline(ss, f, ',');
        EXPECT_EQ(f, "2") << rows[k];
    }
}

TEST_F(Cli, DispersionSingleBand) {
    auto c = config("d", mono + "numerics: {grid: 4}\n");
    auto r = run({"--config", c, "dispersion", "--band", "2"});
    ASSERT_EQ(r.code, 0) << r.err;
    auto L = lines(r.out);
    ASSERT_EQ(L.size(), 17u);
    for (std::size_t k = 1; k < L.size(); ++k) EXPECT_EQ(L[k].substr(0, 2), "2,");
    EXPECT_EQ(run({"--config", c, "dispersion", "--band", "0"}).code, 2);
}

TEST_F(Cli, OracleSweep) {
    auto c = config("o", mono + "numerics: {grid: 8, oracle_R: 3}\n");
    auto r = run({"--config", c, "oracle"});
    ASSERT_EQ(r.code, 0) << r.err;
    for (int R = 1; R <= 3; ++R) EXPECT_TRUE(fs::exists(dir / "o" / ("cloud_R" + std::to_string(R) + ".csv")));
    auto j = nlohmann::json::parse(slurp(dir / "o" / "oracle.json"));
    ASSERT_EQ(j["clouds"].size(), 3u);
    for (const auto& e : j["clouds"]) {
        auto v = e["verdict"].get<std::string>();
        EXPECT_TRUE(v == "contained" || v == "margin-exceeded");
    }
    EXPECT_EQ(j["clouds"][2]["count"], 49);

    // single site: the cloud is the root of the scalar kernel
    auto r0 = run({"--config", c, "oracle", "--R", "0"});
    ASSERT_EQ(r0.code, 0) << r0.err;
    auto L = lines(slurp(dir / "o" / "cloud_R0.csv"));
    ASSERT_EQ(L.size(), 2u);
    const double E = std::stod(L[1].substr(L[1].find(',') + 1));
    LayerGeometry g{1.0, 2 * pi};
    auto f = [&](double z) { return q0_regularized(0.37, z, g).real(); };
    std::uintmax_t it = 200;
    auto br = boost::math::tools::bisect(f, -20.0, 2 * pi + pi * pi - 1e-3,
                                         [](double a, double b) { return std::abs(b - a) < 1e-12; }, it);
    EXPECT_NEAR(E, 0.5 * (br.first + br.second), 1e-8);
}

TEST_F(Cli, ConfigErrors) {
    EXPECT_EQ(run({"--config", config("u", mono + "extra: 1\n"), "levels"}).code, 2);
    EXPECT_EQ(run({"--config", config("x", "geometry: {d: 1.0, B: 2.0}\nimpurities: [{x3: 0.3}]\n"), "levels"}).code, 2);
    EXPECT_EQ(run({"--config", config("z", "geometry: {d: 1.0}\nimpurities: [{x3: 1.3}]\n"), "levels"}).code, 2);
    EXPECT_EQ(run({"--config", (dir / "missing.yaml").string(), "levels"}).code, 2);
    EXPECT_EQ(run({"--config", config("v", mono)}).code, 2);
}

TEST_F(Cli, StrictEscalatesNonGeneric) {
    // the node impurity removes one site from the even transverse modes
    auto c = config("s", "geometry: {d: 1.0, B_over_pi: 4}\n"
                         "impurities: [{s: 0, t: 0, x3: 0.5}, {s: 0.5, t: 0.5, x3: 0.3}]\n"
                         "numerics: {grid: 4}\n");
    auto lax = run({"--config", c, "bands"});
    EXPECT_EQ(lax.code, 0);
    EXPECT_NE(lax.err.find("warning"), std::string::npos);
    EXPECT_EQ(run({"--config", c, "--strict", "bands"}).code, 4);
    EXPECT_EQ(run({"--config", config("g", mono + "numerics: {grid: 4}\n"), "--strict", "bands"}).code, 0);
}
