#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <boost/version.hpp>

#include <charconv>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <numbers>
#include <sstream>

#include "maglayer/oracle.hpp"

namespace maglayer::cli {

using nlohmann::json;
namespace fs = std::filesystem;

std::string fmt(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, r.ptr);
}

namespace {

// ---- configuration ---------------------------------------------------------------------------

void only_keys(const YAML::Node& n, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!n.IsMap()) throw config_error(where + ": expected a mapping");
    for (const auto& kv : n) {
        const auto key = kv.first.as<std::string>();
        bool found = false;
        for (const char* a : allowed) found = found || key == a;
        if (!found) throw config_error(where + ": unknown key '" + key + "'");
    }
}

template <class T>
void read(const YAML::Node& n, const char* key, T& into) {
    if (n[key]) into = n[key].as<T>();
}

cplx read_complex(const YAML::Node& n) {
    if (n.IsSequence()) {
        if (n.size() != 2) throw config_error("complex value must be [re, im]");
        return {n[0].as<double>(), n[1].as<double>()};
    }
    return {n.as<double>(), 0.0};
}

RunConfig parse_impl(const YAML::Node& root) {
    only_keys(root, "config", {"geometry", "lattice", "impurities", "coupling", "numerics", "output"});
    RunConfig rc;
    LayerGeometry g;
    if (!root["geometry"]) throw config_error("config: missing 'geometry'");
    const auto geo = root["geometry"];
    only_keys(geo, "geometry", {"d", "B", "B_over_pi"});
    read(geo, "d", g.d);
    if (geo["B"] && geo["B_over_pi"]) throw config_error("geometry: give either B or B_over_pi");
    if (geo["B"]) g.B = geo["B"].as<double>();
    if (geo["B_over_pi"]) g.B = geo["B_over_pi"].as<double>() * std::numbers::pi;

    PlanarLattice lat;
    if (root["lattice"]) {
        only_keys(root["lattice"], "lattice", {"a1", "b1", "b2"});
        read(root["lattice"], "a1", lat.a1);
        read(root["lattice"], "b1", lat.b1);
        read(root["lattice"], "b2", lat.b2);
    }

    ImpuritySet imp;
    const auto ims = root["impurities"];
    if (!ims || !ims.IsSequence()) throw config_error("config: 'impurities' must be a list");
    for (const auto& p : ims) {
        only_keys(p, "impurity", {"s", "t", "x3"});
        if (!p["x3"]) throw config_error("impurity: missing 'x3'");
        Impurity q;
        read(p, "s", q.s);
        read(p, "t", q.t);
        read(p, "x3", q.x3);
        imp.points.push_back(q);
    }

    CouplingMatrix c;
    if (root["coupling"]) {
        const auto cn = root["coupling"];
        only_keys(cn, "coupling", {"alpha", "blocks", "c1", "c2"});
        if (cn["alpha"]) {
            if (cn["alpha"].IsSequence()) c.alpha = cn["alpha"].as<std::vector<double>>();
            else c.alpha.assign(imp.size(), cn["alpha"].as<double>());
        }
        read(cn, "c1", c.c1);
        read(cn, "c2", c.c2);
        if (cn["blocks"]) {
            if (!cn["blocks"].IsSequence()) throw config_error("coupling: 'blocks' must be a list");
            for (const auto& b : cn["blocks"]) {
                only_keys(b, "block", {"i", "j", "la", "lb", "value"});
                if (!b["i"] || !b["j"] || !b["value"]) throw config_error("block: needs i, j and value");
                HoppingBlock h;
                read(b, "i", h.i);
                read(b, "j", h.j);
                read(b, "la", h.la);
                read(b, "lb", h.lb);
                h.value = read_complex(b["value"]);
                c.blocks.push_back(h);
            }
            if (!c.blocks.empty()) c.kind = CouplingMatrix::Kind::general;
        }
    }
    if (c.alpha.empty()) c.alpha.assign(imp.size(), 0.0);

    auto& s = rc.solver;
    if (root["numerics"]) {
        const auto nm = root["numerics"];
        only_keys(nm, "numerics", {"abs_tol", "n_max", "grid", "E_max", "max_denominator", "oracle_R", "root_tol",
                                   "energy_tol", "degen_tol", "probe_offset", "zero_test", "cheb_tol",
                                   "coverage_limit", "jobs"});
        read(nm, "abs_tol", s.series.abs_tol);
        read(nm, "n_max", s.series.n_max);
        if (nm["grid"]) {
            auto gr = nm["grid"];
            if (gr.IsSequence() && gr.size() == 2) {
                s.grid1 = gr[0].as<int>();
                s.grid2 = gr[1].as<int>();
            } else
                s.grid1 = s.grid2 = gr.as<int>();
            if (s.grid1 < 1 || s.grid2 < 1) throw config_error("numerics: grid sizes must be positive");
        }
        read(nm, "E_max", s.E_max);
        read(nm, "max_denominator", rc.max_denominator);
        read(nm, "oracle_R", rc.oracle_R);
        read(nm, "root_tol", s.root_tol);
        read(nm, "energy_tol", s.energy_tol);
        read(nm, "degen_tol", s.degen_tol);
        read(nm, "probe_offset", s.probe_offset);
        read(nm, "zero_test", s.zero_test);
        read(nm, "cheb_tol", s.cheb_tol);
        read(nm, "coverage_limit", s.coverage_limit);
        read(nm, "jobs", s.jobs);
        if (!(s.series.abs_tol > 0.0)) throw config_error("numerics: abs_tol must be positive");
        if (rc.max_denominator < 1) throw config_error("numerics: max_denominator must be positive");
        if (rc.oracle_R < 0) throw config_error("numerics: oracle_R must be nonnegative");
    }
    if (root["output"]) {
        const auto on = root["output"];
        only_keys(on, "output", {"directory", "formats"});
        read(on, "directory", rc.out_dir);
        if (on["formats"]) {
            rc.formats = on["formats"].as<std::vector<std::string>>();
            for (const auto& f : rc.formats)
                if (f != "csv" && f != "json") throw config_error("output: unknown format '" + f + "'");
        }
    }
    rc.model = ModelConfig::make(g, lat, imp, c, rc.max_denominator);
    return rc;
}

// ---- output helpers --------------------------------------------------------------------------

bool wants(const RunConfig& rc, const char* f) {
    return std::find(rc.formats.begin(), rc.formats.end(), f) != rc.formats.end();
}

void write_file(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + p.string());
    f << text;
}

std::string pairs_text(const std::vector<std::pair<int, int>>& pairs) {
    std::string s = "\"";
    for (std::size_t k = 0; k < pairs.size(); ++k)
        s += (k ? ";(" : "(") + std::to_string(pairs[k].first) + "," + std::to_string(pairs[k].second) + ")";
    return s + "\"";
}

json pairs_json(const std::vector<std::pair<int, int>>& pairs) {
    json a = json::array();
    for (auto [l, n] : pairs) a.push_back({l, n});
    return a;
}

json matrix_json(const MatrixC& m) {
    json re = json::array(), im = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json r = json::array(), c = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            r.push_back(m(i, j).real());
            c.push_back(m(i, j).imag());
        }
        re.push_back(r);
        im.push_back(c);
    }
    return {{"re", re}, {"im", im}};
}

const char* bool_text(bool b) { return b ? "true" : "false"; }

double effective_E_max(const RunConfig& rc) {
    return rc.solver.E_max > 0.0 ? rc.solver.E_max : default_energy_window(rc.model.geom);
}

json config_echo(const RunConfig& rc) {
    const auto& m = rc.model;
    json imps = json::array();
    for (const auto& p : m.imp.points) imps.push_back({{"s", p.s}, {"t", p.t}, {"x3", p.x3}});
    json blocks = json::array();
    for (const auto& b : m.coupling.blocks)
        blocks.push_back({{"i", b.i}, {"j", b.j}, {"la", b.la}, {"lb", b.lb}, {"value", {b.value.real(), b.value.imag()}}});
    const auto& s = rc.solver;
    return {
        {"geometry", {{"d", m.geom.d}, {"B", m.geom.B}}},
        {"lattice", {{"a1", m.lat.a1}, {"b1", m.lat.b1}, {"b2", m.lat.b2}}},
        {"impurities", imps},
        {"coupling",
         {{"kind", m.coupling.kind == CouplingMatrix::Kind::general ? "general" : "diagonal"},
          {"alpha", m.coupling.alpha},
          {"blocks", blocks},
          {"c1", m.coupling.c1},
          {"c2", m.coupling.c2}}},
        {"flux", {{"eta", m.flux.eta}, {"N", m.flux.N}, {"M", m.flux.M}}},
        {"numerics",
         {{"abs_tol", s.series.abs_tol},
          {"n_max", s.series.n_max},
          {"tail_mode", s.series.tail_mode == SeriesControl::Tail::accelerated ? "accelerated" : "direct"},
          {"planar_coincidence", s.series.planar_coincidence},
          {"pole_guard", s.series.pole_guard},
          {"grid", {s.grid1, s.grid2}},
          {"E_max", s.E_max},
          {"E_max_effective", effective_E_max(rc)},
          {"max_denominator", rc.max_denominator},
          {"oracle_R", rc.oracle_R},
          {"root_tol", s.root_tol},
          {"energy_tol", s.energy_tol},
          {"degen_tol", s.degen_tol},
          {"probe_offset", s.probe_offset},
          {"zero_test", s.zero_test},
          {"cheb_tol", s.cheb_tol},
          {"cheb_max_depth", s.cheb_max_depth},
          {"coverage_limit", s.coverage_limit},
          {"rank_tol", rank_tol},
          {"d_invert_tol", d_invert_tol},
          {"jobs", s.jobs}}},
        {"output", {{"directory", rc.out_dir}, {"formats", rc.formats}}},
    };
}

json versions() {
    return {{"maglayer", version},
            {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                          std::to_string(EIGEN_MINOR_VERSION)},
            {"boost", std::to_string(BOOST_VERSION / 100000) + "." + std::to_string(BOOST_VERSION / 100 % 1000)}};
}

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string bands_csv(const BandStructure& bs) {
    std::string s = "band,E_min,E_max,degeneracy,parent_lo,parent_hi,first_gap,last_gap,degenerate,touches_lo,"
                    "touches_hi,extended_points\n";
    for (const auto& b : bs.bands)
        s += std::to_string(b.id) + "," + fmt(b.E_min) + "," + fmt(b.E_max) + "," + std::to_string(b.degeneracy) +
             "," + fmt(b.parent.lo) + "," + fmt(b.parent.hi) + "," + std::to_string(b.parent.first_gap) + "," +
             std::to_string(b.parent.last_gap) + "," + bool_text(b.degenerate_point) + "," +
             bool_text(b.touches_lo) + "," + bool_text(b.touches_hi) + "," + std::to_string(b.extended_points) +
             "\n";
    return s;
}

std::string surfaces_csv(const std::vector<DispersionSurface>& surfaces) {
    std::string s = "band,p1,p2,j,E,status,residual\n";
    for (const auto& sf : surfaces)
        for (std::size_t k = 0; k < sf.points.size(); ++k)
            s += std::to_string(sf.band) + "," + fmt(sf.points[k].p1) + "," + fmt(sf.points[k].p2) + "," +
                 std::to_string(sf.points[k].j) + "," + fmt(sf.E[k]) + "," + status_name(sf.status[k]) + "," +
                 fmt(sf.residual[k]) + "\n";
    return s;
}

std::string point_spectrum_csv(const BandStructure& bs) {
    std::string s = "level,energy,pairs,d_min,d_max\n";
    for (const auto& l : bs.point_spectrum)
        s += std::to_string(l.level) + "," + fmt(l.energy) + "," + pairs_text(l.pairs) + "," +
             std::to_string(l.d_min) + "," + std::to_string(l.d_max) + "\n";
    return s;
}

json summary_json(const SpectrumReport& r) {
    json levels = json::array();
    for (const auto& l : r.multiplicity.levels)
        levels.push_back({{"level", l.level},
                          {"energy", l.energy},
                          {"pairs", pairs_json(l.pairs)},
                          {"orphan", l.orphan},
                          {"persists", l.persists},
                          {"d_min", l.d_min},
                          {"d_max", l.d_max},
                          {"case_i", l.count_i},
                          {"case_ii", l.count_ii},
                          {"case_iii", l.count_iii},
                          {"case_general", l.count_general}});
    json counts = json::array();
    for (const auto& c : r.bands.counts)
        counts.push_back({{"level", c.level}, {"bands", c.bands}, {"expected", c.expected}, {"agrees", c.agrees}});
    return {{"generic", r.gate.generic}, {"warnings", r.gate.warnings}, {"levels", levels}, {"band_counts", counts}};
}

// ---- subcommands -----------------------------------------------------------------------------

struct Options {
    std::string config;
    std::string out;
    unsigned jobs = 0;
    bool strict = false;
    double p1 = 0.0, p2 = 0.0, z = 0.0;
    long j = 0;
    int band = 1;
    int gap = 0;
    std::vector<int> radii;
    double margin = 0.05;
};

int cmd_levels(const RunConfig& rc, std::ostream& out) {
    auto t = level_table(rc.model.geom, effective_E_max(rc), &rc.model.imp);
    std::string s = "index,energy,pairs,orphan\n";
    for (std::size_t i = 0; i < t.size(); ++i)
        s += std::to_string(i) + "," + fmt(t[i].energy) + "," + pairs_text(t[i].pairs) + "," +
             bool_text(t[i].orphan) + "\n";
    if (wants(rc, "csv")) write_file(fs::path(rc.out_dir) / "levels.csv", s);
    out << s;
    return ok;
}

int cmd_qeval(const RunConfig& rc, const Options& o, std::ostream& out) {
    const double zmax = std::max(o.z, effective_E_max(rc));
    Fiber f(rc.model, zmax, rc.solver.series);
    const QuasiMomentum p{o.p1, o.p2, o.j};
    QTildeMatrix q;
    try {
        q = f.qtilde(p, cplx(o.z));
    } catch (const pole_error& e) {
        auto t = level_table(rc.model.geom, zmax + rc.model.geom.absB(), &rc.model.imp);
        std::size_t best = 0;
        for (std::size_t i = 1; i < t.size(); ++i)
            if (std::abs(t[i].energy - e.where) < std::abs(t[best].energy - e.where)) best = i;
        throw pole_error(std::string(e.what()) + " (level " + std::to_string(best) + ", energy " +
                             fmt(t[best].energy) + ")",
                         e.where);
    }
    const MatrixC& X = q.value;
    const double herm = (X - X.adjoint()).norm();
    double max_imag_diag = 0.0;
    for (Eigen::Index i = 0; i < X.rows(); ++i) max_imag_diag = std::max(max_imag_diag, std::abs(X(i, i).imag()));
    Eigen::VectorXd ev = hermitian_eigenvalues(X);
    json j = {
        {"p", {{"p1", p.p1}, {"p2", p.p2}, {"j", p.j}}},
        {"z", o.z},
        {"dim", f.dim()},
        {"Q", matrix_json(q.Q)},
        {"A", matrix_json(q.A)},
        {"value", matrix_json(X)},
        {"eigenvalues", std::vector<double>(ev.data(), ev.data() + ev.size())},
        {"hermitian", herm <= 1e-10 * std::max(1.0, X.norm())},
        {"hermiticity_error", herm},
        {"max_abs_imag_diagonal", max_imag_diag},
        {"truncation",
         {{"lattice_radius", q.lattice_radius},
          {"abs_tol", rc.solver.series.abs_tol},
          {"n_max", rc.solver.series.n_max},
          {"terms", f.terms().size()},
          {"amplitude_keys", f.keys().size()}}},
    };
    const std::string s = j.dump(2) + "\n";
    if (wants(rc, "json")) write_file(fs::path(rc.out_dir) / "qeval.json", s);
    out << s;
    return ok;
}

void warn_gate(const GenericGate& g, std::ostream& err) {
    for (const auto& w : g.warnings) err << "warning: " << w << "\n";
}

int cmd_dispersion(const RunConfig& rc, const Options& o, std::ostream& out, std::ostream& err) {
    BandEngine e(rc.model, rc.solver);
    if (o.band < 1 || o.band > e.band_count())
        throw config_error("band index out of range (1.." + std::to_string(e.band_count()) + ")");
    auto gate = generic_gate(e, probe_point(e));
    warn_gate(gate, err);
    auto all = scan_torus(e, rc.solver.grid1, rc.solver.grid2, o.j, rc.solver.jobs);
    std::vector<DispersionSurface> one;
    for (auto& s : all)
        if (s.band == o.band) one.push_back(std::move(s));
    const std::string s = surfaces_csv(one);
    if (wants(rc, "csv")) write_file(fs::path(rc.out_dir) / "dispersion.csv", s);
    out << s;
    return o.strict && !gate.generic ? non_generic : ok;
}

SpectrumReport run_bands(const RunConfig& rc, json& timings) {
    auto t0 = Clock::now();
    BandEngine e(rc.model, rc.solver);
    timings["engine"] = seconds_since(t0);
    SpectrumReport r;
    t0 = Clock::now();
    r.gate = generic_gate(e, probe_point(e));
    timings["gate"] = seconds_since(t0);
    t0 = Clock::now();
    r.surfaces = scan_torus(e);
    timings["scan"] = seconds_since(t0);
    t0 = Clock::now();
    r.multiplicity = classify_multiplicity(e);
    timings["multiplicity"] = seconds_since(t0);
    r.bands = assemble_bands(e, r.surfaces, &r.multiplicity);
    return r;
}

void write_band_outputs(const RunConfig& rc, const SpectrumReport& r, const json& timings) {
    const fs::path dir(rc.out_dir);
    if (wants(rc, "csv")) {
        write_file(dir / "bands.csv", bands_csv(r.bands));
        write_file(dir / "surfaces.csv", surfaces_csv(r.surfaces));
        write_file(dir / "point_spectrum.csv", point_spectrum_csv(r.bands));
    }
    if (wants(rc, "json")) {
        json m = {{"config", config_echo(rc)}, {"versions", versions()}, {"timings", timings}, {"summary", summary_json(r)}};
        write_file(dir / "manifest.json", m.dump(2) + "\n");
    }
}

int cmd_bands(const RunConfig& rc, const Options& o, std::ostream& out, std::ostream& err) {
    json timings = json::object();
    auto t0 = Clock::now();
    auto r = run_bands(rc, timings);
    timings["total"] = seconds_since(t0);
    warn_gate(r.gate, err);
    write_band_outputs(rc, r, timings);
    out << bands_csv(r.bands);
    return o.strict && !r.gate.generic ? non_generic : ok;
}

std::vector<std::pair<double, double>> read_band_ranges(const fs::path& p) {
    std::ifstream f(p);
    std::string line;
    std::getline(f, line);
    std::vector<std::pair<double, double>> out;
    while (std::getline(f, line)) {
        std::stringstream ss(line);
        std::string id, lo, hi;
        std::getline(ss, id, ',');
        std::getline(ss, lo, ',');
        std::getline(ss, hi, ',');
        if (hi.empty()) continue;
        out.push_back({std::stod(lo), std::stod(hi)});
    }
    return out;
}

int cmd_oracle(const RunConfig& rc, const Options& o, std::ostream& out, std::ostream& err) {
    const fs::path dir(rc.out_dir);
    auto table = level_table(rc.model.geom, effective_E_max(rc), &rc.model.imp);
    if (o.gap < 0 || o.gap >= int(table.size()))
        throw config_error("gap index out of range (0.." + std::to_string(table.size() - 1) + ")");
    const double lo = o.gap == 0 ? -std::numeric_limits<double>::infinity() : table[o.gap - 1].energy;
    const double hi = table[o.gap].energy;

    if (!fs::exists(dir / "bands.csv")) {
        json timings = json::object();
        auto r = run_bands(rc, timings);
        warn_gate(r.gate, err);
        RunConfig csv_only = rc;
        csv_only.formats = {"csv", "json"};
        write_band_outputs(csv_only, r, timings);
    }
    double hull_lo = std::numeric_limits<double>::infinity(), hull_hi = -hull_lo;
    for (auto [a, b] : read_band_ranges(dir / "bands.csv"))
        if (b > lo && a < hi) {
            hull_lo = std::min(hull_lo, a);
            hull_hi = std::max(hull_hi, b);
        }
    const bool have_hull = hull_lo <= hull_hi;

    std::vector<int> radii = o.radii;
    if (radii.empty())
        for (int R = 1; R <= rc.oracle_R; ++R) radii.push_back(R);
    OracleControl oc;
    oc.energy_tol = rc.solver.energy_tol;
    oc.probe_offset = rc.solver.probe_offset;
    oc.cheb_tol = rc.solver.cheb_tol;
    oc.series = rc.solver.series;

    json report = {{"gap", o.gap},
                   {"gap_lo", lo},
                   {"gap_hi", hi},
                   {"hull", have_hull ? json{hull_lo, hull_hi} : json(nullptr)},
                   {"margin_fraction", o.margin},
                   {"clouds", json::array()}};
    std::vector<double> prev;
    for (int R : radii) {
        auto c = finite_eigenvalues(R, lo, hi, rc.model, oc);
        std::string s = "index,energy\n";
        for (std::size_t k = 0; k < c.eigenvalues.size(); ++k) s += std::to_string(k) + "," + fmt(c.eigenvalues[k]) + "\n";
        if (wants(rc, "csv")) write_file(dir / ("cloud_R" + std::to_string(R) + ".csv"), s);
        Containment ct;
        if (have_hull) ct = cloud_in_hull(c, hull_lo, hull_hi, o.margin);
        else ct.contained = c.eigenvalues.empty();
        const char* verdict = ct.contained ? "contained" : "margin-exceeded";
        json entry = {{"R", R},
                      {"sites", c.sites},
                      {"count", c.eigenvalues.size()},
                      {"worst_excess", ct.worst_excess},
                      {"margin", ct.margin},
                      {"verdict", verdict}};
        if (!prev.empty()) entry["hausdorff_to_previous"] = hausdorff_distance(prev, c.eigenvalues);
        report["clouds"].push_back(entry);
        out << "R=" << R << " eigenvalues=" << c.eigenvalues.size() << " verdict=" << verdict << "\n";
        prev = c.eigenvalues;
    }
    if (wants(rc, "json")) write_file(dir / "oracle.json", report.dump(2) + "\n");
    return ok;
}

int cmd_report(const RunConfig& rc, const Options& o, std::ostream& out, std::ostream& err) {
    json timings = json::object();
    auto r = run_bands(rc, timings);
    warn_gate(r.gate, err);
    const auto& f = rc.model.flux;
    out << "flux eta = " << fmt(f.eta) << " (N=" << f.N << ", M=" << f.M << "), sites per cell " << rc.model.sites()
        << "\n";
    out << (r.gate.generic ? "generic configuration\n" : "non-generic configuration\n");
    out << "bands:\n";
    for (const auto& b : r.bands.bands)
        out << "  " << b.id << ": [" << fmt(b.E_min) << ", " << fmt(b.E_max) << "] degeneracy " << b.degeneracy
            << (b.degenerate_point ? " (flat)" : "") << "\n";
    out << "levels:\n";
    for (const auto& l : r.multiplicity.levels) {
        out << "  " << l.level << ": " << fmt(l.energy) << (l.orphan ? " orphan" : "");
        if (l.persists) out << " eigenvalue, multiplicity " << l.d_min << (l.d_max != l.d_min ? ".." + std::to_string(l.d_max) : "");
        out << "\n";
    }
    if (wants(rc, "json")) {
        json m = {{"config", config_echo(rc)}, {"versions", versions()}, {"timings", timings}, {"summary", summary_json(r)}};
        write_file(fs::path(rc.out_dir) / "report.json", m.dump(2) + "\n");
    }
    return o.strict && !r.gate.generic ? non_generic : ok;
}

} // namespace

RunConfig parse_config(const YAML::Node& root) {
    try {
        return parse_impl(root);
    } catch (const YAML::Exception& e) {
        throw config_error(std::string("config: ") + e.what());
    }
}

RunConfig load_config(const std::string& path) {
    YAML::Node n;
    try {
        n = YAML::LoadFile(path);
    } catch (const YAML::Exception& e) {
        throw config_error("cannot read config '" + path + "': " + e.what());
    }
    return parse_config(n);
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Band spectra of periodic point interactions in a magnetic Dirichlet layer", "maglayer"};
    app.set_version_flag("--version", version);
    Options o;
    app.add_option("--config", o.config, "YAML run configuration")->required()->check(CLI::ExistingFile);
    app.add_option("--jobs", o.jobs, "worker threads for scans");
    app.add_flag("--strict", o.strict, "exit 4 when the configuration is not generic");
    app.add_option("--out", o.out, "output directory");
    app.require_subcommand(1);
    auto* levels = app.add_subcommand("levels", "modified Landau levels up to E_max");
    auto* qeval = app.add_subcommand("qeval", "fiber Krein matrix at one quasi-momentum and energy");
    qeval->add_option("--p1", o.p1)->required();
    qeval->add_option("--p2", o.p2)->required();
    qeval->add_option("--z", o.z)->required();
    qeval->add_option("--j", o.j, "copy index for rational flux");
    auto* disp = app.add_subcommand("dispersion", "one band's dispersion surface");
    disp->add_option("--band", o.band, "band id, 1 is the lowest");
    disp->add_option("--j", o.j);
    auto* bands = app.add_subcommand("bands", "band report, surfaces, point spectrum and manifest");
    auto* oracle = app.add_subcommand("oracle", "finite-lattice eigenvalue clouds for one gap");
    oracle->add_option("--R", o.radii, "window radii (default 1..oracle_R)");
    oracle->add_option("--gap", o.gap, "free gap index, 0 is below the lowest level");
    oracle->add_option("--margin", o.margin, "allowed excess as a fraction of the hull width");
    auto* report = app.add_subcommand("report", "human-readable spectrum summary");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e, out, err);
        return code == 0 ? ok : config_failure;
    }
    try {
        RunConfig rc = load_config(o.config);
        if (!o.out.empty()) rc.out_dir = o.out;
        if (o.jobs) rc.solver.jobs = o.jobs;
        if (*levels) return cmd_levels(rc, out);
        if (*qeval) return cmd_qeval(rc, o, out);
        if (*disp) return cmd_dispersion(rc, o, out, err);
        if (*bands) return cmd_bands(rc, o, out, err);
        if (*oracle) return cmd_oracle(rc, o, out, err);
        if (*report) return cmd_report(rc, o, out, err);
    } catch (const config_error& e) {
        err << "config error: " << e.what() << "\n";
        return config_failure;
    } catch (const pole_error& e) {
        err << "pole error: " << e.what() << "\n";
        return numeric_failure;
    } catch (const convergence_error& e) {
        err << "convergence error: " << e.what() << "\n";
        return numeric_failure;
    } catch (const coverage_error& e) {
        err << "coverage error: " << e.what() << "\n";
        return numeric_failure;
    } catch (const domain_error& e) {
        err << "domain error: " << e.what() << "\n";
        return numeric_failure;
    }
    return ok;
}

} // namespace maglayer::cli
