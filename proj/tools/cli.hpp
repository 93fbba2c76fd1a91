#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "maglayer/solver.hpp"

namespace maglayer::cli {

inline constexpr const char* version = "0.1.0";

enum ExitCode { ok = 0, config_failure = 2, numeric_failure = 3, non_generic = 4 };

struct RunConfig {
    ModelConfig model;
    SolverControl solver;
    long max_denominator = 100;
    int oracle_R = 3;
    std::string out_dir = "out";
    std::vector<std::string> formats{"csv", "json"};
};

RunConfig parse_config(const YAML::Node& root);
RunConfig load_config(const std::string& path);

// Shortest round-trip decimal form, locale independent.
std::string fmt(double x);

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace maglayer::cli
