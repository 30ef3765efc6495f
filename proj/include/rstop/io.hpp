#pragma once

#include "rstop/lattice.hpp"
#include "rstop/measures.hpp"
#include "rstop/rbsde.hpp"
#include "rstop/stopping.hpp"

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace rstop {

/// Fixed 15-significant-digit decimal rendering; '.' separator, no locale.
inline std::string format_g15(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.15g", x);
    return buf;
}

/// FNV-1a 64-bit hash, used to fingerprint configs in output manifests.
inline std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// Writes content byte-for-byte (LF endings are the caller's concern; all
/// writers here emit plain '\n').
inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw parameter_error("io", "cannot open " + path + " for writing");
    out << content;
}

inline std::string payoff_csv(const LatticeModel& model, const PayoffProcess& y) {
    std::string s = "t,j,state,value\n";
    for (int t = 0; t <= model.n_steps; ++t)
        for (int j = 0; j <= t; ++j)
            s += std::to_string(t) + "," + std::to_string(j) + "," +
                 format_g15(model.state(t, j)) + "," + format_g15(y.values(t, j)) + "\n";
    return s;
}

inline std::string value_csv(const LatticeModel& model, const PayoffProcess& y,
                             const NodeTable<double>& value,
                             const NodeTable<std::uint8_t>& stop_region) {
    std::string s = "t,j,state,Y,V,stop_flag\n";
    for (int t = 0; t <= model.n_steps; ++t)
        for (int j = 0; j <= t; ++j)
            s += std::to_string(t) + "," + std::to_string(j) + "," +
                 format_g15(model.state(t, j)) + "," + format_g15(y.values(t, j)) + "," +
                 format_g15(value(t, j)) + "," + std::to_string(int(stop_region(t, j))) + "\n";
    return s;
}

inline std::string policy_csv(const LatticeModel& model, const ControlPolicy& policy) {
    std::string s = "t,j,theta\n";
    for (int t = 0; t < model.n_steps; ++t)
        for (int j = 0; j <= t; ++j)
            s += std::to_string(t) + "," + std::to_string(j) + "," +
                 format_g15(policy.theta(t, j)) + "\n";
    return s;
}

inline std::string rule_csv(const LatticeModel& model, const StoppingRule& rule) {
    std::string s = "t,j,stop_flag\n";
    for (int t = 0; t <= model.n_steps; ++t)
        for (int j = 0; j <= t; ++j)
            s += std::to_string(t) + "," + std::to_string(j) + "," +
                 std::to_string(int(rule.decision(t, j))) + "\n";
    return s;
}

inline std::string rbsde_csv(const LatticeModel& model, const RBSDESolution& sol) {
    std::string s = "t,j,gamma,z,dk\n";
    for (int t = 0; t <= model.n_steps; ++t)
        for (int j = 0; j <= t; ++j) {
            s += std::to_string(t) + "," + std::to_string(j) + "," +
                 format_g15(sol.gamma(t, j)) + ",";
            if (t < model.n_steps)
                s += format_g15(sol.z(t, j)) + "," + format_g15(sol.dk(t, j));
            else
                s += ",";
            s += "\n";
        }
    return s;
}

/// Parses a (t, j, value) CSV into a node table; a non-numeric first line is
/// treated as a header.
inline NodeTable<double> load_node_csv(const std::string& path, int n_steps) {
    std::ifstream in(path);
    if (!in) throw parameter_error("io", "cannot open " + path, "check the configured path");
    NodeTable<double> table(n_steps, 0.0);
    NodeTable<std::uint8_t> seen(n_steps, 0);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (first && (line.find_first_not_of("0123456789+-.,eE \t\r") != std::string::npos)) {
            first = false;
            continue;
        }
        first = false;
        std::istringstream row(line);
        std::string cell;
        int t = -1, j = -1;
        double v = 0.0;
        if (!std::getline(row, cell, ',')) continue;
        t = std::stoi(cell);
        if (!std::getline(row, cell, ',')) continue;
        j = std::stoi(cell);
        if (!std::getline(row, cell, ',')) continue;
        v = std::stod(cell);
        if (t < 0 || t > n_steps || j < 0 || j > t)
            throw parameter_error("io", "node (" + std::to_string(t) + "," + std::to_string(j) +
                                            ") in " + path + " is outside the lattice");
        table(t, j) = v;
        seen(t, j) = 1;
    }
    for (int t = 0; t <= n_steps; ++t)
        for (int j = 0; j <= t; ++j)
            if (!seen(t, j))
                throw parameter_error("io", "node (" + std::to_string(t) + "," +
                                                std::to_string(j) + ") missing from " + path);
    return table;
}

/// Parses a two-column (z, f) CSV used by tabulated penalty families.
inline std::pair<std::vector<double>, std::vector<double>> load_zf_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw parameter_error("io", "cannot open " + path, "check the configured path");
    std::vector<double> zs, fs;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (first && (line.find_first_not_of("0123456789+-.,eE \t\r") != std::string::npos)) {
            first = false;
            continue;
        }
        first = false;
        std::istringstream row(line);
        std::string cell;
        if (!std::getline(row, cell, ',')) continue;
        const double z = std::stod(cell);
        if (!std::getline(row, cell, ',')) continue;
        const double f = std::stod(cell);
        zs.push_back(z);
        fs.push_back(f);
    }
    if (zs.size() < 2) throw parameter_error("io", path + " needs at least two (z, f) rows");
    return {zs, fs};
}

} // namespace rstop
