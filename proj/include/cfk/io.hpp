// Config parsing with pointer-path error reporting, coefficient/report
// serialization, CSV and Matrix Market writers, and the config hash stamped
// into every artifact.
#pragma once

#include <Eigen/Sparse>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "cfk/density.hpp"
#include "cfk/mosco.hpp"
#include "cfk/pl_space.hpp"

namespace cfk {

using nlohmann::json;

struct ConfigError : ValidationError {
    using ValidationError::ValidationError;
};

namespace cfg {

inline const json& require(const json& j, const std::string& pointer) {
    try {
        return j.at(json::json_pointer(pointer));
    } catch (const std::exception&) {
        throw ConfigError("config error at " + pointer + ": missing");
    }
}

inline double number(const json& j, const std::string& pointer) {
    const json& v = require(j, pointer);
    if (!v.is_number()) throw ConfigError("config error at " + pointer + ": expected a number");
    return v.get<double>();
}

inline double number_or(const json& j, const std::string& pointer, double fallback) {
    try {
        return number(j, pointer);
    } catch (const ConfigError& e) {
        if (std::string(e.what()).find("missing") != std::string::npos) return fallback;
        throw;
    }
}

inline long integer(const json& j, const std::string& pointer) {
    const json& v = require(j, pointer);
    if (!v.is_number_integer()) throw ConfigError("config error at " + pointer + ": expected an integer");
    return v.get<long>();
}

inline long integer_or(const json& j, const std::string& pointer, long fallback) {
    try {
        return integer(j, pointer);
    } catch (const ConfigError& e) {
        if (std::string(e.what()).find("missing") != std::string::npos) return fallback;
        throw;
    }
}

inline std::string text(const json& j, const std::string& pointer) {
    const json& v = require(j, pointer);
    if (!v.is_string()) throw ConfigError("config error at " + pointer + ": expected a string");
    return v.get<std::string>();
}

inline std::vector<double> number_list(const json& j, const std::string& pointer) {
    const json& v = require(j, pointer);
    if (!v.is_array()) throw ConfigError("config error at " + pointer + ": expected an array");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number())
            throw ConfigError("config error at " + pointer + "/" + std::to_string(i) +
                              ": expected a number");
        out.push_back(v[i].get<double>());
    }
    return out;
}

inline std::vector<long> integer_list(const json& j, const std::string& pointer) {
    const json& v = require(j, pointer);
    if (!v.is_array()) throw ConfigError("config error at " + pointer + ": expected an array");
    std::vector<long> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number_integer())
            throw ConfigError("config error at " + pointer + "/" + std::to_string(i) +
                              ": expected an integer");
        out.push_back(v[i].get<long>());
    }
    return out;
}

}  // namespace cfg

// FNV-1a over the canonical dump; nlohmann objects serialize with sorted
// keys, so the hash is representation independent.
inline std::string config_hash(const json& j) {
    std::string s = j.dump();
    std::uint64_t h = 1469598103934665603ull;
    for (char c : s) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
}

// ---------------------------------------------------------------------------
// Domain objects from JSON
// ---------------------------------------------------------------------------

inline Box box_from_json(const json& j, const std::string& pointer) {
    Box b;
    b.lo = cfg::number_list(j, pointer + "/lo");
    b.hi = cfg::number_list(j, pointer + "/hi");
    try {
        b.validate();
    } catch (const ValidationError& e) {
        throw ConfigError("config error at " + pointer + ": " + e.what());
    }
    return b;
}

inline BVFunctionSpec bv_from_json(const json& j, const std::string& pointer) {
    BVFunctionSpec f;
    f.breakpoints = cfg::number_list(j, pointer + "/breakpoints");
    const json& segs = cfg::require(j, pointer + "/segments");
    if (!segs.is_array()) throw ConfigError("config error at " + pointer + "/segments: expected array");
    for (std::size_t i = 0; i < segs.size(); ++i) {
        const json& s = segs[i];
        BVSegment seg;
        if (s.contains("c")) {
            seg.a = s["c"].get<double>();
            seg.b = 0.0;
        } else {
            seg.a = cfg::number(j, pointer + "/segments/" + std::to_string(i) + "/a");
            seg.b = cfg::number(j, pointer + "/segments/" + std::to_string(i) + "/b");
        }
        f.segments.push_back(seg);
    }
    if (j.at(json::json_pointer(pointer)).contains("point_values"))
        f.point_values = cfg::number_list(j, pointer + "/point_values");
    try {
        f.validate();
    } catch (const ValidationError& e) {
        throw ConfigError("config error at " + pointer + ": " + e.what());
    }
    return f;
}

inline DensityPtr density_from_json(const json& j, const std::string& pointer) {
    std::string kind = cfg::text(j, pointer + "/kind");
    try {
        if (kind == "gaussian") {
            return Density::gaussian(cfg::number_list(j, pointer + "/mean"),
                                     cfg::number_list(j, pointer + "/var"),
                                     box_from_json(j, pointer + "/box"));
        }
        if (kind == "uniform") return Density::uniform(box_from_json(j, pointer + "/box"));
        if (kind == "tabulated") {
            auto cells_l = cfg::integer_list(j, pointer + "/cells");
            std::vector<Index> cells(cells_l.begin(), cells_l.end());
            return Density::tabulated(box_from_json(j, pointer + "/box"), cells,
                                      cfg::number_list(j, pointer + "/values"));
        }
        if (kind == "product") {
            const json& f = cfg::require(j, pointer + "/factors");
            std::vector<DensityPtr> factors;
            for (std::size_t i = 0; i < f.size(); ++i)
                factors.push_back(density_from_json(j, pointer + "/factors/" + std::to_string(i)));
            return Density::product(std::move(factors));
        }
        if (kind == "bv_perturbed") {
            return Density::bv_perturbed(density_from_json(j, pointer + "/base"),
                                         bv_from_json(j, pointer + "/bv"),
                                         cfg::number_list(j, pointer + "/weights"));
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const ValidationError& e) {
        throw ConfigError("config error at " + pointer + ": " + e.what());
    }
    throw ConfigError("config error at " + pointer + "/kind: unknown density kind '" + kind + "'");
}

// ---------------------------------------------------------------------------
// Tent coefficient (de)serialization: {d, r, box, entries:[{index:[...], w}]}
// ---------------------------------------------------------------------------

inline json coefficients_to_json(const TentCoefficients& c) {
    json j;
    j["d"] = c.grid.d;
    j["r"] = c.grid.r;
    j["box"]["lo"] = c.grid.box.lo;
    j["box"]["hi"] = c.grid.box.hi;
    json entries = json::array();
    // deterministic order
    std::vector<MultiIndex> keys;
    for (const auto& [k, w] : c.weights) keys.push_back(k);
    std::sort(keys.begin(), keys.end());
    for (const auto& k : keys) {
        json e;
        e["index"] = k;
        e["w"] = c.weights.at(k);
        entries.push_back(std::move(e));
    }
    j["entries"] = std::move(entries);
    return j;
}

inline TentCoefficients coefficients_from_json(const json& j) {
    TentCoefficients c;
    int d = static_cast<int>(cfg::integer(j, "/d"));
    double r = cfg::number(j, "/r");
    c.grid = GridSpec(d, r, box_from_json(j, "/box"));
    const json& entries = cfg::require(j, "/entries");
    for (std::size_t i = 0; i < entries.size(); ++i) {
        auto idx = cfg::integer_list(j, "/entries/" + std::to_string(i) + "/index");
        if (static_cast<int>(idx.size()) != d)
            throw ConfigError("config error at /entries/" + std::to_string(i) +
                              "/index: wrong dimension");
        c.set(MultiIndex(idx.begin(), idx.end()),
              cfg::number(j, "/entries/" + std::to_string(i) + "/w"));
    }
    return c;
}

// ---------------------------------------------------------------------------
// Writers
// ---------------------------------------------------------------------------

struct CsvWriter {
    std::ofstream out;

    CsvWriter(const std::string& path, const std::string& hash, const std::string& units) {
        out.open(path);
        if (!out) throw NumericsError("cannot open " + path + " for writing");
        out << "# config_hash=" << hash << " units=" << units << "\n";
    }

    void header(const std::vector<std::string>& cols) {
        for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
        out << "\n";
    }

    void row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
        out << "\n";
    }
};

inline void write_matrix_market(const Eigen::SparseMatrix<double>& A, const std::string& path,
                                const std::string& hash) {
    std::ofstream out(path);
    if (!out) throw NumericsError("cannot open " + path + " for writing");
    out << "%%MatrixMarket matrix coordinate real symmetric\n";
    out << "% config_hash=" << hash << "\n";
    long nnz = 0;
    for (int k = 0; k < A.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(A, k); it; ++it)
            if (it.row() >= it.col()) ++nnz;
    out << A.rows() << " " << A.cols() << " " << nnz << "\n";
    for (int k = 0; k < A.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(A, k); it; ++it)
            if (it.row() >= it.col())
                out << (it.row() + 1) << " " << (it.col() + 1) << " " << format_double(it.value())
                    << "\n";
}

// ---------------------------------------------------------------------------
// Experiment config from JSON (shared by the CLI and the acceptance suite)
// ---------------------------------------------------------------------------

inline std::vector<CoordinateTest> tests_from_json(const json& config, bool need_coordinate) {
    std::vector<CoordinateTest> out;
    const json& arr = cfg::require(config, "/diagnostics/test_functions");
    if (!arr.is_array() || arr.empty())
        throw ConfigError("config error at /diagnostics/test_functions: expected nonempty array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
        std::string base = "/diagnostics/test_functions/" + std::to_string(i);
        CoordinateTest t;
        t.label = cfg::text(config, base + "/label");
        t.fn = TestFunction1D::parse(cfg::text(config, base + "/name"),
                                     cfg::number_or(config, base + "/scale", 1.0));
        t.coordinate = static_cast<int>(cfg::integer_or(config, base + "/coordinate", 1)) - 1;
        if (need_coordinate && t.coordinate < 0)
            throw ConfigError("config error at " + base + "/coordinate: must be >= 1");
        out.push_back(std::move(t));
    }
    return out;
}

inline double tolerance_from_json(const json& config, const std::string& name, double fallback) {
    double v = cfg::number_or(config, "/diagnostics/tolerances/" + name, fallback);
    if (!(v > 0))
        throw ConfigError("config error at /diagnostics/tolerances/" + name +
                          ": tolerances must be positive");
    return v;
}

inline GaussianBVExperimentConfig experiment_from_json(const json& config, std::uint64_t seed) {
    GaussianBVExperimentConfig e;
    e.D = static_cast<int>(cfg::integer(config, "/experiment/D"));
    const json& s2 = cfg::require(config, "/experiment/sigma_sq");
    if (s2.is_string() && s2.get<std::string>() == "kl") {
        e.sigma2.resize(e.D);
        for (int k = 0; k < e.D; ++k) e.sigma2[k] = 1.0 / (M_PI * M_PI * (k + 1.0) * (k + 1.0));
    } else {
        e.sigma2 = cfg::number_list(config, "/experiment/sigma_sq");
    }
    const json& lam = cfg::require(config, "/experiment/lambda");
    if (lam.is_string() && lam.get<std::string>() == "uniform") {
        e.lambda.assign(e.D, 1.0 / e.D);
    } else {
        e.lambda = cfg::number_list(config, "/experiment/lambda");
    }
    e.f = bv_from_json(config, "/bv");
    auto ns = cfg::integer_list(config, "/experiment/n_schedule");
    e.n_schedule.assign(ns.begin(), ns.end());
    auto cs = cfg::integer_list(config, "/experiment/cells_schedule");
    e.cells_schedule.assign(cs.begin(), cs.end());
    e.limit_refine = static_cast<int>(cfg::integer_or(config, "/experiment/limit_refine", 4));
    e.box_sigmas = cfg::number_or(config, "/experiment/box_sigmas", 6.0);
    e.mc_samples = cfg::integer_or(config, "/experiment/mc_samples", 200000);
    e.mc_oracle_samples = cfg::integer_or(config, "/experiment/mc_oracle_samples", 1000000);
    e.envelope_levels = static_cast<int>(cfg::integer_or(config, "/experiment/envelope_levels", 4));
    e.markov_trials = static_cast<int>(cfg::integer_or(config, "/experiment/markov_trials", 50));
    auto ml = cfg::integer_list(config, "/diagnostics/m_schedule");
    e.m_schedule.assign(ml.begin(), ml.end());
    e.alpha = cfg::number_list(config, "/diagnostics/alphas").front();
    e.tests = tests_from_json(config, true);
    e.seed = seed;
    e.quad_order = static_cast<int>(cfg::integer_or(config, "/diagnostics/quad_order", 6));
    e.tol_pairing = tolerance_from_json(config, "pairing", 5e-3);
    e.tol_energy = tolerance_from_json(config, "energy", 5e-3);
    e.tol_m1_slack = tolerance_from_json(config, "m1_slack", 1e-3);
    e.z_sigmas = tolerance_from_json(config, "z_sigmas", 3.0);
    e.tol_cond_pairing = tolerance_from_json(config, "cond_pairing", 5e-3);
    return e;
}

inline json report_to_json(const ConvergenceReport& rep) {
    json j;
    j["config_hash"] = rep.config_hash;
    json rows = json::array();
    for (const auto& r : rep.rows) {
        json row;
        row["section"] = r.section;
        row["label"] = r.label;
        if (r.level >= 0) row["level"] = r.level;
        if (r.m >= 0) row["m"] = r.m;
        row["metric"] = r.metric;
        row["value"] = r.value;
        rows.push_back(std::move(row));
    }
    j["rows"] = std::move(rows);
    json flags = json::object();
    for (const auto& [name, ok] : rep.flags) flags[name] = ok;
    j["flags"] = std::move(flags);
    j["warnings"] = rep.warnings;
    j["all_passed"] = rep.all_passed();
    return j;
}

inline void write_report_csv(const ConvergenceReport& rep, const std::string& path) {
    CsvWriter w(path, rep.config_hash, "dimensionless");
    w.header({"section", "label", "level", "m", "metric", "value"});
    for (const auto& r : rep.rows)
        w.row({r.section, r.label, r.level >= 0 ? std::to_string(r.level) : "",
               r.m >= 0 ? std::to_string(r.m) : "", r.metric, format_double(r.value)});
}

}  // namespace cfk
