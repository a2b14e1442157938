// Command-line front end: declarative JSON experiment configs, one
// subcommand per verification surface, CSV/JSON artifacts.
#include <CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "cfk/io.hpp"
#include "cfk/parallel.hpp"
#include "cfk/verify.hpp"

namespace fs = std::filesystem;
using namespace cfk;

namespace {

struct Common {
    std::string config_path;
    std::string out_dir;
    int threads = 1;
    long seed_override = -1;

    json config;
    std::string hash;
    std::uint64_t seed = 0;

    void load() {
        std::ifstream in(config_path);
        if (!in) throw ConfigError("cannot open config file: " + config_path);
        try {
            in >> config;
        } catch (const std::exception& e) {
            throw ConfigError(std::string("config parse error: ") + e.what());
        }
        cfg::text(config, "/version");
        seed = static_cast<std::uint64_t>(cfg::integer(config, "/diagnostics/seeds/root"));
        if (seed_override >= 0) {
            seed = static_cast<std::uint64_t>(seed_override);
            config["diagnostics"]["seeds"]["root"] = seed_override;
        }
        hash = config_hash(config);
        if (out_dir.empty()) {
            if (const char* env = std::getenv("CFK_OUT_DIR"))
                out_dir = env;
            else if (config.contains("output") && config["output"].contains("dir"))
                out_dir = config["output"]["dir"].get<std::string>();
            else
                out_dir = "out";
        }
        fs::create_directories(out_dir);
        worker_count() = threads;
    }

    std::string path(const std::string& name) const { return (fs::path(out_dir) / name).string(); }

    GridSpec grid(double r) const {
        int d = static_cast<int>(cfg::integer(config, "/grid/d"));
        return GridSpec(d, r, box_from_json(config, "/grid/box"));
    }

    std::vector<double> r_schedule() const {
        auto rs = cfg::number_list(config, "/grid/r_schedule");
        if (rs.empty()) throw ConfigError("config error at /grid/r_schedule: must be nonempty");
        for (double r : rs)
            if (!(r > 0)) throw ConfigError("config error at /grid/r_schedule: r must be > 0");
        return rs;
    }

    std::function<double(std::span<const double>)> kappa() const {
        if (!config.contains("diagnostics") || !config["diagnostics"].contains("kappa"))
            return nullptr;
        std::string kind = cfg::text(config, "/diagnostics/kappa/kind");
        if (kind == "one") return nullptr;
        if (kind == "zero")
            return [](std::span<const double>) { return 0.0; };
        if (kind == "box") {
            Box b = box_from_json(config, "/diagnostics/kappa/box");
            return [b](std::span<const double> x) { return b.contains(x) ? 1.0 : 0.0; };
        }
        throw ConfigError("config error at /diagnostics/kappa/kind: unknown kind");
    }

    double tolerance(const std::string& name, double fallback) const {
        double v = cfg::number_or(config, "/diagnostics/tolerances/" + name, fallback);
        if (!(v > 0)) throw ConfigError("config error at /diagnostics/tolerances/" + name +
                                        ": tolerances must be positive");
        return v;
    }
};

int cmd_verify_basis(Common& c) {
    VerifyOptions opt;
    opt.seed = c.seed;
    opt.pou_samples = cfg::integer_or(c.config, "/diagnostics/pou_samples", 100000);
    opt.partition_samples = cfg::integer_or(c.config, "/diagnostics/partition_samples", 10000);
    opt.volume_samples = cfg::integer_or(c.config, "/diagnostics/volume_samples", 1000000);
    bool all_ok = true;
    CsvWriter csv(c.path("verify_basis.csv"), c.hash, "dimensionless");
    csv.header({"r", "check", "passed", "observed", "tolerance"});
    for (double r : c.r_schedule()) {
        auto rep = verify_basis(c.grid(r), opt);
        for (const auto& line : rep.lines) {
            std::cout << (line.passed ? "PASS" : "FAIL") << " r=" << r << " " << line.name
                      << " observed=" << line.observed << " tol=" << line.tolerance << "\n";
            csv.row({format_double(r), line.name, line.passed ? "1" : "0",
                     format_double(line.observed), format_double(line.tolerance)});
            all_ok = all_ok && line.passed;
        }
    }
    return all_ok ? 0 : 1;
}

int cmd_delta_sweep(Common& c) {
    auto measure = density_from_json(c.config, "/measure");
    auto kappa = c.kappa();
    auto ms = cfg::integer_list(c.config, "/diagnostics/m_schedule");
    int d = measure->dim();
    auto pairs = primal_pair_catalog(d);
    GridSpec grid0 = c.grid(1.0 / static_cast<double>(ms.front()));

    struct RowOut {
        double r = 0.0;
        std::vector<PairNorms> per_pair;
        double delta = 0.0, cval = 0.0, ms_elapsed = 0.0;
        bool converged = true;
        std::string warnings;
    };
    std::vector<RowOut> rows(ms.size());
    parallel_for_index(ms.size(), [&](std::size_t i) {
        double r = 1.0 / static_cast<double>(ms[i]);
        auto t0 = std::chrono::steady_clock::now();
        EstimatorOptions opt;
        opt.kappa = kappa;
        GridSpec grid(d, r, grid0.box);
        auto est = delta_and_c_estimate(measure, grid, r, pairs, opt);
        auto t1 = std::chrono::steady_clock::now();
        RowOut out;
        out.r = r;
        out.per_pair = est.per_pair;
        out.delta = est.delta;
        out.cval = est.c;
        out.converged = est.converged;
        out.ms_elapsed = std::chrono::duration<double, std::milli>(t1 - t0).count();
        for (const auto& w : est.warnings) out.warnings += (out.warnings.empty() ? "" : ";") + w;
        rows[i] = std::move(out);
    });

    CsvWriter csv(c.path("delta_sweep.csv"), c.hash, "r:length delta:dimensionless C:dimensionless");
    csv.header({"r", "pair_id", "delta", "C", "runtime_ms", "warnings"});
    bool monotone = true, converged = true;
    double prev = 1e300;
    for (const auto& row : rows) {
        for (const auto& pn : row.per_pair)
            csv.row({format_double(row.r), pn.pair_id, format_double(pn.delta),
                     format_double(pn.c), format_double(row.ms_elapsed), row.warnings});
        csv.row({format_double(row.r), "max", format_double(row.delta), format_double(row.cval),
                 format_double(row.ms_elapsed), row.warnings});
        if (row.delta > prev + 1e-12) monotone = false;
        prev = row.delta;
        converged = converged && row.converged;
        std::cout << "r=" << row.r << " delta=" << row.delta << " C=" << row.cval
                  << (row.converged ? "" : " [quadrature warning]") << "\n";
    }
    std::cout << (monotone ? "PASS" : "FAIL") << " delta monotone decay\n";
    if (!converged) std::cout << "WARN quadrature convergence flags raised\n";
    return monotone && converged ? 0 : 1;
}

int cmd_assemble(Common& c) {
    auto measure = density_from_json(c.config, "/measure");
    double r = c.r_schedule().front();
    int order = static_cast<int>(cfg::integer_or(c.config, "/diagnostics/quad_order", 6));
    bool lumped = c.config.contains("diagnostics") &&
                  c.config["diagnostics"].value("lumped_mass", false);
    auto F = assemble(c.grid(r), measure, order, lumped);
    write_matrix_market(F.S, c.path("stiffness.mtx"), c.hash);
    write_matrix_market(F.M, c.path("mass.mtx"), c.hash);
    CsvWriter csv(c.path("nodes.csv"), c.hash, "coordinates:length");
    std::vector<std::string> cols{"node"};
    for (int k = 0; k < F.grid.d; ++k) cols.push_back("x" + std::to_string(k + 1));
    csv.header(cols);
    for (int i = 0; i < F.size(); ++i) {
        std::vector<std::string> cells{std::to_string(i)};
        for (int k = 0; k < F.grid.d; ++k)
            cells.push_back(format_double(F.grid.r * static_cast<double>(F.nodes[i][k])));
        csv.row(cells);
    }
    std::cout << "assembled " << F.size() << " nodes, total mass " << F.total_mass
              << (F.quadrature_converged ? "" : " [quadrature warning]") << "\n";
    for (const auto& w : F.warnings) std::cout << "WARN " << w << "\n";
    return F.quadrature_converged ? 0 : 1;
}

int cmd_resolvent(Common& c) {
    auto measure = density_from_json(c.config, "/measure");
    double r = c.r_schedule().front();
    auto F = assemble(c.grid(r), measure,
                      static_cast<int>(cfg::integer_or(c.config, "/diagnostics/quad_order", 6)));
    auto alphas = cfg::number_list(c.config, "/diagnostics/alphas");
    auto tests = tests_from_json(c.config, false);
    CsvWriter csv(c.path("resolvent.csv"), c.hash, "value:dimensionless");
    csv.header({"label", "alpha", "node", "x1", "value"});
    for (double alpha : alphas) {
        ResolventOperator G(F, alpha);
        for (const auto& t : tests) {
            Eigen::VectorXd f =
                F.nodal([&](std::span<const double> x) { return t.fn.eval(x[0]); });
            Eigen::VectorXd u = G.apply(f);
            for (int i = 0; i < F.size(); ++i)
                csv.row({t.label, format_double(alpha), std::to_string(i),
                         format_double(F.grid.r * static_cast<double>(F.nodes[i][0])),
                         format_double(u[i])});
        }
    }
    std::cout << "resolvent applied for " << alphas.size() << " alphas, " << tests.size()
              << " inputs\n";
    return 0;
}

int cmd_semigroup(Common& c) {
    auto measure = density_from_json(c.config, "/measure");
    double r = c.r_schedule().front();
    auto F = assemble(c.grid(r), measure,
                      static_cast<int>(cfg::integer_or(c.config, "/diagnostics/quad_order", 6)));
    auto times = cfg::number_list(c.config, "/diagnostics/times");
    int steps = static_cast<int>(cfg::integer_or(c.config, "/diagnostics/steps", 64));
    auto tests = tests_from_json(c.config, false);
    CsvWriter csv(c.path("semigroup.csv"), c.hash, "value:dimensionless");
    csv.header({"label", "t", "node", "x1", "value", "richardson_gap"});
    for (double t : times) {
        for (const auto& tf : tests) {
            Eigen::VectorXd f =
                F.nodal([&](std::span<const double> x) { return tf.fn.eval(x[0]); });
            double gap = 0.0;
            Eigen::VectorXd u = semigroup(F, t, f, steps, &gap);
            for (int i = 0; i < F.size(); ++i)
                csv.row({tf.label, format_double(t), std::to_string(i),
                         format_double(F.grid.r * static_cast<double>(F.nodes[i][0])),
                         format_double(u[i]), format_double(gap)});
            std::cout << "t=" << t << " input=" << tf.label << " richardson_gap=" << gap << "\n";
        }
    }
    return 0;
}

int cmd_mosco(Common& c) {
    auto e = experiment_from_json(c.config, c.seed);
    auto rep = gaussian_bv_experiment(e);
    rep.config_hash = c.hash;
    std::ofstream(c.path("report.json")) << report_to_json(rep).dump(2) << "\n";
    write_report_csv(rep, c.path("report.csv"));
    for (const auto& [name, ok] : rep.flags)
        std::cout << (ok ? "PASS " : "FAIL ") << name << "\n";
    for (const auto& w : rep.warnings) std::cout << "WARN " << w << "\n";
    std::cout << (rep.all_passed() ? "all diagnostics passed" : "diagnostics FAILED") << "\n";
    return rep.all_passed() ? 0 : 1;
}

int cmd_envelopes(Common& c) {
    auto f = bv_from_json(c.config, "/bv");
    auto ms = cfg::integer_list(c.config, "/diagnostics/m_schedule");
    Box box = box_from_json(c.config, "/grid/box");
    const int samples =
        static_cast<int>(cfg::integer_or(c.config, "/diagnostics/envelope_samples", 512));
    CsvWriter csv(c.path("envelopes.csv"), c.hash, "x:length values:dimensionless");
    csv.header({"m", "x", "f", "f_min", "f_maj"});
    long violations = 0;
    for (long m : ms) {
        auto env = bv_envelopes(f, static_cast<int>(m));
        for (int i = 0; i <= samples; ++i) {
            double x = box.lo[0] + (box.hi[0] - box.lo[0]) * i / samples;
            double lo = env.min_at(x), v = f(x), hi = env.maj_at(x);
            if (!(lo <= v + 1e-12 && v <= hi + 1e-12)) ++violations;
            csv.row({std::to_string(m), format_double(x), format_double(v), format_double(lo),
                     format_double(hi)});
        }
    }
    std::cout << (violations == 0 ? "PASS" : "FAIL") << " envelope sandwich (" << violations
              << " violations)\n";
    return violations == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"finite-element diagnostics for gradient Dirichlet forms on the CFK lattice"};
    app.require_subcommand(1);

    Common common;
    app.add_option("-c,--config", common.config_path, "JSON config file")->required();
    app.add_option("-o,--out", common.out_dir, "output directory (overrides config and CFK_OUT_DIR)");
    app.add_option("-t,--threads", common.threads, "worker pool size")->default_val(1);
    app.add_option("--seed", common.seed_override, "override the root seed");

    auto* sub_verify = app.add_subcommand("verify-basis", "triangulation and basis invariants");
    auto* sub_delta = app.add_subcommand("delta-sweep", "residual dual-norm sweep over r=1/m");
    auto* sub_assemble = app.add_subcommand("assemble", "export stiffness and mass matrices");
    auto* sub_resolvent = app.add_subcommand("resolvent", "apply the resolvent to test inputs");
    auto* sub_semigroup = app.add_subcommand("semigroup", "implicit-Euler semigroup stepping");
    auto* sub_mosco = app.add_subcommand("mosco", "full convergence diagnostics");
    auto* sub_envelopes = app.add_subcommand("envelopes", "tent envelopes of the BV function");

    CLI11_PARSE(app, argc, argv);

    try {
        common.load();
        if (sub_verify->parsed()) return cmd_verify_basis(common);
        if (sub_delta->parsed()) return cmd_delta_sweep(common);
        if (sub_assemble->parsed()) return cmd_assemble(common);
        if (sub_resolvent->parsed()) return cmd_resolvent(common);
        if (sub_semigroup->parsed()) return cmd_semigroup(common);
        if (sub_mosco->parsed()) return cmd_mosco(common);
        if (sub_envelopes->parsed()) return cmd_envelopes(common);
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
