#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "cfk/io.hpp"

using namespace cfk;
namespace fs = std::filesystem;

namespace {

json minimal_config() {
    json j;
    j["version"] = "1";
    j["grid"]["d"] = 1;
    j["grid"]["r_schedule"] = {0.5};
    j["grid"]["box"]["lo"] = {-2.0};
    j["grid"]["box"]["hi"] = {2.0};
    j["diagnostics"]["seeds"]["root"] = 1;
    return j;
}

std::string cli_path() {
    fs::path p = fs::path(CFK_BINARY_DIR) / "tools" / "cfk_cli";
    return p.string();
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// drops the runtime_ms column (position 4) from a delta-sweep CSV
std::string strip_runtime(const std::string& csv) {
    std::stringstream in(csv), out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line[0] == '#') {
            out << line << "\n";
            continue;
        }
        std::stringstream cells(line);
        std::string cell;
        int col = 0;
        bool first = true;
        while (std::getline(cells, cell, ',')) {
            if (col != 4) {
                out << (first ? "" : ",") << cell;
                first = false;
            }
            ++col;
        }
        out << "\n";
    }
    return out.str();
}

int run_cli(const std::string& args) {
    std::string cmd = cli_path() + " " + args + " > /dev/null 2>&1";
    int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

}  // namespace

TEST_CASE("config schema errors carry pointer paths") {
    json j = minimal_config();
    REQUIRE_THROWS_WITH(cfg::number(j, "/grid/missing"),
                        Catch::Matchers::ContainsSubstring("/grid/missing"));
    REQUIRE_THROWS_WITH(cfg::integer(j, "/grid/r_schedule/0"),
                        Catch::Matchers::ContainsSubstring("expected an integer"));
    j["measure"]["kind"] = "unknown";
    REQUIRE_THROWS_WITH(density_from_json(j, "/measure"),
                        Catch::Matchers::ContainsSubstring("/measure/kind"));
    json bad = minimal_config();
    bad["grid"]["box"]["lo"] = {2.0};
    REQUIRE_THROWS_WITH(box_from_json(bad, "/grid/box"),
                        Catch::Matchers::ContainsSubstring("/grid/box"));
}

TEST_CASE("densities parse from JSON") {
    json j;
    j["measure"]["kind"] = "bv_perturbed";
    j["measure"]["base"]["kind"] = "gaussian";
    j["measure"]["base"]["mean"] = {0.0};
    j["measure"]["base"]["var"] = {1.0};
    j["measure"]["base"]["box"]["lo"] = {-6.0};
    j["measure"]["base"]["box"]["hi"] = {6.0};
    j["measure"]["bv"]["breakpoints"] = {0.0};
    j["measure"]["bv"]["segments"] = {json{{"c", 0.0}}, json{{"c", 1.0}}};
    j["measure"]["bv"]["point_values"] = {0.0};
    j["measure"]["weights"] = {1.0};
    auto rho = density_from_json(j, "/measure");
    REQUIRE(rho->kind() == Density::Kind::BVPerturbed);
    REQUIRE(rho->dim() == 1);
    double z = rho->normalization();
    REQUIRE(z == Catch::Approx(0.5 + 0.5 * std::exp(-1.0)).epsilon(1e-12));

    json p;
    p["m"]["kind"] = "product";
    p["m"]["factors"] = json::array();
    json g;
    g["kind"] = "gaussian";
    g["mean"] = {0.0};
    g["var"] = {1.0};
    g["box"]["lo"] = {-4.0};
    g["box"]["hi"] = {4.0};
    p["m"]["factors"].push_back(g);
    p["m"]["factors"].push_back(g);
    auto prod = density_from_json(p, "/m");
    REQUIRE(prod->dim() == 2);
    std::vector<double> x{0.3, -0.2};
    auto g1 = density_from_json(p, "/m/factors/0");
    REQUIRE((*prod)(x) ==
            Catch::Approx((*g1)(std::vector<double>{0.3}) * (*g1)(std::vector<double>{-0.2})));
}

TEST_CASE("coefficients round-trip through the JSON schema") {
    Box b;
    b.lo = {-1.0, -1.0};
    b.hi = {1.0, 1.0};
    TentCoefficients c;
    c.grid = GridSpec(2, 0.5, b);
    c.set(MultiIndex{0, 0}, 1.25);
    c.set(MultiIndex{-1, 1}, -0.5);
    c.set(MultiIndex{2, -2}, 1e-17);
    json j = coefficients_to_json(c);
    auto back = coefficients_from_json(j);
    REQUIRE(back.grid.d == 2);
    REQUIRE(back.grid.r == 0.5);
    REQUIRE(back.weights.size() == c.weights.size());
    for (const auto& [k, w] : c.weights) REQUIRE(back.weight(k) == w);
    // serialization is deterministic
    REQUIRE(coefficients_to_json(back).dump() == j.dump());
}

TEST_CASE("matrix market export round-trips through a text parse") {
    Eigen::SparseMatrix<double> A(3, 3);
    std::vector<Eigen::Triplet<double>> ts{{0, 0, 2.0}, {1, 1, 2.0}, {2, 2, 2.0},
                                           {1, 0, -1.0}, {0, 1, -1.0}, {2, 1, -0.5}, {1, 2, -0.5}};
    A.setFromTriplets(ts.begin(), ts.end());
    fs::path tmp = fs::temp_directory_path() / "cfk_test_matrix.mtx";
    write_matrix_market(A, tmp.string(), "deadbeef");
    std::ifstream in(tmp);
    std::string banner, comment;
    std::getline(in, banner);
    std::getline(in, comment);
    REQUIRE(banner == "%%MatrixMarket matrix coordinate real symmetric");
    REQUIRE(comment.find("deadbeef") != std::string::npos);
    int rows, cols;
    long nnz;
    in >> rows >> cols >> nnz;
    REQUIRE(rows == 3);
    REQUIRE(nnz == 5);  // lower triangle of a symmetric matrix
    double sum = 0.0;
    for (long k = 0; k < nnz; ++k) {
        int i, j;
        double v;
        in >> i >> j >> v;
        REQUIRE(i >= j);
        sum += v;
    }
    REQUIRE(sum == Catch::Approx(2.0 + 2.0 + 2.0 - 1.0 - 0.5));
    fs::remove(tmp);
}

TEST_CASE("CLI: schema rejection, determinism across runs and thread counts") {
    fs::path dir = fs::temp_directory_path() / "cfk_cli_test";
    fs::create_directories(dir);

    // invalid config: r <= 0 rejected with a config error exit code
    {
        json bad = minimal_config();
        bad["grid"]["r_schedule"] = {-0.5};
        bad["diagnostics"]["m_schedule"] = {2};
        std::ofstream(dir / "bad.json") << bad.dump();
        int rc = run_cli("-c " + (dir / "bad.json").string() + " -o " + (dir / "bad_out").string() +
                         " verify-basis");
        REQUIRE(rc == 2);
    }

    // delta sweep: identical bytes for identical (config, seed), any thread count
    {
        json cfgj = minimal_config();
        cfgj["grid"]["box"]["lo"] = {-4.0};
        cfgj["grid"]["box"]["hi"] = {4.0};
        cfgj["measure"]["kind"] = "gaussian";
        cfgj["measure"]["mean"] = {0.0};
        cfgj["measure"]["var"] = {1.0};
        cfgj["measure"]["box"]["lo"] = {-4.0};
        cfgj["measure"]["box"]["hi"] = {4.0};
        cfgj["diagnostics"]["m_schedule"] = {2, 4, 8};
        std::ofstream(dir / "sweep.json") << cfgj.dump();
        std::string base = "-c " + (dir / "sweep.json").string();
        REQUIRE(run_cli(base + " -o " + (dir / "out1").string() + " delta-sweep") == 0);
        REQUIRE(run_cli(base + " -o " + (dir / "out2").string() + " delta-sweep") == 0);
        REQUIRE(run_cli(base + " -o " + (dir / "out4").string() + " -t 4 delta-sweep") == 0);
        std::string a = strip_runtime(read_file((dir / "out1" / "delta_sweep.csv").string()));
        std::string b = strip_runtime(read_file((dir / "out2" / "delta_sweep.csv").string()));
        std::string c = strip_runtime(read_file((dir / "out4" / "delta_sweep.csv").string()));
        REQUIRE(a == b);
        REQUIRE(a == c);
        REQUIRE(a.find("config_hash=") != std::string::npos);
        // a different seed changes the stamped hash but not the deterministic columns
        REQUIRE(run_cli(base + " -o " + (dir / "out_seed").string() + " --seed 99 delta-sweep") ==
                0);
        std::string s = read_file((dir / "out_seed" / "delta_sweep.csv").string());
        REQUIRE(s.find("config_hash=") != std::string::npos);
        REQUIRE(s.substr(0, 40) != a.substr(0, 40));
    }

    // verify-basis runs clean on a small grid
    {
        json cfgj = minimal_config();
        cfgj["diagnostics"]["pou_samples"] = 2000;
        cfgj["diagnostics"]["partition_samples"] = 500;
        cfgj["diagnostics"]["volume_samples"] = 50000;
        std::ofstream(dir / "vb.json") << cfgj.dump();
        REQUIRE(run_cli("-c " + (dir / "vb.json").string() + " -o " +
                        (dir / "vb_out").string() + " verify-basis") == 0);
    }

    // a truncated experiment schedule still emits a report but exits nonzero
    {
        json cfgj = minimal_config();
        cfgj["bv"]["breakpoints"] = {0.0};
        cfgj["bv"]["segments"] = {json{{"c", 0.0}}, json{{"c", 1.0}}};
        cfgj["bv"]["point_values"] = {0.0};
        cfgj["experiment"]["D"] = 2;
        cfgj["experiment"]["sigma_sq"] = {0.1, 0.05};
        cfgj["experiment"]["lambda"] = "uniform";
        cfgj["experiment"]["n_schedule"] = {1};
        cfgj["experiment"]["cells_schedule"] = {64};
        cfgj["diagnostics"]["alphas"] = {1.0};
        cfgj["diagnostics"]["m_schedule"] = {2};
        cfgj["diagnostics"]["test_functions"] = json::array();
        cfgj["diagnostics"]["test_functions"].push_back(
            json{{"label", "gb"}, {"name", "gauss_bump"}, {"coordinate", 1}, {"scale", 0.3}});
        std::ofstream(dir / "short.json") << cfgj.dump();
        int rc = run_cli("-c " + (dir / "short.json").string() + " -o " +
                         (dir / "short_out").string() + " mosco");
        REQUIRE(rc != 0);
        std::ifstream rj(dir / "short_out" / "report.json");
        REQUIRE(rj.good());
        json report;
        rj >> report;
        REQUIRE(report["flags"]["sufficient_tail"] == false);
        REQUIRE(report["all_passed"] == false);
    }

    fs::remove_all(dir);
}
