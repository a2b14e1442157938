#include <catch2/catch_amalgamated.hpp>

#include "cfk/mosco.hpp"

using namespace cfk;

namespace {

Box cube_box(int d, double lo, double hi) {
    Box b;
    b.lo.assign(d, lo);
    b.hi.assign(d, hi);
    return b;
}

// Identical-measure sequence with only the grid refining.
struct TrivialSequence {
    DensityPtr rho;
    std::vector<FormMatrices> levels;
    FormMatrices reference;

    TrivialSequence(double half, std::vector<int> cells, int ref_cells) {
        rho = Density::gaussian({0.0}, {1.0}, cube_box(1, -half, half));
        Box b = cube_box(1, -half, half);
        for (int c : cells) levels.push_back(assemble(GridSpec(1, 2 * half / c, b), rho, 6));
        reference = assemble(GridSpec(1, 2 * half / ref_cells, b), rho, 6);
    }
};

std::function<double(std::span<const double>)> fn1d(TestFunction1D f) {
    return [f](std::span<const double> x) { return f.eval(x[0]); };
}

}  // namespace

TEST_CASE("nodal embedding reproduces moments") {
    TrivialSequence seq(6.0, {512}, 2048);
    const FormMatrices& F = seq.levels[0];
    {
        Eigen::VectorXd ones = embed_test([](std::span<const double>) { return 1.0; }, F);
        for (int i = 0; i < F.size(); ++i) REQUIRE(ones[i] == 1.0);
        REQUIRE(ones.dot(F.M * ones) == Catch::Approx(1.0).margin(1e-8));
    }
    {
        // second moment of the standard Gaussian through the embedded coordinate
        Eigen::VectorXd x = embed_test([](std::span<const double> p) { return p[0]; }, F);
        REQUIRE(x.dot(F.M * x) == Catch::Approx(1.0).epsilon(1e-4));
        // on the reference level the embedding is plain evaluation
        Eigen::VectorXd xr =
            embed_test([](std::span<const double> p) { return p[0]; }, seq.reference);
        for (int i = 0; i < seq.reference.size(); ++i)
            REQUIRE(xr[i] == seq.reference.grid.r * static_cast<double>(seq.reference.nodes[i][0]));
    }
}

TEST_CASE("interpolated sections converge strongly; alternating ones do not") {
    TrivialSequence seq(4.0, {32, 64, 128, 256}, 1024);
    TestFunction1D phi = TestFunction1D::parse("gauss_bump", 1.0);
    std::vector<std::function<double(std::span<const double>)>> tests{
        fn1d(TestFunction1D::parse("gauss_bump", 1.0)), fn1d(TestFunction1D::parse("sine", 2.0)),
        fn1d(TestFunction1D::parse("const", 1.0))};

    {
        std::vector<LevelVector> lv;
        for (auto& F : seq.levels) lv.push_back({&F, F.nodal(fn1d(phi))});
        LevelVector limit{&seq.reference, seq.reference.nodal(fn1d(phi))};
        auto rep = strong_convergence_check(lv, limit, tests, 1e-3);
        REQUIRE(rep.strong);
        REQUIRE(rep.weak);
        REQUIRE(rep.final_pairing_gap <= 1e-3);
    }
    {
        // alternating sign: pairings oscillate and the trend flag trips
        std::vector<LevelVector> lv;
        int sign = 1;
        for (auto& F : seq.levels) {
            lv.push_back({&F, sign * F.nodal(fn1d(phi))});
            sign = -sign;
        }
        LevelVector limit{&seq.reference, seq.reference.nodal(fn1d(phi))};
        auto rep = strong_convergence_check(lv, limit, tests, 1e-3);
        REQUIRE(!rep.strong);
        REQUIRE(!rep.pairings_converge);
    }
    {
        // Nyquist-mode perturbation: pairings still converge, norms do not
        std::vector<LevelVector> lv;
        for (auto& F : seq.levels) {
            Eigen::VectorXd u = F.nodal(fn1d(phi));
            for (int i = 0; i < F.size(); ++i) u[i] += (i % 2 == 0 ? 0.5 : -0.5);
            lv.push_back({&F, std::move(u)});
        }
        LevelVector limit{&seq.reference, seq.reference.nodal(fn1d(phi))};
        auto rep = strong_convergence_check(lv, limit, tests, 2e-3);
        REQUIRE(rep.weak);
        REQUIRE(!rep.norms_converge);
        REQUIRE(!rep.strong);
    }
}

TEST_CASE("degenerate and swapped sandwiches") {
    const long n = 500;
    SampleSeries g;
    g.values.assign(3, Eigen::VectorXd(n));
    g.limit_values.resize(n);
    for (long i = 0; i < n; ++i) {
        double v = 0.5 + 0.4 * std::sin(0.01 * static_cast<double>(i));
        for (int j = 0; j < 3; ++j) g.values[j][i] = v + 0.01 / (j + 1);
        g.limit_values[i] = v;
    }
    std::vector<Eigen::VectorXd> tests{Eigen::VectorXd::Ones(n)};
    {
        std::vector<SampleSeries> lo{g}, hi{g};  // degenerate sandwich
        auto rep = sandwich_check(g, lo, hi, tests, 0.05);
        REQUIRE(rep.hypotheses_ok);
        REQUIRE(rep.conclusion.strong);
    }
    {
        SampleSeries above = g, below = g;
        for (auto& v : above.values) v.array() += 0.1;
        above.limit_values.array() += 0.1;
        for (auto& v : below.values) v.array() -= 0.1;
        below.limit_values.array() -= 0.1;
        std::vector<SampleSeries> lo{below}, hi{above};
        auto ok = sandwich_check(g, lo, hi, tests, 0.05);
        REQUIRE(ok.hypotheses_ok);
        std::vector<SampleSeries> lo_swapped{above}, hi_swapped{below};
        auto bad = sandwich_check(g, lo_swapped, hi_swapped, tests, 0.05);
        REQUIRE(!bad.hypotheses_ok);
        REQUIRE(!bad.first_violation.empty());
    }
}

TEST_CASE("energy recovery and liminf on the trivial sequence") {
    TrivialSequence seq(5.0, {64, 128, 256, 512}, 2048);
    std::vector<const FormMatrices*> lv;
    for (auto& F : seq.levels) lv.push_back(&F);

    {
        auto c = fn1d(TestFunction1D::parse("const", 1.0));
        auto rep = m2_recovery_diagnostic(c, lv, seq.reference, 1e-10);
        for (const auto& row : rep.rows) REQUIRE(row.energy == Catch::Approx(0.0).margin(1e-12));
        REQUIRE(rep.converges);
    }
    {
        auto u = fn1d(TestFunction1D::parse("gauss_bump", 0.7));
        auto rep = m2_recovery_diagnostic(u, lv, seq.reference, 5e-3);
        REQUIRE(rep.converges);
        // decreasing under refinement
        for (std::size_t i = 0; i + 1 < rep.rows.size(); ++i)
            REQUIRE(rep.rows[i + 1].gap <= rep.rows[i].gap + 1e-12);
        // oracle: dense composite quadrature of the analytic energy
        TestFunction1D tf = TestFunction1D::parse("gauss_bump", 0.7);
        std::vector<double> cuts;
        for (double t = -5.0; t <= 5.0; t += 0.05) cuts.push_back(t);
        double oracle = integrate_interval(-5.0, 5.0, cuts, 8, [&](double x) {
            double du = tf.deriv(x);
            double xs[1] = {x};
            return du * du * (*seq.rho)(std::span<const double>(xs, 1));
        });
        REQUIRE(rep.reference_energy == Catch::Approx(oracle).epsilon(1e-4));
    }
    {
        auto f = fn1d(TestFunction1D::parse("gauss_bump", 1.0));
        std::vector<std::function<double(std::span<const double>)>> tests{
            fn1d(TestFunction1D::parse("gauss_bump", 1.0)),
            fn1d(TestFunction1D::parse("x_gauss", 1.0))};
        auto rep = m1_liminf_diagnostic(f, 1.0, lv, seq.reference, tests, 1e-3, 2);
        REQUIRE(rep.inequality_ok);
        REQUIRE(rep.min_tail_slack >= -1e-3);
        // identification gaps trend down
        REQUIRE(rep.rows.back().identification <= rep.rows.front().identification + 1e-12);
    }
}

TEST_CASE("finite-dimensional sanity: both diagnostics pass together") {
    TrivialSequence seq(4.0, {64, 128, 256, 512}, 2048);
    std::vector<const FormMatrices*> lv;
    for (auto& F : seq.levels) lv.push_back(&F);
    auto u = fn1d(TestFunction1D::parse("gauss_bump", 1.0));
    std::vector<std::function<double(std::span<const double>)>> tests{u};
    auto m2 = m2_recovery_diagnostic(u, lv, seq.reference, 5e-3);
    auto m1 = m1_liminf_diagnostic(u, 1.0, lv, seq.reference, tests, 1e-3, 2);
    REQUIRE(m2.converges == m1.inequality_ok);
    REQUIRE(m2.converges);
}

TEST_CASE("a mismatched reference trips both diagnostics") {
    Box b = cube_box(1, -4.0, 4.0);
    auto rho_levels = Density::gaussian({0.0}, {1.0}, b);
    std::vector<FormMatrices> levels;
    for (int c : {128, 256, 512}) levels.push_back(assemble(GridSpec(1, 8.0 / c, b), rho_levels, 6));
    std::vector<const FormMatrices*> lv;
    for (auto& F : levels) lv.push_back(&F);
    auto u = fn1d(TestFunction1D::parse("gauss_bump", 0.7));
    std::vector<std::function<double(std::span<const double>)>> tests{u};
    {
        // wide reference: energy recovery and the liminf inequality both fail
        FormMatrices ref = assemble(GridSpec(1, 8.0 / 2048, b),
                                    Density::gaussian({0.0}, {4.0}, b), 6);
        auto m2 = m2_recovery_diagnostic(u, lv, ref, 5e-3);
        auto m1 = m1_liminf_diagnostic(u, 1.0, lv, ref, tests, 1e-3, 2);
        REQUIRE(!m2.converges);
        REQUIRE(!m1.inequality_ok);
    }
    {
        // narrow reference: energy recovery fails, but the liminf inequality
        // is one-sided and can still hold
        FormMatrices ref = assemble(GridSpec(1, 8.0 / 2048, b),
                                    Density::gaussian({0.0}, {0.04}, b), 6);
        auto m2 = m2_recovery_diagnostic(u, lv, ref, 5e-3);
        auto m1 = m1_liminf_diagnostic(u, 1.0, lv, ref, tests, 1e-3, 2);
        REQUIRE(!m2.converges);
        REQUIRE(m1.inequality_ok);
    }
}

TEST_CASE("experiment smoke run and the truncated-schedule guard") {
    GaussianBVExperimentConfig cfg;
    cfg.D = 2;
    cfg.sigma2 = {1.0 / (M_PI * M_PI), 1.0 / (4.0 * M_PI * M_PI)};
    cfg.f = bv_step_open(1.0);
    cfg.lambda = {0.5, 0.5};
    cfg.n_schedule = {1, 2};
    cfg.cells_schedule = {256, 512};
    cfg.limit_refine = 2;
    cfg.m_schedule = {2, 4, 8};
    cfg.envelope_levels = 3;
    cfg.mc_samples = 20000;
    cfg.mc_oracle_samples = 50000;
    cfg.markov_trials = 10;
    cfg.tests = {{"gb1", 0, TestFunction1D::parse("gauss_bump", std::sqrt(cfg.sigma2[0]))},
                 {"xg1", 0, TestFunction1D::parse("x_gauss", std::sqrt(cfg.sigma2[0]))},
                 {"gb2", 1, TestFunction1D::parse("gauss_bump", std::sqrt(cfg.sigma2[1]))}};
    cfg.seed = 2025;

    auto rep = gaussian_bv_experiment(cfg);
    auto flag_value = [&](const std::string& name) {
        for (const auto& [n, v] : rep.flags)
            if (n == name) return v;
        throw std::runtime_error("missing flag " + name);
    };
    REQUIRE(flag_value("sufficient_tail"));
    REQUIRE(flag_value("partition_mc"));
    REQUIRE(flag_value("markov"));
    REQUIRE(flag_value("sandwich_hypotheses"));
    REQUIRE(flag_value("residual_stability_bound"));
    REQUIRE(flag_value("weak_convergence"));
    REQUIRE(!rep.rows.empty());

    // truncated schedule: report is emitted with the insufficient-tail flag
    GaussianBVExperimentConfig bad = cfg;
    bad.n_schedule = {1};
    bad.cells_schedule = {256};
    auto short_rep = gaussian_bv_experiment(bad);
    REQUIRE(!short_rep.all_passed());
    bool found = false;
    for (const auto& [n, v] : short_rep.flags)
        if (n == "sufficient_tail") found = !v;
    REQUIRE(found);
}

TEST_CASE("experiment config validation") {
    GaussianBVExperimentConfig cfg;
    cfg.D = 2;
    cfg.sigma2 = {1.0, 1.0};
    cfg.lambda = {0.1, 0.1};
    cfg.f = bv_step(1.0);
    cfg.n_schedule = {2, 1};
    cfg.cells_schedule = {64, 128};
    cfg.tests = {{"t", 0, TestFunction1D::parse("gauss_bump", 1.0)}};
    REQUIRE_THROWS_AS(cfg.validate(), ValidationError);
    cfg.n_schedule = {1, 2};
    REQUIRE_NOTHROW(cfg.validate());
    cfg.sigma2 = {1.0, -1.0};
    REQUIRE_THROWS_AS(cfg.validate(), ValidationError);
}
