#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "cfk/forms.hpp"
#include "cfk/rng.hpp"

using namespace cfk;

namespace {

Box cube_box(int d, double lo, double hi) {
    Box b;
    b.lo.assign(d, lo);
    b.hi.assign(d, hi);
    return b;
}

DensityPtr std_gaussian(int d, double half_width) {
    return Density::gaussian(std::vector<double>(d, 0.0), std::vector<double>(d, 1.0),
                             cube_box(d, -half_width, half_width));
}

TentCoefficients from_vector(const FormMatrices& F, const Eigen::VectorXd& u) {
    TentCoefficients c;
    c.grid = F.grid;
    for (int i = 0; i < F.size(); ++i) c.set(F.nodes[i], u[i]);
    return c;
}

}  // namespace

TEST_CASE("uniform 1-d assembly matches the hat-function stencil") {
    double r = 0.25;
    GridSpec g(1, r, cube_box(1, 0.0, 2.0));
    auto rho = Density::uniform(cube_box(1, 0.0, 2.0));
    auto F = assemble(g, rho, 6);
    REQUIRE(F.size() == 9);
    double height = 0.5;  // 1/vol
    // interior row: (1/r) * [-1, 2, -1] * height
    int mid = F.node_index.at(MultiIndex{4});
    Eigen::MatrixXd S = Eigen::MatrixXd(F.S);
    REQUIRE(S(mid, mid) == Catch::Approx(2.0 / r * height));
    REQUIRE(S(mid, mid - 1) == Catch::Approx(-1.0 / r * height));
    REQUIRE(S(mid, mid + 1) == Catch::Approx(-1.0 / r * height));
    // constants have zero energy when the box carries the full support
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(F.size());
    REQUIRE((F.S * ones).lpNorm<Eigen::Infinity>() < 1e-10);
    REQUIRE(ones.dot(F.M * ones) == Catch::Approx(1.0).margin(1e-10));
}

TEST_CASE("stiffness is an M-matrix and matches the per-cell energy oracle") {
    auto rng = substream(61, "assembly");
    std::normal_distribution<double> W(0.0, 1.0);
    for (int d : {1, 2}) {
        GridSpec g(d, 0.5, cube_box(d, -2.0, 2.0));
        auto rho = std_gaussian(d, 2.0);
        auto F = assemble(g, rho, 8);

        // off-diagonal entries nonpositive
        for (int k = 0; k < F.S.outerSize(); ++k)
            for (Eigen::SparseMatrix<double>::InnerIterator it(F.S, k); it; ++it)
                if (it.row() != it.col()) REQUIRE(it.value() <= 1e-14);

        // u' S u equals the cellwise squared-gradient times cell mass
        for (int trial = 0; trial < 50; ++trial) {
            Eigen::VectorXd u(F.size());
            for (int i = 0; i < F.size(); ++i) u[i] = W(rng);
            auto c = from_vector(F, u);
            double oracle = 0.0;
            for_each_anchor(g.lo_index(), g.hi_index(), [&](const MultiIndex& a) {
                detail::for_each_permutation(d, [&](const std::vector<int>& perm) {
                    PathSimplex T{a, perm, g.r};
                    oracle += grad_sq_norm(c, T) * cell_integral(*rho, T, 8).value;
                });
            });
            double quad = energy(F, u, u);
            REQUIRE(quad == Catch::Approx(oracle).epsilon(1e-10));
            REQUIRE(quad >= 0.0);
        }
    }
}

TEST_CASE("energy bilinearity, contraction, Cauchy-Schwarz") {
    GridSpec g(1, 0.25, cube_box(1, -3.0, 3.0));
    auto F = assemble(g, std_gaussian(1, 3.0), 8);
    auto rng = substream(62, "energy");
    std::normal_distribution<double> W(0.4, 1.0);
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(F.size());
    REQUIRE(energy(F, ones, ones) == Catch::Approx(0.0).margin(1e-12));
    for (int trial = 0; trial < 50; ++trial) {
        Eigen::VectorXd u(F.size()), v(F.size());
        for (int i = 0; i < F.size(); ++i) {
            u[i] = W(rng);
            v[i] = W(rng);
        }
        REQUIRE(energy(F, u, v) == Catch::Approx(energy(F, v, u)).margin(1e-12));
        double cs = energy(F, u, v) * energy(F, u, v);
        REQUIRE(cs <= energy(F, u, u) * energy(F, v, v) + 1e-10);
        // clipping the nodal values cannot increase energy
        Eigen::VectorXd uc = u.cwiseMax(0.0).cwiseMin(1.0);
        REQUIRE(energy(F, uc, uc) <= energy(F, u, u) + 1e-12);
    }
}

TEST_CASE("resolvent: constants, contraction, identity, order interval") {
    GridSpec g(1, 0.125, cube_box(1, -4.0, 4.0));
    auto F = assemble(g, std_gaussian(1, 4.0), 8);
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(F.size());
    for (double alpha : {0.5, 1.0, 2.0}) {
        Eigen::VectorXd u = resolvent(F, alpha, ones);
        REQUIRE((alpha * u - ones).lpNorm<Eigen::Infinity>() < 1e-9);
        // contraction in the discrete L2 norm
        auto rng = substream(63, "resolvent");
        std::normal_distribution<double> W(0.0, 1.0);
        for (int trial = 0; trial < 10; ++trial) {
            Eigen::VectorXd f(F.size());
            for (int i = 0; i < F.size(); ++i) f[i] = W(rng);
            Eigen::VectorXd gu = resolvent(F, alpha, f);
            REQUIRE(alpha * std::sqrt(l2_inner(F, gu, gu)) <=
                    std::sqrt(l2_inner(F, f, f)) * (1.0 + 1e-10));
        }
    }
    // resolvent identity G_a - G_b = (b - a) G_a G_b
    auto rng = substream(64, "res-id");
    std::normal_distribution<double> W(0.0, 1.0);
    ResolventOperator Ga(F, 0.7), Gb(F, 2.3);
    for (int trial = 0; trial < 10; ++trial) {
        Eigen::VectorXd f(F.size());
        for (int i = 0; i < F.size(); ++i) f[i] = W(rng);
        Eigen::VectorXd lhs = Ga.apply(f) - Gb.apply(f);
        Eigen::VectorXd rhs = (2.3 - 0.7) * Ga.apply(Gb.apply(f));
        REQUIRE((lhs - rhs).norm() <= 1e-8 * std::max(1.0, rhs.norm()));
    }
    // sub-Markov order interval
    auto rep = markov_check(F, 1.0, 200, 99);
    REQUIRE(rep.passed);
    REQUIRE(rep.min_value >= -1e-9);
    REQUIRE(rep.max_value <= 1.0 + 1e-9);

    // the solve record carries the residual and minimizes the penalized energy
    {
        Eigen::VectorXd f = F.nodal([](std::span<const double> p) { return std::cos(p[0]); });
        auto sol = resolvent_solve(F, 1.0, f);
        REQUIRE(sol.residual_norm <= 1e-8);
        auto J = [&](const Eigen::VectorXd& v) {
            Eigen::VectorXd e = v - f;
            return energy(F, v, v) + 1.0 * e.dot(F.M * e);
        };
        double at_min = J(sol.output);
        auto prng = substream(66, "variational");
        std::normal_distribution<double> W(0.0, 1.0);
        for (int trial = 0; trial < 20; ++trial) {
            Eigen::VectorXd dv(F.size());
            for (int i = 0; i < F.size(); ++i) dv[i] = 0.01 * W(prng);
            REQUIRE(J(sol.output + dv) >= at_min - 1e-12);
        }
    }
}

TEST_CASE("harmonic-oscillator spectrum and eigenrelation") {
    GridSpec g(1, 1.0 / 32.0, cube_box(1, -6.0, 6.0));
    auto F = assemble(g, std_gaussian(1, 6.0), 8);
    auto evs = smallest_generalized_eigenvalues(F, 4);
    std::vector<double> expect{0.0, 1.0, 2.0, 3.0};
    REQUIRE(std::abs(evs[0]) < 0.02);
    for (int k = 1; k < 4; ++k) REQUIRE(std::abs(evs[k] - expect[k]) <= 0.02 * expect[k]);

    // G_alpha applied to the coordinate function: x is an eigenfunction with
    // eigenvalue one, so alpha G_alpha x = x/(alpha+1) * alpha ... i.e.
    // G_alpha x = x / (alpha + 1).
    Eigen::VectorXd x = F.nodal([](std::span<const double> p) { return p[0]; });
    for (double alpha : {0.5, 1.0, 2.0}) {
        Eigen::VectorXd u = resolvent(F, alpha, x);
        Eigen::VectorXd target = x / (alpha + 1.0);
        double rel = std::sqrt(l2_inner(F, Eigen::VectorXd(u - target), Eigen::VectorXd(u - target)) /
                               l2_inner(F, target, target));
        REQUIRE(rel <= 0.02);
    }

    // the eigenrelation error shrinks under grid refinement until it hits
    // the box-truncation floor
    double prev_err = 1e300;
    for (double r : {0.25, 0.125, 1.0 / 32.0}) {
        GridSpec gr(1, r, cube_box(1, -6.0, 6.0));
        auto Fr = assemble(gr, std_gaussian(1, 6.0), 8);
        Eigen::VectorXd xr = Fr.nodal([](std::span<const double> p) { return p[0]; });
        Eigen::VectorXd ur = resolvent(Fr, 1.0, xr);
        Eigen::VectorXd tr = xr / 2.0;
        double rel = std::sqrt(l2_inner(Fr, Eigen::VectorXd(ur - tr), Eigen::VectorXd(ur - tr)) /
                               l2_inner(Fr, tr, tr));
        REQUIRE((rel < prev_err || (rel < 1e-5 && prev_err < 1e-5)));
        prev_err = rel;
    }
}

TEST_CASE("semigroup: conservativity, contraction, decay rate") {
    GridSpec g(1, 1.0 / 16.0, cube_box(1, -6.0, 6.0));
    auto F = assemble(g, std_gaussian(1, 6.0), 8);
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(F.size());
    double gap = 0.0;
    Eigen::VectorXd u = semigroup(F, 0.5, ones, 16, &gap);
    REQUIRE((u - ones).lpNorm<Eigen::Infinity>() < 1e-9);
    REQUIRE(gap < 1e-9);

    Eigen::VectorXd x = F.nodal([](std::span<const double> p) { return p[0]; });
    double t = 0.4;
    Eigen::VectorXd xt = semigroup(F, t, x, 512);
    Eigen::VectorXd target = std::exp(-t) * x;
    double rel = std::sqrt(l2_inner(F, Eigen::VectorXd(xt - target), Eigen::VectorXd(xt - target)) /
                           l2_inner(F, target, target));
    REQUIRE(rel < 0.01);
    REQUIRE(std::sqrt(l2_inner(F, xt, xt)) <= std::sqrt(l2_inner(F, x, x)));
}

TEST_CASE("resolvent matches the time-integrated semigroup") {
    GridSpec g(1, 1.0 / 8.0, cube_box(1, -5.0, 5.0));
    auto F = assemble(g, std_gaussian(1, 5.0), 8);
    Eigen::VectorXd f = F.nodal([](std::span<const double> p) { return std::exp(-p[0] * p[0]); });
    const double alpha = 1.0;
    Eigen::VectorXd ref = alpha * resolvent(F, alpha, f);
    // 64-node Laguerre-style rule via Gauss-Legendre on s = exp(-alpha t)
    const GaussRule& gr = gauss_rule(64);
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(F.size());
    for (int q = 0; q < 64; ++q) {
        double s = gr.nodes[q];
        double t = -std::log(s) / alpha;
        if (t <= 0) continue;
        int steps = std::min(4096, std::max(64, static_cast<int>(t * 512)));
        acc += gr.weights[q] * semigroup(F, t, f, steps);
    }
    double rel = (acc - ref).norm() / ref.norm();
    REQUIRE(rel <= 1e-3);
}

TEST_CASE("lumped mass keeps row sums and the order interval") {
    GridSpec g(1, 0.25, cube_box(1, -3.0, 3.0));
    auto rho = std_gaussian(1, 3.0);
    auto Fc = assemble(g, rho, 8, false);
    auto Fl = assemble(g, rho, 8, true);
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(Fc.size());
    REQUIRE((Fl.M * ones - Fc.M * ones).lpNorm<Eigen::Infinity>() < 1e-12);
    Eigen::MatrixXd Ml = Eigen::MatrixXd(Fl.M);
    for (int i = 0; i < Fl.size(); ++i)
        for (int j = 0; j < Fl.size(); ++j)
            if (i != j) REQUIRE(Ml(i, j) == 0.0);
    auto rep = markov_check(Fl, 1.0, 100, 31);
    REQUIRE(rep.passed);
}
