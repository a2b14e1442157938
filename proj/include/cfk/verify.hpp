// Invariant suites behind the verify-basis command: partition properties of
// the triangulation, tent-basis identities, and the piecewise-linear space
// contracts, each reported as a named pass/fail line.
#pragma once

#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cfk/cell_quad.hpp"
#include "cfk/pl_space.hpp"
#include "cfk/rng.hpp"
#include "cfk/tent.hpp"
#include "cfk/triangulation.hpp"

namespace cfk {

struct CheckLine {
    std::string name;
    bool passed = false;
    double observed = 0.0;
    double tolerance = 0.0;
};

struct VerifyReport {
    std::vector<CheckLine> lines;
    bool all_passed() const {
        for (const auto& l : lines)
            if (!l.passed) return false;
        return true;
    }
    void add(std::string name, bool ok, double observed, double tol) {
        lines.push_back({std::move(name), ok, observed, tol});
    }
};

struct VerifyOptions {
    long pou_samples = 100000;
    long partition_samples = 100000;
    long volume_samples = 1000000;
    double pou_tol = 1e-12;
    std::uint64_t seed = 1;
};

inline VerifyReport verify_basis(const GridSpec& grid, const VerifyOptions& opt = {}) {
    VerifyReport rep;
    const int d = grid.d;
    const double r = grid.r;
    auto rng = substream(opt.seed, "verify-basis");
    std::uniform_real_distribution<double> U01(0.0, 1.0);
    auto random_point = [&](std::vector<double>& x) {
        for (int i = 0; i < d; ++i)
            x[i] = grid.box.lo[i] + (grid.box.hi[i] - grid.box.lo[i]) * U01(rng);
    };

    {  // partition of unity over the tent family
        std::vector<double> x(d);
        double worst = 0.0;
        for (long s = 0; s < opt.pou_samples; ++s) {
            random_point(x);
            MultiIndex base(d), alpha(d);
            for (int i = 0; i < d; ++i) base[i] = static_cast<Index>(std::floor(x[i] / r));
            double sum = 0.0;
            std::vector<int> off(d, -1);
            while (true) {
                for (int i = 0; i < d; ++i) alpha[i] = base[i] + off[i];
                sum += eval_tent(alpha, r, x);
                int ax = d - 1;
                while (ax >= 0) {
                    if (++off[ax] <= 1) break;
                    off[ax] = -1;
                    --ax;
                }
                if (ax < 0) break;
            }
            worst = std::max(worst, std::abs(sum - 1.0));
        }
        rep.add("partition_of_unity", worst <= opt.pou_tol, worst, opt.pou_tol);
    }

    {  // cells partition space: located cell is the unique member
        std::vector<double> x(d);
        bool ok = true;
        long mismatches = 0;
        for (long s = 0; s < opt.partition_samples; ++s) {
            random_point(x);
            PathSimplex T = locate(x, grid);
            if (!membership(x, T)) {
                ok = false;
                ++mismatches;
                continue;
            }
            if (d <= 4) {
                int hits = 0;
                detail::for_each_permutation(d, [&](const std::vector<int>& perm) {
                    if (membership(x, PathSimplex{T.anchor, perm, r})) ++hits;
                });
                if (hits != 1) {
                    ok = false;
                    ++mismatches;
                }
            }
        }
        rep.add("cell_partition", ok, static_cast<double>(mismatches), 0.0);
    }

    {  // permutation <-> path bijection, exhaustive
        bool ok = true;
        detail::for_each_permutation(std::min(d, 6), [&](const std::vector<int>& perm) {
            PathSimplex T = perm_to_path(perm, MultiIndex(perm.size(), 0), r);
            for (std::size_t i = 1; i <= perm.size(); ++i) {
                MultiIndex a = T.vertex_index(static_cast<int>(i) - 1);
                MultiIndex b = T.vertex_index(static_cast<int>(i));
                int axis = -1;
                for (std::size_t k = 0; k < perm.size(); ++k)
                    if (b[k] != a[k]) axis = static_cast<int>(k);
                if (axis != perm[i - 1]) ok = false;
            }
        });
        rep.add("perm_bijection", ok, ok ? 0.0 : 1.0, 0.0);
    }

    {  // tent mass r^d by quadrature
        MultiIndex origin(d, 0);
        double mass = 0.0;
        for (const auto& [T, i] : incident_vertices(origin, grid))
            mass += integrate_cell(T, 4, [&](std::span<const double> x) { return eval_H(T, i, x); });
        double rel = std::abs(mass - std::pow(r, d)) / std::pow(r, d);
        rep.add("tent_mass", rel <= 1e-8, rel, 1e-8);
    }

    {  // Monte Carlo volume of one cell within 3 binomial sigma
        std::vector<int> perm(d);
        for (int i = 0; i < d; ++i) perm[i] = i;
        PathSimplex T{MultiIndex(d, 0), perm, r};
        std::uniform_real_distribution<double> Ur(0.0, r);
        long hits = 0;
        std::vector<double> x(d);
        for (long s = 0; s < opt.volume_samples; ++s) {
            for (auto& v : x) v = Ur(rng);
            if (membership(x, T)) ++hits;
        }
        double p = 1.0 / factorial(d);
        double sigma = std::sqrt(p * (1 - p) / static_cast<double>(opt.volume_samples));
        double gap = std::abs(static_cast<double>(hits) / opt.volume_samples - p);
        rep.add("cell_volume_mc", gap <= 3.0 * sigma, gap, 3.0 * sigma);
    }

    {  // weak-gradient identity on random coefficients
        TentCoefficients c;
        c.grid = grid;
        std::normal_distribution<double> W(0.0, 1.0);
        auto lo = grid.lo_index(), hi = grid.hi_index();
        for (auto& h : hi) ++h;
        for_each_anchor(lo, hi, [&](const MultiIndex& a) { c.set(a, W(rng)); });
        double worst = 0.0;
        auto chi = grid.lo_index();
        auto chx = grid.hi_index();
        for_each_anchor(chi, chx, [&](const MultiIndex& a) {
            detail::for_each_permutation(d, [&](const std::vector<int>& perm) {
                PathSimplex T{a, perm, r};
                auto grad = cell_gradient(c, T);
                double sq = 0.0;
                for (double gi : grad) sq += gi * gi;
                double ref = grad_sq_norm(c, T);
                worst = std::max(worst, std::abs(sq - ref) / std::max(1.0, std::abs(ref)));
            });
        });
        rep.add("weak_gradient_identity", worst <= 1e-14, worst, 1e-14);

        // finite differences of the evaluated sum at interior points
        double worst_fd = 0.0;
        std::vector<double> x(d);
        const double h = 1e-6;
        for (int trial = 0; trial < 200; ++trial) {
            random_point(x);
            PathSimplex T = locate(x, grid);
            auto locv = T.local(x);
            bool interior = true;
            for (double v : locv) interior = interior && v > 0.05 && v < 0.95;
            std::sort(locv.begin(), locv.end());
            for (std::size_t i = 0; i + 1 < locv.size(); ++i)
                interior = interior && locv[i + 1] - locv[i] > 0.05;
            bool inside = true;
            for (int i = 0; i < d; ++i)
                inside = inside && x[i] > grid.box.lo[i] + r && x[i] < grid.box.hi[i] - r;
            if (!interior || !inside) continue;
            auto grad = cell_gradient(c, T);
            for (int k = 0; k < d; ++k) {
                auto xp = x;
                xp[k] += h;
                double fd = (eval_sum(c, xp) - eval_sum(c, x)) / h;
                worst_fd = std::max(worst_fd, std::abs(fd - grad[k]));
            }
        }
        rep.add("weak_gradient_fd", worst_fd <= 1e-5, worst_fd, 1e-5);
    }

    {  // projection is a sup-norm contraction
        auto res = local_average_project(
            [](std::span<const double> x) {
                double s = 1.0;
                for (double v : x) s *= std::cos(v);
                return s;
            },
            grid, 4);
        double worst = 0.0;
        for (const auto& [a, w] : res.coeffs.weights) worst = std::max(worst, std::abs(w));
        rep.add("projection_contraction", worst <= 1.0 + 1e-12 && res.converged, worst, 1.0);
    }

    return rep;
}

}  // namespace cfk
