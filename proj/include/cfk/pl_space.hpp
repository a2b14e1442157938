// Weighted tent sums: evaluation, exact per-cell weak gradients, squared
// gradient energy density, local-averaging projection, and unit clipping.
#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cfk/core.hpp"
#include "cfk/quadrature.hpp"
#include "cfk/tent.hpp"
#include "cfk/triangulation.hpp"

namespace cfk {

struct TentCoefficients {
    GridSpec grid;
    std::unordered_map<MultiIndex, double, MultiIndexHash> weights;  // unstored = 0
    double bound = 0.0;

    double weight(const MultiIndex& alpha) const {
        auto it = weights.find(alpha);
        return it == weights.end() ? 0.0 : it->second;
    }

    void set(MultiIndex alpha, double w) {
        bound = std::max(bound, std::abs(w));
        weights[std::move(alpha)] = w;
    }
};

// Within the located cell only its d+1 vertices carry nonzero tents, so the
// sum collapses to one interpolation.
inline double eval_sum(const TentCoefficients& c, std::span<const double> x) {
    PathSimplex T = locate(x, c.grid.d, c.grid.r);
    double s = 0.0;
    for (int i = 0; i <= c.grid.d; ++i) {
        double w = c.weight(T.vertex_index(i));
        if (w != 0.0) s += w * eval_H(T, i, x);
    }
    return s;
}

// Constant gradient of the tent sum on one cell; component i is the forward
// difference (w_{T(k)} - w_{T(k-1)})/r along the path edge in direction i.
inline std::vector<double> cell_gradient(const TentCoefficients& c, const PathSimplex& T) {
    const int d = T.dim();
    std::vector<double> g(d, 0.0);
    MultiIndex v = T.anchor;
    double prev = c.weight(v);
    for (int k = 0; k < d; ++k) {
        v[T.perm[k]] += 1;
        double next = c.weight(v);
        g[T.perm[k]] = (next - prev) / c.grid.r;
        prev = next;
    }
    return g;
}

inline double grad_sq_norm(const TentCoefficients& c, const PathSimplex& T) {
    const int d = T.dim();
    double s = 0.0;
    MultiIndex v = T.anchor;
    double prev = c.weight(v);
    for (int k = 0; k < d; ++k) {
        v[T.perm[k]] += 1;
        double next = c.weight(v);
        double diff = next - prev;
        s += diff * diff;
        prev = next;
    }
    return s / (c.grid.r * c.grid.r);
}

struct CellGradientField {
    std::unordered_map<PathSimplex, std::vector<double>, PathSimplexHash> gradients;
};

// Gradient field over every cell of the grid box.
inline CellGradientField weak_gradient(const TentCoefficients& c) {
    CellGradientField field;
    auto lo = c.grid.lo_index(), hi = c.grid.hi_index();
    for_each_anchor(lo, hi, [&](const MultiIndex& a) {
        detail::for_each_permutation(c.grid.d, [&](const std::vector<int>& perm) {
            PathSimplex T{a, perm, c.grid.r};
            field.gradients.emplace(T, cell_gradient(c, T));
        });
    });
    return field;
}

struct ProjectionResult {
    TentCoefficients coeffs;
    bool converged = true;
    double max_refinement_gap = 0.0;
    std::vector<std::string> warnings;
};

// Coefficient at alpha = average of u over the cube alpha + [0,r)^d, by
// tensor Gauss of the given order with one dyadic refinement cross-check.
inline ProjectionResult local_average_project(const std::function<double(std::span<const double>)>& u,
                                              const GridSpec& grid, int order = 4,
                                              double tolerance = 1e-6) {
    ProjectionResult res;
    res.coeffs.grid = grid;
    const int d = grid.d;
    const double cube_vol = std::pow(grid.r, d);
    auto lo = grid.lo_index(), hi = grid.hi_index();
    // Nodes are cube anchors; average over the forward cube at each node in
    // the closed index range.
    MultiIndex hi_node = hi;
    for_each_anchor(lo, hi_node, [&](const MultiIndex& a) {
        Box cube;
        cube.lo.resize(d);
        cube.hi.resize(d);
        for (int i = 0; i < d; ++i) {
            cube.lo[i] = grid.r * static_cast<double>(a[i]);
            cube.hi[i] = cube.lo[i] + grid.r;
        }
        double coarse = integrate_box(cube, order, u) / cube_vol;
        // refinement: split into 2^d subcubes
        double fine = 0.0;
        std::vector<int> bits(d, 0);
        while (true) {
            Box sub;
            sub.lo.resize(d);
            sub.hi.resize(d);
            for (int i = 0; i < d; ++i) {
                double mid = cube.lo[i] + 0.5 * grid.r;
                sub.lo[i] = bits[i] ? mid : cube.lo[i];
                sub.hi[i] = bits[i] ? cube.hi[i] : mid;
            }
            fine += integrate_box(sub, order, u);
            int axis = d - 1;
            while (axis >= 0) {
                if (++bits[axis] < 2) break;
                bits[axis] = 0;
                --axis;
            }
            if (axis < 0) break;
        }
        fine /= cube_vol;
        double gap = std::abs(fine - coarse);
        res.max_refinement_gap = std::max(res.max_refinement_gap, gap);
        if (gap > tolerance * std::max(1.0, std::abs(fine))) {
            res.converged = false;
            res.warnings.push_back("projection quadrature disagreement " + std::to_string(gap) +
                                   " at node " + to_string(a));
        }
        res.coeffs.set(a, fine);
    });
    return res;
}

// Nodal clipping to [0,1]; 1-Lipschitz on each telescoping difference, so the
// per-cell energy never increases.
inline TentCoefficients clip_coefficients(const TentCoefficients& c) {
    TentCoefficients out;
    out.grid = c.grid;
    for (const auto& [alpha, w] : c.weights) out.set(alpha, std::min(1.0, std::max(0.0, w)));
    return out;
}

}  // namespace cfk
