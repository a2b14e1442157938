// Hyperplane interpolants on path simplices, the piecewise-linear tent basis,
// and the finite catalog of primal functions driving the residual estimates.
#pragma once

#include <span>
#include <string>
#include <vector>

#include "cfk/core.hpp"
#include "cfk/triangulation.hpp"

namespace cfk {

// Value of the affine interpolant that is 1 at vertex i of T and 0 at the
// others, in the cell's unit-local coordinates.
inline double eval_H(const PathSimplex& T, int i, std::span<const double> x) {
    const int d = T.dim();
    if (i < 0 || i > d) throw ValidationError("eval_H: vertex index out of range");
    std::vector<double> v = T.local(x);
    if (i == 0) return 1.0 - v[T.perm[0]];
    if (i == d) return v[T.perm[d - 1]];
    return v[T.perm[i - 1]] - v[T.perm[i]];
}

// Constant gradient of the interpolant, in world coordinates (scaled 1/r).
inline std::vector<double> grad_H(const PathSimplex& T, int i) {
    const int d = T.dim();
    if (i < 0 || i > d) throw ValidationError("grad_H: vertex index out of range");
    std::vector<double> g(d, 0.0);
    if (i >= 1) g[T.perm[i - 1]] += 1.0 / T.r;
    if (i <= d - 1) g[T.perm[i]] -= 1.0 / T.r;
    return g;
}

// Scalar product of the constant gradients; depends only on |i-j| and the
// endpoints, not on the permutation.
inline double grad_dot(const PathSimplex& T, int i, int j) {
    const int d = T.dim();
    if (i < 0 || i > d || j < 0 || j > d) throw ValidationError("grad_dot: index out of range");
    double s;
    if (i == j)
        s = (i == 0 || i == d) ? 1.0 : 2.0;
    else if (i - j == 1 || j - i == 1)
        s = -1.0;
    else
        s = 0.0;
    return s / (T.r * T.r);
}

// Tent value at x for the node alpha (lattice units) at scale r, together
// with the owning cell and the local vertex index when the value is carried
// by one. Routes through point location: within the located cell only that
// cell's vertices carry nonzero tents.
struct TentEvaluation {
    double value = 0.0;
    PathSimplex owning_cell;
    int local_index = -1;  // -1 when alpha is not a vertex of the located cell
};

inline TentEvaluation tent_evaluation(const MultiIndex& alpha, double r,
                                      std::span<const double> x) {
    const int d = static_cast<int>(alpha.size());
    TentEvaluation out;
    out.owning_cell = locate(x, d, r);
    const PathSimplex& T = out.owning_cell;
    int ones = 0;
    for (int k = 0; k < d; ++k) {
        Index diff = alpha[k] - T.anchor[k];
        if (diff != 0 && diff != 1) return out;
        ones += static_cast<int>(diff);
    }
    for (int j = 0; j < ones; ++j)
        if (alpha[T.perm[j]] - T.anchor[T.perm[j]] != 1) return out;
    out.local_index = ones;
    out.value = eval_H(T, ones, x);
    return out;
}

inline double eval_tent(const MultiIndex& alpha, double r, std::span<const double> x) {
    const int d = static_cast<int>(alpha.size());
    PathSimplex T = locate(x, d, r);
    int ones = 0;
    for (int k = 0; k < d; ++k) {
        Index diff = alpha[k] - T.anchor[k];
        if (diff != 0 && diff != 1) return 0.0;
        ones += static_cast<int>(diff);
    }
    for (int j = 0; j < ones; ++j)
        if (alpha[T.perm[j]] - T.anchor[T.perm[j]] != 1) return 0.0;
    return eval_H(T, ones, x);
}

// Catalog of primal functions: [0,1]-valued, unit integral, integer shifts
// summing to one. The list is exactly what the approximation bounds consume.
struct PrimalFunction {
    enum class Kind { UnitCube, ShiftedCube, Tent, AxisAveraged, SimplexUnion };

    Kind kind = Kind::UnitCube;
    int d = 1;
    int axis = -1;  // for AxisAveraged / SimplexUnion

    std::string name() const {
        switch (kind) {
            case Kind::UnitCube: return "cube";
            case Kind::ShiftedCube: return "shifted_cube";
            case Kind::Tent: return "tent";
            case Kind::AxisAveraged: return "axis_avg" + std::to_string(axis + 1);
            case Kind::SimplexUnion: return "simplex_union" + std::to_string(axis + 1);
        }
        return "?";
    }

    // Support box in unit-scale coordinates.
    Box support() const {
        Box b;
        b.lo.assign(d, 0.0);
        b.hi.assign(d, 1.0);
        switch (kind) {
            case Kind::UnitCube: break;
            case Kind::ShiftedCube:
                b.lo.assign(d, -1.0);
                b.hi.assign(d, 0.0);
                break;
            case Kind::Tent:
                b.lo.assign(d, -1.0);
                b.hi.assign(d, 1.0);
                break;
            case Kind::AxisAveraged: b.hi[axis] = 2.0; break;
            case Kind::SimplexUnion:
                b.lo.assign(d, -1.0);
                b.hi.assign(d, 1.0);
                break;
        }
        return b;
    }

    double operator()(std::span<const double> y) const {
        switch (kind) {
            case Kind::UnitCube: {
                for (int i = 0; i < d; ++i)
                    if (!(y[i] >= 0.0 && y[i] < 1.0)) return 0.0;
                return 1.0;
            }
            case Kind::ShiftedCube: {
                for (int i = 0; i < d; ++i)
                    if (!(y[i] >= -1.0 && y[i] < 0.0)) return 0.0;
                return 1.0;
            }
            case Kind::Tent: {
                MultiIndex origin(d, 0);
                return eval_tent(origin, 1.0, y);
            }
            case Kind::AxisAveraged: {
                for (int i = 0; i < d; ++i) {
                    if (i == axis) continue;
                    if (!(y[i] >= 0.0 && y[i] < 1.0)) return 0.0;
                }
                double t = y[axis];
                if (t < 0.0 || t >= 2.0) return 0.0;
                return t < 1.0 ? t : 2.0 - t;
            }
            case Kind::SimplexUnion: {
                PathSimplex T = locate(y, d, 1.0);
                for (Index a : T.anchor)
                    if (a < -1 || a > 0) return 0.0;
                int k = T.perm_position(axis);
                MultiIndex v = T.vertex_index(k);
                for (Index c : v)
                    if (c != 0) return 0.0;
                return 1.0;
            }
        }
        return 0.0;
    }

    // Scaled shift phi_r^alpha(x) = phi((x - r*alpha)/r).
    double scaled(const MultiIndex& alpha, double r, std::span<const double> x) const {
        std::vector<double> y(d);
        for (int i = 0; i < d; ++i) y[i] = x[i] / r - static_cast<double>(alpha[i]);
        return (*this)(y);
    }
};

inline std::vector<PrimalFunction> primal_catalog(int d) {
    std::vector<PrimalFunction> out;
    out.push_back({PrimalFunction::Kind::UnitCube, d, -1});
    out.push_back({PrimalFunction::Kind::ShiftedCube, d, -1});
    out.push_back({PrimalFunction::Kind::Tent, d, -1});
    for (int i = 0; i < d; ++i) out.push_back({PrimalFunction::Kind::AxisAveraged, d, i});
    for (int i = 0; i < d; ++i) out.push_back({PrimalFunction::Kind::SimplexUnion, d, i});
    return out;
}

// (phi, eta) pairs the dual-norm estimators scan. This is the closed list the
// approximation bounds actually evaluate: the cube/tent pair for the L2
// estimate, one averaged/simplex-union pair per axis for the energy
// estimates, and the shifted-cube/cube pair for the perturbation stability
// argument, plus the plain cube/cube pair as a baseline.
struct PrimalPair {
    PrimalFunction phi, eta;
    std::string id() const { return phi.name() + "-" + eta.name(); }
};

inline std::vector<PrimalPair> primal_pair_catalog(int d) {
    std::vector<PrimalPair> out;
    PrimalFunction cube{PrimalFunction::Kind::UnitCube, d, -1};
    PrimalFunction shifted{PrimalFunction::Kind::ShiftedCube, d, -1};
    PrimalFunction tent{PrimalFunction::Kind::Tent, d, -1};
    out.push_back({cube, cube});
    out.push_back({cube, tent});
    out.push_back({shifted, cube});
    for (int i = 0; i < d; ++i)
        out.push_back({PrimalFunction{PrimalFunction::Kind::AxisAveraged, d, i},
                       PrimalFunction{PrimalFunction::Kind::SimplexUnion, d, i}});
    return out;
}

}  // namespace cfk
