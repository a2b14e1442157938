// Galerkin discretization of the gradient form int <grad u, grad v> rho dx
// on the tent basis: sparse stiffness/mass assembly, resolvent solves,
// implicit-Euler semigroup stepping, and order-interval checks.
#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cfk/density.hpp"
#include "cfk/pl_space.hpp"
#include "cfk/rng.hpp"
#include "cfk/tent.hpp"

namespace cfk {

struct FormMatrices {
    GridSpec grid;
    DensityPtr measure;
    std::vector<MultiIndex> nodes;  // lexicographically sorted
    std::unordered_map<MultiIndex, int, MultiIndexHash> node_index;
    Eigen::SparseMatrix<double> S, M;
    double total_mass = 0.0;
    bool lumped = false;
    bool quadrature_converged = true;
    std::vector<std::string> warnings;

    int size() const { return static_cast<int>(nodes.size()); }

    Eigen::VectorXd nodal(const std::function<double(std::span<const double>)>& f) const {
        Eigen::VectorXd v(size());
        std::vector<double> x(grid.d);
        for (int i = 0; i < size(); ++i) {
            for (int k = 0; k < grid.d; ++k) x[k] = grid.r * static_cast<double>(nodes[i][k]);
            v[i] = f(x);
        }
        return v;
    }
};

// Cells with measure below this are dropped from assembly; the node set is
// the union of vertices of retained cells.
inline constexpr double kCellMassFloor = 1e-300;

inline FormMatrices assemble(const GridSpec& grid, DensityPtr measure, int quad_order = 6,
                             bool lumped = false) {
    FormMatrices F;
    F.grid = grid;
    F.measure = measure;
    F.lumped = lumped;
    const int d = grid.d;
    const double r = grid.r;

    struct CellData {
        PathSimplex T;
        double mass;                       // integral of rho over the cell
        std::vector<double> wmass;         // integral of H_i * H_j * rho (packed i<=j)
    };
    std::vector<CellData> cells;
    auto lo = grid.lo_index(), hi = grid.hi_index();
    for_each_anchor(lo, hi, [&](const MultiIndex& a) {
        detail::for_each_permutation(d, [&](const std::vector<int>& perm) {
            PathSimplex T{a, perm, r};
            auto ci = cell_integral(*measure, T, quad_order);
            if (!ci.converged) {
                F.quadrature_converged = false;
                F.warnings.push_back("cell quadrature disagreement at " + to_string(a));
            }
            if (ci.value < kCellMassFloor) return;
            CellData cd{T, ci.value, {}};
            const int nv = d + 1;
            cd.wmass.assign(static_cast<std::size_t>(nv * (nv + 1) / 2), 0.0);
            std::vector<double> H(nv);
            auto accumulate = [&](std::span<const double> x, double w) {
                double rho = (*measure)(x);
                for (int i = 0; i < nv; ++i) H[i] = eval_H(T, i, x);
                int p = 0;
                for (int i = 0; i < nv; ++i)
                    for (int j = i; j < nv; ++j) cd.wmass[p++] += w * rho * H[i] * H[j];
            };
            if (d == 1) {
                auto breaks = measure->axis_breakpoints(0);
                double a0 = r * static_cast<double>(T.anchor[0]);
                std::vector<double> cuts{a0, a0 + r};
                for (double t : breaks)
                    if (t > a0 && t < a0 + r) cuts.push_back(t);
                std::sort(cuts.begin(), cuts.end());
                const GaussRule& gr = gauss_rule(quad_order);
                for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
                    double len = cuts[k + 1] - cuts[k];
                    for (int q = 0; q < quad_order; ++q) {
                        double xs[1] = {cuts[k] + len * gr.nodes[q]};
                        accumulate(std::span<const double>(xs, 1), len * gr.weights[q]);
                    }
                }
            } else {
                const double scale = std::pow(r, d);
                const GaussRule& gr = gauss_rule(quad_order);
                std::vector<int> idx(d, 0);
                std::vector<double> t(d), x(d);
                while (true) {
                    double w = 1.0, jac = 1.0, prod = 1.0;
                    for (int k = 0; k < d; ++k) {
                        double u = gr.nodes[idx[k]];
                        w *= gr.weights[idx[k]];
                        prod *= u;
                        t[k] = prod;
                        for (int rep = 0; rep < d - 1 - k; ++rep) jac *= u;
                    }
                    for (int k = 0; k < d; ++k)
                        x[T.perm[k]] = r * (static_cast<double>(T.anchor[T.perm[k]]) + t[k]);
                    accumulate(x, w * jac * scale);
                    int ax = d - 1;
                    while (ax >= 0) {
                        if (++idx[ax] < quad_order) break;
                        idx[ax] = 0;
                        --ax;
                    }
                    if (ax < 0) break;
                }
            }
            cells.push_back(std::move(cd));
        });
    });

    // node set: vertices of retained cells, sorted for deterministic indexing
    std::map<MultiIndex, int> node_order;
    for (const auto& cd : cells)
        for (int i = 0; i <= d; ++i) node_order.emplace(cd.T.vertex_index(i), 0);
    F.nodes.reserve(node_order.size());
    int next = 0;
    for (auto& [idx, slot] : node_order) {
        slot = next++;
        F.nodes.push_back(idx);
        F.node_index.emplace(idx, slot);
    }

    const int n = F.size();
    std::vector<Eigen::Triplet<double>> ts, tm;
    for (const auto& cd : cells) {
        std::vector<int> vi(d + 1);
        for (int i = 0; i <= d; ++i) vi[i] = F.node_index.at(cd.T.vertex_index(i));
        // stiffness: tridiagonal along the vertex path
        for (int i = 0; i <= d; ++i) {
            double diag = grad_dot(cd.T, i, i) * cd.mass;
            ts.emplace_back(vi[i], vi[i], diag);
            if (i > 0) {
                double off = grad_dot(cd.T, i - 1, i) * cd.mass;
                ts.emplace_back(vi[i - 1], vi[i], off);
                ts.emplace_back(vi[i], vi[i - 1], off);
            }
        }
        int p = 0;
        for (int i = 0; i <= d; ++i)
            for (int j = i; j <= d; ++j) {
                double m = cd.wmass[p++];
                if (lumped) {
                    // row-sum lumping
                    tm.emplace_back(vi[i], vi[i], m);
                    if (j > i) tm.emplace_back(vi[j], vi[j], m);
                } else {
                    tm.emplace_back(vi[i], vi[j], m);
                    if (j > i) tm.emplace_back(vi[j], vi[i], m);
                }
            }
        F.total_mass += cd.mass;
    }
    F.S.resize(n, n);
    F.M.resize(n, n);
    F.S.setFromTriplets(ts.begin(), ts.end());
    F.M.setFromTriplets(tm.begin(), tm.end());
    F.S.makeCompressed();
    F.M.makeCompressed();
    return F;
}

inline double energy(const FormMatrices& F, const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
    return u.dot(F.S * v);
}

inline double l2_inner(const FormMatrices& F, const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
    return u.dot(F.M * v);
}

// Factorization of (alpha*M + S), reusable across right-hand sides.
class ResolventOperator {
   public:
    ResolventOperator(const FormMatrices& F, double alpha) : F_(&F), alpha_(alpha) {
        if (!(alpha > 0)) throw ValidationError("resolvent: alpha must be positive");
        A_ = alpha * F.M + F.S;
        anorm_ = 0.0;
        for (int k = 0; k < A_.outerSize(); ++k) {
            double col = 0.0;
            for (Eigen::SparseMatrix<double>::InnerIterator it(A_, k); it; ++it)
                col += std::abs(it.value());
            anorm_ = std::max(anorm_, col);
        }
        solver_.compute(A_);
        if (solver_.info() != Eigen::Success)
            throw NumericsError("resolvent: factorization failed (matrix not SPD?) for alpha=" +
                                std::to_string(alpha));
    }

    // Backward-error criterion: |A u - b| <= tol (|A| |u| + |b|).
    Eigen::VectorXd apply(const Eigen::VectorXd& f, double rel_residual_tol = 1e-10) const {
        Eigen::VectorXd rhs = F_->M * f;
        Eigen::VectorXd u = solver_.solve(rhs);
        auto backward = [&](const Eigen::VectorXd& v) {
            double res = (A_ * v - rhs).norm();
            return res / std::max(1e-300, anorm_ * v.norm() + rhs.norm());
        };
        double be = backward(u);
        if (be > rel_residual_tol) {
            // one step of iterative refinement before giving up
            Eigen::VectorXd du = solver_.solve(rhs - A_ * u);
            u += du;
            be = backward(u);
            if (be > rel_residual_tol)
                throw NumericsError("resolvent: backward error " + std::to_string(be) +
                                    " exceeds tolerance (cond >= " +
                                    std::to_string(anorm_) + " scale)");
        }
        return u;
    }

    double alpha() const { return alpha_; }

   private:
    const FormMatrices* F_;
    double alpha_;
    Eigen::SparseMatrix<double> A_;
    double anorm_ = 0.0;
    Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> solver_;
};

inline Eigen::VectorXd resolvent(const FormMatrices& F, double alpha, const Eigen::VectorXd& f) {
    return ResolventOperator(F, alpha).apply(f);
}

// Full record of one solve: (alpha M + S) u = M f. u minimizes
// u'Su + alpha (u-f)'M(u-f) over the discrete space.
struct ResolventSolve {
    double alpha = 0.0;
    Eigen::VectorXd input;
    Eigen::VectorXd output;
    double residual_norm = 0.0;
};

inline ResolventSolve resolvent_solve(const FormMatrices& F, double alpha,
                                      const Eigen::VectorXd& f) {
    ResolventSolve sol;
    sol.alpha = alpha;
    sol.input = f;
    sol.output = ResolventOperator(F, alpha).apply(f);
    sol.residual_norm = ((alpha * F.M + F.S) * sol.output - F.M * f).norm();
    return sol;
}

// n-step implicit Euler for exp(t * generator); each step solves
// (M + (t/n) S) u_{k+1} = M u_k and is order-interval preserving for
// M-matrix configurations. When requested, the n vs 2n comparison is
// reported as the time-discretization error.
inline Eigen::VectorXd semigroup(const FormMatrices& F, double t, const Eigen::VectorXd& f,
                                 int steps, double* richardson_gap = nullptr) {
    if (!(t > 0) || steps < 1) throw ValidationError("semigroup: need t > 0 and steps >= 1");
    auto run = [&](int n) {
        double h = t / n;
        Eigen::SparseMatrix<double> A = F.M + h * F.S;
        Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> solver;
        solver.compute(A);
        if (solver.info() != Eigen::Success) throw NumericsError("semigroup: factorization failed");
        Eigen::VectorXd u = f;
        for (int k = 0; k < n; ++k) u = solver.solve(F.M * u);
        return u;
    };
    Eigen::VectorXd u = run(steps);
    if (richardson_gap) {
        Eigen::VectorXd u2 = run(2 * steps);
        *richardson_gap = (u - u2).lpNorm<Eigen::Infinity>();
    }
    return u;
}

struct MarkovReport {
    bool passed = true;
    double min_value = 0.0;
    double max_value = 1.0;
    int trials = 0;
    int violations = 0;
    Eigen::VectorXd worst_input;
};

// alpha * G_alpha maps [0,1]-valued vectors into [-tol, 1+tol].
inline MarkovReport markov_check(const FormMatrices& F, double alpha, int trials,
                                 std::uint64_t seed, double tol = 1e-9) {
    MarkovReport rep;
    rep.trials = trials;
    rep.min_value = 1e300;
    rep.max_value = -1e300;
    ResolventOperator G(F, alpha);
    auto rng = substream(seed, "markov-check");
    std::uniform_real_distribution<double> U(0.0, 1.0);
    for (int t = 0; t < trials; ++t) {
        Eigen::VectorXd f(F.size());
        for (int i = 0; i < F.size(); ++i) f[i] = U(rng);
        Eigen::VectorXd u = alpha * G.apply(f);
        double lo = u.minCoeff(), hi = u.maxCoeff();
        rep.min_value = std::min(rep.min_value, lo);
        rep.max_value = std::max(rep.max_value, hi);
        if (lo < -tol || hi > 1.0 + tol) {
            ++rep.violations;
            if (rep.passed) rep.worst_input = f;
            rep.passed = false;
        }
    }
    return rep;
}

// Smallest k generalized eigenvalues of (S, M); dense, for spectral checks.
inline std::vector<double> smallest_generalized_eigenvalues(const FormMatrices& F, int k) {
    Eigen::MatrixXd S = Eigen::MatrixXd(F.S);
    Eigen::MatrixXd M = Eigen::MatrixXd(F.M);
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(S, M);
    if (es.info() != Eigen::Success) throw NumericsError("eigensolver failed");
    std::vector<double> out;
    for (int i = 0; i < k && i < F.size(); ++i) out.push_back(es.eigenvalues()[i]);
    return out;
}

}  // namespace cfk
