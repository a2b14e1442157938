// Averaging functionals of a density over the r-lattice: the residual
// (local oscillation) and perturbation (local mean), their dual norms delta
// and C against the primal pair catalog, the oscillation modulus, and the
// closed-form stability bounds for weighted measures.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "cfk/cell_quad.hpp"
#include "cfk/density.hpp"
#include "cfk/tent.hpp"

namespace cfk {

// A pointwise-evaluable integrand with the metadata quadrature needs.
struct ScalarField {
    std::function<double(std::span<const double>)> eval;
    std::vector<std::vector<double>> axis_breaks;  // smoothness breaks per axis

    double operator()(std::span<const double> x) const { return eval(x); }
};

inline ScalarField density_field(const DensityPtr& rho,
                                 std::function<double(std::span<const double>)> kappa = nullptr) {
    ScalarField f;
    f.axis_breaks.resize(rho->dim());
    for (int i = 0; i < rho->dim(); ++i) f.axis_breaks[i] = rho->axis_breakpoints(i);
    if (kappa)
        f.eval = [rho, kappa](std::span<const double> x) { return kappa(x) * (*rho)(x); };
    else
        f.eval = [rho](std::span<const double> x) { return (*rho)(x); };
    return f;
}

// ---------------------------------------------------------------------------
// Piece decomposition of primal functions for exact-ish quadrature
// ---------------------------------------------------------------------------

struct PrimalPiece {
    bool is_simplex = false;
    Box box;           // unit coordinates, when a box piece
    PathSimplex cell;  // unit-lattice cell, when a simplex piece
    double c0 = 1.0;
    std::vector<double> cl;  // affine weight c0 + cl . u in unit coordinates

    double weight(std::span<const double> u) const {
        double w = c0;
        for (std::size_t i = 0; i < cl.size(); ++i) w += cl[i] * u[i];
        return w;
    }
};

inline std::vector<PrimalPiece> primal_pieces(const PrimalFunction& p) {
    const int d = p.d;
    std::vector<PrimalPiece> out;
    auto box_piece = [&](Box b, double c0, std::vector<double> cl) {
        PrimalPiece piece;
        piece.is_simplex = false;
        piece.box = std::move(b);
        piece.c0 = c0;
        piece.cl = std::move(cl);
        out.push_back(std::move(piece));
    };
    switch (p.kind) {
        case PrimalFunction::Kind::UnitCube: {
            Box b;
            b.lo.assign(d, 0.0);
            b.hi.assign(d, 1.0);
            box_piece(std::move(b), 1.0, std::vector<double>(d, 0.0));
            break;
        }
        case PrimalFunction::Kind::ShiftedCube: {
            Box b;
            b.lo.assign(d, -1.0);
            b.hi.assign(d, 0.0);
            box_piece(std::move(b), 1.0, std::vector<double>(d, 0.0));
            break;
        }
        case PrimalFunction::Kind::AxisAveraged: {
            Box b1;
            b1.lo.assign(d, 0.0);
            b1.hi.assign(d, 1.0);
            std::vector<double> cl(d, 0.0);
            cl[p.axis] = 1.0;
            box_piece(b1, 0.0, cl);
            Box b2 = b1;
            b2.lo[p.axis] = 1.0;
            b2.hi[p.axis] = 2.0;
            std::vector<double> cl2(d, 0.0);
            cl2[p.axis] = -1.0;
            box_piece(std::move(b2), 2.0, std::move(cl2));
            break;
        }
        case PrimalFunction::Kind::Tent: {
            Box bb;
            bb.lo.assign(d, -2.0);
            bb.hi.assign(d, 2.0);
            GridSpec g(d, 1.0, bb);
            for (const auto& [T, i] : incident_vertices(MultiIndex(d, 0), g)) {
                PrimalPiece piece;
                piece.is_simplex = true;
                piece.cell = T;
                piece.cl.assign(d, 0.0);
                if (i == 0) {
                    int p0 = T.perm[0];
                    piece.c0 = 1.0 + static_cast<double>(T.anchor[p0]);
                    piece.cl[p0] = -1.0;
                } else if (i == d) {
                    int pd = T.perm[d - 1];
                    piece.c0 = -static_cast<double>(T.anchor[pd]);
                    piece.cl[pd] = 1.0;
                } else {
                    int pa = T.perm[i - 1], pb = T.perm[i];
                    piece.c0 = static_cast<double>(T.anchor[pb]) - static_cast<double>(T.anchor[pa]);
                    piece.cl[pa] = 1.0;
                    piece.cl[pb] = -1.0;
                }
                out.push_back(std::move(piece));
            }
            break;
        }
        case PrimalFunction::Kind::SimplexUnion: {
            Box bb;
            bb.lo.assign(d, -2.0);
            bb.hi.assign(d, 2.0);
            GridSpec g(d, 1.0, bb);
            for (const auto& T : simplices_leaving(MultiIndex(d, 0), p.axis, g)) {
                PrimalPiece piece;
                piece.is_simplex = true;
                piece.cell = T;
                piece.cl.assign(d, 0.0);
                out.push_back(std::move(piece));
            }
            break;
        }
    }
    return out;
}

// integral of fn(y) * p((y - r*alpha)/r) dy over world coordinates.
template <class F>
double integrate_against_primal(const PrimalFunction& p, const std::vector<PrimalPiece>& pieces,
                                const MultiIndex& alpha, double r, int order,
                                std::span<const std::vector<double>> axis_breaks, F&& fn) {
    const int d = p.d;
    double sum = 0.0;
    std::vector<double> u(d);
    if (d == 1) {
        for (const auto& piece : pieces) {
            double lo, hi;
            if (piece.is_simplex) {
                lo = static_cast<double>(piece.cell.anchor[0]);
                hi = lo + 1.0;
            } else {
                lo = piece.box.lo[0];
                hi = piece.box.hi[0];
            }
            double a = r * (static_cast<double>(alpha[0]) + lo);
            double b = r * (static_cast<double>(alpha[0]) + hi);
            // composite rule: integrands like |g(y) - g(.)| kink at points
            // that depend on the outer variable, so uniform subdivision is
            // layered over the declared breaks
            std::vector<double> cuts;
            if (!axis_breaks.empty())
                cuts.assign(axis_breaks[0].begin(), axis_breaks[0].end());
            const int subdiv = 4;
            for (int s = 1; s < subdiv; ++s)
                cuts.push_back(a + (b - a) * s / subdiv);
            sum += integrate_interval(a, b, cuts, order, [&](double y) {
                double uu = y / r - static_cast<double>(alpha[0]);
                double ys[1] = {y};
                return piece.weight(std::span<const double>(&uu, 1)) *
                       fn(std::span<const double>(ys, 1));
            });
        }
        return sum;
    }
    for (const auto& piece : pieces) {
        if (piece.is_simplex) {
            PathSimplex world = piece.cell;
            for (int i = 0; i < d; ++i) world.anchor[i] += alpha[i];
            world.r = r;
            sum += integrate_cell(world, order, [&](std::span<const double> y) {
                for (int i = 0; i < d; ++i) u[i] = y[i] / r - static_cast<double>(alpha[i]);
                return piece.weight(u) * fn(y);
            });
        } else {
            Box world;
            world.lo.resize(d);
            world.hi.resize(d);
            for (int i = 0; i < d; ++i) {
                world.lo[i] = r * (static_cast<double>(alpha[i]) + piece.box.lo[i]);
                world.hi[i] = r * (static_cast<double>(alpha[i]) + piece.box.hi[i]);
            }
            sum += integrate_box(world, order, [&](std::span<const double> y) {
                for (int i = 0; i < d; ++i) u[i] = y[i] / r - static_cast<double>(alpha[i]);
                return piece.weight(u) * fn(y);
            });
        }
    }
    return sum;
}

namespace detail {
// Lattice nodes alpha with p((x - r*alpha)/r) possibly nonzero.
template <class F>
void for_each_support_shift(const PrimalFunction& p, double r, std::span<const double> x, F&& fn) {
    const int d = p.d;
    Box s = p.support();
    MultiIndex lo(d), hi(d);
    for (int i = 0; i < d; ++i) {
        lo[i] = static_cast<Index>(std::floor(x[i] / r - s.hi[i])) ;
        hi[i] = static_cast<Index>(std::floor(x[i] / r - s.lo[i])) + 2;
    }
    for_each_anchor(lo, hi, fn);
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Residual and perturbation of an integrable function
// ---------------------------------------------------------------------------

// R(x) = sum_alpha r^{-d} (int |g(x) - g(y)| eta_r^alpha(y) dy) phi_r^alpha(x)
inline double residual_apply(const ScalarField& g, const PrimalFunction& phi,
                             const PrimalFunction& eta, double r, std::span<const double> x,
                             int inner_order = 8) {
    static thread_local std::map<std::pair<PrimalFunction::Kind, int>, std::vector<PrimalPiece>>
        piece_cache;
    auto key = std::make_pair(eta.kind, eta.axis * 64 + eta.d);
    auto it = piece_cache.find(key);
    if (it == piece_cache.end()) it = piece_cache.emplace(key, primal_pieces(eta)).first;
    const std::vector<PrimalPiece>& eta_pieces = it->second;

    const double gx = g(x);
    const double scale = std::pow(r, -phi.d);
    double sum = 0.0;
    detail::for_each_support_shift(phi, r, x, [&](const MultiIndex& alpha) {
        double pv = phi.scaled(alpha, r, x);
        if (pv == 0.0) return;
        double inner =
            integrate_against_primal(eta, eta_pieces, alpha, r, inner_order, g.axis_breaks,
                                     [&](std::span<const double> y) { return std::abs(gx - g(y)); });
        sum += pv * scale * inner;
    });
    return sum;
}

// I(x) = sum_alpha r^{-d} (int eta_r^alpha g) phi_r^alpha(x); the inner
// integrals do not depend on x and are cached per node.
class PerturbationField {
   public:
    PerturbationField(ScalarField g, PrimalFunction phi, PrimalFunction eta, double r,
                      int inner_order = 8)
        : g_(std::move(g)),
          phi_(std::move(phi)),
          eta_(std::move(eta)),
          eta_pieces_(primal_pieces(eta_)),
          r_(r),
          inner_order_(inner_order) {}

    double operator()(std::span<const double> x) const {
        const double scale = std::pow(r_, -phi_.d);
        double sum = 0.0;
        detail::for_each_support_shift(phi_, r_, x, [&](const MultiIndex& alpha) {
            double pv = phi_.scaled(alpha, r_, x);
            if (pv == 0.0) return;
            sum += pv * scale * inner(alpha);
        });
        return sum;
    }

    double r() const { return r_; }
    const PrimalFunction& phi() const { return phi_; }
    const PrimalFunction& eta() const { return eta_; }

   private:
    double inner(const MultiIndex& alpha) const {
        {
            std::lock_guard<std::mutex> lock(mtx_);
            auto it = cache_.find(alpha);
            if (it != cache_.end()) return it->second;
        }
        double v = integrate_against_primal(eta_, eta_pieces_, alpha, r_, inner_order_,
                                            g_.axis_breaks, g_.eval);
        std::lock_guard<std::mutex> lock(mtx_);
        cache_.emplace(alpha, v);
        return v;
    }

    ScalarField g_;
    PrimalFunction phi_, eta_;
    std::vector<PrimalPiece> eta_pieces_;
    double r_;
    int inner_order_;
    mutable std::unordered_map<MultiIndex, double, MultiIndexHash> cache_;
    mutable std::mutex mtx_;
};

inline double perturbation_apply(const ScalarField& g, const PrimalFunction& phi,
                                 const PrimalFunction& eta, double r, std::span<const double> x,
                                 int inner_order = 8) {
    return PerturbationField(g, phi, eta, r, inner_order)(x);
}

// Callable handle onto the residual of a fixed (g, phi, eta, r) tuple.
class ResidualField {
   public:
    ResidualField(ScalarField g, PrimalFunction phi, PrimalFunction eta, double r,
                  int inner_order = 8)
        : g_(std::move(g)), phi_(std::move(phi)), eta_(std::move(eta)), r_(r),
          inner_order_(inner_order) {}

    double operator()(std::span<const double> x) const {
        return residual_apply(g_, phi_, eta_, r_, x, inner_order_);
    }

    double r() const { return r_; }
    const PrimalFunction& phi() const { return phi_; }
    const PrimalFunction& eta() const { return eta_; }

   private:
    ScalarField g_;
    PrimalFunction phi_, eta_;
    double r_;
    int inner_order_;
};

// ---------------------------------------------------------------------------
// Dual norms against the pair catalog
// ---------------------------------------------------------------------------

struct EstimatorOptions {
    int outer_order = 4;   // per-cell quadrature of the squared residual
    int inner_order = 8;   // averaging integrals
    double rho_floor = 1e-300;
    bool refine_check = true;
    double rel_tol = 1e-2;
    std::function<double(std::span<const double>)> kappa;  // default 1
};

struct PairNorms {
    std::string pair_id;
    double delta = 0.0;
    double c = 0.0;
};

struct DualNormEstimate {
    std::vector<PairNorms> per_pair;
    double delta = 0.0;  // max over pairs
    double c = 0.0;      // max over pairs
    bool converged = true;
    double excluded_volume = 0.0;  // Lebesgue measure of cells under the density floor
    std::vector<std::string> warnings;
};

namespace detail {

struct DualNormPass {
    double delta_sq = 0.0;
    double c_sup = 0.0;
    double excluded = 0.0;
};

inline DualNormPass dual_norm_pass(const Density& m, const GridSpec& grid, const ScalarField& field,
                                   const PrimalPair& pair, double r, int outer_order,
                                   int inner_order, double floor) {
    DualNormPass pass;
    PerturbationField pert(field, pair.phi, pair.eta, r, inner_order);
    auto lo = grid.lo_index(), hi = grid.hi_index();
    for_each_anchor(lo, hi, [&](const MultiIndex& a) {
        for_each_permutation(grid.d, [&](const std::vector<int>& perm) {
            PathSimplex T{a, perm, grid.r};
            auto integrand = [&](std::span<const double> y) {
                double rho = m(y);
                if (rho < floor) return 0.0;
                double R = residual_apply(field, pair.phi, pair.eta, r, y, inner_order);
                double I = pert(y);
                pass.c_sup = std::max(pass.c_sup, I / rho);
                return R * R / rho;
            };
            double v;
            if (grid.d == 1) {
                auto breaks = m.axis_breakpoints(0);
                v = integrate_cell_1d(T, breaks, outer_order, integrand);
            } else {
                v = integrate_cell(T, outer_order, integrand);
            }
            pass.delta_sq += v;
            // the sup of I/rho on a cell sits at its closure; sample the
            // vertices and points just inside them
            {
                std::vector<double> centroid(grid.d, 0.0);
                for (int i = 0; i <= grid.d; ++i) {
                    auto vx = T.vertex(i);
                    for (int k = 0; k < grid.d; ++k) centroid[k] += vx[k] / (grid.d + 1);
                }
                auto c_candidate = [&](std::span<const double> y) {
                    double rho = m(y);
                    if (rho < floor) return;
                    pass.c_sup = std::max(pass.c_sup, pert(y) / rho);
                };
                std::vector<double> y(grid.d);
                for (int i = 0; i <= grid.d; ++i) {
                    auto vx = T.vertex(i);
                    c_candidate(vx);
                    for (int k = 0; k < grid.d; ++k)
                        y[k] = vx[k] + 1e-9 * (centroid[k] - vx[k]);
                    c_candidate(y);
                }
            }
            if (m.kind() == Density::Kind::Tabulated) {
                double excl = integrate_cell(T, 2, [&](std::span<const double> y) {
                    return m(y) < floor ? 1.0 : 0.0;
                });
                pass.excluded += excl;
            }
        });
    });
    return pass;
}

}  // namespace detail

// delta per pair: (int R(kappa*rho)^2 / rho dx)^(1/2); C per pair: sup over
// quadrature samples of I(kappa*rho)/rho. Both maximized over the catalog.
// These are certified lower bounds for the corresponding suprema over all
// primal functions; the pair list is the closed set the bound proofs use.
inline DualNormEstimate delta_and_c_estimate(const DensityPtr& m, const GridSpec& grid, double r,
                                             std::span<const PrimalPair> pairs,
                                             const EstimatorOptions& opt = {}) {
    DualNormEstimate out;
    ScalarField field = density_field(m, opt.kappa);
    for (const auto& pair : pairs) {
        auto pass = detail::dual_norm_pass(*m, grid, field, pair, r, opt.outer_order,
                                           opt.inner_order, opt.rho_floor);
        if (opt.refine_check) {
            auto fine = detail::dual_norm_pass(*m, grid, field, pair, r, opt.outer_order + 2,
                                               opt.inner_order + 4, opt.rho_floor);
            double gap = std::abs(std::sqrt(fine.delta_sq) - std::sqrt(pass.delta_sq));
            if (gap > opt.rel_tol * std::max(1e-12, std::sqrt(fine.delta_sq))) {
                out.converged = false;
                out.warnings.push_back("delta quadrature disagreement for pair " + pair.id());
            }
            // sup estimates grow with sampling density; warn only on a
            // materially unstable value
            double c_gap = std::abs(fine.c_sup - pass.c_sup);
            if (c_gap > 5.0 * opt.rel_tol * std::max(1e-12, fine.c_sup))
                out.warnings.push_back("C sample-grid disagreement for pair " + pair.id());
            pass = fine;
        }
        PairNorms pn;
        pn.pair_id = pair.id();
        pn.delta = std::sqrt(pass.delta_sq);
        pn.c = pass.c_sup;
        if (pass.excluded > out.excluded_volume) {
            out.excluded_volume = pass.excluded;
            out.warnings.push_back("density floor excluded volume " +
                                   std::to_string(pass.excluded) + " for pair " + pair.id());
        }
        out.delta = std::max(out.delta, pn.delta);
        out.c = std::max(out.c, pn.c);
        out.per_pair.push_back(std::move(pn));
    }
    return out;
}

inline double delta_estimate(const DensityPtr& m, const GridSpec& grid, double r,
                             std::span<const PrimalPair> pairs, const EstimatorOptions& opt = {}) {
    return delta_and_c_estimate(m, grid, r, pairs, opt).delta;
}

inline double c_estimate(const DensityPtr& m, const GridSpec& grid, double r,
                         std::span<const PrimalPair> pairs, const EstimatorOptions& opt = {}) {
    return delta_and_c_estimate(m, grid, r, pairs, opt).c;
}

// ---------------------------------------------------------------------------
// Oscillation modulus over the 4*eps window, and gradient sup norm
// ---------------------------------------------------------------------------

struct ModulusOptions {
    int grid_per_axis = 161;
    int refine_rounds = 2;
    int refine_factor = 5;
};

namespace detail {
// max filter with window halfwidth w (in samples) along one axis of a flat
// d-dimensional array
inline void axis_max_filter(std::vector<double>& vals, const std::vector<int>& shape, int axis,
                            int w) {
    const int d = static_cast<int>(shape.size());
    std::vector<int> stride(d, 1);
    for (int i = d - 2; i >= 0; --i) stride[i] = stride[i + 1] * shape[i + 1];
    const int n = shape[axis];
    std::vector<double> line(n);
    std::vector<int> idx(d, 0);
    std::vector<double> out = vals;
    while (true) {
        if (idx[axis] == 0) {
            long base = 0;
            for (int i = 0; i < d; ++i) base += static_cast<long>(idx[i]) * stride[i];
            for (int k = 0; k < n; ++k) line[k] = vals[base + static_cast<long>(k) * stride[axis]];
            for (int k = 0; k < n; ++k) {
                double m = line[k];
                for (int j = std::max(0, k - w); j <= std::min(n - 1, k + w); ++j)
                    m = std::max(m, line[j]);
                out[base + static_cast<long>(k) * stride[axis]] = m;
            }
        }
        int ax = d - 1;
        while (ax >= 0) {
            if (++idx[ax] < shape[ax]) break;
            idx[ax] = 0;
            --ax;
        }
        if (ax < 0) break;
    }
    vals.swap(out);
}
}  // namespace detail

// sup |g(x) - g(y)| over pairs with max_j |x_j - y_j| <= 4*eps, equal to
// sup_x (max over the window at x) - g(x); estimated on a grid with local
// refinement around the maximizer.
inline double modulus_omega(const std::function<double(std::span<const double>)>& g, double eps,
                            const Box& domain, const ModulusOptions& opt = {}) {
    const int d = domain.dim();
    double best = 0.0;
    Box region = domain;
    int n = opt.grid_per_axis;
    for (int round = 0; round <= opt.refine_rounds; ++round) {
        std::vector<int> shape(d, n);
        long total = 1;
        for (int i = 0; i < d; ++i) total *= n;
        std::vector<double> vals(total);
        std::vector<double> h(d);
        for (int i = 0; i < d; ++i) h[i] = (region.hi[i] - region.lo[i]) / (n - 1);
        std::vector<int> idx(d, 0);
        std::vector<double> x(d);
        for (long flat = 0; flat < total; ++flat) {
            long rem = flat;
            for (int i = d - 1; i >= 0; --i) {
                idx[i] = static_cast<int>(rem % n);
                rem /= n;
            }
            for (int i = 0; i < d; ++i) x[i] = region.lo[i] + h[i] * idx[i];
            vals[flat] = g(x);
        }
        std::vector<double> maxed = vals;
        for (int axis = 0; axis < d; ++axis) {
            int w = static_cast<int>(std::floor(4.0 * eps / h[axis]));
            detail::axis_max_filter(maxed, shape, axis, w);
        }
        long arg = 0;
        for (long flat = 0; flat < total; ++flat) {
            double cand = maxed[flat] - vals[flat];
            if (cand > best) {
                best = cand;
                arg = flat;
            }
        }
        // zoom around the best base point for the next round
        long rem = arg;
        std::vector<double> center(d);
        for (int i = d - 1; i >= 0; --i) {
            center[i] = region.lo[i] + h[i] * static_cast<double>(rem % n);
            rem /= n;
        }
        Box next;
        next.lo.resize(d);
        next.hi.resize(d);
        for (int i = 0; i < d; ++i) {
            next.lo[i] = std::max(domain.lo[i], center[i] - 5.0 * eps);
            next.hi[i] = std::min(domain.hi[i], center[i] + 5.0 * eps);
            if (!(next.lo[i] < next.hi[i])) return best;
        }
        region = next;
        n = opt.grid_per_axis;
    }
    return best;
}

// D = max_i sup |dg_i| over a sample grid.
inline double gradient_sup(const std::function<std::vector<double>(std::span<const double>)>& grad,
                           const Box& domain, int grid_per_axis = 201) {
    const int d = domain.dim();
    std::vector<int> idx(d, 0);
    std::vector<double> x(d);
    double best = 0.0;
    while (true) {
        for (int i = 0; i < d; ++i)
            x[i] = domain.lo[i] + (domain.hi[i] - domain.lo[i]) * idx[i] / (grid_per_axis - 1);
        for (double gi : grad(x)) best = std::max(best, std::abs(gi));
        int ax = d - 1;
        while (ax >= 0) {
            if (++idx[ax] < grid_per_axis) break;
            idx[ax] = 0;
            --ax;
        }
        if (ax < 0) break;
    }
    return best;
}

// ---------------------------------------------------------------------------
// Stability bound for the delta norm under a weight g in [c1, c2]
// ---------------------------------------------------------------------------

enum class MopertMode { Lipschitz, Increasing, Decreasing };

// Upper bound on the weighted-measure delta norm (including the sqrt of the
// weight mass on the left-hand side). The Lipschitz branch needs the L2 norm
// of the Lipschitz constant; the monotone branches need delta at scale 2r.
inline double mopert_bound(double c1, double c2, MopertMode mode, double delta_r_base,
                           double delta_2r_base, double c_lip_norm, double r, int d) {
    if (!(0 < c1 && c1 < c2)) throw ValidationError("mopert_bound: need 0 < c1 < c2");
    const double lead = c2 * c2 * std::sqrt(2.0 / (c1 * c1 * c1)) * delta_r_base;
    if (mode == MopertMode::Lipschitz) {
        if (!(c_lip_norm >= 0)) throw ValidationError("mopert_bound: Lipschitz norm required");
        return lead +
               4.0 * r * c2 * std::sqrt(2.0 * std::pow(9.0, d) * d / (c1 * c1 * c1)) * c_lip_norm;
    }
    if (!(delta_2r_base >= 0)) throw ValidationError("mopert_bound: delta at scale 2r required");
    return lead + 2.0 * c2 * c2 * std::sqrt(std::pow(9.0, d) * (2.0 / (c1 * c1 * c1)) * delta_2r_base);
}

}  // namespace cfk
