// Probability densities with simplex quadrature, the bounded-variation
// toolkit (exact piecewise-affine specs, Jordan decomposition, tent
// envelopes), perturbing potentials and partition functions.
#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cfk/cell_quad.hpp"
#include "cfk/core.hpp"
#include "cfk/pl_space.hpp"
#include "cfk/rng.hpp"

namespace cfk {

inline double gauss_cdf(double t) { return 0.5 * std::erfc(-t / std::sqrt(2.0)); }

// ---------------------------------------------------------------------------
// Bounded-variation functions: finitely many affine pieces with explicit
// values at breakpoints, so variation, window extrema and the Jordan parts
// are all exact.
// ---------------------------------------------------------------------------

struct BVSegment {
    double a = 0.0, b = 0.0;  // value a + b*x on the open interval
    double at(double x) const { return a + b * x; }
};

struct BVFunctionSpec {
    std::vector<double> breakpoints;   // strictly increasing, may be empty
    std::vector<BVSegment> segments;   // breakpoints.size() + 1 pieces
    std::vector<double> point_values;  // f(t_k); defaults to the right limit

    void validate() const {
        if (segments.size() != breakpoints.size() + 1)
            throw ValidationError("bv: need one segment more than breakpoints");
        if (!point_values.empty() && point_values.size() != breakpoints.size())
            throw ValidationError("bv: point_values must match breakpoints");
        for (std::size_t k = 0; k + 1 < breakpoints.size(); ++k)
            if (!(breakpoints[k] < breakpoints[k + 1]))
                throw ValidationError("bv: breakpoints must be strictly increasing");
        if (segments.front().b != 0.0 || segments.back().b != 0.0)
            throw ValidationError("bv: unbounded end segments must be constant");
    }

    double point_value(std::size_t k) const {
        if (!point_values.empty()) return point_values[k];
        return segments[k + 1].at(breakpoints[k]);  // right-continuous default
    }

    double operator()(double x) const {
        auto it = std::lower_bound(breakpoints.begin(), breakpoints.end(), x);
        std::size_t seg = static_cast<std::size_t>(it - breakpoints.begin());
        if (it != breakpoints.end() && *it == x) return point_value(seg);
        return segments[seg].at(x);
    }

    double left_limit(std::size_t k) const { return segments[k].at(breakpoints[k]); }
    double right_limit(std::size_t k) const { return segments[k + 1].at(breakpoints[k]); }

    std::vector<double> jump_points() const {
        std::vector<double> out;
        for (std::size_t k = 0; k < breakpoints.size(); ++k) {
            double p = point_value(k);
            if (p != left_limit(k) || p != right_limit(k)) out.push_back(breakpoints[k]);
        }
        return out;
    }

    double total_variation() const {
        double tv = 0.0;
        for (std::size_t k = 0; k < breakpoints.size(); ++k) {
            if (k > 0) tv += std::abs(segments[k].b) * (breakpoints[k] - breakpoints[k - 1]);
            double p = point_value(k);
            tv += std::abs(p - left_limit(k)) + std::abs(right_limit(k) - p);
        }
        return tv;
    }

    double sup_norm() const {
        double m = std::max(std::abs(segments.front().a), std::abs(segments.back().a));
        for (std::size_t k = 0; k < breakpoints.size(); ++k) {
            m = std::max({m, std::abs(left_limit(k)), std::abs(right_limit(k)),
                          std::abs(point_value(k))});
        }
        return m;
    }

    // Extrema of the value set over the closed window [lo, hi].
    double inf_on(double lo, double hi) const { return extremum_on(lo, hi, false); }
    double sup_on(double lo, double hi) const { return extremum_on(lo, hi, true); }

   private:
    double extremum_on(double lo, double hi, bool want_sup) const {
        double best = want_sup ? -1e300 : 1e300;
        auto fold = [&](double v) { best = want_sup ? std::max(best, v) : std::min(best, v); };
        const std::size_t K = breakpoints.size();
        for (std::size_t seg = 0; seg <= K; ++seg) {
            double a = seg == 0 ? lo : std::max(lo, breakpoints[seg - 1]);
            double b = seg == K ? hi : std::min(hi, breakpoints[seg]);
            if (a < b) {  // affine on an interval of positive length
                fold(segments[seg].at(a));
                fold(segments[seg].at(b));
            }
        }
        for (std::size_t k = 0; k < K; ++k)
            if (breakpoints[k] >= lo && breakpoints[k] <= hi) fold(point_value(k));
        return best;
    }
};

inline BVFunctionSpec bv_constant(double c) { return BVFunctionSpec{{}, {BVSegment{c, 0.0}}, {}}; }

// Step c * 1_{[0,inf)}.
inline BVFunctionSpec bv_step(double c) {
    return BVFunctionSpec{{0.0}, {BVSegment{0.0, 0.0}, BVSegment{c, 0.0}}, {c}};
}

// Step c * 1_{(0,inf)}: same jump, but zero at the origin itself. The two
// variants only differ where the coordinate is exactly zero, which matters
// for projected points.
inline BVFunctionSpec bv_step_open(double c) {
    return BVFunctionSpec{{0.0}, {BVSegment{0.0, 0.0}, BVSegment{c, 0.0}}, {0.0}};
}

struct JordanDecomposition {
    double a = 0.0;  // value at -infinity
    BVFunctionSpec f1, f2;  // increasing, range within [0, TV]
};

inline JordanDecomposition jordan_decompose(const BVFunctionSpec& f) {
    f.validate();
    JordanDecomposition out;
    out.a = f.segments.front().a;
    const std::size_t K = f.breakpoints.size();
    out.f1.breakpoints = f.breakpoints;
    out.f2.breakpoints = f.breakpoints;
    out.f1.segments.resize(K + 1);
    out.f2.segments.resize(K + 1);
    out.f1.point_values.resize(K);
    out.f2.point_values.resize(K);
    double F1 = 0.0, F2 = 0.0;  // running values at the current segment start
    for (std::size_t seg = 0; seg <= K; ++seg) {
        double b = f.segments[seg].b;
        double s1 = std::max(b, 0.0), s2 = std::max(-b, 0.0);
        double start = seg == 0 ? 0.0 : f.breakpoints[seg - 1];
        out.f1.segments[seg] = BVSegment{F1 - s1 * start, s1};
        out.f2.segments[seg] = BVSegment{F2 - s2 * start, s2};
        if (seg == K) break;
        double t = f.breakpoints[seg];
        double L1 = out.f1.segments[seg].at(t), L2 = out.f2.segments[seg].at(t);
        double j_in = f.point_value(seg) - f.left_limit(seg);
        double j_out = f.right_limit(seg) - f.point_value(seg);
        out.f1.point_values[seg] = L1 + std::max(j_in, 0.0);
        out.f2.point_values[seg] = L2 + std::max(-j_in, 0.0);
        F1 = out.f1.point_values[seg] + std::max(j_out, 0.0);
        F2 = out.f2.point_values[seg] + std::max(-j_out, 0.0);
    }
    return out;
}

// Continuous piecewise-linear envelopes built from window extrema weighted by
// the 1-d tents of width h = 1/m. Coefficients are evaluated lazily so the
// (infinite) lattice never needs materializing.
struct BVEnvelopes {
    BVFunctionSpec f;
    double h = 0.0;

    double min_coeff(Index alpha) const {
        double c = h * static_cast<double>(alpha);
        return f.inf_on(c - h, c + h);
    }
    double maj_coeff(Index alpha) const {
        double c = h * static_cast<double>(alpha);
        return f.sup_on(c - h, c + h);
    }
    double min_at(double x) const { return interp(x, false); }
    double maj_at(double x) const { return interp(x, true); }

   private:
    double interp(double x, bool maj) const {
        double q = x / h;
        double fl = std::floor(q);
        Index a = static_cast<Index>(fl);
        double t = q - fl;
        double w0 = maj ? maj_coeff(a) : min_coeff(a);
        double w1 = maj ? maj_coeff(a + 1) : min_coeff(a + 1);
        return w0 * (1.0 - t) + w1 * t;
    }
};

inline BVEnvelopes bv_envelopes(const BVFunctionSpec& f, int m) {
    if (m < 1) throw ValidationError("bv_envelopes: m must be >= 1");
    f.validate();
    return BVEnvelopes{f, 1.0 / static_cast<double>(m)};
}

// ---------------------------------------------------------------------------
// Densities
// ---------------------------------------------------------------------------

class Density;
using DensityPtr = std::shared_ptr<const Density>;

class Density {
   public:
    enum class Kind { Gaussian, Product, BVPerturbed, Tabulated };

    virtual ~Density() = default;
    Kind kind() const { return kind_; }
    int dim() const { return d_; }
    const Box& support() const { return support_; }
    double tail_mass_bound() const { return tail_mass_; }
    double normalization() const { return z_; }

    virtual double operator()(std::span<const double> x) const = 0;
    // Jump locations of the density along one axis (for quadrature splits).
    virtual std::vector<double> axis_breakpoints(int /*axis*/) const { return {}; }
    // True when coordinates are independent (Gaussian diagonal or product of
    // 1-d factors); several estimators only make sense in that case.
    virtual bool independent_coordinates() const { return false; }

    static DensityPtr gaussian(std::vector<double> mean, std::vector<double> var, Box support);
    static DensityPtr product(std::vector<DensityPtr> factors);
    static DensityPtr bv_perturbed(DensityPtr base, BVFunctionSpec f, std::vector<double> weights);
    static DensityPtr tabulated(Box box, std::vector<Index> cells, std::vector<double> values);
    static DensityPtr uniform(Box box);

   protected:
    Kind kind_;
    int d_ = 1;
    Box support_;
    double tail_mass_ = 0.0;
    double z_ = 1.0;
};

class GaussianDensity final : public Density {
   public:
    GaussianDensity(std::vector<double> mean, std::vector<double> var, Box support)
        : mean_(std::move(mean)), var_(std::move(var)) {
        kind_ = Kind::Gaussian;
        d_ = static_cast<int>(mean_.size());
        if (var_.size() != mean_.size()) throw ValidationError("gaussian: mean/var size mismatch");
        for (double v : var_)
            if (!(v > 0)) throw ValidationError("gaussian: variances must be positive");
        support.validate();
        if (support.dim() != d_) throw ValidationError("gaussian: support dimension mismatch");
        support_ = std::move(support);
        double tail = 0.0;
        for (int i = 0; i < d_; ++i) {
            double s = std::sqrt(var_[i]);
            tail += gauss_cdf((support_.lo[i] - mean_[i]) / s) +
                    (1.0 - gauss_cdf((support_.hi[i] - mean_[i]) / s));
        }
        tail_mass_ = tail;
    }

    double operator()(std::span<const double> x) const override {
        double v = 1.0;
        for (int i = 0; i < d_; ++i) {
            double s2 = var_[i];
            double dx = x[i] - mean_[i];
            v *= std::exp(-0.5 * dx * dx / s2) / std::sqrt(2.0 * M_PI * s2);
        }
        return v;
    }

    bool independent_coordinates() const override { return true; }
    const std::vector<double>& mean() const { return mean_; }
    const std::vector<double>& var() const { return var_; }

   private:
    std::vector<double> mean_, var_;
};

class ProductDensity final : public Density {
   public:
    explicit ProductDensity(std::vector<DensityPtr> factors) : factors_(std::move(factors)) {
        kind_ = Kind::Product;
        if (factors_.empty()) throw ValidationError("product: no factors");
        d_ = 0;
        support_.lo.clear();
        support_.hi.clear();
        for (const auto& f : factors_) {
            d_ += f->dim();
            support_.lo.insert(support_.lo.end(), f->support().lo.begin(), f->support().lo.end());
            support_.hi.insert(support_.hi.end(), f->support().hi.begin(), f->support().hi.end());
            tail_mass_ += f->tail_mass_bound();
        }
    }

    double operator()(std::span<const double> x) const override {
        double v = 1.0;
        int off = 0;
        for (const auto& f : factors_) {
            v *= (*f)(x.subspan(off, f->dim()));
            off += f->dim();
        }
        return v;
    }

    std::vector<double> axis_breakpoints(int axis) const override {
        int off = 0;
        for (const auto& f : factors_) {
            if (axis < off + f->dim()) return f->axis_breakpoints(axis - off);
            off += f->dim();
        }
        return {};
    }

    bool independent_coordinates() const override {
        for (const auto& f : factors_)
            if (f->dim() > 1 && !f->independent_coordinates()) return false;
        return true;
    }

    const std::vector<DensityPtr>& factors() const { return factors_; }

   private:
    std::vector<DensityPtr> factors_;
};

// Closed-form normalizer of exp(-c*f) against N(mean, var) for piecewise
// affine f: each piece integrates through the Gaussian cdf.
inline double perturbed_gaussian_mass(const BVFunctionSpec& f, double c, double mean, double var) {
    const double sigma = std::sqrt(var);
    const std::size_t K = f.breakpoints.size();
    double total = 0.0;
    for (std::size_t seg = 0; seg <= K; ++seg) {
        double lo = seg == 0 ? -1e300 : f.breakpoints[seg - 1];
        double hi = seg == K ? 1e300 : f.breakpoints[seg];
        double a = f.segments[seg].a, b = f.segments[seg].b;
        double shift = c * b * sigma;
        double arg_hi = hi >= 1e300 ? 40.0 : (hi - mean) / sigma + shift;
        double arg_lo = lo <= -1e300 ? -40.0 : (lo - mean) / sigma + shift;
        double mass = gauss_cdf(arg_hi) - gauss_cdf(arg_lo);
        total += std::exp(-c * (a + b * mean) + 0.5 * shift * shift) * mass;
    }
    return total;
}

class BVPerturbedDensity final : public Density {
   public:
    BVPerturbedDensity(DensityPtr base, BVFunctionSpec f, std::vector<double> weights)
        : base_(std::move(base)), f_(std::move(f)), weights_(std::move(weights)) {
        kind_ = Kind::BVPerturbed;
        f_.validate();
        d_ = base_->dim();
        if (static_cast<int>(weights_.size()) != d_)
            throw ValidationError("bv_perturbed: one weight per coordinate required");
        for (double w : weights_)
            if (!(w >= 0)) throw ValidationError("bv_perturbed: weights must be nonnegative");
        support_ = base_->support();
        tail_mass_ = base_->tail_mass_bound() * std::exp(2.0 * weighted_sup());
        z_ = compute_normalization();
    }

    double operator()(std::span<const double> x) const override {
        double e = 0.0;
        for (int i = 0; i < d_; ++i)
            if (weights_[i] > 0) e += weights_[i] * f_(x[i]);
        return std::exp(-e) * (*base_)(x) / z_;
    }

    std::vector<double> axis_breakpoints(int axis) const override {
        auto out = base_->axis_breakpoints(axis);
        if (weights_[axis] > 0) {
            auto jumps = f_.jump_points();
            out.insert(out.end(), jumps.begin(), jumps.end());
            // slope kinks also break smoothness
            out.insert(out.end(), f_.breakpoints.begin(), f_.breakpoints.end());
            std::sort(out.begin(), out.end());
            out.erase(std::unique(out.begin(), out.end()), out.end());
        }
        return out;
    }

    bool independent_coordinates() const override { return base_->independent_coordinates(); }
    const Density& base() const { return *base_; }
    const BVFunctionSpec& bv() const { return f_; }
    const std::vector<double>& weights() const { return weights_; }

   private:
    double weighted_sup() const {
        double m = f_.sup_norm(), s = 0.0;
        for (double w : weights_) s += w;
        return m * s;
    }

    double compute_normalization() const {
        const auto* g = dynamic_cast<const GaussianDensity*>(base_.get());
        if (g) {
            double z = 1.0;
            for (int i = 0; i < d_; ++i)
                z *= weights_[i] > 0
                         ? perturbed_gaussian_mass(f_, weights_[i], g->mean()[i], g->var()[i])
                         : 1.0;
            return z;
        }
        throw ValidationError("bv_perturbed: base must be a diagonal Gaussian");
    }

    DensityPtr base_;
    BVFunctionSpec f_;
    std::vector<double> weights_;
};

// Piecewise-constant table over a uniform partition of its box.
class TabulatedDensity final : public Density {
   public:
    TabulatedDensity(Box box, std::vector<Index> cells, std::vector<double> values)
        : cells_(std::move(cells)), values_(std::move(values)) {
        kind_ = Kind::Tabulated;
        box.validate();
        d_ = box.dim();
        support_ = std::move(box);
        if (static_cast<int>(cells_.size()) != d_)
            throw ValidationError("tabulated: cells per axis must match dimension");
        Index n = 1;
        for (Index c : cells_) {
            if (c < 1) throw ValidationError("tabulated: cells must be >= 1");
            n *= c;
        }
        if (static_cast<Index>(values_.size()) != n)
            throw ValidationError("tabulated: need one value per cell");
        for (double v : values_)
            if (!(v >= 0)) throw ValidationError("tabulated: density values must be nonnegative");
    }

    double operator()(std::span<const double> x) const override {
        Index idx = 0;
        for (int i = 0; i < d_; ++i) {
            double t = (x[i] - support_.lo[i]) / (support_.hi[i] - support_.lo[i]);
            if (t < 0.0 || t >= 1.0) return 0.0;
            Index c = static_cast<Index>(std::floor(t * static_cast<double>(cells_[i])));
            c = std::min(c, cells_[i] - 1);
            idx = idx * cells_[i] + c;
        }
        return values_[static_cast<std::size_t>(idx)];
    }

    std::vector<double> axis_breakpoints(int axis) const override {
        std::vector<double> out;
        double w = (support_.hi[axis] - support_.lo[axis]) / static_cast<double>(cells_[axis]);
        for (Index k = 0; k <= cells_[axis]; ++k)
            out.push_back(support_.lo[axis] + w * static_cast<double>(k));
        return out;
    }

    bool independent_coordinates() const override { return d_ == 1; }

   private:
    std::vector<Index> cells_;
    std::vector<double> values_;
};

inline DensityPtr Density::gaussian(std::vector<double> mean, std::vector<double> var, Box support) {
    return std::make_shared<GaussianDensity>(std::move(mean), std::move(var), std::move(support));
}
inline DensityPtr Density::product(std::vector<DensityPtr> factors) {
    return std::make_shared<ProductDensity>(std::move(factors));
}
inline DensityPtr Density::bv_perturbed(DensityPtr base, BVFunctionSpec f, std::vector<double> weights) {
    return std::make_shared<BVPerturbedDensity>(std::move(base), std::move(f), std::move(weights));
}
inline DensityPtr Density::tabulated(Box box, std::vector<Index> cells, std::vector<double> values) {
    return std::make_shared<TabulatedDensity>(std::move(box), std::move(cells), std::move(values));
}
inline DensityPtr Density::uniform(Box box) {
    box.validate();
    double v = box.volume();
    return tabulated(box, std::vector<Index>(box.dim(), 1), {1.0 / v});
}

// ---------------------------------------------------------------------------
// Cell integration of a density
// ---------------------------------------------------------------------------

struct CellIntegral {
    double value = 0.0;
    bool converged = true;
    double refinement_gap = 0.0;
};

inline CellIntegral cell_integral(const Density& rho, const PathSimplex& T, int order = 6,
                                  double rel_tol = 1e-8) {
    CellIntegral out;
    auto fn = [&](std::span<const double> x) { return rho(x); };
    double coarse, fine;
    if (T.dim() == 1) {
        auto breaks = rho.axis_breakpoints(0);
        coarse = integrate_cell_1d(T, breaks, order, fn);
        fine = integrate_cell_1d(T, breaks, order + 2, fn);
    } else {
        coarse = integrate_cell(T, order, fn);
        fine = integrate_cell(T, order + 2, fn);
    }
    out.value = fine;
    out.refinement_gap = std::abs(fine - coarse);
    double scale = std::max(std::abs(fine), 1e-300);
    out.converged = out.refinement_gap <= rel_tol * std::max(scale, 1e-12);
    return out;
}

// Density bounded below on cells fully interior to the support (closability
// sanity). Sampling check at cell quadrature nodes.
struct HamzaReport {
    bool ok = true;
    double min_interior_density = 1e300;
};

inline HamzaReport hamza_check(const Density& rho, const GridSpec& grid, double floor = 1e-12) {
    HamzaReport rep;
    auto lo = grid.lo_index(), hi = grid.hi_index();
    for_each_anchor(lo, hi, [&](const MultiIndex& a) {
        // interior test: the whole forward cube strictly inside the support
        for (int i = 0; i < grid.d; ++i) {
            double clo = grid.r * static_cast<double>(a[i]);
            if (!(clo > rho.support().lo[i] - 1e-12 && clo + grid.r < rho.support().hi[i] + 1e-12))
                return;
        }
        detail::for_each_permutation(grid.d, [&](const std::vector<int>& perm) {
            PathSimplex T{a, perm, grid.r};
            integrate_cell(T, 3, [&](std::span<const double> x) {
                rep.min_interior_density = std::min(rep.min_interior_density, rho(x));
                return 0.0;
            });
        });
    });
    rep.ok = rep.min_interior_density > floor;
    return rep;
}

// ---------------------------------------------------------------------------
// Potentials and partition functions
// ---------------------------------------------------------------------------

// Q(h) = sum_k w_k f(h_k) for a finite atomic mixing measure.
inline double potential_Q(const BVFunctionSpec& f, std::span<const double> weights,
                          std::span<const double> h) {
    if (weights.size() != h.size()) throw ValidationError("potential_Q: weight/point size mismatch");
    double q = 0.0;
    for (std::size_t k = 0; k < h.size(); ++k) {
        if (!(weights[k] >= 0)) throw ValidationError("potential_Q: weights must be nonnegative");
        q += weights[k] * f(h[k]);
    }
    return q;
}

// Z_N = E[exp(-Q(P_N X))] for X with independent N(0, sigma2_k) coordinates;
// coordinates beyond n_active are projected to zero and contribute f(0).
inline double partition_function_exact(const BVFunctionSpec& f, std::span<const double> lambda,
                                       std::span<const double> sigma2, int n_active) {
    if (lambda.size() != sigma2.size()) throw ValidationError("partition: size mismatch");
    if (n_active < 0 || n_active > static_cast<int>(lambda.size()))
        throw ValidationError("partition: active count out of range");
    double z = 1.0;
    for (int k = 0; k < static_cast<int>(lambda.size()); ++k) {
        if (k < n_active)
            z *= lambda[k] > 0 ? perturbed_gaussian_mass(f, lambda[k], 0.0, sigma2[k]) : 1.0;
        else
            z *= std::exp(-lambda[k] * f(0.0));
    }
    return z;
}

struct PartitionEstimate {
    double value = 0.0;
    double stderr_ = 0.0;
    long samples = 0;
};

inline PartitionEstimate partition_function_mc(const BVFunctionSpec& f,
                                               std::span<const double> lambda,
                                               std::span<const double> sigma2, int n_active,
                                               long samples, std::uint64_t root_seed,
                                               std::string_view task = "partition-mc") {
    if (samples < 1) throw ValidationError("partition_function_mc: needs at least one sample");
    if (lambda.size() != sigma2.size()) throw ValidationError("partition: size mismatch");
    auto rng = substream(root_seed, task);
    std::normal_distribution<double> N01(0.0, 1.0);
    double inactive = 0.0;
    for (std::size_t k = static_cast<std::size_t>(n_active); k < lambda.size(); ++k)
        inactive += lambda[k] * f(0.0);
    double sum = 0.0, sumsq = 0.0;
    for (long s = 0; s < samples; ++s) {
        double q = inactive;
        for (int k = 0; k < n_active; ++k) q += lambda[k] * f(std::sqrt(sigma2[k]) * N01(rng));
        double w = std::exp(-q);
        sum += w;
        sumsq += w * w;
    }
    PartitionEstimate est;
    est.samples = samples;
    est.value = sum / static_cast<double>(samples);
    double var = std::max(0.0, sumsq / samples - est.value * est.value);
    est.stderr_ = std::sqrt(var / static_cast<double>(samples));
    return est;
}

}  // namespace cfk
