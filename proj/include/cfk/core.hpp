// Shared primitives: lattice multi-indices, boxes, grids, permutations.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cfk {

using Index = std::int64_t;

// Lattice node, in units of the mesh size r (the world point is r * index).
using MultiIndex = std::vector<Index>;

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericsError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct MultiIndexHash {
    std::size_t operator()(const MultiIndex& m) const noexcept {
        std::size_t h = 1469598103934665603ull;
        for (Index v : m) {
            auto u = static_cast<std::uint64_t>(v);
            for (int k = 0; k < 8; ++k) {
                h ^= (u >> (8 * k)) & 0xffu;
                h *= 1099511628211ull;
            }
        }
        return h;
    }
};

inline std::string to_string(const MultiIndex& m) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < m.size(); ++i) os << (i ? "," : "") << m[i];
    os << ')';
    return os.str();
}

// Axis-aligned box, corner coordinates in world units.
struct Box {
    std::vector<double> lo, hi;

    int dim() const { return static_cast<int>(lo.size()); }

    bool contains(std::span<const double> x) const {
        for (int i = 0; i < dim(); ++i)
            if (!(x[i] >= lo[i] && x[i] < hi[i])) return false;
        return true;
    }

    double volume() const {
        double v = 1.0;
        for (int i = 0; i < dim(); ++i) v *= hi[i] - lo[i];
        return v;
    }

    void validate() const {
        if (lo.empty() || lo.size() != hi.size())
            throw ValidationError("box: dimension mismatch");
        for (std::size_t i = 0; i < lo.size(); ++i)
            if (!(lo[i] < hi[i])) throw ValidationError("box: empty extent on axis " + std::to_string(i));
    }
};

namespace detail {
// Corner coordinates must sit exactly on the r-lattice; dyadic r and integer
// corners keep this exact in binary floating point.
inline Index exact_lattice_coord(double c, double r, const char* what) {
    double q = c / r;
    double rq = std::nearbyint(q);
    if (q != rq)
        throw ValidationError(std::string(what) + ": coordinate " + std::to_string(c) +
                              " is not an integer multiple of r=" + std::to_string(r));
    return static_cast<Index>(rq);
}
}  // namespace detail

// Uniform r-lattice restricted to a box with lattice-aligned corners.
struct GridSpec {
    int d = 0;
    double r = 1.0;
    Box box;

    GridSpec() = default;
    GridSpec(int d_, double r_, Box box_) : d(d_), r(r_), box(std::move(box_)) { validate(); }

    void validate() const {
        if (d < 1) throw ValidationError("grid: d must be >= 1");
        if (!(r > 0.0)) throw ValidationError("grid: r must be > 0");
        box.validate();
        if (box.dim() != d) throw ValidationError("grid: box dimension != d");
        lo_index();
        hi_index();
    }

    MultiIndex lo_index() const {
        MultiIndex m(d);
        for (int i = 0; i < d; ++i) m[i] = detail::exact_lattice_coord(box.lo[i], r, "grid box lo");
        return m;
    }

    // Exclusive for cell anchors, inclusive for nodes.
    MultiIndex hi_index() const {
        MultiIndex m(d);
        for (int i = 0; i < d; ++i) m[i] = detail::exact_lattice_coord(box.hi[i], r, "grid box hi");
        return m;
    }

    Index cell_count() const {
        auto lo = lo_index(), hi = hi_index();
        Index n = 1;
        for (int i = 0; i < d; ++i) n *= hi[i] - lo[i];
        return n;
    }
};

inline void validate_permutation(std::span<const int> perm) {
    const int d = static_cast<int>(perm.size());
    std::vector<char> seen(d, 0);
    for (int v : perm) {
        if (v < 0 || v >= d || seen[v]) throw ValidationError("permutation: not a bijection on {0,..,d-1}");
        seen[v] = 1;
    }
}

inline double factorial(int n) {
    double f = 1.0;
    for (int k = 2; k <= n; ++k) f *= k;
    return f;
}

// Iterates all anchors alpha with lo <= alpha < hi in lexicographic order.
template <class F>
void for_each_anchor(const MultiIndex& lo, const MultiIndex& hi, F&& fn) {
    const int d = static_cast<int>(lo.size());
    MultiIndex a = lo;
    for (int i = 0; i < d; ++i)
        if (lo[i] >= hi[i]) return;
    while (true) {
        fn(const_cast<const MultiIndex&>(a));
        int axis = d - 1;
        while (axis >= 0) {
            if (++a[axis] < hi[axis]) break;
            a[axis] = lo[axis];
            --axis;
        }
        if (axis < 0) return;
    }
}

}  // namespace cfk
