// Coxeter-Freudenthal-Kuhn triangulation of the r-lattice: each cube splits
// into d! path simplices indexed by permutations; the semi-open cells D_T
// partition space exactly, so point location is a sort plus a floor.
#pragma once

#include <algorithm>
#include <span>
#include <unordered_set>
#include <vector>

#include "cfk/core.hpp"

namespace cfk {

// A cell of the triangulation. The vertex path is
//   T(0) = anchor, T(i) = T(i-1) + e_{perm[i-1]}   (lattice units),
// i.e. perm[k] is the axis of the (k+1)-th edge; world points are r * index.
struct PathSimplex {
    MultiIndex anchor;
    std::vector<int> perm;
    double r = 1.0;

    int dim() const { return static_cast<int>(perm.size()); }

    MultiIndex vertex_index(int i) const {
        MultiIndex v = anchor;
        for (int j = 0; j < i; ++j) v[perm[j]] += 1;
        return v;
    }

    std::vector<double> vertex(int i) const {
        MultiIndex v = vertex_index(i);
        std::vector<double> x(v.size());
        for (std::size_t k = 0; k < v.size(); ++k) x[k] = r * static_cast<double>(v[k]);
        return x;
    }

    // 0-based position k with perm[k] == axis.
    int perm_position(int axis) const {
        for (int k = 0; k < dim(); ++k)
            if (perm[k] == axis) return k;
        throw ValidationError("perm_position: axis out of range");
    }

    // Local coordinates of x in the cell's unit cube, evaluated as x/r - anchor
    // so that locate() and membership() share the exact same arithmetic.
    std::vector<double> local(std::span<const double> x) const {
        std::vector<double> v(x.size());
        for (std::size_t i = 0; i < x.size(); ++i)
            v[i] = x[i] / r - static_cast<double>(anchor[i]);
        return v;
    }

    bool operator==(const PathSimplex& o) const {
        return anchor == o.anchor && perm == o.perm && r == o.r;
    }
};

struct PathSimplexHash {
    std::size_t operator()(const PathSimplex& t) const noexcept {
        std::size_t h = MultiIndexHash{}(t.anchor);
        for (int p : t.perm) h = h * 1099511628211ull + static_cast<std::size_t>(p + 1);
        return h;
    }
};

inline PathSimplex perm_to_path(std::span<const int> perm, MultiIndex anchor, double r) {
    validate_permutation(perm);
    if (anchor.size() != perm.size()) throw ValidationError("perm_to_path: anchor/perm dimension mismatch");
    if (!(r > 0)) throw ValidationError("perm_to_path: r must be > 0");
    return PathSimplex{std::move(anchor), std::vector<int>(perm.begin(), perm.end()), r};
}

// Semi-open cell test. With v the local coordinates, the defining chain is
//   0 <= v[perm[d-1]]  REL  v[perm[d-2]]  REL ... REL  v[perm[0]] < 1,
// where the relation between steps k and k-1 is strict iff perm[k-1] < perm[k].
inline bool membership(std::span<const double> x, const PathSimplex& T) {
    const int d = T.dim();
    std::vector<double> v = T.local(x);
    if (!(v[T.perm[d - 1]] >= 0.0)) return false;
    if (!(v[T.perm[0]] < 1.0)) return false;
    for (int k = d - 1; k >= 1; --k) {
        double lo = v[T.perm[k]], hi = v[T.perm[k - 1]];
        if (T.perm[k - 1] < T.perm[k]) {
            if (!(lo < hi)) return false;
        } else {
            if (!(lo <= hi)) return false;
        }
    }
    return true;
}

// Total point location: anchor by componentwise floor of x/r, permutation by
// sorting the (fractional value, axis) tuples in descending lexicographic
// order. Ties resolve toward the larger axis, which matches the semi-open
// cell convention above.
inline PathSimplex locate(std::span<const double> x, int d, double r) {
    MultiIndex anchor(d);
    std::vector<double> frac(d);
    for (int i = 0; i < d; ++i) {
        double q = x[i] / r;
        double fl = std::floor(q);
        anchor[i] = static_cast<Index>(fl);
        frac[i] = q - fl;
    }
    std::vector<int> perm(d);
    for (int i = 0; i < d; ++i) perm[i] = i;
    std::sort(perm.begin(), perm.end(), [&](int a, int b) {
        if (frac[a] != frac[b]) return frac[a] > frac[b];
        return a > b;
    });
    return PathSimplex{std::move(anchor), std::move(perm), r};
}

inline PathSimplex locate(std::span<const double> x, const GridSpec& grid) {
    return locate(x, grid.d, grid.r);
}

inline double simplex_volume(const GridSpec& grid) {
    return std::pow(grid.r, grid.d) / factorial(grid.d);
}

inline double simplex_volume(const PathSimplex& T) {
    return std::pow(T.r, T.dim()) / factorial(T.dim());
}

namespace detail {
template <class F>
void for_each_permutation(int d, F&& fn) {
    std::vector<int> p(d);
    for (int i = 0; i < d; ++i) p[i] = i;
    do {
        fn(const_cast<const std::vector<int>&>(p));
    } while (std::next_permutation(p.begin(), p.end()));
}
}  // namespace detail

// All (cell, vertex index) pairs with T(i) = alpha; there are (d+1)! of them
// and their cells cover the support of the tent at alpha.
inline std::vector<std::pair<PathSimplex, int>> incident_vertices(const MultiIndex& alpha,
                                                                  const GridSpec& grid) {
    std::vector<std::pair<PathSimplex, int>> out;
    out.reserve(static_cast<std::size_t>(factorial(grid.d + 1)));
    detail::for_each_permutation(grid.d, [&](const std::vector<int>& perm) {
        MultiIndex anchor = alpha;
        for (int i = 0; i <= grid.d; ++i) {
            if (i > 0) anchor[perm[i - 1]] -= 1;  // walk the anchor back along the path
            out.emplace_back(PathSimplex{anchor, perm, grid.r}, i);
        }
    });
    return out;
}

// Ordered, duplicate-free collection of cells sharing one grid.
struct SimplexKeySet {
    std::vector<PathSimplex> cells;

    void push(PathSimplex T) {
        if (!cells.empty() && (cells.front().r != T.r || cells.front().dim() != T.dim()))
            throw ValidationError("SimplexKeySet: cells must share one grid");
        for (const auto& c : cells)
            if (c == T) throw ValidationError("SimplexKeySet: duplicate cell key");
        cells.push_back(std::move(T));
    }

    std::size_t size() const { return cells.size(); }
    auto begin() const { return cells.begin(); }
    auto end() const { return cells.end(); }
};

// The d! cells whose vertex path leaves alpha along axis i (so the edge from
// position perm^{-1}(i) starts at alpha).
inline SimplexKeySet simplices_leaving(const MultiIndex& alpha, int axis, const GridSpec& grid) {
    if (axis < 0 || axis >= grid.d) throw ValidationError("simplices_leaving: axis out of range");
    SimplexKeySet out;
    detail::for_each_permutation(grid.d, [&](const std::vector<int>& perm) {
        int k = 0;
        while (perm[k] != axis) ++k;
        MultiIndex anchor = alpha;
        for (int j = 0; j < k; ++j) anchor[perm[j]] -= 1;
        out.push(PathSimplex{std::move(anchor), perm, grid.r});
    });
    return out;
}

}  // namespace cfk
