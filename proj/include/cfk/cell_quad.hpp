// Quadrature over triangulation cells: Duffy-mapped tensor Gauss on the
// closed hull (the cell boundary is Lebesgue-null, so the semi-open
// convention does not matter for integrals).
#pragma once

#include <span>
#include <vector>

#include "cfk/quadrature.hpp"
#include "cfk/triangulation.hpp"

namespace cfk {

// Maps sorted simplex coordinates t (descending) into the cell: the local
// coordinate along axis perm[k] is t[k].
template <class F>
double integrate_cell(const PathSimplex& T, int order, F&& fn) {
    const int d = T.dim();
    const double r = T.r;
    if (d == 1) {
        double a = r * static_cast<double>(T.anchor[0]);
        return integrate_interval(a, a + r, {}, order, [&](double x) {
            double xs[1] = {x};
            return fn(std::span<const double>(xs, 1));
        });
    }
    std::vector<double> x(d);
    double scale = 1.0;
    for (int i = 0; i < d; ++i) scale *= r;
    return scale * duffy_simplex(d, order, [&](std::span<const double> t) {
        for (int k = 0; k < d; ++k) x[T.perm[k]] = r * (static_cast<double>(T.anchor[T.perm[k]]) + t[k]);
        return fn(std::span<const double>(x));
    });
}

// 1-d cells with interior breakpoints of the integrand (density jumps).
template <class F>
double integrate_cell_1d(const PathSimplex& T, std::span<const double> breakpoints, int order, F&& fn) {
    double a = T.r * static_cast<double>(T.anchor[0]);
    return integrate_interval(a, a + T.r, breakpoints, order, [&](double x) {
        double xs[1] = {x};
        return fn(std::span<const double>(xs, 1));
    });
}

}  // namespace cfk
