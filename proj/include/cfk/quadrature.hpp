// Gauss-Legendre rules on boxes and path simplices (Duffy map), plus a 1-d
// piecewise rule that splits at declared breakpoints.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <span>
#include <vector>

#include "cfk/core.hpp"

namespace cfk {

struct GaussRule {
    std::vector<double> nodes;    // on (0,1)
    std::vector<double> weights;  // sum to 1
};

namespace detail {

inline GaussRule compute_gauss_rule(int n) {
    // Newton iteration on Legendre P_n over [-1,1], mapped to [0,1].
    GaussRule rule;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    for (int i = 0; i < n; ++i) {
        double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
        double p0 = 0, p1 = 0;
        for (int it = 0; it < 100; ++it) {
            p0 = 1.0;
            p1 = x;
            for (int k = 2; k <= n; ++k) {
                double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            double dp = n * (x * p1 - p0) / (x * x - 1.0);
            double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-15) break;
        }
        p0 = 1.0;
        p1 = x;
        for (int k = 2; k <= n; ++k) {
            double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
            p0 = p1;
            p1 = p2;
        }
        double dp = n * (x * p1 - p0) / (x * x - 1.0);
        rule.nodes[i] = 0.5 * (x + 1.0);
        rule.weights[i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    // Sort nodes ascending so rules are deterministic.
    std::vector<int> ord(n);
    for (int i = 0; i < n; ++i) ord[i] = i;
    std::sort(ord.begin(), ord.end(), [&](int a, int b) { return rule.nodes[a] < rule.nodes[b]; });
    GaussRule out;
    for (int i : ord) {
        out.nodes.push_back(rule.nodes[i]);
        out.weights.push_back(rule.weights[i]);
    }
    return out;
}

}  // namespace detail

inline const GaussRule& gauss_rule(int n) {
    static std::map<int, GaussRule> cache;
    static std::mutex mtx;
    std::lock_guard<std::mutex> lock(mtx);
    auto it = cache.find(n);
    if (it == cache.end()) it = cache.emplace(n, detail::compute_gauss_rule(n)).first;
    return it->second;
}

// Tensor Gauss over a box; fn takes a point in world coordinates.
template <class F>
double integrate_box(const Box& box, int order, F&& fn) {
    const int d = box.dim();
    const GaussRule& g = gauss_rule(order);
    const int n = order;
    double vol = box.volume();
    std::vector<int> idx(d, 0);
    std::vector<double> x(d);
    double sum = 0.0;
    while (true) {
        double w = 1.0;
        for (int i = 0; i < d; ++i) {
            x[i] = box.lo[i] + (box.hi[i] - box.lo[i]) * g.nodes[idx[i]];
            w *= g.weights[idx[i]];
        }
        sum += w * fn(std::span<const double>(x));
        int axis = d - 1;
        while (axis >= 0) {
            if (++idx[axis] < n) break;
            idx[axis] = 0;
            --axis;
        }
        if (axis < 0) break;
    }
    return sum * vol;
}

// 1-d integral over [a,b], split at interior breakpoints, Gauss per piece.
template <class F>
double integrate_interval(double a, double b, std::span<const double> breakpoints, int order, F&& fn) {
    std::vector<double> cuts;
    cuts.push_back(a);
    for (double t : breakpoints)
        if (t > a && t < b) cuts.push_back(t);
    cuts.push_back(b);
    std::sort(cuts.begin(), cuts.end());
    const GaussRule& g = gauss_rule(order);
    double sum = 0.0;
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
        double lo = cuts[k], hi = cuts[k + 1];
        if (!(hi > lo)) continue;
        double piece = 0.0;
        for (int i = 0; i < order; ++i) piece += g.weights[i] * fn(lo + (hi - lo) * g.nodes[i]);
        sum += piece * (hi - lo);
    }
    return sum;
}

// Duffy map from the unit cube onto the sorted simplex {1 > t_1 > ... > t_d > 0}:
// t_k = u_1 * ... * u_k, with Jacobian u_1^{d-1} u_2^{d-2} ... u_{d-1}.
// visit(point_sorted, weight) is called with the sorted coordinates t.
template <class F>
double duffy_simplex(int d, int order, F&& fn) {
    const GaussRule& g = gauss_rule(order);
    std::vector<int> idx(d, 0);
    std::vector<double> t(d);
    double sum = 0.0;
    while (true) {
        double w = 1.0, jac = 1.0, prod = 1.0;
        for (int k = 0; k < d; ++k) {
            double u = g.nodes[idx[k]];
            w *= g.weights[idx[k]];
            prod *= u;
            t[k] = prod;
            for (int rep = 0; rep < d - 1 - k; ++rep) jac *= u;
        }
        sum += w * jac * fn(std::span<const double>(t));
        int axis = d - 1;
        while (axis >= 0) {
            if (++idx[axis] < order) break;
            idx[axis] = 0;
            --axis;
        }
        if (axis < 0) break;
    }
    return sum;
}

}  // namespace cfk
