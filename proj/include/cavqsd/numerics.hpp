#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "cavqsd/types.hpp"

namespace cavqsd {

// Uniform grid t_k = k * dt, k = 0..n_steps.
struct TimeGrid {
    double t_max = 0.0;
    int n_steps = 0;

    TimeGrid() = default;
    TimeGrid(double t_max_, int n_steps_) : t_max(t_max_), n_steps(n_steps_) {
        if (!(t_max > 0.0) || n_steps < 1) throw std::invalid_argument("TimeGrid: need t_max > 0 and n_steps >= 1");
    }
    static TimeGrid with_step(double t_max, double dt) {
        return TimeGrid(t_max, std::max(1, static_cast<int>(std::lround(t_max / dt))));
    }

    double dt() const { return t_max / n_steps; }
    double time(int k) const { return k * dt(); }
    int n_nodes() const { return n_steps + 1; }
    // Index of a node time, or -1 when t is not on the grid.
    int index_of(double t) const {
        double x = t / dt();
        long k = std::lround(x);
        if (std::abs(x - static_cast<double>(k)) > 1e-9 || k < 0 || k > n_steps) return -1;
        return static_cast<int>(k);
    }
    bool operator==(const TimeGrid& o) const { return n_steps == o.n_steps && std::abs(t_max - o.t_max) < 1e-12; }
};

// Weight (in units of h) of node k in a quadrature over nodes 0..n. Uses
// trapezoid (n=1), Simpson (n=2), Simpson 3/8 (n=3), composite Simpson (n=4)
// and fourth-order Gregory end corrections for n >= 5.
double quadrature_weight(int k, int n);

// sum_k w_k f_k * h over nodes [first, last] of a uniformly spaced sequence.
template <typename T, typename F>
T integrate_nodes(int first, int last, double h, F&& value_at, T zero) {
    T acc = zero;
    const int n = last - first;
    if (n <= 0) return acc;
    for (int k = 0; k <= n; ++k) acc += quadrature_weight(k, n) * value_at(first + k);
    return acc * h;
}

// Four-point Lagrange interpolation on a uniform table (node spacing h,
// node 0 at t=0). Falls back to fewer points near short tables.
template <typename T>
T interpolate_cubic(std::span<const T> table, double h, double t) {
    const int n = static_cast<int>(table.size());
    if (n == 0) throw std::invalid_argument("interpolate_cubic: empty table");
    const double x = t / h;
    if (x < -1e-9 || x > (n - 1) + 1e-9) throw std::out_of_range("interpolate_cubic: time outside the coefficient table");
    if (n == 1) return table[0];
    int k = std::clamp(static_cast<int>(std::floor(x)), 0, n - 2);
    if (std::abs(x - std::round(x)) < 1e-12) {
        return table[static_cast<std::size_t>(std::clamp(static_cast<int>(std::lround(x)), 0, n - 1))];
    }
    if (n < 4) {
        double w = x - k;
        return (1.0 - w) * table[static_cast<std::size_t>(k)] + w * table[static_cast<std::size_t>(k + 1)];
    }
    int start = std::clamp(k - 1, 0, n - 4);
    T result = table[static_cast<std::size_t>(start)] * 0.0;
    for (int a = 0; a < 4; ++a) {
        double la = 1.0;
        for (int b = 0; b < 4; ++b)
            if (b != a) la *= (x - (start + b)) / static_cast<double>(a - b);
        result += la * table[static_cast<std::size_t>(start + a)];
    }
    return result;
}

}  // namespace cavqsd
