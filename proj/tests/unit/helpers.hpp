#pragma once

#include <cmath>
#include <random>
#include <vector>

#include <unsupported/Eigen/KroneckerProduct>

#include "cavqsd/hilbert.hpp"

namespace testing {

using cavqsd::cplx;
using cavqsd::Mat;
using cavqsd::Vec;

inline Mat random_density(Eigen::Index dim, unsigned seed, Eigen::Index rank = 3) {
    std::mt19937 rng(seed);
    std::normal_distribution<double> g;
    Mat A(dim, rank);
    for (Eigen::Index i = 0; i < A.size(); ++i) A.data()[i] = cplx{g(rng), g(rng)};
    Mat rho = A * A.adjoint();
    return rho / rho.trace();
}

inline Mat kron(const Mat& a, const Mat& b) { return Eigen::kroneckerProduct(a, b).eval(); }

// Dense single-mode lowering operator built from <m-1| a |m> = sqrt(m).
inline Mat lowering(int d) {
    Mat a = Mat::Zero(d, d);
    for (int m = 1; m < d; ++m) a(m - 1, m) = std::sqrt(double(m));
    return a;
}

// a_i on a chain of cavities with cavity 0 as the leftmost Kronecker factor.
inline Mat mode_op(const std::vector<int>& dims, int i) {
    Mat out = Mat::Identity(1, 1);
    for (int c = 0; c < int(dims.size()); ++c) out = kron(out, c == i ? lowering(dims[c]) : Mat(Mat::Identity(dims[c], dims[c])));
    return out;
}

inline double max_abs(const Mat& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

// Coherent amplitudes e^{-|a|^2/2} a^n / sqrt(n!) computed through lgamma.
inline Vec coherent(cplx alpha, int d) {
    Vec v(d);
    for (int n = 0; n < d; ++n) {
        double mag = n == 0 ? 1.0 : std::exp(n * std::log(std::abs(alpha)) - 0.5 * std::lgamma(n + 1.0));
        v(n) = std::exp(-0.5 * std::norm(alpha)) * mag * std::exp(cplx{0.0, n * std::arg(alpha)});
    }
    return v;
}

}  // namespace testing
