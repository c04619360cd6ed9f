#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include "cavqsd/types.hpp"

namespace cavqsd {

// Truncated multi-mode Fock space. Cavities are indexed from 0 in the C++
// API. Cavity 0 is the slowest-varying index of the tensor product, so the
// flat index of |n_0 n_1 ... n_{N-1}> is sum_i n_i * stride(i).
class HilbertSpec {
public:
    static constexpr std::size_t kDefaultMaxDim = 4096;

    explicit HilbertSpec(std::vector<int> dims, std::size_t max_dim = kDefaultMaxDim);
    HilbertSpec(std::initializer_list<int> dims) : HilbertSpec(std::vector<int>(dims)) {}
    HilbertSpec(int n_cavities, int dim_per_cavity);

    int n_cavities() const { return static_cast<int>(dims_.size()); }
    int dim(int cavity) const { return dims_.at(static_cast<std::size_t>(cavity)); }
    const std::vector<int>& dims() const { return dims_; }
    std::size_t total_dim() const { return total_; }
    std::size_t stride(int cavity) const { return strides_.at(static_cast<std::size_t>(cavity)); }

    int occupation(std::size_t flat_index, int cavity) const;
    std::size_t flat_index(std::span<const int> occupations) const;

    // Sub-space made of the listed cavities, in the listed order.
    HilbertSpec subspace(std::span<const int> cavities) const;

    bool operator==(const HilbertSpec& other) const { return dims_ == other.dims_; }

private:
    std::vector<int> dims_;
    std::vector<std::size_t> strides_;
    std::size_t total_ = 1;
};

struct Ket {
    HilbertSpec spec;
    Vec amplitudes;

    double norm_squared() const { return amplitudes.squaredNorm(); }
};

struct Rho {
    HilbertSpec spec;
    Mat matrix;

    cplx trace() const { return matrix.trace(); }
    double hermiticity_error() const;
    double min_eigenvalue() const;
    double purity() const;
};

Rho projector(const Ket& psi);

// Single-mode lowering matrix of dimension d: a[m-1, m] = sqrt(m).
Mat lowering_matrix(int d);

// I x ... x a x ... x I with the lowering matrix in slot `cavity`.
SpMat annihilation_op(const HilbertSpec& spec, int cavity);
SpMat number_op(const HilbertSpec& spec, int cavity);
SpMat identity_op(const HilbertSpec& spec);

// Poisson population beyond the truncation for a coherent amplitude.
double coherent_tail_population(double abs_alpha, int d);

// Normalized truncated coherent state in `cavity`, vacuum elsewhere.
// Warns when the truncation tail exceeds 1e-6 and throws above 1e-3.
Ket coherent_ket(const HilbertSpec& spec, int cavity, cplx alpha);

// Even cat 1/sqrt(Z) (|alpha> + |-alpha>) in `cavity`, vacuum elsewhere.
Ket cat_ket(const HilbertSpec& spec, int cavity, cplx alpha);

// Analytic cat normalization Z = 2 (1 + exp(-2|alpha|^2)).
double cat_normalization(cplx alpha);

// Squared norm of the unnormalized truncated superposition |alpha> + |-alpha>
// built from Poisson amplitudes; converges to cat_normalization as d grows.
double truncated_cat_norm(cplx alpha, int d);

Ket fock_ket(const HilbertSpec& spec, std::span<const int> occupations);

// Partial trace keeping `keep` (ascending cavity order is not required; the
// result factors follow the order given).
Rho partial_trace(const Rho& rho, std::span<const int> keep);

// Partial transpose on the listed cavities.
Mat partial_transpose(const Rho& rho, std::span<const int> transposed);

}  // namespace cavqsd
