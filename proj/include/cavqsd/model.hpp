#pragma once

#include <optional>
#include <variant>
#include <vector>

#include "cavqsd/hilbert.hpp"

namespace cavqsd {

enum class Boundary { Open, Periodic };

// Chain of N cavities. lambdas[i] couples cavity i and i+1; for periodic
// boundaries lambdas[N-1] closes the ring (cavity N-1 with cavity 0). With
// open boundaries lambdas[N-1] is ignored. Units: hbar = 1, frequencies in
// units of a reference omega.
struct CavityChainModel {
    std::vector<double> omegas;
    std::vector<double> lambdas;
    Boundary boundary = Boundary::Open;
    std::vector<cplx> couplings;

    int n_cavities() const { return static_cast<int>(omegas.size()); }
    void validate() const;

    // Hopping strength between cavity i and i+1 (mod N for periodic chains),
    // zero where the boundary condition removes the bond.
    double bond(int i) const;

    // Single-particle matrix Omega with Omega_ii = omega_i and the bond
    // strengths off the diagonal: H_s = sum_ij Omega_ij a_i^dag a_j.
    Eigen::MatrixXd single_particle_matrix() const;

    Vec coupling_vector() const;
};

struct OrnsteinUhlenbeck {
    double gamma;
};
struct MarkovDelta {
    double rate;
};
// Stationary lag table alpha(tau) for tau = 0, dtau, 2 dtau, ...; negative
// lags use alpha(-tau) = conj(alpha(tau)).
struct Tabulated {
    double dtau;
    std::vector<cplx> values;
};

class CorrelationKernel {
public:
    using Shape = std::variant<OrnsteinUhlenbeck, MarkovDelta, Tabulated>;

    explicit CorrelationKernel(Shape shape, cplx scale = 1.0, bool conjugated = false);

    static CorrelationKernel ornstein_uhlenbeck(double gamma) { return CorrelationKernel(OrnsteinUhlenbeck{gamma}); }
    static CorrelationKernel markov_delta(double rate) { return CorrelationKernel(MarkovDelta{rate}); }
    static CorrelationKernel tabulated(double dtau, std::vector<cplx> values) {
        return CorrelationKernel(Tabulated{dtau, std::move(values)});
    }

    // alpha(t, s). Throws for MarkovDelta, which is only meaningful inside
    // integrals.
    cplx operator()(double t, double s) const;

    CorrelationKernel scaled(cplx factor) const;
    CorrelationKernel conjugate() const;

    const Shape& shape() const { return shape_; }
    cplx scale() const { return scale_; }
    bool conjugated() const { return conjugated_; }
    bool is_ou() const { return std::holds_alternative<OrnsteinUhlenbeck>(shape_); }
    bool is_markov() const { return std::holds_alternative<MarkovDelta>(shape_); }
    bool is_zero() const { return scale_ == cplx{0.0, 0.0}; }
    double ou_gamma() const;

    // Integral of alpha(tau) over tau in [0, inf). OU: scale/2; delta: rate/2.
    cplx area() const;

private:
    Shape shape_;
    cplx scale_;
    bool conjugated_;
};

// Bath description: a base (zero-temperature) kernel alpha0 and a flat mean
// occupation nbar. The effective kernels are alpha1 = (nbar + 1) alpha0 and
// alpha2 = nbar conj(alpha0) unless alpha2 is given explicitly.
struct BathSpec {
    CorrelationKernel base;
    double nbar = 0.0;
    std::optional<CorrelationKernel> kernel2_override;

    static BathSpec zero_temperature(CorrelationKernel k) { return BathSpec{std::move(k), 0.0, std::nullopt}; }
    static BathSpec finite_temperature(CorrelationKernel k, double nbar) { return BathSpec{std::move(k), nbar, std::nullopt}; }

    bool is_zero_temperature() const { return nbar == 0.0 && !kernel2_override; }
    CorrelationKernel kernel1() const;
    CorrelationKernel kernel2() const;
};

SpMat build_hamiltonian(const CavityChainModel& model, const HilbertSpec& spec);
SpMat build_collective_L(const CavityChainModel& model, const HilbertSpec& spec);
SpMat total_number_op(const HilbertSpec& spec);

inline cplx kernel_eval(const CorrelationKernel& kernel, double t, double s) { return kernel(t, s); }

}  // namespace cavqsd
