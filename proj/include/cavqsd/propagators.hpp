#pragma once

#include <functional>
#include <vector>

#include "cavqsd/coeffs.hpp"
#include "cavqsd/hilbert.hpp"
#include "cavqsd/model.hpp"

namespace cavqsd {

// Sparse operators shared by every propagator of one model.
struct SystemOperators {
    HilbertSpec spec;
    SpMat H, L, Ldag;
    std::vector<SpMat> a, adag;

    SystemOperators(const CavityChainModel& model, const HilbertSpec& spec);
};

// Free evolution under the quadratic, excitation-conserving chain
// Hamiltonian. Modes evolve as a_j(t) = sum_k U_jk(t) a_k with
// U = exp(-i Omega t); the Fock-space propagator exp(-i H t) is block
// diagonal in the total excitation number.
class FreeEvolution {
public:
    FreeEvolution(const CavityChainModel& model, const HilbertSpec& spec);

    Mat mode_propagator(double t) const;
    SpMat propagator(double t) const;
    // exp(-iHt) rho exp(iHt)
    Mat to_lab(double t, const Mat& rho_interaction) const;

private:
    Eigen::MatrixXd omega_vectors_;
    Eigen::VectorXd omega_values_;
    std::vector<std::vector<Eigen::Index>> sectors_;
    std::vector<Mat> sector_vectors_;
    std::vector<Eigen::VectorXd> sector_energies_;
    Eigen::Index dim_ = 0;
};

struct PropagationOptions {
    // Record a snapshot every `sample_every` steps (and always the last step),
    // or, when `sample_steps` is non-empty, exactly at those step indices.
    int sample_every = 1;
    std::vector<int> sample_steps;
    // Compute the minimum eigenvalue of every recorded snapshot.
    bool monitor_positivity = true;
};

struct RhoSeries {
    std::vector<double> times;
    std::vector<Rho> states;
    std::vector<double> min_eigenvalues;  // empty unless monitored
    double max_trace_drift = 0.0;
    double max_hermiticity_error = 0.0;
};

using Generator = std::function<Mat(double t, const Mat& rho)>;

// Right-hand sides. P, and the F/G/U/V snapshot, are the coefficient values
// at the evaluation time.
Mat zero_t_rhs(const SystemOperators& ops, const Vec& P, const Mat& rho);
Mat finite_t_rhs(const SystemOperators& ops, const Vec& l, const MasterCoeffsFT::Snapshot& c, const Mat& rho);
Mat lindblad_rhs(const SystemOperators& ops, double rate, double nbar, const Mat& rho);

// Step indices recorded under (sample_every, sample_steps), ascending.
std::vector<int> recorded_steps(int n_steps, int sample_every, const std::vector<int>& sample_steps);

// Dense D^2 x D^2 superoperator of a linear map acting on D x D matrices,
// column-stacked.
Mat superoperator_matrix(const std::function<Mat(const Mat&)>& map, Eigen::Index dim);

// Fixed-step RK4 integration of an arbitrary generator. When `to_output` is
// set, recorded snapshots are to_output(t, rho) (e.g. a change of frame).
RhoSeries integrate_rho(const Generator& gen, const Rho& rho0, const TimeGrid& grid, const PropagationOptions& opts,
                        const std::function<Mat(double, const Mat&)>& to_output = {});

// The propagators below step the interaction-picture equation (free chain
// evolution removed) and report lab-frame states, so the step size is set
// by the memory coefficients rather than by the cavity frequencies.
RhoSeries propagate_zero_t(const CavityChainModel& model, const ZeroTCoeffs& coeffs, const Rho& rho0, const TimeGrid& grid,
                           const PropagationOptions& opts = {});
RhoSeries propagate_finite_t(const CavityChainModel& model, const MasterCoeffsFT& mcoeffs, const Rho& rho0,
                             const TimeGrid& grid, const PropagationOptions& opts = {});
RhoSeries propagate_lindblad(const CavityChainModel& model, double rate, double nbar, const Rho& rho0, const TimeGrid& grid,
                             const PropagationOptions& opts = {});

// Lindblad rate matched to a memory kernel: Gamma = 2 Re int_0^inf alpha(tau) dtau.
// For the OU kernel (gamma/2) e^{-gamma |tau|} this is 1 for every gamma.
double matched_markov_rate(const CorrelationKernel& kernel);

}  // namespace cavqsd
