#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "cavqsd/coeffs.hpp"
#include "cavqsd/hilbert.hpp"
#include "cavqsd/model.hpp"

// Linear (unnormalized) quantum state diffusion. Single trajectories are not
// physical states; only the ensemble mean of |psi><psi| is.
namespace cavqsd {

// Seed of trajectory `index` under `master_seed`. Depends on nothing else,
// so ensembles are reproducible whatever the thread count or order.
std::uint64_t trajectory_seed(std::uint64_t master_seed, std::uint64_t index);

// Complex Gaussian noise samples on t_j = j * step, j = 0..n_points-1, with
// M[z_t] = M[z_t z_s] = 0 and M[z_t z_s^*] = alpha(t, s).
class NoiseSampler {
public:
    NoiseSampler(const CorrelationKernel& kernel, double step, int n_points);

    // Returns z_t (not conjugated).
    std::vector<cplx> sample(std::mt19937_64& rng) const;
    bool uses_ou_recursion() const { return ou_; }
    int n_points() const { return n_; }
    double step() const { return step_; }

private:
    int n_ = 0;
    double step_ = 0.0;
    bool ou_ = false;
    bool zero_ = false;
    double decay_ = 0.0, start_sd_ = 0.0, innov_sd_ = 0.0;
    Mat chol_;
};

// Noises of one trajectory, stored as the conjugates z*_t, w*_t that enter
// the trajectory equation. Samples sit on the half-step grid of the
// propagation grid (2 n_steps + 1 points) so every Runge-Kutta stage
// lands on a sample.
struct NoisePath {
    double step = 0.0;
    std::vector<cplx> z_conj;
    std::vector<cplx> w_conj;  // empty at zero temperature
    std::uint64_t master_seed = 0;
    std::uint64_t index = 0;
};

NoisePath sample_noise(const CorrelationKernel& kernel, const TimeGrid& grid, std::uint64_t master_seed,
                       std::uint64_t index = 0);
// z from alpha_1 and, when the bath has a heating channel, an independent w
// from alpha_2.
NoisePath sample_noises(const BathSpec& bath, const TimeGrid& grid, std::uint64_t master_seed, std::uint64_t index = 0);

struct TrajectoryResult {
    std::vector<double> times;
    std::vector<Ket> states;
    std::vector<double> norms_sq;
};

// Trajectories abort with NumericalError when |psi|^2 exceeds this.
inline constexpr double kNormOverflow = 1e6;

TrajectoryResult propagate_trajectory_zero_t(const CavityChainModel& model, const ZeroTCoeffs& coeffs, const NoisePath& noise,
                                             const Ket& psi0, const TimeGrid& grid, int sample_every = 1);
TrajectoryResult propagate_trajectory_finite_t(const CavityChainModel& model, const FiniteTCoeffs& fcoeffs,
                                               const NoisePath& noise, const Ket& psi0, const TimeGrid& grid,
                                               int sample_every = 1);

struct EnsembleResult {
    int n_traj = 0;
    std::vector<double> times;
    std::vector<Rho> rho;              // (1/n) sum |psi><psi|
    std::vector<double> mean_norm_sq;  // convergence diagnostic
};

// (1/n) sum_k |psi_k(t)><psi_k(t)| over trajectories sharing a time base.
EnsembleResult ensemble_average(const std::vector<TrajectoryResult>& trajectories);

struct EnsembleOptions {
    int n_traj = 1000;
    std::uint64_t seed = 1;
    int threads = 0;
    int sample_every = 1;
    std::vector<int> sample_steps;  // overrides sample_every when non-empty
    // Partial ensembles (first n trajectories) reported through the callback.
    std::vector<int> checkpoints;
};

using CheckpointCallback = std::function<void(const EnsembleResult&)>;

// Runs trajectories 0..n_traj-1 and averages them. Accumulation is done in
// fixed blocks reduced in index order, so the result is bit-identical for
// any thread count.
EnsembleResult run_ensemble_zero_t(const CavityChainModel& model, const BathSpec& bath, const ZeroTCoeffs& coeffs,
                                   const Ket& psi0, const TimeGrid& grid, const EnsembleOptions& opts,
                                   const CheckpointCallback& on_checkpoint = {});
EnsembleResult run_ensemble_finite_t(const CavityChainModel& model, const BathSpec& bath, const FiniteTCoeffs& fcoeffs,
                                     const Ket& psi0, const TimeGrid& grid, const EnsembleOptions& opts,
                                     const CheckpointCallback& on_checkpoint = {});

}  // namespace cavqsd
