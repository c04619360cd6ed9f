#include <doctest.h>

#include "cavqsd/observables.hpp"
#include "cavqsd/propagators.hpp"
#include "cavqsd/qsd.hpp"
#include "helpers.hpp"

using namespace cavqsd;

namespace {

CavityChainModel single(double omega) { return CavityChainModel{{omega}, {0.0}, Boundary::Open, {1.0}}; }

// Empirical M[z_t z_s^*] and M[z_t z_s] over many samples.
void check_noise_statistics(const CorrelationKernel& k, double step, int n_points) {
    NoiseSampler sampler(k, step, n_points);
    std::mt19937_64 rng(12345);
    const int samples = 20000;
    Mat cov = Mat::Zero(n_points, n_points), pseudo = Mat::Zero(n_points, n_points);
    for (int s = 0; s < samples; ++s) {
        const auto z = sampler.sample(rng);
        const Vec v = Eigen::Map<const Vec>(z.data(), n_points);
        cov += v * v.adjoint();
        pseudo += v * v.transpose();
    }
    cov /= samples;
    pseudo /= samples;
    // Monte-Carlo error ~ alpha(0)/sqrt(samples)
    const double tol = 6.0 * std::abs(k(0.0, 0.0)) / std::sqrt(double(samples));
    for (int i = 0; i < n_points; i += 3)
        for (int j = 0; j < n_points; j += 3) {
            CHECK(std::abs(cov(i, j) - k(i * step, j * step)) < tol);
            CHECK(std::abs(pseudo(i, j)) < tol);
        }
}

}  // namespace

TEST_CASE("trajectory seeds depend only on (master, index)") {
    CHECK(trajectory_seed(7, 3) == trajectory_seed(7, 3));
    CHECK(trajectory_seed(7, 3) != trajectory_seed(7, 4));
    CHECK(trajectory_seed(7, 3) != trajectory_seed(8, 3));
    const auto a = sample_noise(CorrelationKernel::ornstein_uhlenbeck(1.0), TimeGrid(1.0, 10), 99, 5);
    const auto b = sample_noise(CorrelationKernel::ornstein_uhlenbeck(1.0), TimeGrid(1.0, 10), 99, 5);
    CHECK(a.z_conj == b.z_conj);
    CHECK(a.z_conj.size() == 21);
}

TEST_CASE("OU noise has the kernel as covariance and no pseudo-covariance") {
    const auto k = CorrelationKernel::ornstein_uhlenbeck(0.7);
    CHECK(NoiseSampler(k, 0.1, 4).uses_ou_recursion());
    check_noise_statistics(k, 0.1, 24);
}

TEST_CASE("tabulated noise through the Cholesky factor") {
    std::vector<cplx> table;
    for (int i = 0; i < 40; ++i) table.push_back(std::exp(cplx{-0.3 * i * 0.1, -1.0 * i * 0.1}));
    const auto k = CorrelationKernel::tabulated(0.1, table);
    CHECK_FALSE(NoiseSampler(k, 0.1, 4).uses_ou_recursion());
    check_noise_statistics(k, 0.1, 20);
}

TEST_CASE("without bath coupling a trajectory is plain unitary evolution") {
    const CavityChainModel m{{1.0, 1.2}, {0.3, 0.0}, Boundary::Open, {0.0, 0.0}};
    HilbertSpec spec({4, 4});
    const TimeGrid grid(2.0, 100);
    const auto coeffs = solve_zero_t_ou_fast(m, CorrelationKernel::ornstein_uhlenbeck(1.0), grid);
    const Ket psi0 = coherent_ket(spec, 0, 0.4);
    const auto noise = sample_noise(CorrelationKernel::ornstein_uhlenbeck(1.0), grid, 1, 0);
    const auto tr = propagate_trajectory_zero_t(m, coeffs, noise, psi0, grid, 100);
    FreeEvolution free(m, spec);
    const Vec ref = Mat(free.propagator(2.0)) * psi0.amplitudes;
    CHECK((tr.states.back().amplitudes - ref).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(tr.norms_sq.back() == doctest::Approx(1.0));
}

TEST_CASE("ensembles are bit-identical for any thread count and consistent with checkpoints") {
    const auto m = single(1.0);
    HilbertSpec spec({6});
    const TimeGrid grid(2.0, 40);
    const auto k = CorrelationKernel::ornstein_uhlenbeck(0.5);
    const auto coeffs = solve_zero_t_ou_fast(m, k, grid);
    const Ket psi0 = coherent_ket(spec, 0, 0.8);
    EnsembleOptions o;
    o.n_traj = 130;
    o.seed = 42;
    o.sample_every = 10;
    o.checkpoints = {60};
    o.threads = 1;
    EnsembleResult at60;
    const auto one = run_ensemble_zero_t(m, BathSpec::zero_temperature(k), coeffs, psi0, grid, o,
                                         [&](const EnsembleResult& r) { at60 = r; });
    o.threads = 3;
    o.checkpoints.clear();
    const auto three = run_ensemble_zero_t(m, BathSpec::zero_temperature(k), coeffs, psi0, grid, o);
    REQUIRE(one.rho.size() == three.rho.size());
    for (std::size_t i = 0; i < one.rho.size(); ++i) CHECK((one.rho[i].matrix - three.rho[i].matrix).cwiseAbs().maxCoeff() == 0.0);
    o.n_traj = 60;
    const auto sixty = run_ensemble_zero_t(m, BathSpec::zero_temperature(k), coeffs, psi0, grid, o);
    REQUIRE(at60.n_traj == 60);
    for (std::size_t i = 0; i < sixty.rho.size(); ++i) CHECK((at60.rho[i].matrix - sixty.rho[i].matrix).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("zero-T ensemble reproduces the master equation") {
    const CavityChainModel m{{1.0, 1.0}, {0.5, 0.0}, Boundary::Open, {1.0, 1.0}};
    HilbertSpec spec({5, 5});
    const TimeGrid grid(3.0, 60);
    const auto k = CorrelationKernel::ornstein_uhlenbeck(0.5);
    const auto coeffs = solve_zero_t_ou_fast(m, k, grid);
    const Ket psi0 = coherent_ket(spec, 0, 0.7);
    EnsembleOptions o;
    o.n_traj = 2000;
    o.seed = 3;
    o.sample_every = 20;
    const auto ens = run_ensemble_zero_t(m, BathSpec::zero_temperature(k), coeffs, psi0, grid, o);
    PropagationOptions po;
    po.sample_every = 20;
    const auto me = propagate_zero_t(m, coeffs, projector(psi0), grid, po);
    REQUIRE(ens.rho.size() == me.states.size());
    for (std::size_t i = 0; i < ens.rho.size(); ++i) {
        CHECK(trace_distance(ens.rho[i].matrix, me.states[i].matrix) < 0.05);
        CHECK(std::abs(ens.mean_norm_sq[i] - 1.0) < 0.1);
    }
}

TEST_CASE("finite-T ensemble reproduces the finite-T master equation") {
    const auto m = single(1.0);
    HilbertSpec spec({7});
    const TimeGrid grid(3.0, 60);
    const auto bath = BathSpec::finite_temperature(CorrelationKernel::ornstein_uhlenbeck(1.0), 0.5);
    const auto fc = solve_finite_t(m, bath, grid);
    const auto mc = solve_master_coeffs_ft(m, bath, grid, 3.0);
    const Ket psi0 = coherent_ket(spec, 0, 0.5);
    EnsembleOptions o;
    o.n_traj = 3000;
    o.seed = 11;
    o.sample_every = 20;
    const auto ens = run_ensemble_finite_t(m, bath, fc, psi0, grid, o);
    PropagationOptions po;
    po.sample_every = 20;
    const auto me = propagate_finite_t(m, mc, projector(psi0), grid, po);
    REQUIRE(ens.rho.size() == me.states.size());
    for (std::size_t i = 0; i < ens.rho.size(); ++i) CHECK(trace_distance(ens.rho[i].matrix, me.states[i].matrix) < 0.06);
    // heating is visible: the occupation grows above the initial 0.25
    CHECK(mode_occupations(me.states.back())[0] > 0.3);
}

TEST_CASE("Markov kernels are rejected for trajectories") {
    CHECK_THROWS(sample_noise(CorrelationKernel::markov_delta(1.0), TimeGrid(1.0, 10), 1));
}
