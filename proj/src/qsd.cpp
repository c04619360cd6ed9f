#include "cavqsd/qsd.hpp"

#include <algorithm>
#include <optional>
#include <cmath>
#include <sstream>

#include "cavqsd/parallel.hpp"
#include "cavqsd/propagators.hpp"

namespace cavqsd {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Complex Gaussian with E|xi|^2 = 1, E xi^2 = 0.
cplx standard_complex_normal(std::mt19937_64& rng) {
    std::normal_distribution<double> nd(0.0, std::sqrt(0.5));
    double re = nd(rng);
    double im = nd(rng);
    return {re, im};
}

}  // namespace

std::uint64_t trajectory_seed(std::uint64_t master_seed, std::uint64_t index) {
    return splitmix64(splitmix64(master_seed) ^ splitmix64(index + 0x632BE59BD9B4E019ULL));
}

NoiseSampler::NoiseSampler(const CorrelationKernel& kernel, double step, int n_points) : n_(n_points), step_(step) {
    if (n_points < 1 || !(step > 0.0)) throw std::invalid_argument("NoiseSampler: need n_points >= 1 and step > 0");
    if (kernel.is_markov()) throw std::invalid_argument("NoiseSampler: a delta-correlated kernel has no sampled path; use a finite-memory kernel");
    if (kernel.is_zero()) {
        zero_ = true;
        return;
    }
    const cplx c = kernel.scale();
    if (kernel.is_ou() && c.real() > 0.0 && std::abs(c.imag()) < 1e-15 * c.real()) {
        // Exact discretization of the complex OU process: stationary start and
        // z_{k+1} = e^{-gamma h} z_k + xi_k.
        ou_ = true;
        const double g = kernel.ou_gamma();
        const double var0 = c.real() * 0.5 * g;
        decay_ = std::exp(-g * step);
        start_sd_ = std::sqrt(var0);
        innov_sd_ = std::sqrt(var0 * (1.0 - decay_ * decay_));
        return;
    }
    Mat cov(n_, n_);
    for (int j = 0; j < n_; ++j)
        for (int k = 0; k < n_; ++k) cov(j, k) = kernel(j * step, k * step);
    // Tiny diagonal shift absorbs round-off on semidefinite covariances.
    const double shift = 1e-12 * cov.diagonal().real().cwiseAbs().maxCoeff();
    cov.diagonal().array() += shift;
    Eigen::LLT<Mat> llt(cov);
    if (llt.info() != Eigen::Success)
        throw NumericalError("noise covariance is not positive semidefinite on the sampling grid (Cholesky failed)");
    chol_ = llt.matrixL();
}

std::vector<cplx> NoiseSampler::sample(std::mt19937_64& rng) const {
    std::vector<cplx> z(static_cast<std::size_t>(n_), cplx{0.0, 0.0});
    if (zero_) return z;
    if (ou_) {
        z[0] = start_sd_ * standard_complex_normal(rng);
        for (int k = 1; k < n_; ++k) z[k] = decay_ * z[k - 1] + innov_sd_ * standard_complex_normal(rng);
        return z;
    }
    Vec xi(n_);
    for (int k = 0; k < n_; ++k) xi(k) = standard_complex_normal(rng);
    Vec out = chol_.triangularView<Eigen::Lower>() * xi;
    for (int k = 0; k < n_; ++k) z[k] = out(k);
    return z;
}

namespace {

std::vector<cplx> conjugated(std::vector<cplx> v) {
    for (auto& x : v) x = std::conj(x);
    return v;
}

NoisePath draw(const NoiseSampler& zs, const NoiseSampler* ws, double step, std::uint64_t master, std::uint64_t index) {
    std::mt19937_64 rng(trajectory_seed(master, index));
    NoisePath path;
    path.step = step;
    path.master_seed = master;
    path.index = index;
    path.z_conj = conjugated(zs.sample(rng));
    if (ws) path.w_conj = conjugated(ws->sample(rng));
    return path;
}

}  // namespace

NoisePath sample_noise(const CorrelationKernel& kernel, const TimeGrid& grid, std::uint64_t master_seed, std::uint64_t index) {
    NoiseSampler s(kernel, 0.5 * grid.dt(), 2 * grid.n_steps + 1);
    return draw(s, nullptr, s.step(), master_seed, index);
}

NoisePath sample_noises(const BathSpec& bath, const TimeGrid& grid, std::uint64_t master_seed, std::uint64_t index) {
    const double step = 0.5 * grid.dt();
    const int n = 2 * grid.n_steps + 1;
    NoiseSampler zs(bath.kernel1(), step, n);
    if (bath.is_zero_temperature()) return draw(zs, nullptr, step, master_seed, index);
    NoiseSampler ws(bath.kernel2(), step, n);
    return draw(zs, &ws, step, master_seed, index);
}

namespace {

// Trajectory-independent part of the drift, tabulated on the half-step grid.
// Trajectories are stepped in the interaction picture of the chain
// Hamiltonian, where a_j(t) = sum_k U_jk(t) a_k, so every operator in the
// drift is a weighted sum of the bare a_k or a_k^dag.
struct Drift {
    SystemOperators ops;
    FreeEvolution free;
    TimeGrid grid;
    std::vector<Vec> lw;  // weights of a_k in L(t)
    std::vector<Vec> kw;  // weights of a_k in sum_i P_i a_i(t)
    std::vector<Vec> xw;  // weights of a_k^dag in sum_i X_i a_i(t)^dag; empty at zero temperature

    Drift(const CavityChainModel& model, const HilbertSpec& spec, const TimeGrid& g)
        : ops(model, spec), free(model, spec), grid(g) {}

    Mat mode_propagator_half(int j) const { return free.mode_propagator(0.5 * j * grid.dt()); }
};

// Noise-convolution scalars int_0^t K(t, s') n(s') ds' on the half-step
// grid. K[k] holds the kernel row at node k; midpoints are interpolated.
std::vector<cplx> convolve_half(const std::vector<Vec>& K, const std::vector<cplx>& noise_half, const TimeGrid& grid) {
    const double h = grid.dt();
    std::vector<cplx> nodes(static_cast<std::size_t>(grid.n_nodes()));
    for (int k = 0; k <= grid.n_steps; ++k) {
        const Vec& row = K[static_cast<std::size_t>(k)];
        nodes[static_cast<std::size_t>(k)] = integrate_nodes(
            0, k, h, [&](int j) { return row(j) * noise_half[static_cast<std::size_t>(2 * j)]; }, cplx{0.0, 0.0});
    }
    std::vector<cplx> half(static_cast<std::size_t>(2 * grid.n_steps + 1));
    const std::span<const cplx> table(nodes);
    for (int j = 0; j <= 2 * grid.n_steps; ++j)
        half[static_cast<std::size_t>(j)] =
            (j % 2 == 0) ? nodes[static_cast<std::size_t>(j / 2)] : interpolate_cubic(table, h, 0.5 * j * h);
    return half;
}

struct NoiseTerms {
    const std::vector<cplx>* z = nullptr;
    const std::vector<cplx>* w = nullptr;
    std::vector<cplx> c1, c2;  // finite temperature only
};

// (L z* + L^dag w* - L^dag Obar_1 - L Obar_2) psi, interaction picture.
Vec rhs(const Drift& d, const NoiseTerms& nt, int j, const Vec& psi) {
    const auto& ops = d.ops;
    const auto ju = static_cast<std::size_t>(j);
    const Vec& lw = d.lw[ju];
    const Vec& kw = d.kw[ju];
    const std::size_t n = ops.a.size();
    Vec lpsi = Vec::Zero(psi.size());
    Vec o1 = Vec::Zero(psi.size());
    for (std::size_t k = 0; k < n; ++k) {
        Vec ak = ops.a[k] * psi;
        lpsi += lw(static_cast<Eigen::Index>(k)) * ak;
        o1 += kw(static_cast<Eigen::Index>(k)) * ak;
    }
    Vec out = (*nt.z)[ju] * lpsi;
    if (!d.xw.empty()) {
        const Vec& xw = d.xw[ju];
        o1 += (nt.c1[ju] - (*nt.w)[ju]) * psi;  // L^dag w* psi folded into the L^dag product
        Vec o2 = nt.c2[ju] * psi;
        for (std::size_t k = 0; k < n; ++k) o2 += xw(static_cast<Eigen::Index>(k)) * (ops.adag[k] * psi);
        for (std::size_t k = 0; k < n; ++k) out -= lw(static_cast<Eigen::Index>(k)) * (ops.a[k] * o2);
    }
    for (std::size_t k = 0; k < n; ++k) out -= std::conj(lw(static_cast<Eigen::Index>(k))) * (ops.adag[k] * o1);
    return out;
}

// RK4 on the propagation grid; stages use half-grid samples 2k, 2k+1, 2k+2.
template <typename Sink>
void integrate(const Drift& d, const NoiseTerms& nt, Vec psi, const std::vector<int>& steps, Sink&& sink) {
    const TimeGrid& grid = d.grid;
    const double h = grid.dt();
    std::size_t next = 0;
    if (steps[next] == 0) sink(steps[next++], psi);
    for (int k = 0; k < grid.n_steps; ++k) {
        Vec k1 = rhs(d, nt, 2 * k, psi);
        Vec k2 = rhs(d, nt, 2 * k + 1, psi + (0.5 * h) * k1);
        Vec k3 = rhs(d, nt, 2 * k + 1, psi + (0.5 * h) * k2);
        Vec k4 = rhs(d, nt, 2 * k + 2, psi + h * k3);
        psi += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        const double nrm = psi.squaredNorm();
        if (!(nrm <= kNormOverflow)) {
            std::ostringstream os;
            os << "trajectory norm^2 " << nrm << " exceeded " << kNormOverflow << " at t=" << grid.time(k + 1)
               << "; reduce the time step";
            throw NumericalError(os.str());
        }
        if (next < steps.size() && steps[next] == k + 1) sink(steps[next++], psi);
    }
}

void check_noise(const NoisePath& noise, const TimeGrid& grid, bool finite) {
    const auto n = static_cast<std::size_t>(2 * grid.n_steps + 1);
    if (noise.z_conj.size() != n || std::abs(noise.step - 0.5 * grid.dt()) > 1e-12 * grid.dt())
        throw std::invalid_argument("noise path does not match the propagation grid (need samples at half steps)");
    if (finite && !noise.w_conj.empty() && noise.w_conj.size() != n)
        throw std::invalid_argument("second noise path does not match the propagation grid");
}

void check_state(const CavityChainModel& model, const Ket& psi0) {
    if (model.n_cavities() != psi0.spec.n_cavities()) throw std::invalid_argument("initial state does not match the model size");
}

Drift zero_t_drift(const CavityChainModel& model, const ZeroTCoeffs& coeffs, const HilbertSpec& spec, const TimeGrid& grid) {
    if (coeffs.grid.t_max + 1e-9 < grid.t_max) throw std::invalid_argument("coefficient tables end before the trajectory grid");
    Drift d(model, spec, grid);
    const Vec l = model.coupling_vector();
    for (int j = 0; j <= 2 * grid.n_steps; ++j) {
        const Mat Ut = d.mode_propagator_half(j).transpose();
        d.lw.push_back(Ut * l);
        d.kw.push_back(Ut * coeffs.at(0.5 * j * grid.dt()));
    }
    return d;
}

Drift finite_t_drift(const CavityChainModel& model, const FiniteTCoeffs& fc, const HilbertSpec& spec, const TimeGrid& grid) {
    if (!(fc.grid == grid)) throw std::invalid_argument("finite-temperature trajectories need coefficients on the trajectory grid");
    if (fc.Q.size() != static_cast<std::size_t>(grid.n_nodes()))
        throw std::invalid_argument("finite-temperature coefficients lack the noise-convolution tables");
    Drift d(model, spec, grid);
    const Vec l = model.coupling_vector();
    for (int j = 0; j <= 2 * grid.n_steps; ++j) {
        const double t = 0.5 * j * grid.dt();
        const Mat U = d.mode_propagator_half(j);
        d.lw.push_back(U.transpose() * l);
        d.kw.push_back(U.transpose() * fc.P_at(t));
        d.xw.push_back(U.adjoint() * fc.X_at(t));
    }
    return d;
}

NoiseTerms noise_terms(const Drift& d, const FiniteTCoeffs* fc, const NoisePath& noise, std::vector<cplx>& zero_w) {
    NoiseTerms nt;
    nt.z = &noise.z_conj;
    if (fc) {
        if (noise.w_conj.empty()) {
            zero_w.assign(noise.z_conj.size(), cplx{0.0, 0.0});
            nt.w = &zero_w;
        } else {
            nt.w = &noise.w_conj;
        }
        nt.c1 = convolve_half(fc->Q, *nt.w, d.grid);
        nt.c2 = convolve_half(fc->Y, *nt.z, d.grid);
    }
    return nt;
}

TrajectoryResult run_single(const Drift& d, const FiniteTCoeffs* fc, const NoisePath& noise, const Ket& psi0, int every) {
    std::vector<cplx> zero_w;
    NoiseTerms nt = noise_terms(d, fc, noise, zero_w);
    TrajectoryResult out;
    integrate(d, nt, psi0.amplitudes, recorded_steps(d.grid.n_steps, every, {}), [&](int k, const Vec& psi) {
        const double t = d.grid.time(k);
        out.times.push_back(t);
        out.states.push_back(Ket{psi0.spec, d.free.propagator(t) * psi});
        out.norms_sq.push_back(psi.squaredNorm());
    });
    return out;
}

}  // namespace

TrajectoryResult propagate_trajectory_zero_t(const CavityChainModel& model, const ZeroTCoeffs& coeffs, const NoisePath& noise,
                                             const Ket& psi0, const TimeGrid& grid, int sample_every) {
    check_state(model, psi0);
    check_noise(noise, grid, false);
    Drift d = zero_t_drift(model, coeffs, psi0.spec, grid);
    return run_single(d, nullptr, noise, psi0, sample_every);
}

TrajectoryResult propagate_trajectory_finite_t(const CavityChainModel& model, const FiniteTCoeffs& fcoeffs,
                                               const NoisePath& noise, const Ket& psi0, const TimeGrid& grid,
                                               int sample_every) {
    check_state(model, psi0);
    check_noise(noise, grid, true);
    Drift d = finite_t_drift(model, fcoeffs, psi0.spec, grid);
    return run_single(d, &fcoeffs, noise, psi0, sample_every);
}

namespace {

// Running sums over a set of trajectories. Only the lower triangle of each
// outer-product sum is accumulated; the upper one is filled on finalize.
struct Accumulator {
    std::vector<Mat> sums;
    std::vector<double> norm_sums;
    int count = 0;

    Accumulator(std::size_t n_samples, Eigen::Index dim)
        : sums(n_samples, Mat::Zero(dim, dim)), norm_sums(n_samples, 0.0) {}

    void add(std::size_t sample, const Vec& psi) {
        sums[sample].selfadjointView<Eigen::Lower>().rankUpdate(psi);
        norm_sums[sample] += psi.squaredNorm();
    }
    void merge(const Accumulator& o) {
        for (std::size_t s = 0; s < sums.size(); ++s) {
            sums[s] += o.sums[s];
            norm_sums[s] += o.norm_sums[s];
        }
        count += o.count;
    }
};

// `free` (optional) maps interaction-picture sums back to the lab frame.
EnsembleResult finalize(const Accumulator& acc, const std::vector<double>& times, const HilbertSpec& spec,
                        const FreeEvolution* free) {
    EnsembleResult out;
    out.n_traj = acc.count;
    out.times = times;
    const double inv = 1.0 / acc.count;
    for (std::size_t s = 0; s < acc.sums.size(); ++s) {
        Mat m = acc.sums[s].selfadjointView<Eigen::Lower>();
        m *= inv;
        out.rho.push_back(Rho{spec, free ? free->to_lab(times[s], m) : m});
        out.mean_norm_sq.push_back(acc.norm_sums[s] * inv);
    }
    return out;
}


constexpr int kBlockSize = 50;

EnsembleResult run_ensemble(const Drift& d, const FiniteTCoeffs* fc, const BathSpec& bath, const Ket& psi0,
                            const EnsembleOptions& opts, const CheckpointCallback& on_checkpoint) {
    if (opts.n_traj < 1) throw std::invalid_argument("ensemble needs at least one trajectory");
    const TimeGrid& grid = d.grid;
    const double step = 0.5 * grid.dt();
    const int n_half = 2 * grid.n_steps + 1;
    NoiseSampler zs(bath.kernel1(), step, n_half);
    std::optional<NoiseSampler> ws;
    if (fc && !bath.is_zero_temperature()) ws.emplace(bath.kernel2(), step, n_half);

    const std::vector<int> steps = recorded_steps(grid.n_steps, opts.sample_every, opts.sample_steps);
    std::vector<double> times;
    for (int k : steps) times.push_back(grid.time(k));
    const auto dim = static_cast<Eigen::Index>(psi0.spec.total_dim());

    // Fixed blocks of kBlockSize trajectories, so the summation order (and
    // hence every bit of the result) depends on neither threads nor
    // checkpoints. A checkpoint inside a block is served from a snapshot of
    // that block's partial sum.
    std::vector<int> marks;
    for (int c : opts.checkpoints)
        if (c > 0 && c < opts.n_traj) marks.push_back(c);
    std::sort(marks.begin(), marks.end());
    marks.erase(std::unique(marks.begin(), marks.end()), marks.end());
    std::vector<std::pair<int, int>> blocks;
    for (int b = 0; b < opts.n_traj; b += kBlockSize) blocks.emplace_back(b, std::min(opts.n_traj, b + kBlockSize));

    struct BlockSums {
        Accumulator acc;
        std::vector<std::pair<int, Accumulator>> snapshots;  // (trajectories done, partial sum)
    };
    auto run_block = [&](std::pair<int, int> range, BlockSums& out) {
        for (int idx = range.first; idx < range.second; ++idx) {
            NoisePath noise = draw(zs, ws ? &*ws : nullptr, step, opts.seed, static_cast<std::uint64_t>(idx));
            std::vector<cplx> zero_w;
            NoiseTerms nt = noise_terms(d, fc, noise, zero_w);
            std::size_t sample = 0;
            integrate(d, nt, psi0.amplitudes, steps, [&](int, const Vec& psi) { out.acc.add(sample++, psi); });
            ++out.acc.count;
            if (idx + 1 < range.second && std::binary_search(marks.begin(), marks.end(), idx + 1))
                out.snapshots.emplace_back(idx + 1, out.acc);
        }
    };

    Accumulator total(times.size(), dim);
    const int workers = std::max(1, resolve_threads(opts.threads));
    for (std::size_t first = 0; first < blocks.size(); first += static_cast<std::size_t>(workers)) {
        const std::size_t wave = std::min(blocks.size() - first, static_cast<std::size_t>(workers));
        std::vector<BlockSums> partial(wave, BlockSums{Accumulator(times.size(), dim), {}});
        parallel_for(wave, workers, [&](std::size_t b) { run_block(blocks[first + b], partial[b]); });
        for (std::size_t b = 0; b < wave; ++b) {
            if (on_checkpoint)
                for (const auto& [done, snap] : partial[b].snapshots) {
                    Accumulator upto = total;
                    upto.merge(snap);
                    on_checkpoint(finalize(upto, times, psi0.spec, &d.free));
                }
            total.merge(partial[b].acc);
            const int done = blocks[first + b].second;
            if (on_checkpoint && done < opts.n_traj && std::binary_search(marks.begin(), marks.end(), done))
                on_checkpoint(finalize(total, times, psi0.spec, &d.free));
        }
    }
    EnsembleResult result = finalize(total, times, psi0.spec, &d.free);
    if (on_checkpoint && std::find(opts.checkpoints.begin(), opts.checkpoints.end(), opts.n_traj) != opts.checkpoints.end())
        on_checkpoint(result);
    return result;
}

}  // namespace

EnsembleResult ensemble_average(const std::vector<TrajectoryResult>& trajectories) {
    if (trajectories.empty()) throw std::invalid_argument("ensemble_average: empty ensemble");
    const auto& first = trajectories.front();
    if (first.states.empty()) throw std::invalid_argument("ensemble_average: trajectory without samples");
    const HilbertSpec& spec = first.states.front().spec;
    Accumulator acc(first.states.size(), static_cast<Eigen::Index>(spec.total_dim()));
    for (const auto& tr : trajectories) {
        if (tr.times != first.times) throw std::invalid_argument("ensemble_average: trajectories do not share a time base");
        for (std::size_t s = 0; s < tr.states.size(); ++s) acc.add(s, tr.states[s].amplitudes);
        ++acc.count;
    }
    return finalize(acc, first.times, spec, nullptr);
}

EnsembleResult run_ensemble_zero_t(const CavityChainModel& model, const BathSpec& bath, const ZeroTCoeffs& coeffs,
                                   const Ket& psi0, const TimeGrid& grid, const EnsembleOptions& opts,
                                   const CheckpointCallback& on_checkpoint) {
    check_state(model, psi0);
    if (!bath.is_zero_temperature()) throw std::invalid_argument("run_ensemble_zero_t: bath has a heating channel");
    Drift d = zero_t_drift(model, coeffs, psi0.spec, grid);
    return run_ensemble(d, nullptr, bath, psi0, opts, on_checkpoint);
}

EnsembleResult run_ensemble_finite_t(const CavityChainModel& model, const BathSpec& bath, const FiniteTCoeffs& fcoeffs,
                                     const Ket& psi0, const TimeGrid& grid, const EnsembleOptions& opts,
                                     const CheckpointCallback& on_checkpoint) {
    check_state(model, psi0);
    Drift d = finite_t_drift(model, fcoeffs, psi0.spec, grid);
    return run_ensemble(d, &fcoeffs, bath, psi0, opts, on_checkpoint);
}

}  // namespace cavqsd
