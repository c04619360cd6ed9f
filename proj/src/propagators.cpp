#include "cavqsd/propagators.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace cavqsd {

SystemOperators::SystemOperators(const CavityChainModel& model, const HilbertSpec& spec_)
    : spec(spec_), H(build_hamiltonian(model, spec_)), L(build_collective_L(model, spec_)), Ldag(L.adjoint()) {
    for (int i = 0; i < spec.n_cavities(); ++i) {
        a.push_back(annihilation_op(spec, i));
        adag.emplace_back(a.back().adjoint());
    }
}

FreeEvolution::FreeEvolution(const CavityChainModel& model, const HilbertSpec& spec)
    : dim_(static_cast<Eigen::Index>(spec.total_dim())) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(model.single_particle_matrix());
    omega_vectors_ = es.eigenvectors();
    omega_values_ = es.eigenvalues();

    std::map<int, std::vector<Eigen::Index>> by_number;
    for (std::size_t f = 0; f < spec.total_dim(); ++f) {
        int n = 0;
        for (int c = 0; c < spec.n_cavities(); ++c) n += spec.occupation(f, c);
        by_number[n].push_back(static_cast<Eigen::Index>(f));
    }
    const Mat H = Mat(build_hamiltonian(model, spec));
    for (auto& [n, idx] : by_number) {
        const auto m = static_cast<Eigen::Index>(idx.size());
        Mat block(m, m);
        for (Eigen::Index r = 0; r < m; ++r)
            for (Eigen::Index c = 0; c < m; ++c) block(r, c) = H(idx[static_cast<std::size_t>(r)], idx[static_cast<std::size_t>(c)]);
        Eigen::SelfAdjointEigenSolver<Mat> bs(block);
        sectors_.push_back(idx);
        sector_vectors_.push_back(bs.eigenvectors());
        sector_energies_.push_back(bs.eigenvalues());
    }
}

Mat FreeEvolution::mode_propagator(double t) const {
    Eigen::VectorXcd phases = (-I * t * omega_values_.cast<cplx>()).array().exp();
    Mat V = omega_vectors_.cast<cplx>();
    return V * phases.asDiagonal() * V.transpose();
}

SpMat FreeEvolution::propagator(double t) const {
    std::vector<Eigen::Triplet<cplx>> trip;
    for (std::size_t s = 0; s < sectors_.size(); ++s) {
        const Mat& V = sector_vectors_[s];
        Eigen::VectorXcd phases = (-I * t * sector_energies_[s].cast<cplx>()).array().exp();
        Mat U = V * phases.asDiagonal() * V.adjoint();
        const auto& idx = sectors_[s];
        for (Eigen::Index r = 0; r < U.rows(); ++r)
            for (Eigen::Index c = 0; c < U.cols(); ++c)
                trip.emplace_back(idx[static_cast<std::size_t>(r)], idx[static_cast<std::size_t>(c)], U(r, c));
    }
    SpMat out(dim_, dim_);
    out.setFromTriplets(trip.begin(), trip.end());
    return out;
}

Mat FreeEvolution::to_lab(double t, const Mat& rho_interaction) const {
    // Block by block over excitation-number sectors; empty sectors are skipped.
    const std::size_t ns = sectors_.size();
    std::vector<Mat> U(ns);
    std::vector<std::size_t> live;
    for (std::size_t s = 0; s < ns; ++s) {
        double w = 0.0;
        for (Eigen::Index i : sectors_[s]) w += rho_interaction.row(i).squaredNorm();
        if (w == 0.0) continue;
        live.push_back(s);
        const Eigen::VectorXcd phases = (-I * t * sector_energies_[s].cast<cplx>()).array().exp();
        U[s] = sector_vectors_[s] * phases.asDiagonal() * sector_vectors_[s].adjoint();
    }
    Mat out = Mat::Zero(dim_, dim_);
    for (std::size_t a : live)
        for (std::size_t b : live) {
            const Mat block = rho_interaction(sectors_[a], sectors_[b]);
            out(sectors_[a], sectors_[b]) = U[a] * block * U[b].adjoint();
        }
    return 0.5 * (out + out.adjoint());
}

namespace {

SpMat combine(const std::vector<SpMat>& ops, const Vec& coeffs, Eigen::Index dim) {
    SpMat out(dim, dim);
    for (std::size_t j = 0; j < ops.size(); ++j) {
        cplx c = coeffs(static_cast<Eigen::Index>(j));
        if (c != cplx{0.0, 0.0}) out += c * ops[j];
    }
    return out;
}

Mat commutator_h(const SpMat& H, const Mat& rho) { return -I * (H * rho - rho * H); }

// T + T^dag with T = [K rho, L^dag].
Mat zero_t_dissipator(const SpMat& L, const SpMat& K, const Mat& rho) {
    const SpMat Ld = L.adjoint();
    Mat krho = K * rho;
    Mat T = krho * Ld - Ld * krho;
    return T + T.adjoint();
}

// T + T^dag with T = [AF rho, L^dag] + [rho AG, L^dag] + [AU rho, L] + [rho AV, L].
Mat finite_t_dissipator(const SpMat& L, const SpMat& AF, const SpMat& AG, const SpMat& AU, const SpMat& AV, const Mat& rho) {
    const SpMat Ld = L.adjoint();
    Mat x1 = AF * rho + rho * AG;
    Mat x2 = AU * rho + rho * AV;
    Mat T = x1 * Ld - Ld * x1 + x2 * L - L * x2;
    return T + T.adjoint();
}

Mat lindblad_dissipator(const SpMat& L, double rate, double nbar, const Mat& rho) {
    Mat out = Mat::Zero(rho.rows(), rho.cols());
    if (rate == 0.0) return out;
    const SpMat Ld = L.adjoint();
    Mat lr = L * rho;
    Mat ldl_rho = Ld * lr;
    out += rate * (nbar + 1.0) * (lr * Ld - 0.5 * (ldl_rho + ldl_rho.adjoint()));
    if (nbar > 0.0) {
        Mat ldr = Ld * rho;
        Mat lld_rho = L * ldr;
        out += rate * nbar * (ldr * L - 0.5 * (lld_rho + lld_rho.adjoint()));
    }
    return out;
}

struct FiniteTWeights {
    Vec F, G, U, V;
};

// sum_i l_i F_ij etc.: weights of a_j (F, G) and a_j^dag (U, V).
FiniteTWeights finite_t_weights(const Vec& l, const MasterCoeffsFT::Snapshot& c) {
    return {c.F.transpose() * l, c.G.transpose() * l, c.U.transpose() * l.conjugate(), c.V.transpose() * l.conjugate()};
}

}  // namespace

Mat zero_t_rhs(const SystemOperators& ops, const Vec& P, const Mat& rho) {
    // sum_ij l_i P_j^* [a_i, rho a_j^dag] + h.c.
    return commutator_h(ops.H, rho) + zero_t_dissipator(ops.L, combine(ops.a, P, rho.rows()), rho);
}

Mat finite_t_rhs(const SystemOperators& ops, const Vec& l, const MasterCoeffsFT::Snapshot& c, const Mat& rho) {
    const Eigen::Index dim = rho.rows();
    const FiniteTWeights w = finite_t_weights(l, c);
    return commutator_h(ops.H, rho) + finite_t_dissipator(ops.L, combine(ops.a, w.F, dim), combine(ops.a, w.G, dim),
                                                          combine(ops.adag, w.U, dim), combine(ops.adag, w.V, dim), rho);
}

Mat lindblad_rhs(const SystemOperators& ops, double rate, double nbar, const Mat& rho) {
    return commutator_h(ops.H, rho) + lindblad_dissipator(ops.L, rate, nbar, rho);
}

Mat superoperator_matrix(const std::function<Mat(const Mat&)>& map, Eigen::Index dim) {
    Mat sup(dim * dim, dim * dim);
    Mat basis = Mat::Zero(dim, dim);
    for (Eigen::Index j = 0; j < dim; ++j)
        for (Eigen::Index i = 0; i < dim; ++i) {
            basis(i, j) = 1.0;
            Mat img = map(basis);
            basis(i, j) = 0.0;
            sup.col(j * dim + i) = Eigen::Map<const Vec>(img.data(), dim * dim);
        }
    return sup;
}

std::vector<int> recorded_steps(int n_steps, int sample_every, const std::vector<int>& sample_steps) {
    std::vector<int> out;
    if (!sample_steps.empty()) {
        for (int k : sample_steps)
            if (k < 0 || k > n_steps) throw std::invalid_argument("sample step outside the time grid");
        out = sample_steps;
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }
    const int every = std::max(1, sample_every);
    for (int k = 0; k <= n_steps; ++k)
        if (k == 0 || k % every == 0 || k == n_steps) out.push_back(k);
    return out;
}

RhoSeries integrate_rho(const Generator& gen, const Rho& rho0, const TimeGrid& grid, const PropagationOptions& opts,
                        const std::function<Mat(double, const Mat&)>& to_output) {
    RhoSeries out;
    const double h = grid.dt();
    const std::vector<int> steps = recorded_steps(grid.n_steps, opts.sample_every, opts.sample_steps);
    std::size_t next = 0;
    const cplx tr0 = rho0.trace();
    auto record = [&](int k, const Mat& rho) {
        const double t = grid.time(k);
        out.times.push_back(t);
        out.states.push_back(Rho{rho0.spec, to_output ? to_output(t, rho) : rho});
        const Rho& r = out.states.back();
        out.max_trace_drift = std::max(out.max_trace_drift, std::abs(r.trace() - tr0));
        out.max_hermiticity_error = std::max(out.max_hermiticity_error, r.hermiticity_error());
        if (opts.monitor_positivity) {
            double ev = r.min_eigenvalue();
            out.min_eigenvalues.push_back(ev);
            if (ev < -1e-6) {
                std::ostringstream os;
                os << "density matrix eigenvalue " << ev << " at t=" << t << " (truncation or step may be too coarse)";
                warn(os.str());
            }
        }
    };
    Mat rho = rho0.matrix;
    if (steps[next] == 0) record(steps[next++], rho);
    for (int k = 0; k < grid.n_steps; ++k) {
        const double t = grid.time(k);
        Mat k1 = gen(t, rho);
        Mat k2 = gen(t + 0.5 * h, rho + (0.5 * h) * k1);
        Mat k3 = gen(t + 0.5 * h, rho + (0.5 * h) * k2);
        Mat k4 = gen(t + h, rho + h * k3);
        rho += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!rho.allFinite()) throw NumericalError("density-matrix propagation diverged at t=" + std::to_string(t + h));
        if (next < steps.size() && steps[next] == k + 1) record(steps[next++], rho);
    }
    return out;
}

namespace {

void check_spec(const CavityChainModel& model, const Rho& rho0) {
    if (model.n_cavities() != rho0.spec.n_cavities()) throw std::invalid_argument("initial state does not match the model size");
}

void check_coverage(double coeff_t_max, const TimeGrid& grid, const char* who) {
    if (coeff_t_max + 1e-9 < grid.t_max) {
        std::ostringstream os;
        os << who << ": coefficient tables end at t=" << coeff_t_max << " but propagation runs to t=" << grid.t_max;
        throw std::invalid_argument(os.str());
    }
}

struct ModeOps {
    std::vector<SpMat> a, adag;
    Eigen::Index dim = 0;
};

// Basis states with total excitation number up to the largest one present
// in the support of rho0. Generators that never raise the total number keep
// the state inside this set exactly.
std::vector<Eigen::Index> reachable_states(const Rho& rho0) {
    const HilbertSpec& spec = rho0.spec;
    auto number = [&](std::size_t f) {
        int n = 0;
        for (int c = 0; c < spec.n_cavities(); ++c) n += spec.occupation(f, c);
        return n;
    };
    int n_max = 0;
    for (Eigen::Index i = 0; i < rho0.matrix.rows(); ++i)
        if (rho0.matrix.row(i).squaredNorm() > 0.0 || rho0.matrix.col(i).squaredNorm() > 0.0)
            n_max = std::max(n_max, number(static_cast<std::size_t>(i)));
    std::vector<Eigen::Index> keep;
    for (std::size_t f = 0; f < spec.total_dim(); ++f)
        if (number(f) <= n_max) keep.push_back(static_cast<Eigen::Index>(f));
    return keep;
}

using Dissipator = std::function<Mat(double, const Mat&, const ModeOps&, const Mat&)>;

// Interaction-picture stepping shared by all propagators. `dissipator`
// receives the mode propagator U(t) so it can rotate its weight vectors:
// sum_j w_j a_j(t) = sum_k (U^T w)_k a_k and sum_j w_j a_j(t)^dag = sum_k (U^dag w)_k a_k^dag.
// When the generator only lowers the excitation number the state is
// propagated on the reachable subspace and embedded again for output.
RhoSeries run_interaction_picture(const CavityChainModel& model, const Rho& rho0, const TimeGrid& grid,
                                  const PropagationOptions& opts, bool number_lowering, const Dissipator& dissipator) {
    const FreeEvolution free(model, rho0.spec);
    const SystemOperators full(model, rho0.spec);
    const Eigen::Index dim = rho0.matrix.rows();
    std::vector<Eigen::Index> keep;
    if (number_lowering) keep = reachable_states(rho0);
    const bool reduce = !keep.empty() && static_cast<Eigen::Index>(keep.size()) < dim;

    ModeOps ops;
    SpMat S;
    Rho start = rho0;
    if (reduce) {
        const auto m = static_cast<Eigen::Index>(keep.size());
        std::vector<Eigen::Triplet<cplx>> trip;
        for (Eigen::Index r = 0; r < m; ++r) trip.emplace_back(r, keep[static_cast<std::size_t>(r)], 1.0);
        S.resize(m, dim);
        S.setFromTriplets(trip.begin(), trip.end());
        const SpMat St = S.transpose();
        for (const auto& a : full.a) {
            ops.a.emplace_back(S * a * St);
            ops.adag.emplace_back(ops.a.back().adjoint());
        }
        ops.dim = m;
        start.matrix = S * rho0.matrix * St;
    } else {
        ops.a = full.a;
        ops.adag = full.adag;
        ops.dim = dim;
    }
    auto gen = [&](double t, const Mat& rho) { return dissipator(t, free.mode_propagator(t), ops, rho); };
    auto to_lab = [&](double t, const Mat& rho) {
        if (!reduce) return free.to_lab(t, rho);
        const SpMat St = S.transpose();
        return free.to_lab(t, Mat(St * rho * S));
    };
    return integrate_rho(gen, start, grid, opts, to_lab);
}

bool all_zero(const std::vector<Mat>& ms) {
    return std::all_of(ms.begin(), ms.end(), [](const Mat& m) { return m.squaredNorm() == 0.0; });
}

}  // namespace

RhoSeries propagate_zero_t(const CavityChainModel& model, const ZeroTCoeffs& coeffs, const Rho& rho0, const TimeGrid& grid,
                           const PropagationOptions& opts) {
    check_spec(model, rho0);
    check_coverage(coeffs.grid.t_max, grid, "propagate_zero_t");
    const Vec l = model.coupling_vector();
    return run_interaction_picture(model, rho0, grid, opts, true, [&](double t, const Mat& U, const ModeOps& ops, const Mat& rho) {
        const SpMat L = combine(ops.a, U.transpose() * l, ops.dim);
        const SpMat K = combine(ops.a, U.transpose() * coeffs.at(t), ops.dim);
        return zero_t_dissipator(L, K, rho);
    });
}

RhoSeries propagate_finite_t(const CavityChainModel& model, const MasterCoeffsFT& mcoeffs, const Rho& rho0,
                             const TimeGrid& grid, const PropagationOptions& opts) {
    check_spec(model, rho0);
    check_coverage(mcoeffs.grid.time(mcoeffs.n_final), grid, "propagate_finite_t");
    const Vec l = model.coupling_vector();
    const bool lowering = all_zero(mcoeffs.U) && all_zero(mcoeffs.V);
    return run_interaction_picture(model, rho0, grid, opts, lowering, [&](double t, const Mat& U, const ModeOps& ops, const Mat& rho) {
        const FiniteTWeights w = finite_t_weights(l, mcoeffs.at(t));
        const Mat Ut = U.transpose();
        const Mat Ud = U.adjoint();
        const Eigen::Index dim = ops.dim;
        return finite_t_dissipator(combine(ops.a, Ut * l, dim), combine(ops.a, Ut * w.F, dim), combine(ops.a, Ut * w.G, dim),
                                   combine(ops.adag, Ud * w.U, dim), combine(ops.adag, Ud * w.V, dim), rho);
    });
}

RhoSeries propagate_lindblad(const CavityChainModel& model, double rate, double nbar, const Rho& rho0, const TimeGrid& grid,
                             const PropagationOptions& opts) {
    check_spec(model, rho0);
    if (rate < 0.0 || nbar < 0.0) throw std::invalid_argument("propagate_lindblad: rate and nbar must be non-negative");
    const Vec l = model.coupling_vector();
    return run_interaction_picture(model, rho0, grid, opts, nbar == 0.0, [&](double, const Mat& U, const ModeOps& ops, const Mat& rho) {
        return lindblad_dissipator(combine(ops.a, U.transpose() * l, ops.dim), rate, nbar, rho);
    });
}

double matched_markov_rate(const CorrelationKernel& kernel) { return 2.0 * kernel.area().real(); }

}  // namespace cavqsd
