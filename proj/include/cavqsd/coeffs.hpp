#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <vector>

#include "cavqsd/model.hpp"
#include "cavqsd/numerics.hpp"

namespace cavqsd {

struct SolverOptions {
    // Keep the two-time tables p_i(t,s) (and x_i for finite T).
    bool store_two_time = false;
    // Upper bound on working memory of the triangular/three-time solvers.
    std::size_t memory_budget_bytes = std::size_t{2} << 30;
    double fixed_point_tol = 1e-9;
    int max_sweeps = 50;
    int threads = 0;
};

// Zero-temperature memory coefficients P_i(t) = int_0^t alpha(t,s) p_i(t,s) ds.
struct ZeroTCoeffs {
    TimeGrid grid;
    std::vector<Vec> P;  // P[k] = (P_1..P_N)(t_k)
    // Optional two-time table: p[k] is N x (k+1), column j holds p(t_k, s_j).
    std::vector<Mat> p;

    Vec at(double t) const;
};

// Finite-temperature O-operator coefficients. The three-time functions q, y
// are marched slice by slice and only their integrated forms are kept.
struct FiniteTCoeffs {
    TimeGrid grid;
    std::vector<Vec> P, X;  // one-time, per node
    std::vector<Vec> Q, Y;  // Q[k](j) = Q(t_k, s'_j), j <= k
    std::vector<Mat> p, x;  // optional two-time tables (as in ZeroTCoeffs)
    // Diagonal data of the final slice, kept for invariant checks:
    // q(t,t,s') and y(t,s,t) at t = t_max.
    Vec q_born_row, y_born_column;

    Vec P_at(double t) const;
    Vec X_at(double t) const;
};

struct MasterCoeffsFT {
    TimeGrid grid;
    int n_final = 0;  // coefficients exist for nodes 0..n_final
    std::vector<Mat> F, G, U, V;
    // Two-time tables at t_final: f[j] = f(t_final, s_j) etc.
    std::vector<Mat> f_final, g_final, u_final, v_final;
    std::vector<int> sweeps;                // fixed-point sweeps used per node
    std::vector<double> residuals_final;    // sweep residual history at t_final

    struct Snapshot {
        Mat F, G, U, V;
    };
    Snapshot at(double t) const;
};

// Generic triangular-grid solver: march p_i(t, s) in t for every
// s-slice and integrate against the kernel. Requires a zero-temperature bath.
ZeroTCoeffs solve_zero_t(const CavityChainModel& model, const BathSpec& bath, const TimeGrid& grid,
                         const SolverOptions& opts = {});

// Ornstein-Uhlenbeck fast path: dalpha/dt = -gamma alpha closes the P_i
// equations into an N-dimensional ODE.
ZeroTCoeffs solve_zero_t_ou_fast(const CavityChainModel& model, const CorrelationKernel& kernel, const TimeGrid& grid);

// Solves on `grid` and on the grid with half the step, and throws
// NumericalError when the end-time coefficients differ by more than `tol`.
// Returns the fine-grid solution.
ZeroTCoeffs solve_zero_t_converged(const CavityChainModel& model, const BathSpec& bath, const TimeGrid& grid, double tol,
                                   bool use_fast_path);

FiniteTCoeffs solve_finite_t(const CavityChainModel& model, const BathSpec& bath, const TimeGrid& grid,
                             const SolverOptions& opts = {});

MasterCoeffsFT solve_master_coeffs_ft(const CavityChainModel& model, const BathSpec& bath, const TimeGrid& grid,
                                      double t_final, const SolverOptions& opts = {});

// Forward Volterra integro-differential solver used by the master-equation
// coefficients:  dY/du = A Y + C int_0^u k(u, u') Y(u') du' + S(u),  Y(0) = Y0,
// on nodes u_j = j h, j = 0..m. `source` (may be empty) holds S at the nodes.
std::vector<Mat> solve_volterra(const Mat& A, const Mat& C, const std::function<cplx(double, double)>& kernel,
                                const std::vector<Mat>& source, int m, double h, const Mat& Y0);

// CSV export: t, then Re/Im of each P_i (or F_ij).
void write_coeffs_csv(std::ostream& os, const ZeroTCoeffs& c);
void write_coeffs_csv(std::ostream& os, const MasterCoeffsFT& c);

}  // namespace cavqsd
