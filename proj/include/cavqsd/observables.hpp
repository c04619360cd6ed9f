#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cavqsd/hilbert.hpp"

namespace cavqsd {

// Phase-space window; beta = x + i p.
struct WignerWindow {
    double x_min = -4.0, x_max = 4.0;
    double p_min = -4.0, p_max = 4.0;
    int nx = 81, np = 81;
};

struct WignerGrid {
    std::vector<double> xs, ps;
    Eigen::MatrixXd W;  // W(ix, ip)

    double integral() const;  // trapezoid over the window
    double min() const { return W.minCoeff(); }
    double max() const { return W.maxCoeff(); }
};

// W(beta) = (2/pi) Tr[rho D(beta) Pi D(beta)^dag] with parity Pi. With this
// convention the vacuum is (2/pi) exp(-2|beta|^2) and W integrates to Tr rho.
double wigner_point(const Rho& rho_single_mode, cplx beta);
WignerGrid wigner(const Rho& rho_single_mode, const WignerWindow& window = {}, int threads = 1);
void write_wigner_csv(std::ostream& os, const WignerGrid& grid);

struct CatFidelity {
    double fidelity = 0.0;
    double theta = 0.0;
};

// <cat(theta)| rho |cat(theta)> for the normalized truncated cat with
// amplitude alpha e^{-i theta}.
double rotated_cat_overlap(const Rho& rho_single_mode, cplx alpha, double theta);
// Maximum over theta in [0, 2 pi): coarse scan, then golden-section
// refinement to `tol`. Ties resolve to the smallest theta.
CatFidelity cat_fidelity(const Rho& rho_single_mode, cplx alpha, int coarse_points = 256, double tol = 1e-6);

// Sum of |negative eigenvalues| of the partial transpose on `subsystem_a`
// (= (||rho^{T_A}||_1 - 1) / 2 for unit trace).
double negativity(const Rho& rho, std::span<const int> subsystem_a);
// Negativity between cavities i and j: other cavities are traced out first,
// then cavity i is transposed.
double pair_negativity(const Rho& rho, int i, int j);

std::vector<double> mode_occupations(const Rho& rho);

// (1/2) sum |eig(A - B)| for Hermitian A, B.
double trace_distance(const Mat& a, const Mat& b);

// Named real-valued channels on a common time base.
struct ObservableSeries {
    std::vector<double> times;
    std::vector<std::string> names;
    std::vector<std::vector<double>> columns;

    void add_channel(std::string name, std::vector<double> values);
    // Adds name_re and name_im.
    void add_complex_channel(const std::string& name, const std::vector<cplx>& values);
    const std::vector<double>& channel(const std::string& name) const;
    bool has_channel(const std::string& name) const;
    void write_csv(std::ostream& os) const;
    static ObservableSeries read_csv(std::istream& is);
};

}  // namespace cavqsd
