#include "cavqsd/observables.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "cavqsd/parallel.hpp"

namespace cavqsd {

namespace {

void require_single_mode(const Rho& rho, const char* who) {
    if (rho.spec.n_cavities() != 1)
        throw std::invalid_argument(std::string(who) + ": expects a single-mode state (take a partial trace first)");
}

// Normalized truncated even-cat amplitudes for real-axis rotation theta = 0.
Vec cat_amplitudes(cplx alpha, int d) {
    if (alpha == cplx{0.0, 0.0}) throw std::invalid_argument("cat amplitude must be nonzero");
    Vec c = Vec::Zero(d);
    cplx term = std::exp(-0.5 * std::norm(alpha));  // alpha^n / sqrt(n!) e^{-|alpha|^2/2}
    for (int n = 0; n < d; ++n) {
        if (n > 0) term *= alpha / std::sqrt(static_cast<double>(n));
        if (n % 2 == 0) c(n) = 2.0 * term;
    }
    return c / c.norm();
}

double overlap_with(const Mat& rho, const Vec& c0, double theta) {
    const Eigen::Index d = c0.size();
    Vec v(d);
    for (Eigen::Index n = 0; n < d; ++n) v(n) = c0(n) * std::polar(1.0, -static_cast<double>(n) * theta);
    return std::real(v.dot(rho * v));
}

}  // namespace

double wigner_point(const Rho& rho, cplx beta) {
    require_single_mode(rho, "wigner");
    const int d = rho.spec.dim(0);
    // <m| D(2 beta) Pi |n> = (-1)^n <m| D(2 beta) |n>, and D(beta) Pi D(beta)^dag = D(2 beta) Pi.
    const cplx b2 = 2.0 * beta;
    const double x = std::norm(b2);
    const double env = std::exp(-0.5 * x);
    double w = 0.0;
    for (int m = 0; m < d; ++m) {
        for (int n = 0; n < d; ++n) {
            const cplx r = rho.matrix(n, m);
            if (r == cplx{0.0, 0.0}) continue;
            cplx dmn;
            if (m >= n) {
                const int k = m - n;
                const double ratio = std::exp(0.5 * (std::lgamma(n + 1.0) - std::lgamma(m + 1.0)));
                dmn = ratio * std::pow(b2, k) * env * std::assoc_laguerre(static_cast<unsigned>(n), static_cast<unsigned>(k), x);
            } else {
                const int k = n - m;
                const double ratio = std::exp(0.5 * (std::lgamma(m + 1.0) - std::lgamma(n + 1.0)));
                dmn = ratio * std::pow(-std::conj(b2), k) * env * std::assoc_laguerre(static_cast<unsigned>(m), static_cast<unsigned>(k), x);
            }
            const double parity = (n % 2 == 0) ? 1.0 : -1.0;
            w += std::real(r * dmn) * parity;
        }
    }
    return 2.0 / std::numbers::pi * w;
}

WignerGrid wigner(const Rho& rho, const WignerWindow& win, int threads) {
    require_single_mode(rho, "wigner");
    if (win.nx < 2 || win.np < 2 || !(win.x_max > win.x_min) || !(win.p_max > win.p_min))
        throw std::invalid_argument("wigner: window needs at least 2x2 points and positive extent");
    const double reach = std::max({std::abs(win.x_min), std::abs(win.x_max), std::abs(win.p_min), std::abs(win.p_max)});
    const int d = rho.spec.dim(0);
    // A Fock basis of size d resolves phase-space radii up to about sqrt(d).
    if (reach * reach > d) {
        std::ostringstream os;
        os << "wigner: window radius " << reach << " exceeds what " << d << " Fock levels resolve";
        warn(os.str());
    }
    WignerGrid g;
    for (int i = 0; i < win.nx; ++i) g.xs.push_back(win.x_min + (win.x_max - win.x_min) * i / (win.nx - 1));
    for (int j = 0; j < win.np; ++j) g.ps.push_back(win.p_min + (win.p_max - win.p_min) * j / (win.np - 1));
    g.W.resize(win.nx, win.np);
    parallel_for(static_cast<std::size_t>(win.nx), threads, [&](std::size_t i) {
        for (int j = 0; j < win.np; ++j) g.W(static_cast<Eigen::Index>(i), j) = wigner_point(rho, cplx{g.xs[i], g.ps[static_cast<std::size_t>(j)]});
    });
    return g;
}

double WignerGrid::integral() const {
    const Eigen::Index nx = W.rows(), np = W.cols();
    const double dx = (xs.back() - xs.front()) / static_cast<double>(nx - 1);
    const double dp = (ps.back() - ps.front()) / static_cast<double>(np - 1);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < nx; ++i) {
        const double wi = (i == 0 || i == nx - 1) ? 0.5 : 1.0;
        for (Eigen::Index j = 0; j < np; ++j) {
            const double wj = (j == 0 || j == np - 1) ? 0.5 : 1.0;
            acc += wi * wj * W(i, j);
        }
    }
    return acc * dx * dp;
}

void write_wigner_csv(std::ostream& os, const WignerGrid& g) {
    os << "x,p,W\n";
    os.precision(12);
    for (std::size_t i = 0; i < g.xs.size(); ++i)
        for (std::size_t j = 0; j < g.ps.size(); ++j)
            os << g.xs[i] << ',' << g.ps[j] << ',' << g.W(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) << '\n';
}

double rotated_cat_overlap(const Rho& rho, cplx alpha, double theta) {
    require_single_mode(rho, "cat_fidelity");
    return overlap_with(rho.matrix, cat_amplitudes(alpha, rho.spec.dim(0)), theta);
}

CatFidelity cat_fidelity(const Rho& rho, cplx alpha, int coarse_points, double tol) {
    require_single_mode(rho, "cat_fidelity");
    if (coarse_points < 3) throw std::invalid_argument("cat_fidelity: need at least 3 coarse points");
    const Vec c0 = cat_amplitudes(alpha, rho.spec.dim(0));
    const double two_pi = 2.0 * std::numbers::pi;
    const double step = two_pi / coarse_points;
    auto f = [&](double th) { return overlap_with(rho.matrix, c0, th); };

    CatFidelity best{f(0.0), 0.0};
    for (int k = 1; k < coarse_points; ++k) {
        const double th = k * step;
        const double v = f(th);
        if (v > best.fidelity) best = {v, th};
    }
    // Golden-section search on the bracket around the coarse maximum.
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = best.theta - step, b = best.theta + step;
    double c = b - g * (b - a), d = a + g * (b - a);
    double fc = f(c), fd = f(d);
    while (b - a > tol) {
        if (fc >= fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    const double th = 0.5 * (a + b);
    const double v = f(th);
    // Only move off the coarse point on a real improvement, so flat
    // landscapes keep the smallest theta.
    if (v > best.fidelity + 1e-14) {
        double wrapped = std::fmod(th, two_pi);
        if (wrapped < 0.0) wrapped += two_pi;
        best = {v, wrapped};
    }
    best.fidelity = std::clamp(best.fidelity, 0.0, 1.0);
    return best;
}

double negativity(const Rho& rho, std::span<const int> subsystem_a) {
    if (subsystem_a.empty()) throw std::invalid_argument("negativity: empty subsystem");
    Mat pt = partial_transpose(rho, subsystem_a);
    Eigen::SelfAdjointEigenSolver<Mat> es(pt, Eigen::EigenvaluesOnly);
    double neg = 0.0;
    for (Eigen::Index k = 0; k < es.eigenvalues().size(); ++k)
        if (es.eigenvalues()(k) < 0.0) neg -= es.eigenvalues()(k);
    return neg;
}

double pair_negativity(const Rho& rho, int i, int j) {
    const int n = rho.spec.n_cavities();
    if (i == j || i < 0 || j < 0 || i >= n || j >= n) throw std::invalid_argument("pair_negativity: need two distinct cavity indices");
    const int first = 0;
    if (n == 2) {
        const int a = i;
        return negativity(rho, std::span<const int>(&a, 1));
    }
    const int keep[2] = {i, j};
    const Rho pair = partial_trace(rho, keep);
    return negativity(pair, std::span<const int>(&first, 1));
}

std::vector<double> mode_occupations(const Rho& rho) {
    std::vector<double> occ(static_cast<std::size_t>(rho.spec.n_cavities()), 0.0);
    for (std::size_t f = 0; f < rho.spec.total_dim(); ++f) {
        const double p = rho.matrix(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(f)).real();
        for (int c = 0; c < rho.spec.n_cavities(); ++c) occ[static_cast<std::size_t>(c)] += p * rho.spec.occupation(f, c);
    }
    return occ;
}

double trace_distance(const Mat& a, const Mat& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("trace_distance: size mismatch");
    Mat diff = a - b;
    Mat herm = 0.5 * (diff + diff.adjoint());
    Eigen::SelfAdjointEigenSolver<Mat> es(herm, Eigen::EigenvaluesOnly);
    return 0.5 * es.eigenvalues().cwiseAbs().sum();
}

void ObservableSeries::add_channel(std::string name, std::vector<double> values) {
    if (values.size() != times.size()) throw std::invalid_argument("channel '" + name + "' does not match the time base");
    if (has_channel(name)) throw std::invalid_argument("duplicate channel '" + name + "'");
    names.push_back(std::move(name));
    columns.push_back(std::move(values));
}

void ObservableSeries::add_complex_channel(const std::string& name, const std::vector<cplx>& values) {
    std::vector<double> re, im;
    for (const auto& v : values) {
        re.push_back(v.real());
        im.push_back(v.imag());
    }
    add_channel(name + "_re", std::move(re));
    add_channel(name + "_im", std::move(im));
}

bool ObservableSeries::has_channel(const std::string& name) const {
    return std::find(names.begin(), names.end(), name) != names.end();
}

const std::vector<double>& ObservableSeries::channel(const std::string& name) const {
    auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw std::out_of_range("no channel '" + name + "'");
    return columns[static_cast<std::size_t>(it - names.begin())];
}

void ObservableSeries::write_csv(std::ostream& os) const {
    os << 't';
    for (const auto& n : names) os << ',' << n;
    os << '\n';
    os.precision(15);
    for (std::size_t r = 0; r < times.size(); ++r) {
        os << times[r];
        for (const auto& c : columns) os << ',' << c[r];
        os << '\n';
    }
}

ObservableSeries ObservableSeries::read_csv(std::istream& is) {
    ObservableSeries s;
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("empty observable CSV");
    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) header.push_back(cell);
    }
    if (header.empty() || header[0] != "t") throw std::runtime_error("observable CSV must start with a 't' column");
    std::vector<std::vector<double>> cols(header.size() - 1);
    int row = 1;
    while (std::getline(is, line)) {
        ++row;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::size_t c = 0;
        while (std::getline(ss, cell, ',')) {
            if (c >= header.size()) throw std::runtime_error("observable CSV row " + std::to_string(row) + " has too many fields");
            const double v = std::stod(cell);
            if (c == 0)
                s.times.push_back(v);
            else
                cols[c - 1].push_back(v);
            ++c;
        }
        if (c != header.size()) throw std::runtime_error("observable CSV row " + std::to_string(row) + " has too few fields");
    }
    for (std::size_t c = 1; c < header.size(); ++c) s.add_channel(header[c], std::move(cols[c - 1]));
    return s;
}

}  // namespace cavqsd
