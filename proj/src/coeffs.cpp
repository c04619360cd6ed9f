#include "cavqsd/coeffs.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "cavqsd/parallel.hpp"

namespace cavqsd {

namespace {

Mat complex_omega(const CavityChainModel& model) { return model.single_particle_matrix().cast<cplx>(); }

// Quadratic Lagrange interpolation through three (possibly non-uniform) points.
template <typename T>
T quadratic_at(double x0, const T& f0, double x1, const T& f1, double x2, const T& f2, double x) {
    const double l0 = (x - x1) * (x - x2) / ((x0 - x1) * (x0 - x2));
    const double l1 = (x - x0) * (x - x2) / ((x1 - x0) * (x1 - x2));
    const double l2 = (x - x0) * (x - x1) / ((x2 - x0) * (x2 - x1));
    return l0 * f0 + l1 * f1 + l2 * f2;
}

void check_kernel_usable(const CorrelationKernel& k, const char* who) {
    if (k.is_markov()) {
        std::ostringstream os;
        os << who << ": a Markov delta kernel has no memory integral; use the Lindblad propagator";
        throw std::invalid_argument(os.str());
    }
}

// ---------------------------------------------------------------------------
// Triangular march for p_i(t,s), x_i(t,s) and the three-time q, y.
//
// At node n the state holds slices s_0..s_n. Each RK4 stage evaluates the
// memory integrals over the node slices plus a short tail over the slices
// born inside the current step, s in (t_n, tau], interpolated from the two
// newest slices and the born value at s = tau.
// ---------------------------------------------------------------------------
class TriangularMarch {
public:
    struct State {
        Mat p, x;    // N x cap
        Mat q, y;    // cap x cap, (a, b) = (s index, s' index); diagonal = limit from a < b
        Vec qr, yr;  // diagonal limit from a > b
    };
    struct Integrals {
        Vec P, X, Q, Y;
    };

    TriangularMarch(const CavityChainModel& model, CorrelationKernel k1, std::optional<CorrelationKernel> k2,
                    const TimeGrid& grid)
        : omega_(complex_omega(model)),
          l_(model.coupling_vector()),
          lc_(l_.conjugate()),
          k1_(std::move(k1)),
          k2_(std::move(k2)),
          finite_(k2_.has_value()),
          h_(grid.dt()),
          n_steps_(grid.n_steps),
          cap_(grid.n_nodes()),
          n_modes_(static_cast<int>(l_.size())) {}

    std::size_t working_bytes() const {
        const std::size_t c = static_cast<std::size_t>(cap_);
        std::size_t bytes = 6 * 2 * static_cast<std::size_t>(n_modes_) * c * sizeof(cplx);
        if (finite_) bytes += 6 * 2 * (c * c + c) * sizeof(cplx) + c * c * sizeof(cplx);
        return bytes;
    }

    template <typename Record>
    void run(Record&& record) {
        State st = make_state(), tmp = make_state(), acc = make_state(), k = make_state();
        st.p.col(0) = l_;
        if (finite_) {
            st.x.col(0) = lc_;
            st.q(0, 0) = -l_.squaredNorm();  // -sum_j l_j^* l_j
            st.yr(0) = 0.0;
            st.qr(0) = 0.0;
            st.y(0, 0) = l_.transpose() * lc_;
        }
        Integrals in;
        integrals(0.0, 0, st, in);
        record(0, st, in);
        const double h = h_;
        for (int n = 0; n < n_steps_; ++n) {
            const double t = n * h;
            // k1
            derivative(t, n, st, k, in);
            assign(acc, st, n, 1.0, k, h / 6.0);
            assign(tmp, st, n, 1.0, k, h / 2.0);
            // k2
            derivative(t + h / 2, n, tmp, k, in);
            add(acc, n, k, h / 3.0);
            assign(tmp, st, n, 1.0, k, h / 2.0);
            // k3
            derivative(t + h / 2, n, tmp, k, in);
            add(acc, n, k, h / 3.0);
            assign(tmp, st, n, 1.0, k, h);
            // k4
            derivative(t + h, n, tmp, k, in);
            add(acc, n, k, h / 6.0);
            std::swap(st, acc);
            append_slice(st, n + 1);
            integrals((n + 1) * h, n + 1, st, in);
            record(n + 1, st, in);
        }
    }

private:
    State make_state() const {
        State s;
        s.p = Mat::Zero(n_modes_, cap_);
        if (finite_) {
            s.x = Mat::Zero(n_modes_, cap_);
            s.q = Mat::Zero(cap_, cap_);
            s.y = Mat::Zero(cap_, cap_);
            s.qr = Vec::Zero(cap_);
            s.yr = Vec::Zero(cap_);
        }
        return s;
    }

    // dst = a*src + c*k over the active blocks (n+1 slices).
    void assign(State& dst, const State& src, int n, double a, const State& k, double c) const {
        const int m = n + 1;
        dst.p.leftCols(m) = a * src.p.leftCols(m) + c * k.p.leftCols(m);
        if (!finite_) return;
        dst.x.leftCols(m) = a * src.x.leftCols(m) + c * k.x.leftCols(m);
        dst.q.topLeftCorner(m, m) = a * src.q.topLeftCorner(m, m) + c * k.q.topLeftCorner(m, m);
        dst.y.topLeftCorner(m, m) = a * src.y.topLeftCorner(m, m) + c * k.y.topLeftCorner(m, m);
        dst.qr.head(m) = a * src.qr.head(m) + c * k.qr.head(m);
        dst.yr.head(m) = a * src.yr.head(m) + c * k.yr.head(m);
    }

    void add(State& dst, int n, const State& k, double c) const {
        const int m = n + 1;
        dst.p.leftCols(m) += c * k.p.leftCols(m);
        if (!finite_) return;
        dst.x.leftCols(m) += c * k.x.leftCols(m);
        dst.q.topLeftCorner(m, m) += c * k.q.topLeftCorner(m, m);
        dst.y.topLeftCorner(m, m) += c * k.y.topLeftCorner(m, m);
        dst.qr.head(m) += c * k.qr.head(m);
        dst.yr.head(m) += c * k.yr.head(m);
    }

    void append_slice(State& st, int n) const {
        st.p.col(n) = l_;
        if (!finite_) return;
        st.x.col(n) = lc_;
        for (int a = 0; a < n; ++a) {
            st.q(a, n) = -l_.dot(st.p.col(a));  // -sum_j l_j^* p_j(t, s_a)
            st.y(a, n) = (l_.transpose() * st.x.col(a))(0);
            st.q(n, a) = 0.0;
            st.y(n, a) = 0.0;
        }
        st.q(n, n) = -l_.squaredNorm();
        st.y(n, n) = (l_.transpose() * lc_)(0);
        st.qr(n) = 0.0;
        st.yr(n) = 0.0;
    }

    // Integral over the active node slices plus the in-step tail of a family
    // g(s) with g(t_n) = newest, g(t_{n-1}) = previous (if usable) and
    // g(tau) = born.
    template <typename T>
    T tail(double tau, int n, const CorrelationKernel& k, const T& newest, const T* previous, const T& born) const {
        const double tn = n * h_;
        const double delta = tau - tn;
        if (delta <= 0.0) return born * 0.0;
        const double mid = tn + 0.5 * delta;
        T gmid = previous ? quadratic_at(tn - h_, *previous, tn, newest, tau, born, mid) : T(0.5 * (newest + born));
        return (delta / 6.0) * (k(tau, tn) * newest + 4.0 * k(tau, mid) * gmid + k(tau, tau) * born);
    }

    void integrals(double tau, int n, const State& st, Integrals& out) {
        const int m = n + 1;
        kv1_.resize(m);
        for (int a = 0; a < m; ++a) kv1_(a) = k1_(tau, a * h_) * h_;
        out.P = Vec::Zero(n_modes_);
        for (int a = 0; a <= n; ++a) out.P += (quadrature_weight(a, n) * kv1_(a)) * st.p.col(a);
        {
            Vec newest = st.p.col(n), prev;
            if (n >= 1) prev = st.p.col(n - 1);
            out.P += tail<Vec>(tau, n, k1_, newest, n >= 1 ? &prev : nullptr, l_);
        }
        if (!finite_) return;
        const CorrelationKernel& k2 = *k2_;
        kv2_.resize(m);
        for (int a = 0; a < m; ++a) kv2_(a) = k2(tau, a * h_) * h_;
        out.X = Vec::Zero(n_modes_);
        for (int a = 0; a <= n; ++a) out.X += (quadrature_weight(a, n) * kv2_(a)) * st.x.col(a);
        {
            Vec newest = st.x.col(n), prev;
            if (n >= 1) prev = st.x.col(n - 1);
            out.X += tail<Vec>(tau, n, k2, newest, n >= 1 ? &prev : nullptr, lc_);
        }
        out.Q.resize(m);
        out.Y.resize(m);
        for (int b = 0; b <= n; ++b) {
            out.Q(b) = three_time_integral(tau, n, b, st.q, st.qr, kv1_, k1_);
            out.Y(b) = three_time_integral(tau, n, b, st.y, st.yr, kv2_, k2);
        }
    }

    // int_0^tau k(tau, s) r(tau, s, s'_b) ds with the jump of r at s = s'_b.
    cplx three_time_integral(double tau, int n, int b, const Mat& r, const Vec& r_right, const Vec& kv,
                             const CorrelationKernel& k) const {
        cplx acc = 0.0;
        for (int a = 0; a <= b; ++a) acc += quadrature_weight(a, b) * kv(a) * r(a, b);
        const int right_len = n - b;
        for (int a = b; a <= n; ++a) {
            cplx v = (a == b) ? r_right(b) : r(a, b);
            acc += quadrature_weight(a - b, right_len) * kv(a) * v;
        }
        cplx newest = (n == b) ? r_right(b) : r(n, b);
        cplx prev;
        bool have_prev = n - 1 >= b;
        if (have_prev) prev = (n - 1 == b) ? r_right(b) : r(n - 1, b);
        acc += tail<cplx>(tau, n, k, newest, have_prev ? &prev : nullptr, cplx{0.0, 0.0});
        return acc;
    }

    void derivative(double tau, int n, const State& st, State& d, Integrals& in) {
        integrals(tau, n, st, in);
        const int m = n + 1;
        const Mat iom = I * omega_;
        d.p.leftCols(m) = iom * st.p.leftCols(m) + in.P * (lc_.transpose() * st.p.leftCols(m));
        if (!finite_) return;
        d.p.leftCols(m) += l_ * (in.X.transpose() * st.p.leftCols(m)) - l_ * in.Y.head(m).transpose();
        d.x.leftCols(m) = -iom * st.x.leftCols(m) - lc_ * (in.P.transpose() * st.x.leftCols(m)) -
                          in.X * (l_.transpose() * st.x.leftCols(m)) - lc_ * in.Q.head(m).transpose();
        // dq(a,b) = (l^dag p_a) Q_b ; dy(a,b) = -(l^T x_a) Y_b
        Eigen::RowVectorXcd lp = lc_.transpose() * st.p.leftCols(m);
        Eigen::RowVectorXcd lx = l_.transpose() * st.x.leftCols(m);
        d.q.topLeftCorner(m, m) = lp.transpose() * in.Q.head(m).transpose();
        d.y.topLeftCorner(m, m) = -lx.transpose() * in.Y.head(m).transpose();
        for (int b = 0; b < m; ++b) {
            d.qr(b) = d.q(b, b);
            d.yr(b) = d.y(b, b);
        }
    }

    Mat omega_;
    Vec l_, lc_;
    CorrelationKernel k1_;
    std::optional<CorrelationKernel> k2_;
    bool finite_;
    double h_;
    int n_steps_, cap_, n_modes_;
    Vec kv1_, kv2_;
};

cplx effective_scale(const CorrelationKernel& k) { return k.conjugated() ? std::conj(k.scale()) : k.scale(); }

}  // namespace

Vec ZeroTCoeffs::at(double t) const { return interpolate_cubic<Vec>(P, grid.dt(), t); }
Vec FiniteTCoeffs::P_at(double t) const { return interpolate_cubic<Vec>(P, grid.dt(), t); }
Vec FiniteTCoeffs::X_at(double t) const { return interpolate_cubic<Vec>(X, grid.dt(), t); }

MasterCoeffsFT::Snapshot MasterCoeffsFT::at(double t) const {
    const auto n = static_cast<std::size_t>(n_final + 1);
    auto head = [n](const std::vector<Mat>& v) { return std::span<const Mat>(v.data(), std::min(n, v.size())); };
    const double h = grid.dt();
    return Snapshot{interpolate_cubic<Mat>(head(F), h, t), interpolate_cubic<Mat>(head(G), h, t),
                    interpolate_cubic<Mat>(head(U), h, t), interpolate_cubic<Mat>(head(V), h, t)};
}

ZeroTCoeffs solve_zero_t(const CavityChainModel& model, const BathSpec& bath, const TimeGrid& grid,
                         const SolverOptions& opts) {
    model.validate();
    if (!bath.is_zero_temperature()) throw std::invalid_argument("solve_zero_t: bath must be at zero temperature");
    CorrelationKernel k1 = bath.kernel1();
    check_kernel_usable(k1, "solve_zero_t");
    TriangularMarch march(model, k1, std::nullopt, grid);
    if (march.working_bytes() > opts.memory_budget_bytes)
        throw NumericalError("solve_zero_t: working memory " + std::to_string(march.working_bytes()) +
                             " bytes exceeds the budget");
    ZeroTCoeffs out;
    out.grid = grid;
    out.P.resize(static_cast<std::size_t>(grid.n_nodes()));
    if (opts.store_two_time) out.p.resize(static_cast<std::size_t>(grid.n_nodes()));
    march.run([&](int n, const TriangularMarch::State& st, const TriangularMarch::Integrals& in) {
        if (!in.P.allFinite()) throw NumericalError("solve_zero_t: coefficients diverged at t=" + std::to_string(n * grid.dt()));
        out.P[static_cast<std::size_t>(n)] = in.P;
        if (opts.store_two_time) out.p[static_cast<std::size_t>(n)] = st.p.leftCols(n + 1);
    });
    return out;
}

ZeroTCoeffs solve_zero_t_ou_fast(const CavityChainModel& model, const CorrelationKernel& kernel, const TimeGrid& grid) {
    model.validate();
    if (!kernel.is_ou()) throw std::invalid_argument("solve_zero_t_ou_fast: kernel must be Ornstein-Uhlenbeck");
    const double gamma = kernel.ou_gamma();
    const cplx c = effective_scale(kernel);
    const Mat iom = I * complex_omega(model);
    const Vec l = model.coupling_vector();
    const Vec drive = (c * 0.5 * gamma) * l;
    // dP/dt = c (gamma/2) l - gamma P + i Omega P + P (l^dag P)
    auto rhs = [&](const Vec& P) -> Vec { return drive - gamma * P + iom * P + P * l.dot(P); };
    ZeroTCoeffs out;
    out.grid = grid;
    out.P.resize(static_cast<std::size_t>(grid.n_nodes()));
    Vec P = Vec::Zero(l.size());
    out.P[0] = P;
    const double h = grid.dt();
    for (int n = 0; n < grid.n_steps; ++n) {
        Vec k1 = rhs(P);
        Vec k2 = rhs(P + 0.5 * h * k1);
        Vec k3 = rhs(P + 0.5 * h * k2);
        Vec k4 = rhs(P + h * k3);
        P += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!P.allFinite()) throw NumericalError("solve_zero_t_ou_fast: coefficients diverged");
        out.P[static_cast<std::size_t>(n + 1)] = P;
    }
    return out;
}

ZeroTCoeffs solve_zero_t_converged(const CavityChainModel& model, const BathSpec& bath, const TimeGrid& grid, double tol,
                                   bool use_fast_path) {
    TimeGrid fine(grid.t_max, grid.n_steps * 2);
    auto solve = [&](const TimeGrid& g) {
        return use_fast_path ? solve_zero_t_ou_fast(model, bath.kernel1(), g) : solve_zero_t(model, bath, g);
    };
    ZeroTCoeffs coarse = solve(grid);
    ZeroTCoeffs refined = solve(fine);
    double err = (coarse.P.back() - refined.P.back()).cwiseAbs().maxCoeff();
    if (err > tol) {
        std::ostringstream os;
        os << "memory coefficients not converged under step halving: |dP(t_max)| = " << err << " > " << tol;
        throw NumericalError(os.str());
    }
    return refined;
}

FiniteTCoeffs solve_finite_t(const CavityChainModel& model, const BathSpec& bath, const TimeGrid& grid,
                             const SolverOptions& opts) {
    model.validate();
    CorrelationKernel k1 = bath.kernel1();
    CorrelationKernel k2 = bath.kernel2();
    check_kernel_usable(k1, "solve_finite_t");
    check_kernel_usable(k2, "solve_finite_t");
    TriangularMarch march(model, k1, k2, grid);
    const std::size_t n = static_cast<std::size_t>(grid.n_nodes());
    std::size_t need = march.working_bytes() + n * n * sizeof(cplx);
    if (opts.store_two_time) need += 2 * n * n * static_cast<std::size_t>(model.n_cavities()) * sizeof(cplx) / 2;
    if (need > opts.memory_budget_bytes) {
        std::ostringstream os;
        os << "solve_finite_t: three-time tables need " << need << " bytes, budget is " << opts.memory_budget_bytes;
        throw NumericalError(os.str());
    }
    FiniteTCoeffs out;
    out.grid = grid;
    out.P.resize(n);
    out.X.resize(n);
    out.Q.resize(n);
    out.Y.resize(n);
    if (opts.store_two_time) {
        out.p.resize(n);
        out.x.resize(n);
    }
    march.run([&](int k, const TriangularMarch::State& st, const TriangularMarch::Integrals& in) {
        if (!in.P.allFinite() || !in.X.allFinite())
            throw NumericalError("solve_finite_t: coefficients diverged at t=" + std::to_string(k * grid.dt()));
        auto kk = static_cast<std::size_t>(k);
        out.P[kk] = in.P;
        out.X[kk] = in.X;
        out.Q[kk] = in.Q;
        out.Y[kk] = in.Y;
        if (opts.store_two_time) {
            out.p[kk] = st.p.leftCols(k + 1);
            out.x[kk] = st.x.leftCols(k + 1);
        }
        if (k == grid.n_steps) {
            // q(t, s=t, s'_b) for b < k is the born row; y(t, s_a, s'=t) is the born column.
            out.q_born_row = st.q.row(k).head(k + 1).transpose();
            out.q_born_row(k) = st.qr(k);
            out.y_born_column = st.y.col(k).head(k + 1);
        }
    });
    return out;
}

std::vector<Mat> solve_volterra(const Mat& A, const Mat& C, const std::function<cplx(double, double)>& kernel,
                                const std::vector<Mat>& source, int m, double h, const Mat& Y0) {
    std::vector<Mat> Y(static_cast<std::size_t>(m + 1));
    Y[0] = Y0;
    const bool has_source = !source.empty();
    auto src = [&](double u) -> Mat {
        return interpolate_cubic<Mat>(std::span<const Mat>(source.data(), source.size()), h, u);
    };
    // Memory integral at time u with the history Y_0..Y_j and the stage value
    // Ys standing in for Y(u).
    auto memory = [&](double u, int j, const Mat& Ys) -> Mat {
        Mat acc = Mat::Zero(Y0.rows(), Y0.cols());
        for (int i = 0; i < j; ++i) acc += (quadrature_weight(i, j) * kernel(u, i * h)) * Y[static_cast<std::size_t>(i)];
        const double uj = j * h;
        const double delta = u - uj;
        if (delta <= 0.0) {
            acc += (quadrature_weight(j, j) * kernel(u, uj)) * Ys;
            return acc * h;
        }
        acc += (quadrature_weight(j, j) * kernel(u, uj)) * Y[static_cast<std::size_t>(j)];
        acc *= h;
        const double mid = uj + 0.5 * delta;
        Mat ymid = j >= 1 ? quadratic_at<Mat>(uj - h, Y[static_cast<std::size_t>(j - 1)], uj, Y[static_cast<std::size_t>(j)], u, Ys, mid)
                          : Mat(0.5 * (Y[static_cast<std::size_t>(j)] + Ys));
        acc += (delta / 6.0) * (kernel(u, uj) * Y[static_cast<std::size_t>(j)] + 4.0 * kernel(u, mid) * ymid + kernel(u, u) * Ys);
        return acc;
    };
    auto rhs = [&](double u, int j, const Mat& Ys) -> Mat {
        Mat r = A * Ys + C * memory(u, j, Ys);
        if (has_source) r += src(u);
        return r;
    };
    for (int j = 0; j < m; ++j) {
        const double u = j * h;
        const Mat& y = Y[static_cast<std::size_t>(j)];
        Mat k1 = rhs(u, j, y);
        Mat k2 = rhs(u + 0.5 * h, j, y + 0.5 * h * k1);
        Mat k3 = rhs(u + 0.5 * h, j, y + 0.5 * h * k2);
        Mat k4 = rhs(u + h, j, y + h * k3);
        Y[static_cast<std::size_t>(j + 1)] = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return Y;
}

namespace {

double max_abs_diff(const std::vector<Mat>& a, const std::vector<Mat>& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, (a[i] - b[i]).cwiseAbs().maxCoeff());
    return d;
}

struct MasterSlice {
    Mat F, G, U, V;
    std::vector<Mat> f, g, u, v;
    int sweeps = 0;
    std::vector<double> residuals;
};

}  // namespace

MasterCoeffsFT solve_master_coeffs_ft(const CavityChainModel& model, const BathSpec& bath, const TimeGrid& grid,
                                      double t_final, const SolverOptions& opts) {
    model.validate();
    const int n_final = grid.index_of(t_final);
    if (n_final < 0) throw std::invalid_argument("solve_master_coeffs_ft: t_final must be a grid node");
    const CorrelationKernel k1 = bath.kernel1();
    const CorrelationKernel k2 = bath.kernel2();
    check_kernel_usable(k1, "solve_master_coeffs_ft");
    const bool thermal = !k2.is_zero();
    if (thermal) check_kernel_usable(k2, "solve_master_coeffs_ft");

    const int nm = model.n_cavities();
    const double h = grid.dt();
    const Mat omega = complex_omega(model);
    const Mat iom = I * omega;
    const Vec l = model.coupling_vector();
    const Mat B = l.conjugate() * l.transpose();  // B_ik = l_i^* l_k
    const Mat Cm = l * l.adjoint();                // C_ik = l_i l_k^*
    const Mat eye = Mat::Identity(nm, nm);
    const Mat zero = Mat::Zero(nm, nm);

    // Homogeneous forward solution: f(t, s) = G(s) G(t)^{-1} when the
    // non-causal terms vanish.
    auto kernel1 = [&k1](double a, double b) { return k1(a, b); };
    const std::vector<Mat> Gh = solve_volterra(-iom, -B, kernel1, {}, n_final, h, eye);

    auto solve_slice = [&](int m) -> MasterSlice {
        MasterSlice out;
        const double t = m * h;
        const auto sz = static_cast<std::size_t>(m + 1);
        if (m == 0) {
            out.f = {eye};
            out.g = {zero};
            out.u = {eye};
            out.v = {zero};
            out.F = out.G = out.U = out.V = zero;
            return out;
        }
        Eigen::PartialPivLU<Mat> lu(Gh[static_cast<std::size_t>(m)]);
        if (std::abs(lu.determinant()) < 1e-300) throw NumericalError("solve_master_coeffs_ft: singular propagator");
        const Mat Ginv = lu.inverse();
        out.f.resize(sz);
        out.g.assign(sz, zero);
        for (std::size_t j = 0; j < sz; ++j) out.f[j] = Gh[j] * Ginv;
        out.u.assign(sz, zero);
        out.v.assign(sz, zero);

        if (thermal) {
            auto integrate_full = [&](const std::function<Mat(int)>& val) {
                return integrate_nodes<Mat>(0, m, h, val, zero);
            };
            // Reverse-time kernel for the backward sweeps: r = t - s.
            auto back_kernel = [&](double r, double rp) { return k1(t - rp, t - r); };
            for (int sweep = 1; sweep <= opts.max_sweeps; ++sweep) {
                const std::vector<Mat> f_prev = out.f, g_prev = out.g, u_prev = out.u, v_prev = out.v;
                std::vector<Mat> Sf(sz), Sg(sz);
                for (int k = 0; k <= m; ++k) {
                    const double s = k * h;
                    Mat full_v = integrate_full([&](int j) -> Mat { return std::conj(k2(s, j * h)) * v_prev[static_cast<std::size_t>(j)].conjugate(); });
                    Mat full_u = integrate_full([&](int j) -> Mat { return std::conj(k2(s, j * h)) * u_prev[static_cast<std::size_t>(j)].conjugate(); });
                    Mat fut_f = integrate_nodes<Mat>(k, m, h, [&](int j) -> Mat { return k2(j * h, s) * f_prev[static_cast<std::size_t>(j)]; }, zero);
                    Mat fut_g = integrate_nodes<Mat>(k, m, h, [&](int j) -> Mat { return k2(j * h, s) * g_prev[static_cast<std::size_t>(j)]; }, zero);
                    Sf[static_cast<std::size_t>(k)] = B * (full_v - fut_f);
                    Sg[static_cast<std::size_t>(k)] = B * (full_u - fut_g);
                }
                // f = G c + h_f with f(t) = I ; g = G c_g + h_g with g(t) = 0.
                std::vector<Mat> hf = solve_volterra(-iom, -B, kernel1, Sf, m, h, zero);
                std::vector<Mat> hg = solve_volterra(-iom, -B, kernel1, Sg, m, h, zero);
                const Mat cf = Ginv * (eye - hf[static_cast<std::size_t>(m)]);
                const Mat cg = -Ginv * hg[static_cast<std::size_t>(m)];
                for (std::size_t j = 0; j < sz; ++j) {
                    out.f[j] = Gh[j] * cf + hf[j];
                    out.g[j] = Gh[j] * cg + hg[j];
                }
                // Backward sweeps for u, v in r = t - s, with the sources
                // built from the freshly updated f, g.
                std::vector<Mat> Su(sz), Sv(sz);
                for (int k = 0; k <= m; ++k) {
                    const double s = k * h;
                    Mat full_g = integrate_full([&](int j) -> Mat { return std::conj(k1(s, j * h)) * out.g[static_cast<std::size_t>(j)].conjugate(); });
                    Mat full_f = integrate_full([&](int j) -> Mat { return std::conj(k1(s, j * h)) * out.f[static_cast<std::size_t>(j)].conjugate(); });
                    Mat past_u = integrate_nodes<Mat>(0, k, h, [&](int j) -> Mat { return k2(s, j * h) * u_prev[static_cast<std::size_t>(j)]; }, zero);
                    Mat past_v = integrate_nodes<Mat>(0, k, h, [&](int j) -> Mat { return k2(s, j * h) * v_prev[static_cast<std::size_t>(j)]; }, zero);
                    // stored in r order: index m - k
                    Su[static_cast<std::size_t>(m - k)] = -(Cm * (past_u - full_g));
                    Sv[static_cast<std::size_t>(m - k)] = -(Cm * (past_v - full_f));
                }
                std::vector<Mat> ur = solve_volterra(-iom, -Cm, back_kernel, Su, m, h, eye);
                std::vector<Mat> vr = solve_volterra(-iom, -Cm, back_kernel, Sv, m, h, zero);
                for (int k = 0; k <= m; ++k) {
                    out.u[static_cast<std::size_t>(k)] = ur[static_cast<std::size_t>(m - k)];
                    out.v[static_cast<std::size_t>(k)] = vr[static_cast<std::size_t>(m - k)];
                }
                double res = std::max({max_abs_diff(out.f, f_prev), max_abs_diff(out.g, g_prev), max_abs_diff(out.u, u_prev),
                                       max_abs_diff(out.v, v_prev)});
                if (!std::isfinite(res)) throw NumericalError("solve_master_coeffs_ft: fixed-point iteration diverged");
                out.residuals.push_back(res);
                out.sweeps = sweep;
                if (sweep > 1 && res < opts.fixed_point_tol) break;
                if (sweep == opts.max_sweeps) {
                    std::ostringstream os;
                    os << "solve_master_coeffs_ft: fixed point not converged at t=" << t << " after " << sweep
                       << " sweeps (residual " << res << "); the coupling is too strong for this grid";
                    throw NumericalError(os.str());
                }
            }
        } else {
            out.sweeps = 1;
            out.residuals.push_back(0.0);
        }
        auto quad = [&](const CorrelationKernel& k, const std::vector<Mat>& tab) {
            return integrate_nodes<Mat>(0, m, h, [&](int j) -> Mat { return k(t, j * h) * tab[static_cast<std::size_t>(j)]; }, zero);
        };
        out.F = quad(k1, out.f);
        out.G = quad(k1, out.g);
        if (thermal) {
            out.U = quad(k2, out.u);
            out.V = quad(k2, out.v);
        } else {
            out.U = out.V = zero;
        }
        return out;
    };

    MasterCoeffsFT res;
    res.grid = grid;
    res.n_final = n_final;
    const auto count = static_cast<std::size_t>(n_final + 1);
    res.F.resize(count);
    res.G.resize(count);
    res.U.resize(count);
    res.V.resize(count);
    res.sweeps.resize(count);
    parallel_for(count, opts.threads, [&](std::size_t m) {
        MasterSlice s = solve_slice(static_cast<int>(m));
        res.F[m] = s.F;
        res.G[m] = s.G;
        res.U[m] = s.U;
        res.V[m] = s.V;
        res.sweeps[m] = s.sweeps;
        if (static_cast<int>(m) == n_final) {
            res.f_final = std::move(s.f);
            res.g_final = std::move(s.g);
            res.u_final = std::move(s.u);
            res.v_final = std::move(s.v);
            res.residuals_final = std::move(s.residuals);
        }
    });
    return res;
}

void write_coeffs_csv(std::ostream& os, const ZeroTCoeffs& c) {
    os << "t";
    const auto n = c.P.empty() ? 0 : c.P.front().size();
    for (Eigen::Index i = 0; i < n; ++i) os << ",P" << i + 1 << "_re,P" << i + 1 << "_im";
    os << '\n' << std::setprecision(17);
    for (std::size_t k = 0; k < c.P.size(); ++k) {
        os << c.grid.time(static_cast<int>(k));
        for (Eigen::Index i = 0; i < n; ++i) os << ',' << c.P[k](i).real() << ',' << c.P[k](i).imag();
        os << '\n';
    }
}

void write_coeffs_csv(std::ostream& os, const MasterCoeffsFT& c) {
    os << "t";
    const auto n = c.F.empty() ? 0 : c.F.front().rows();
    for (const char* name : {"F", "G", "U", "V"})
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j) os << ',' << name << i + 1 << j + 1 << "_re," << name << i + 1 << j + 1 << "_im";
    os << '\n' << std::setprecision(17);
    for (int k = 0; k <= c.n_final; ++k) {
        os << c.grid.time(k);
        for (const auto* tab : {&c.F, &c.G, &c.U, &c.V})
            for (Eigen::Index i = 0; i < n; ++i)
                for (Eigen::Index j = 0; j < n; ++j) {
                    cplx v = (*tab)[static_cast<std::size_t>(k)](i, j);
                    os << ',' << v.real() << ',' << v.imag();
                }
        os << '\n';
    }
}

}  // namespace cavqsd
