#include <doctest.h>

#include "cavqsd/coeffs.hpp"
#include "cavqsd/numerics.hpp"
#include "helpers.hpp"

using namespace cavqsd;

namespace {

CavityChainModel single(double omega, cplx l = 1.0) { return CavityChainModel{{omega}, {0.0}, Boundary::Open, {l}}; }

CavityChainModel fig2_chain() { return CavityChainModel{{1, 1, 1}, {1, 1, 0}, Boundary::Open, {1, 1, 1}}; }

// Closed form of the single-mode OU Riccati equation P' = g/2 - g P + i w P + P^2, P(0) = 0:
// with roots r1, r2 of P^2 + (i w - g) P + g/2, (P - r1)/(P - r2) = (r1/r2) e^{(r1 - r2) t}.
cplx riccati_exact(double g, double w, double t) {
    const cplx b{-g, w};
    const cplx disc = std::sqrt(b * b - 2.0 * g);
    const cplx r1 = 0.5 * (-b + disc), r2 = 0.5 * (-b - disc);
    const cplx u = (r1 / r2) * std::exp((r1 - r2) * t);
    return (r1 - r2 * u) / (1.0 - u);
}

}  // namespace

TEST_CASE("Gregory weights integrate cubics exactly") {
    for (int n : {1, 2, 3, 4, 5, 6, 9, 20}) {
        const double h = 0.3;
        auto f = [&](int k) { double x = k * h; return n >= 3 ? 1.0 + x - 2 * x * x + 0.5 * x * x * x : (n == 2 ? 1.0 - x * x : 2.0 + x); };
        const double L = n * h;
        const double exact = n >= 3 ? L + L * L / 2 - 2 * L * L * L / 3 + L * L * L * L / 8 : (n == 2 ? L - L * L * L / 3 : 2 * L + L * L / 2);
        CHECK(integrate_nodes<double>(0, n, h, f, 0.0) == doctest::Approx(exact).epsilon(1e-12));
    }
}

TEST_CASE("cubic interpolation reproduces cubics") {
    std::vector<double> table;
    auto f = [](double x) { return 0.5 - x + 0.25 * x * x * x; };
    for (int k = 0; k < 12; ++k) table.push_back(f(0.2 * k));
    for (double x : {0.0, 0.05, 0.37, 1.13, 2.19, 2.2}) CHECK(interpolate_cubic<double>(table, 0.2, x) == doctest::Approx(f(x)).epsilon(1e-12));
    CHECK_THROWS(interpolate_cubic<double>(table, 0.2, 2.5));
}

TEST_CASE("Volterra solver: Y' = int_0^u Y gives cosh") {
    const Mat A = Mat::Zero(1, 1), C = Mat::Identity(1, 1), Y0 = Mat::Identity(1, 1);
    const int m = 200;
    const double h = 0.01;
    const auto Y = solve_volterra(A, C, [](double, double) { return cplx{1.0, 0.0}; }, {}, m, h, Y0);
    REQUIRE(Y.size() == std::size_t(m + 1));
    CHECK(std::abs(Y.back()(0, 0) - std::cosh(2.0)) < 1e-8);
}

TEST_CASE("OU fast path matches the closed-form single-mode solution") {
    for (double g : {0.1, 1.0, 5.0}) {
        const TimeGrid grid(8.0, 1600);
        const auto c = solve_zero_t_ou_fast(single(1.0), CorrelationKernel::ornstein_uhlenbeck(g), grid);
        for (int k : {100, 800, 1600}) CHECK(std::abs(c.P[std::size_t(k)](0) - riccati_exact(g, 1.0, grid.time(k))) < 1e-9);
    }
}

TEST_CASE("triangular solver matches the closed form and stores p(t,t) = l") {
    const TimeGrid grid(4.0, 200);
    SolverOptions so;
    so.store_two_time = true;
    const auto c = solve_zero_t(single(1.0), BathSpec::zero_temperature(CorrelationKernel::ornstein_uhlenbeck(0.5)), grid, so);
    CHECK(std::abs(c.P.back()(0) - riccati_exact(0.5, 1.0, 4.0)) < 1e-7);
    for (int k : {10, 100, 200}) CHECK(std::abs(c.p[std::size_t(k)](0, k) - 1.0) < 1e-12);
    // P(t) = int_0^t alpha(t, s) p(t, s) ds
    const auto k = CorrelationKernel::ornstein_uhlenbeck(0.5);
    const int n = 200;
    const cplx integral = integrate_nodes<cplx>(0, n, grid.dt(), [&](int j) { return k(4.0, grid.time(j)) * c.p[n](0, j); }, 0.0);
    CHECK(std::abs(integral - c.P.back()(0)) < 1e-8);
}

TEST_CASE("OU fast path and triangular solver agree on a three-cavity chain") {
    const TimeGrid grid(3.0, 300);
    const auto k = CorrelationKernel::ornstein_uhlenbeck(0.2);
    const auto fast = solve_zero_t_ou_fast(fig2_chain(), k, grid);
    const auto slow = solve_zero_t(fig2_chain(), BathSpec::zero_temperature(k), grid);
    double err = 0.0;
    for (int n = 0; n <= 300; ++n) err = std::max(err, (fast.P[std::size_t(n)] - slow.P[std::size_t(n)]).cwiseAbs().maxCoeff());
    CHECK(err < 1e-7);
}

TEST_CASE("large gamma: coefficients approach the Markov constant l/2") {
    const auto c = solve_zero_t_ou_fast(single(1.0), CorrelationKernel::ornstein_uhlenbeck(400.0), TimeGrid(1.0, 4000));
    CHECK(std::abs(c.P.back()(0) - 0.5) < 5e-3);
}

TEST_CASE("finite-T solver at nbar = 0 reduces to the zero-T coefficients") {
    const TimeGrid grid(3.0, 150);
    const auto k = CorrelationKernel::ornstein_uhlenbeck(0.3);
    const auto zero = solve_zero_t_ou_fast(fig2_chain(), k, grid);
    const auto fin = solve_finite_t(fig2_chain(), BathSpec::finite_temperature(k, 0.0), grid);
    double dp = 0.0, x = 0.0;
    for (int n = 0; n <= 150; ++n) {
        dp = std::max(dp, (fin.P[std::size_t(n)] - zero.P[std::size_t(n)]).cwiseAbs().maxCoeff());
        x = std::max(x, fin.X[std::size_t(n)].cwiseAbs().maxCoeff());
    }
    CHECK(dp < 1e-6);
    CHECK(x == 0.0);
}

TEST_CASE("master-equation coefficients at nbar = 0: l^T F = P, G = U = V = 0") {
    const TimeGrid grid(3.0, 120);
    const CavityChainModel m{{1.0, 1.0}, {0.5, 0.0}, Boundary::Open, {1.0, 1.0}};
    const auto k = CorrelationKernel::ornstein_uhlenbeck(0.5);
    const auto mc = solve_master_coeffs_ft(m, BathSpec::finite_temperature(k, 0.0), grid, 3.0);
    const auto zero = solve_zero_t_ou_fast(m, k, grid);
    const Vec l = m.coupling_vector();
    double err = 0.0, other = 0.0;
    for (int n = 0; n <= mc.n_final; ++n) {
        err = std::max(err, (mc.F[std::size_t(n)].transpose() * l - zero.P[std::size_t(n)]).cwiseAbs().maxCoeff());
        other = std::max({other, testing::max_abs(mc.G[std::size_t(n)].transpose() * l), testing::max_abs(mc.U[std::size_t(n)]),
                          testing::max_abs(mc.V[std::size_t(n)])});
    }
    CHECK(err < 1e-6);
    CHECK(other < 1e-6);
}

TEST_CASE("finite-temperature heating coefficients are nonzero and finite") {
    const TimeGrid grid(2.0, 80);
    const auto k = CorrelationKernel::ornstein_uhlenbeck(1.0);
    const auto fin = solve_finite_t(single(1.0), BathSpec::finite_temperature(k, 0.5), grid);
    CHECK(std::abs(fin.X.back()(0)) > 1e-3);
    for (const auto& v : fin.P) CHECK(v.allFinite());
}

TEST_CASE("Markov kernels are rejected by the memory solvers") {
    const auto md = BathSpec::zero_temperature(CorrelationKernel::markov_delta(1.0));
    CHECK_THROWS_AS(solve_zero_t(single(1.0), md, TimeGrid(1.0, 10)), std::invalid_argument);
    CHECK_THROWS_AS(solve_zero_t_ou_fast(single(1.0), CorrelationKernel::markov_delta(1.0), TimeGrid(1.0, 10)), std::invalid_argument);
    CHECK_THROWS(solve_zero_t(single(1.0), BathSpec::finite_temperature(CorrelationKernel::ornstein_uhlenbeck(1.0), 0.2), TimeGrid(1.0, 10)));
}
