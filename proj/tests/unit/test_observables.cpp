#include <doctest.h>

#include <numbers>
#include <sstream>

#include "cavqsd/observables.hpp"
#include "helpers.hpp"

using namespace cavqsd;

namespace {

Rho single_mode(const Vec& psi) { return Rho{HilbertSpec({int(psi.size())}), psi * psi.adjoint()}; }

}  // namespace

TEST_CASE("Wigner function of vacuum, coherent and Fock states") {
    const double pi = std::numbers::pi;
    Vec vac = Vec::Zero(20);
    vac(0) = 1.0;
    CHECK(std::abs(wigner_point(single_mode(vac), 0.0) - 2.0 / pi) < 1e-12);
    CHECK(std::abs(wigner_point(single_mode(vac), cplx{0.3, -0.4}) - 2.0 / pi * std::exp(-2.0 * 0.25)) < 1e-12);

    const cplx alpha{0.8, 0.3};
    const Vec coh = testing::coherent(alpha, 30);
    const cplx beta{0.1, 0.9};
    CHECK(std::abs(wigner_point(single_mode(coh / coh.norm()), beta) - 2.0 / pi * std::exp(-2.0 * std::norm(beta - alpha))) < 1e-10);

    Vec one = Vec::Zero(10);
    one(1) = 1.0;
    // W_1(beta) = (2/pi) (4|beta|^2 - 1) e^{-2|beta|^2}
    CHECK(std::abs(wigner_point(single_mode(one), 0.0) + 2.0 / pi) < 1e-12);
    CHECK(std::abs(wigner_point(single_mode(one), 0.7) - 2.0 / pi * (4 * 0.49 - 1) * std::exp(-0.98)) < 1e-12);
}

TEST_CASE("Wigner grid integrates to the trace and shows cat fringes") {
    HilbertSpec spec({20});
    const Rho cat = projector(cat_ket(spec, 0, 1.5));
    WignerWindow w{-5, 5, -5, 5, 101, 101};
    const auto g = wigner(cat, w, 2);
    CHECK(g.integral() == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(g.min() < -0.1);
    CHECK(g.max() <= 2.0 / std::numbers::pi + 1e-12);
    std::ostringstream os;
    write_wigner_csv(os, g);
    CHECK(os.str().rfind("x,p,W\n", 0) == 0);
}

TEST_CASE("cat fidelity oracles") {
    HilbertSpec spec({25});
    // |<0|cat>|^2 = 2 e^{-1} / (1 + e^{-2}) for alpha = 1.
    Vec vac = Vec::Zero(25);
    vac(0) = 1.0;
    const double expected = 2.0 * std::exp(-1.0) / (1.0 + std::exp(-2.0));
    CHECK(std::abs(rotated_cat_overlap(single_mode(vac), 1.0, 0.3) - expected) < 1e-10);
    CHECK(std::abs(cat_fidelity(single_mode(vac), 1.0).fidelity - expected) < 1e-10);
    CHECK(std::abs(expected - 0.6481) < 1e-4);

    const double theta0 = 1.1;
    const Rho rotated = projector(cat_ket(spec, 0, std::polar(1.0, -theta0)));
    const auto f = cat_fidelity(rotated, 1.0);
    CHECK(f.fidelity == doctest::Approx(1.0).epsilon(1e-9));
    // The even cat is invariant under theta -> theta + pi.
    CHECK(std::abs(std::remainder(f.theta - theta0, std::numbers::pi)) < 1e-4);
}

TEST_CASE("negativity oracles") {
    HilbertSpec spec({2, 2});
    Vec bell = Vec::Zero(4);
    bell(0) = bell(3) = 1.0 / std::sqrt(2.0);
    const Rho b{spec, bell * bell.adjoint()};
    const int a[] = {0};
    CHECK(std::abs(negativity(b, a) - 0.5) < 1e-12);
    CHECK(std::abs(pair_negativity(b, 0, 1) - 0.5) < 1e-12);
    const Rho prod{spec, testing::kron(testing::random_density(2, 1), testing::random_density(2, 2))};
    CHECK(negativity(prod, a) < 1e-12);

    // (|100> + |010>)/sqrt(2): cavities 1, 2 maximally entangled, cavity 3 separate.
    HilbertSpec s3({3, 3, 3});
    Vec w = Vec::Zero(27);
    w(s3.flat_index(std::vector<int>{1, 0, 0})) = w(s3.flat_index(std::vector<int>{0, 1, 0})) = 1.0 / std::sqrt(2.0);
    const Rho r3{s3, w * w.adjoint()};
    CHECK(std::abs(pair_negativity(r3, 0, 1) - 0.5) < 1e-12);
    CHECK(pair_negativity(r3, 0, 2) < 1e-12);
    CHECK(pair_negativity(r3, 1, 2) < 1e-12);
}

TEST_CASE("occupations and trace distance") {
    HilbertSpec spec({3, 4});
    const Ket k = fock_ket(spec, std::vector<int>{2, 3});
    const auto n = mode_occupations(projector(k));
    CHECK(n[0] == doctest::Approx(2.0));
    CHECK(n[1] == doctest::Approx(3.0));
    const Ket k2 = fock_ket(spec, std::vector<int>{1, 3});
    CHECK(trace_distance(projector(k).matrix, projector(k2).matrix) == doctest::Approx(1.0));
    const Mat r = testing::random_density(12, 9);
    CHECK(trace_distance(r, r) < 1e-14);
}

TEST_CASE("observable series CSV round trip") {
    ObservableSeries s;
    s.times = {0.0, 0.5, 1.0};
    s.add_channel("n1", {1.0, 0.75, 0.1234567890123});
    s.add_complex_channel("trace", {1.0, cplx{1.0, 1e-17}, 1.0});
    std::stringstream io;
    s.write_csv(io);
    CHECK(io.str().rfind("t,n1,trace_re,trace_im\n", 0) == 0);
    const auto r = ObservableSeries::read_csv(io);
    CHECK(r.times == s.times);
    CHECK(r.channel("n1")[2] == doctest::Approx(0.1234567890123).epsilon(1e-14));
    CHECK(r.has_channel("trace_im"));
    CHECK_FALSE(r.has_channel("n2"));
}
