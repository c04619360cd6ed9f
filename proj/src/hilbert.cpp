#include "cavqsd/hilbert.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <sstream>

#include <Eigen/Eigenvalues>

namespace cavqsd {

namespace {

WarningSink& warning_sink() {
    static WarningSink sink = [](const std::string& m) { std::cerr << "warning: " << m << '\n'; };
    return sink;
}

}  // namespace

void set_warning_sink(WarningSink sink) { warning_sink() = std::move(sink); }

void warn(const std::string& message) {
    if (warning_sink()) warning_sink()(message);
}

HilbertSpec::HilbertSpec(std::vector<int> dims, std::size_t max_dim) : dims_(std::move(dims)) {
    if (dims_.empty()) throw std::invalid_argument("HilbertSpec: need at least one cavity");
    for (int d : dims_) {
        if (d < 2) throw std::invalid_argument("HilbertSpec: every truncation dimension must be >= 2");
        total_ *= static_cast<std::size_t>(d);
        if (total_ > max_dim) {
            std::ostringstream os;
            os << "HilbertSpec: total dimension exceeds the size budget of " << max_dim;
            throw std::invalid_argument(os.str());
        }
    }
    strides_.assign(dims_.size(), 1);
    for (int i = static_cast<int>(dims_.size()) - 2; i >= 0; --i)
        strides_[static_cast<std::size_t>(i)] = strides_[static_cast<std::size_t>(i) + 1] * static_cast<std::size_t>(dims_[static_cast<std::size_t>(i) + 1]);
}

HilbertSpec::HilbertSpec(int n_cavities, int dim_per_cavity)
    : HilbertSpec(std::vector<int>(static_cast<std::size_t>(std::max(n_cavities, 0)), dim_per_cavity)) {}

int HilbertSpec::occupation(std::size_t flat_index, int cavity) const {
    auto c = static_cast<std::size_t>(cavity);
    return static_cast<int>((flat_index / strides_.at(c)) % static_cast<std::size_t>(dims_[c]));
}

std::size_t HilbertSpec::flat_index(std::span<const int> occupations) const {
    if (occupations.size() != dims_.size()) throw std::invalid_argument("flat_index: wrong number of occupations");
    std::size_t idx = 0;
    for (std::size_t i = 0; i < dims_.size(); ++i) {
        if (occupations[i] < 0 || occupations[i] >= dims_[i]) throw std::out_of_range("flat_index: occupation outside truncation");
        idx += static_cast<std::size_t>(occupations[i]) * strides_[i];
    }
    return idx;
}

HilbertSpec HilbertSpec::subspace(std::span<const int> cavities) const {
    std::vector<int> d;
    for (int c : cavities) d.push_back(dim(c));
    return HilbertSpec(d, total_);
}

double Rho::hermiticity_error() const {
    return (matrix - matrix.adjoint()).cwiseAbs().maxCoeff();
}

double Rho::min_eigenvalue() const {
    Mat h = 0.5 * (matrix + matrix.adjoint());
    Eigen::SelfAdjointEigenSolver<Mat> es(h, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

double Rho::purity() const { return (matrix * matrix).trace().real(); }

Rho projector(const Ket& psi) {
    return Rho{psi.spec, psi.amplitudes * psi.amplitudes.adjoint()};
}

Mat lowering_matrix(int d) {
    Mat a = Mat::Zero(d, d);
    for (int m = 1; m < d; ++m) a(m - 1, m) = std::sqrt(static_cast<double>(m));
    return a;
}

namespace {

void check_cavity(const HilbertSpec& spec, int cavity) {
    if (cavity < 0 || cavity >= spec.n_cavities()) {
        std::ostringstream os;
        os << "cavity index " << cavity << " out of range [0, " << spec.n_cavities() << ")";
        throw std::out_of_range(os.str());
    }
}

}  // namespace

SpMat annihilation_op(const HilbertSpec& spec, int cavity) {
    check_cavity(spec, cavity);
    const std::size_t dim = spec.total_dim();
    const std::size_t stride = spec.stride(cavity);
    std::vector<Eigen::Triplet<cplx>> trips;
    trips.reserve(dim);
    for (std::size_t col = 0; col < dim; ++col) {
        int n = spec.occupation(col, cavity);
        if (n > 0)
            trips.emplace_back(static_cast<int>(col - stride), static_cast<int>(col), std::sqrt(static_cast<double>(n)));
    }
    SpMat a(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
    a.setFromTriplets(trips.begin(), trips.end());
    return a;
}

SpMat number_op(const HilbertSpec& spec, int cavity) {
    check_cavity(spec, cavity);
    const std::size_t dim = spec.total_dim();
    std::vector<Eigen::Triplet<cplx>> trips;
    for (std::size_t k = 0; k < dim; ++k) {
        int n = spec.occupation(k, cavity);
        if (n > 0) trips.emplace_back(static_cast<int>(k), static_cast<int>(k), static_cast<double>(n));
    }
    SpMat num(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
    num.setFromTriplets(trips.begin(), trips.end());
    return num;
}

SpMat identity_op(const HilbertSpec& spec) {
    SpMat id(static_cast<Eigen::Index>(spec.total_dim()), static_cast<Eigen::Index>(spec.total_dim()));
    id.setIdentity();
    return id;
}

double coherent_tail_population(double abs_alpha, int d) {
    const double n = abs_alpha * abs_alpha;
    double term = std::exp(-n);
    double kept = 0.0;
    for (int k = 0; k < d; ++k) {
        kept += term;
        term *= n / (k + 1);
    }
    return std::max(0.0, 1.0 - kept);
}

namespace {

// Poisson amplitudes exp(-|a|^2/2) a^n / sqrt(n!), truncated to d levels.
Vec coherent_amplitudes(cplx alpha, int d) {
    Vec v(d);
    cplx c = std::exp(-0.5 * std::norm(alpha));
    for (int n = 0; n < d; ++n) {
        v(n) = c;
        c *= alpha / std::sqrt(static_cast<double>(n + 1));
    }
    return v;
}

void check_tail(cplx alpha, int d) {
    double tail = coherent_tail_population(std::abs(alpha), d);
    if (tail > 1e-3) {
        std::ostringstream os;
        os << "coherent amplitude |alpha|=" << std::abs(alpha) << " needs more than " << d
           << " Fock levels (tail population " << tail << ")";
        throw std::invalid_argument(os.str());
    }
    if (tail > 1e-6) {
        std::ostringstream os;
        os << "truncation tail population " << tail << " for |alpha|=" << std::abs(alpha) << " at d=" << d;
        warn(os.str());
    }
}

Ket embed_single_mode(const HilbertSpec& spec, int cavity, const Vec& local) {
    Vec amps = Vec::Zero(static_cast<Eigen::Index>(spec.total_dim()));
    for (int n = 0; n < local.size(); ++n)
        amps(static_cast<Eigen::Index>(static_cast<std::size_t>(n) * spec.stride(cavity))) = local(n);
    return Ket{spec, amps};
}

}  // namespace

Ket coherent_ket(const HilbertSpec& spec, int cavity, cplx alpha) {
    check_cavity(spec, cavity);
    const int d = spec.dim(cavity);
    check_tail(alpha, d);
    Vec local = coherent_amplitudes(alpha, d);
    local.normalize();
    return embed_single_mode(spec, cavity, local);
}

Ket cat_ket(const HilbertSpec& spec, int cavity, cplx alpha) {
    check_cavity(spec, cavity);
    const int d = spec.dim(cavity);
    check_tail(alpha, d);
    Vec local = coherent_amplitudes(alpha, d) + coherent_amplitudes(-alpha, d);
    if (local.norm() == 0.0) throw std::invalid_argument("cat_ket: degenerate superposition");
    local.normalize();
    return embed_single_mode(spec, cavity, local);
}

double cat_normalization(cplx alpha) { return 2.0 * (1.0 + std::exp(-2.0 * std::norm(alpha))); }

double truncated_cat_norm(cplx alpha, int d) {
    return (coherent_amplitudes(alpha, d) + coherent_amplitudes(-alpha, d)).squaredNorm();
}

Ket fock_ket(const HilbertSpec& spec, std::span<const int> occupations) {
    Vec amps = Vec::Zero(static_cast<Eigen::Index>(spec.total_dim()));
    amps(static_cast<Eigen::Index>(spec.flat_index(occupations))) = 1.0;
    return Ket{spec, amps};
}

Rho partial_trace(const Rho& rho, std::span<const int> keep) {
    const HilbertSpec& spec = rho.spec;
    if (keep.empty()) throw std::invalid_argument("partial_trace: keep set is empty");
    std::vector<bool> kept(static_cast<std::size_t>(spec.n_cavities()), false);
    for (int c : keep) {
        check_cavity(spec, c);
        if (kept[static_cast<std::size_t>(c)]) throw std::invalid_argument("partial_trace: duplicate cavity in keep set");
        kept[static_cast<std::size_t>(c)] = true;
    }
    HilbertSpec sub = spec.subspace(keep);
    std::vector<int> traced;
    for (int c = 0; c < spec.n_cavities(); ++c)
        if (!kept[static_cast<std::size_t>(c)]) traced.push_back(c);

    const std::size_t dim = spec.total_dim();
    // Decompose each flat index into (kept sub-index, traced sub-index).
    std::vector<std::size_t> kept_idx(dim), traced_idx(dim);
    for (std::size_t k = 0; k < dim; ++k) {
        std::size_t a = 0, b = 0;
        for (std::size_t i = 0; i < keep.size(); ++i)
            a += static_cast<std::size_t>(spec.occupation(k, keep[i])) * sub.stride(static_cast<int>(i));
        for (int c : traced) b = b * static_cast<std::size_t>(spec.dim(c)) + static_cast<std::size_t>(spec.occupation(k, c));
        kept_idx[k] = a;
        traced_idx[k] = b;
    }
    Mat out = Mat::Zero(static_cast<Eigen::Index>(sub.total_dim()), static_cast<Eigen::Index>(sub.total_dim()));
    for (std::size_t j = 0; j < dim; ++j)
        for (std::size_t i = 0; i < dim; ++i)
            if (traced_idx[i] == traced_idx[j])
                out(static_cast<Eigen::Index>(kept_idx[i]), static_cast<Eigen::Index>(kept_idx[j])) +=
                    rho.matrix(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    return Rho{sub, out};
}

Mat partial_transpose(const Rho& rho, std::span<const int> transposed) {
    const HilbertSpec& spec = rho.spec;
    for (int c : transposed) check_cavity(spec, c);
    const auto dim = static_cast<Eigen::Index>(spec.total_dim());
    Mat out(dim, dim);
    for (Eigen::Index j = 0; j < dim; ++j) {
        for (Eigen::Index i = 0; i < dim; ++i) {
            // Swap the occupations of the transposed factors between row and column.
            auto ii = static_cast<std::size_t>(i), jj = static_cast<std::size_t>(j);
            std::size_t ni = ii, nj = jj;
            for (int c : transposed) {
                auto s = spec.stride(c);
                auto oi = static_cast<std::size_t>(spec.occupation(ii, c));
                auto oj = static_cast<std::size_t>(spec.occupation(jj, c));
                ni = ni - oi * s + oj * s;
                nj = nj - oj * s + oi * s;
            }
            out(static_cast<Eigen::Index>(ni), static_cast<Eigen::Index>(nj)) = rho.matrix(i, j);
        }
    }
    return out;
}

}  // namespace cavqsd
