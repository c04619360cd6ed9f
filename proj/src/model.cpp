#include "cavqsd/model.hpp"

#include <cmath>
#include <sstream>

namespace cavqsd {

void CavityChainModel::validate() const {
    const auto n = omegas.size();
    if (n == 0) throw std::invalid_argument("model: need at least one cavity");
    if (lambdas.size() != n || couplings.size() != n) {
        std::ostringstream os;
        os << "model: omegas, lambdas and couplings must all have length N=" << n << " (got " << omegas.size() << ", "
           << lambdas.size() << ", " << couplings.size() << ")";
        throw std::invalid_argument(os.str());
    }
}

double CavityChainModel::bond(int i) const {
    const int n = n_cavities();
    if (i < 0 || i >= n) return 0.0;
    if (i == n - 1) {
        // A single cavity has no bonds; for N=2 the periodic wrap adds a
        // second 0-1 bond, following a_{N+1} = a_1 literally.
        if (boundary == Boundary::Open || n < 2) return 0.0;
    }
    return lambdas[static_cast<std::size_t>(i)];
}

Eigen::MatrixXd CavityChainModel::single_particle_matrix() const {
    validate();
    const int n = n_cavities();
    Eigen::MatrixXd omega = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) omega(i, i) = omegas[static_cast<std::size_t>(i)];
    for (int i = 0; i < n; ++i) {
        double b = bond(i);
        if (b == 0.0) continue;
        int j = (i + 1) % n;
        omega(i, j) += b;
        omega(j, i) += b;
    }
    return omega;
}

Vec CavityChainModel::coupling_vector() const {
    Vec l(static_cast<Eigen::Index>(couplings.size()));
    for (std::size_t i = 0; i < couplings.size(); ++i) l(static_cast<Eigen::Index>(i)) = couplings[i];
    return l;
}

CorrelationKernel::CorrelationKernel(Shape shape, cplx scale, bool conjugated)
    : shape_(std::move(shape)), scale_(scale), conjugated_(conjugated) {
    if (auto* ou = std::get_if<OrnsteinUhlenbeck>(&shape_); ou && !(ou->gamma > 0.0))
        throw std::invalid_argument("Ornstein-Uhlenbeck kernel needs gamma > 0");
    if (auto* md = std::get_if<MarkovDelta>(&shape_); md && md->rate < 0.0)
        throw std::invalid_argument("Markov kernel needs a non-negative rate");
    if (auto* tab = std::get_if<Tabulated>(&shape_)) {
        if (!(tab->dtau > 0.0) || tab->values.size() < 2)
            throw std::invalid_argument("tabulated kernel needs dtau > 0 and at least two values");
        if (std::abs(tab->values.front().imag()) > 1e-12)
            throw std::invalid_argument("tabulated kernel must be real at zero lag (Hermitian symmetry)");
    }
}

cplx CorrelationKernel::operator()(double t, double s) const {
    const double tau = t - s;
    cplx value = std::visit(
        [&](const auto& k) -> cplx {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, OrnsteinUhlenbeck>) {
                return 0.5 * k.gamma * std::exp(-k.gamma * std::abs(tau));
            } else if constexpr (std::is_same_v<K, MarkovDelta>) {
                throw std::domain_error("Markov delta kernel cannot be evaluated pointwise");
            } else {
                const double x = std::abs(tau) / k.dtau;
                const auto i0 = static_cast<std::size_t>(x);
                cplx v;
                if (i0 + 1 >= k.values.size()) {
                    v = k.values.back();
                } else {
                    const double w = x - static_cast<double>(i0);
                    v = (1.0 - w) * k.values[i0] + w * k.values[i0 + 1];
                }
                return tau < 0.0 ? std::conj(v) : v;
            }
        },
        shape_);
    value *= scale_;
    return conjugated_ ? std::conj(value) : value;
}

CorrelationKernel CorrelationKernel::scaled(cplx factor) const {
    // conj(scale * a) * f == conj(scale * conj(f) * a)
    cplx f = conjugated_ ? std::conj(factor) : factor;
    return CorrelationKernel(shape_, scale_ * f, conjugated_);
}

CorrelationKernel CorrelationKernel::conjugate() const { return CorrelationKernel(shape_, scale_, !conjugated_); }

double CorrelationKernel::ou_gamma() const {
    if (!is_ou()) throw std::logic_error("kernel is not Ornstein-Uhlenbeck");
    return std::get<OrnsteinUhlenbeck>(shape_).gamma;
}

cplx CorrelationKernel::area() const {
    cplx a = std::visit(
        [](const auto& k) -> cplx {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, OrnsteinUhlenbeck>) {
                return 0.5;
            } else if constexpr (std::is_same_v<K, MarkovDelta>) {
                return 0.5 * k.rate;
            } else {
                cplx sum = 0.0;
                for (std::size_t i = 0; i + 1 < k.values.size(); ++i) sum += 0.5 * (k.values[i] + k.values[i + 1]);
                return sum * k.dtau;
            }
        },
        shape_);
    a *= scale_;
    return conjugated_ ? std::conj(a) : a;
}

CorrelationKernel BathSpec::kernel1() const { return base.scaled(nbar + 1.0); }

CorrelationKernel BathSpec::kernel2() const {
    if (kernel2_override) return *kernel2_override;
    return base.conjugate().scaled(nbar);
}

namespace {

void check_sizes(const CavityChainModel& model, const HilbertSpec& spec) {
    model.validate();
    if (model.n_cavities() != spec.n_cavities()) {
        std::ostringstream os;
        os << "model has " << model.n_cavities() << " cavities but the Hilbert space has " << spec.n_cavities();
        throw std::invalid_argument(os.str());
    }
}

}  // namespace

SpMat build_hamiltonian(const CavityChainModel& model, const HilbertSpec& spec) {
    check_sizes(model, spec);
    const int n = model.n_cavities();
    std::vector<SpMat> a;
    for (int i = 0; i < n; ++i) a.push_back(annihilation_op(spec, i));
    SpMat h(static_cast<Eigen::Index>(spec.total_dim()), static_cast<Eigen::Index>(spec.total_dim()));
    for (int i = 0; i < n; ++i) {
        auto ii = static_cast<std::size_t>(i);
        h += model.omegas[ii] * (SpMat(a[ii].adjoint()) * a[ii]);
        double b = model.bond(i);
        if (b != 0.0) {
            auto jj = static_cast<std::size_t>((i + 1) % n);
            SpMat hop = SpMat(a[ii].adjoint()) * a[jj];
            h += b * (hop + SpMat(hop.adjoint()));
        }
    }
    h.prune(cplx{0.0, 0.0});
    return h;
}

SpMat build_collective_L(const CavityChainModel& model, const HilbertSpec& spec) {
    check_sizes(model, spec);
    SpMat l(static_cast<Eigen::Index>(spec.total_dim()), static_cast<Eigen::Index>(spec.total_dim()));
    for (int i = 0; i < model.n_cavities(); ++i) {
        cplx c = model.couplings[static_cast<std::size_t>(i)];
        if (c != cplx{0.0, 0.0}) l += c * annihilation_op(spec, i);
    }
    return l;
}

SpMat total_number_op(const HilbertSpec& spec) {
    SpMat n(static_cast<Eigen::Index>(spec.total_dim()), static_cast<Eigen::Index>(spec.total_dim()));
    for (int i = 0; i < spec.n_cavities(); ++i) n += number_op(spec, i);
    return n;
}

}  // namespace cavqsd
