#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cavqsd/coeffs.hpp"
#include "cavqsd/hilbert.hpp"
#include "cavqsd/model.hpp"
#include "cavqsd/observables.hpp"
#include "cavqsd/propagators.hpp"
#include "cavqsd/qsd.hpp"
#include "cavqsd/scenario.hpp"

namespace py = pybind11;
using namespace cavqsd;

namespace {

Rho as_rho(const HilbertSpec& spec, const Mat& m) {
    if (m.rows() != static_cast<Eigen::Index>(spec.total_dim()) || m.cols() != m.rows())
        throw std::invalid_argument("matrix does not match the Hilbert space dimension");
    return Rho{spec, m};
}

Rho single_mode(const Mat& m) { return Rho{HilbertSpec({static_cast<int>(m.rows())}), m}; }

py::dict result_dict(const ScenarioResult& r) {
    py::dict d;
    d["name"] = r.config.name;
    d["times"] = r.times;
    py::dict series;
    for (std::size_t i = 0; i < r.series.names.size(); ++i) series[py::str(r.series.names[i])] = r.series.columns[i];
    d["series"] = series;
    py::list states;
    for (const auto& s : r.states) states.append(s.matrix);
    d["states"] = states;
    py::list wig;
    for (std::size_t i = 0; i < r.wigners.size(); ++i) {
        py::dict w;
        w["t"] = r.wigner_keys[i].first;
        w["cavity"] = r.wigner_keys[i].second + 1;
        w["x"] = r.wigners[i].xs;
        w["p"] = r.wigners[i].ps;
        w["W"] = r.wigners[i].W;
        wig.append(w);
    }
    d["wigner"] = wig;
    d["min_eigenvalue"] = r.diagnostics.min_eigenvalue;
    d["max_trace_drift"] = r.diagnostics.max_trace_drift;
    d["wall_seconds"] = r.wall_seconds;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Coupled cavities in a common non-Markovian bath";
    m.attr("__version__") = CAVQSD_VERSION;

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

    py::class_<HilbertSpec>(m, "HilbertSpec")
        .def(py::init<std::vector<int>>(), py::arg("dims"))
        .def(py::init<int, int>(), py::arg("n_cavities"), py::arg("dim_per_cavity"))
        .def_property_readonly("dims", &HilbertSpec::dims)
        .def_property_readonly("total_dim", &HilbertSpec::total_dim)
        .def("flat_index", [](const HilbertSpec& s, std::vector<int> occ) { return s.flat_index(occ); });

    m.def("cat_ket", [](const HilbertSpec& s, int cavity, cplx alpha) { return cat_ket(s, cavity, alpha).amplitudes; },
          py::arg("spec"), py::arg("cavity"), py::arg("alpha"));
    m.def("coherent_ket", [](const HilbertSpec& s, int cavity, cplx alpha) { return coherent_ket(s, cavity, alpha).amplitudes; },
          py::arg("spec"), py::arg("cavity"), py::arg("alpha"));
    m.def("fock_ket", [](const HilbertSpec& s, std::vector<int> occ) { return fock_ket(s, occ).amplitudes; });
    m.def("cat_normalization", &cat_normalization);
    m.def("partial_trace", [](const HilbertSpec& s, const Mat& rho, std::vector<int> keep) {
        return partial_trace(as_rho(s, rho), keep).matrix;
    });

    m.def("wigner_point", [](const Mat& rho, cplx beta) { return wigner_point(single_mode(rho), beta); });
    m.def(
        "wigner",
        [](const Mat& rho, double extent, int points) {
            WignerWindow w{-extent, extent, -extent, extent, points, points};
            const WignerGrid g = wigner(single_mode(rho), w);
            return py::make_tuple(g.xs, g.ps, g.W);
        },
        py::arg("rho"), py::arg("extent") = 4.0, py::arg("points") = 81);
    m.def(
        "cat_fidelity",
        [](const Mat& rho, cplx alpha) {
            const CatFidelity f = cat_fidelity(single_mode(rho), alpha);
            return py::make_tuple(f.fidelity, f.theta);
        },
        py::arg("rho"), py::arg("alpha"));
    m.def("negativity", [](const HilbertSpec& s, const Mat& rho, std::vector<int> a) { return negativity(as_rho(s, rho), a); });
    m.def("pair_negativity", [](const HilbertSpec& s, const Mat& rho, int i, int j) { return pair_negativity(as_rho(s, rho), i, j); });
    m.def("mode_occupations", [](const HilbertSpec& s, const Mat& rho) { return mode_occupations(as_rho(s, rho)); });
    m.def("trace_distance", &trace_distance);

    py::class_<CavityChainModel>(m, "CavityChainModel")
        .def(py::init([](std::vector<double> omegas, std::vector<double> lambdas, bool periodic, std::vector<cplx> couplings) {
                 CavityChainModel c{std::move(omegas), std::move(lambdas), periodic ? Boundary::Periodic : Boundary::Open,
                                    std::move(couplings)};
                 c.validate();
                 return c;
             }),
             py::arg("omegas"), py::arg("lambdas"), py::arg("periodic") = false, py::arg("couplings"))
        .def("single_particle_matrix", &CavityChainModel::single_particle_matrix);

    m.def(
        "ou_coefficients",
        [](const CavityChainModel& model, double gamma, double t_max, int n_steps, bool fast) {
            const TimeGrid grid(t_max, n_steps);
            const auto kernel = CorrelationKernel::ornstein_uhlenbeck(gamma);
            const ZeroTCoeffs c =
                fast ? solve_zero_t_ou_fast(model, kernel, grid) : solve_zero_t(model, BathSpec::zero_temperature(kernel), grid);
            Mat out(grid.n_nodes(), model.n_cavities());
            for (int k = 0; k < grid.n_nodes(); ++k) out.row(k) = c.P[static_cast<std::size_t>(k)].transpose();
            return out;
        },
        py::arg("model"), py::arg("gamma"), py::arg("t_max"), py::arg("n_steps"), py::arg("fast") = true,
        "P_i(t_k) of the zero-temperature OU bath, one row per grid node");

    m.def("builtin_names", &builtin_names);
    m.def("_builtin_config_json", [](const std::string& name) { return builtin_config(name).dump(); });
    m.def("_validate_json", [](const std::string& text) {
        const ValidationReport r = validate_config(json::parse(text));
        py::dict d;
        d["ok"] = r.ok();
        d["errors"] = r.errors;
        d["warnings"] = r.warnings;
        d["runs"] = r.runs;
        return d;
    });
    m.def("_run_scenario_json", [](const std::string& text, int threads) {
        const auto runs = parse_config(json::parse(text));
        py::list out;
        for (const auto& cfg : runs) {
            ScenarioResult r;
            {
                py::gil_scoped_release release;
                r = run_scenario(cfg, threads);
            }
            out.append(result_dict(r));
        }
        return out;
    });
}
