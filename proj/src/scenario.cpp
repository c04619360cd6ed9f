#include "cavqsd/scenario.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "cavqsd/coeffs.hpp"
#include "cavqsd/parallel.hpp"
#include "cavqsd/propagators.hpp"
#include "cavqsd/qsd.hpp"

#ifndef CAVQSD_VERSION
#define CAVQSD_VERSION "0.0.0"
#endif

namespace cavqsd {

std::string to_string(Method m) {
    switch (m) {
        case Method::MasterZeroT: return "master_zero_t";
        case Method::MasterFiniteT: return "master_finite_t";
        case Method::Lindblad: return "lindblad";
        case Method::Qsd: return "qsd";
    }
    return "unknown";
}

// ---------------------------------------------------------------- builtins

namespace {

json cat_initial() { return {{"type", "cat"}, {"cavity", 1}, {"alpha", 1.0}}; }

json three_cavity_model(const char* boundary, int truncation) {
    const bool pbc = std::string(boundary) == "pbc";
    return {{"n_cavities", 3},
            {"omegas", {1.0, 1.0, 1.0}},
            {"lambdas", {1.0, 1.0, pbc ? 1.0 : 0.0}},
            {"boundary", boundary},
            {"couplings", {1.0, 1.0, 1.0}},
            {"truncation", truncation}};
}

json ou_bath(double gamma) { return {{"kernel", {{"type", "ou"}, {"gamma", gamma}}}, {"nbar", 0.0}}; }

json fig2(const char* boundary) {
    return {{"name", std::string("fig2_") + boundary},
            {"description", std::string("three cavities, ") + (std::string(boundary) == "pbc" ? "ring" : "open chain") +
                                ", cat in cavity 1: fidelity series"},
            {"model", three_cavity_model(boundary, 8)},
            {"bath", ou_bath(0.2)},
            {"initial", cat_initial()},
            {"run", {{"method", "master_zero_t"}, {"t_max", 6.0}, {"dt", 0.02}, {"sample_dt", 0.04}}},
            {"output", {{"channels", {"fidelity", "occupation", "purity", "trace"}}, {"cat_alpha", 1.0}}}};
}

json fig5(const char* boundary) {
    return {{"name", std::string("fig5_") + boundary},
            {"description", "three cavities, (|100> + |010>)/sqrt(2): pairwise negativity"},
            {"model", three_cavity_model(boundary, 3)},
            {"bath", ou_bath(0.2)},
            {"initial",
             {{"type", "fock_superposition"},
              {"terms", {{{"occupations", {1, 0, 0}}, {"amplitude", 1.0}}, {{"occupations", {0, 1, 0}}, {"amplitude", 1.0}}}}}},
            {"run", {{"method", "master_zero_t"}, {"t_max", 6.0}, {"dt", 0.02}, {"sample_dt", 0.04}}},
            {"output", {{"channels", {"negativity", "occupation", "purity", "trace"}}}}};
}

}  // namespace

std::vector<std::string> builtin_names() {
    return {"fig1", "fig2_obc", "fig2_pbc", "fig3", "fig4", "fig5_obc", "fig5_pbc", "fig6"};
}

json builtin_config(const std::string& name) {
    if (name == "fig1") {
        return {{"name", "fig1"},
                {"description", "two uncoupled cavities in a common OU bath, cat in cavity 1"},
                {"model",
                 {{"n_cavities", 2},
                  {"omegas", {1.0, 1.0}},
                  {"lambdas", {0.0, 0.0}},
                  {"boundary", "obc"},
                  {"couplings", {1.0, 1.0}},
                  {"truncation", 15}}},
                {"bath", ou_bath(0.1)},
                {"initial", cat_initial()},
                {"run", {{"method", "master_zero_t"}, {"t_max", 35.0}, {"dt", 0.05}, {"sample_dt", 0.5}}},
                {"output",
                 {{"channels", {"fidelity", "occupation", "negativity", "purity", "trace"}},
                  {"cat_alpha", 1.0},
                  {"wigner_times", {0.0, 11.0, 22.0, 33.0}},
                  {"wigner_cavities", {1, 2}},
                  {"wigner_window", {{"x", {-3.0, 3.0}}, {"p", {-3.0, 3.0}}, {"points", 61}}}}}};
    }
    if (name == "fig2_obc") return fig2("obc");
    if (name == "fig2_pbc") return fig2("pbc");
    if (name == "fig3" || name == "fig4") {
        const bool obc = name == "fig3";
        json c = fig2(obc ? "obc" : "pbc");
        c["name"] = name;
        c["description"] = obc ? "open chain Wigner snapshots of all three cavities" : "ring Wigner snapshots of all three cavities";
        c["output"]["wigner_times"] = obc ? json{0.0, 1.1, 2.2, 3.3} : json{0.0, 1.02, 2.04, 3.06};
        c["output"]["wigner_cavities"] = {1, 2, 3};
        c["output"]["wigner_window"] = {{"x", {-3.0, 3.0}}, {"p", {-3.0, 3.0}}, {"points", 61}};
        return c;
    }
    if (name == "fig5_obc") return fig5("obc");
    if (name == "fig5_pbc") return fig5("pbc");
    if (name == "fig6") {
        json c = fig5("pbc");
        c["name"] = "fig6";
        c["description"] = "ring negativity with cavity-2 parameters doubled one at a time";
        c["variants"] = {{{"name", "omega2"}, {"model", {{"omegas", {1.0, 2.0, 1.0}}}}},
                         {{"name", "lambda2"}, {"model", {{"lambdas", {1.0, 2.0, 1.0}}}}},
                         {{"name", "l2"}, {"model", {{"couplings", {1.0, 2.0, 1.0}}}}}};
        return c;
    }
    throw ConfigError("unknown builtin scenario '" + name + "'");
}

json load_config_json(const std::string& path_or_name) {
    const std::filesystem::path p(path_or_name);
    if (!std::filesystem::exists(p)) {
        const auto names = builtin_names();
        if (std::find(names.begin(), names.end(), path_or_name) != names.end()) return builtin_config(path_or_name);
        throw ConfigError("config '" + path_or_name + "' is neither a readable file nor a builtin scenario");
    }
    std::ifstream in(p);
    if (!in) throw ConfigError("cannot read config file '" + path_or_name + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
        const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto ? upto - 1 : 0), '\n');
        std::ostringstream os;
        os << path_or_name << ":" << line << ": JSON parse error: " << e.what();
        throw ConfigError(os.str());
    }
}

// ------------------------------------------------------------- parsing

namespace {

class Reader {
public:
    Reader(ValidationReport& report, std::string prefix) : rep_(report), prefix_(std::move(prefix)) {}

    void error(const std::string& field, const std::string& msg) { rep_.errors.push_back(prefix_ + field + ": " + msg); }
    void warning(const std::string& field, const std::string& msg) { rep_.warnings.push_back(prefix_ + field + ": " + msg); }
    std::size_t n_errors() const { return rep_.errors.size(); }

    const json* block(const json& root, const std::string& key, bool required) {
        if (!root.contains(key)) {
            if (required) error(key, "missing block");
            return nullptr;
        }
        if (!root[key].is_object()) {
            error(key, "must be an object");
            return nullptr;
        }
        return &root[key];
    }

    void known_keys(const json& obj, const std::string& where, std::initializer_list<const char*> keys) {
        for (auto it = obj.begin(); it != obj.end(); ++it) {
            bool found = false;
            for (const char* k : keys) found = found || it.key() == k;
            if (!found) warning(where + "." + it.key(), "unknown field (ignored)");
        }
    }

    std::optional<double> number(const json& obj, const std::string& where, const char* key, bool required) {
        if (!obj.contains(key)) {
            if (required) error(where + "." + key, "missing required field");
            return std::nullopt;
        }
        if (!obj[key].is_number()) {
            error(where + "." + key, "must be a number");
            return std::nullopt;
        }
        return obj[key].get<double>();
    }

    std::optional<long long> integer(const json& obj, const std::string& where, const char* key, bool required) {
        if (!obj.contains(key)) {
            if (required) error(where + "." + key, "missing required field");
            return std::nullopt;
        }
        if (!obj[key].is_number_integer()) {
            error(where + "." + key, "must be an integer");
            return std::nullopt;
        }
        return obj[key].get<long long>();
    }

    std::optional<std::string> string(const json& obj, const std::string& where, const char* key, bool required) {
        if (!obj.contains(key)) {
            if (required) error(where + "." + key, "missing required field");
            return std::nullopt;
        }
        if (!obj[key].is_string()) {
            error(where + "." + key, "must be a string");
            return std::nullopt;
        }
        return obj[key].get<std::string>();
    }

    // A number, [re, im] or {"re": .., "im": ..}.
    std::optional<cplx> complex_value(const json& v, const std::string& field) {
        if (v.is_number()) return cplx{v.get<double>(), 0.0};
        if (v.is_array() && v.size() == 2 && v[0].is_number() && v[1].is_number()) return cplx{v[0].get<double>(), v[1].get<double>()};
        if (v.is_object() && v.contains("re") && v["re"].is_number()) {
            double im = (v.contains("im") && v["im"].is_number()) ? v["im"].get<double>() : 0.0;
            return cplx{v["re"].get<double>(), im};
        }
        error(field, "must be a number, [re, im] or {\"re\", \"im\"}");
        return std::nullopt;
    }

    template <typename T, typename Convert>
    std::optional<std::vector<T>> list(const json& obj, const std::string& where, const char* key, bool required, Convert&& conv) {
        const std::string field = where + "." + key;
        if (!obj.contains(key)) {
            if (required) error(field, "missing required field");
            return std::nullopt;
        }
        if (!obj[key].is_array()) {
            error(field, "must be a list");
            return std::nullopt;
        }
        std::vector<T> out;
        const auto before = n_errors();
        for (std::size_t i = 0; i < obj[key].size(); ++i) {
            auto v = conv(obj[key][i], field + "[" + std::to_string(i) + "]");
            if (v) out.push_back(*v);
        }
        if (n_errors() != before) return std::nullopt;
        return out;
    }

    std::optional<double> as_number(const json& v, const std::string& field) {
        if (!v.is_number()) {
            error(field, "must be a number");
            return std::nullopt;
        }
        return v.get<double>();
    }
    std::optional<int> as_int(const json& v, const std::string& field) {
        if (!v.is_number_integer()) {
            error(field, "must be an integer");
            return std::nullopt;
        }
        return v.get<int>();
    }

private:
    ValidationReport& rep_;
    std::string prefix_;
};

bool on_grid(double t, double dt) {
    const double x = t / dt;
    return std::abs(x - std::round(x)) < 1e-9 * std::max(1.0, std::abs(x));
}

std::optional<CorrelationKernel> parse_kernel_fields(Reader& r, const json& k, const std::string& where) {
    if (!k.is_object()) {
        r.error(where, "must be an object");
        return std::nullopt;
    }
    auto type = r.string(k, where, "type", true);
    if (!type) return std::nullopt;
    if (*type == "ou") {
        r.known_keys(k, where, {"type", "gamma"});
        auto g = r.number(k, where, "gamma", true);
        if (!g) return std::nullopt;
        if (!(*g > 0.0)) {
            r.error(where + ".gamma", "must be > 0");
            return std::nullopt;
        }
        return CorrelationKernel::ornstein_uhlenbeck(*g);
    }
    if (*type == "markov") {
        r.known_keys(k, where, {"type", "rate"});
        auto rate = r.number(k, where, "rate", true);
        if (!rate) return std::nullopt;
        if (!(*rate > 0.0)) {
            r.error(where + ".rate", "must be > 0");
            return std::nullopt;
        }
        return CorrelationKernel::markov_delta(*rate);
    }
    if (*type == "tabulated") {
        r.known_keys(k, where, {"type", "dtau", "values"});
        auto dtau = r.number(k, where, "dtau", true);
        auto values = r.list<cplx>(k, where, "values", true, [&](const json& v, const std::string& f) { return r.complex_value(v, f); });
        if (!dtau || !values) return std::nullopt;
        if (!(*dtau > 0.0) || values->empty()) {
            r.error(where, "tabulated kernel needs dtau > 0 and at least one value");
            return std::nullopt;
        }
        return CorrelationKernel::tabulated(*dtau, *values);
    }
    r.error(where + ".type", "unknown kernel type '" + *type + "' (expected ou, markov or tabulated)");
    return std::nullopt;
}

std::optional<CorrelationKernel> parse_kernel(Reader& r, const json& k, const std::string& where) {
    try {
        return parse_kernel_fields(r, k, where);
    } catch (const std::invalid_argument& e) {
        r.error(where, e.what());
        return std::nullopt;
    }
}

const std::set<std::string>& known_channels() {
    static const std::set<std::string> names{"occupation", "fidelity", "negativity", "purity", "trace", "norm"};
    return names;
}

std::optional<ScenarioConfig> parse_one(const json& c, Reader& r) {
    ScenarioConfig cfg;
    const auto errors_before = r.n_errors();
    if (!c.is_object()) {
        r.error("config", "must be a JSON object");
        return std::nullopt;
    }
    r.known_keys(c, "config", {"name", "description", "model", "bath", "initial", "run", "output", "variants"});
    cfg.name = r.string(c, "config", "name", false).value_or("run");

    // model
    int n = 0;
    if (const json* m = r.block(c, "model", true)) {
        r.known_keys(*m, "model", {"n_cavities", "omegas", "lambdas", "boundary", "couplings", "truncation"});
        auto nc = r.integer(*m, "model", "n_cavities", true);
        if (nc && (*nc < 1 || *nc > 16)) r.error("model.n_cavities", "must be between 1 and 16");
        if (nc && *nc >= 1 && *nc <= 16) n = static_cast<int>(*nc);
        auto num = [&](const json& v, const std::string& f) { return r.as_number(v, f); };
        auto omegas = r.list<double>(*m, "model", "omegas", false, num);
        auto lambdas = r.list<double>(*m, "model", "lambdas", false, num);
        auto couplings = r.list<cplx>(*m, "model", "couplings", false, [&](const json& v, const std::string& f) { return r.complex_value(v, f); });
        const std::string boundary = r.string(*m, "model", "boundary", false).value_or("obc");
        if (boundary != "obc" && boundary != "pbc") r.error("model.boundary", "must be 'obc' or 'pbc'");
        cfg.model.boundary = boundary == "pbc" ? Boundary::Periodic : Boundary::Open;
        if (n > 0) {
            auto sized = [&](auto& opt, const char* key, auto fill) {
                using V = typename std::decay_t<decltype(*opt)>::value_type;
                if (!opt) return std::vector<V>(static_cast<std::size_t>(n), static_cast<V>(fill));
                if (static_cast<int>(opt->size()) != n) {
                    r.error(std::string("model.") + key, "has " + std::to_string(opt->size()) + " entries, expected " + std::to_string(n));
                    return std::vector<V>(static_cast<std::size_t>(n), static_cast<V>(fill));
                }
                return *opt;
            };
            cfg.model.omegas = sized(omegas, "omegas", 1.0);
            cfg.model.lambdas = sized(lambdas, "lambdas", 0.0);
            cfg.model.couplings = sized(couplings, "couplings", cplx{1.0, 0.0});
            if (cfg.model.boundary == Boundary::Open && n >= 2 && cfg.model.lambdas.back() != 0.0)
                r.warning("model.lambdas", "last entry " + std::to_string(cfg.model.lambdas.back()) +
                                               " couples cavity N to cavity 1 and is ignored with open boundaries");
            if (m->contains("truncation")) {
                const json& t = (*m)["truncation"];
                if (t.is_number_integer()) {
                    cfg.dims.assign(static_cast<std::size_t>(n), t.get<int>());
                } else if (t.is_array()) {
                    auto dims = r.list<int>(*m, "model", "truncation", true, [&](const json& v, const std::string& f) { return r.as_int(v, f); });
                    if (dims && static_cast<int>(dims->size()) != n)
                        r.error("model.truncation", "has " + std::to_string(dims->size()) + " entries, expected " + std::to_string(n));
                    else if (dims)
                        cfg.dims = *dims;
                } else {
                    r.error("model.truncation", "must be an integer or a list of integers");
                }
            } else {
                cfg.dims.assign(static_cast<std::size_t>(n), n <= 2 ? 15 : 8);
            }
            std::size_t total = 1;
            for (int d : cfg.dims) {
                if (d < 2) r.error("model.truncation", "every cavity needs at least 2 Fock levels");
                total *= static_cast<std::size_t>(std::max(d, 1));
            }
            if (total > HilbertSpec::kDefaultMaxDim)
                r.error("model.truncation", "total dimension " + std::to_string(total) + " exceeds the limit " +
                                                std::to_string(HilbertSpec::kDefaultMaxDim));
        }
    }

    // bath
    std::optional<CorrelationKernel> kernel;
    bool nbar_given = false;
    double nbar = 0.0;
    std::optional<CorrelationKernel> kernel2;
    if (const json* b = r.block(c, "bath", true)) {
        r.known_keys(*b, "bath", {"kernel", "nbar", "kernel2"});
        if (!b->contains("kernel"))
            r.error("bath.kernel", "missing required field");
        else
            kernel = parse_kernel(r, (*b)["kernel"], "bath.kernel");
        if (auto v = r.number(*b, "bath", "nbar", false)) {
            nbar_given = true;
            nbar = *v;
            if (nbar < 0.0) r.error("bath.nbar", "must be >= 0");
        }
        if (b->contains("kernel2")) kernel2 = parse_kernel(r, (*b)["kernel2"], "bath.kernel2");
    }
    if (kernel) cfg.bath = BathSpec{*kernel, std::max(0.0, nbar), kernel2};

    // initial state
    if (const json* s = r.block(c, "initial", true)) {
        auto type = r.string(*s, "initial", "type", true);
        if (type == "cat" || type == "coherent") {
            r.known_keys(*s, "initial", {"type", "cavity", "alpha"});
            cfg.initial.kind = *type == "cat" ? InitialState::Kind::Cat : InitialState::Kind::Coherent;
            auto cav = r.integer(*s, "initial", "cavity", false).value_or(1);
            if (n > 0 && (cav < 1 || cav > n)) r.error("initial.cavity", "must be between 1 and " + std::to_string(n));
            cfg.initial.cavity = static_cast<int>(cav) - 1;
            if (s->contains("alpha")) {
                if (auto a = r.complex_value((*s)["alpha"], "initial.alpha")) cfg.initial.alpha = *a;
            } else {
                r.error("initial.alpha", "missing required field");
            }
            if (cfg.initial.kind == InitialState::Kind::Cat && cfg.initial.alpha == cplx{0.0, 0.0})
                r.error("initial.alpha", "a cat state needs a nonzero amplitude");
            if (n > 0 && cav >= 1 && cav <= n && static_cast<int>(cfg.dims.size()) == n) {
                const double tail = coherent_tail_population(std::abs(cfg.initial.alpha), cfg.dims[static_cast<std::size_t>(cav - 1)]);
                if (tail > 1e-3)
                    r.error("initial.alpha", "truncation tail population " + std::to_string(tail) + " exceeds 1e-3; raise model.truncation");
                else if (tail > 1e-6)
                    r.warning("initial.alpha", "truncation tail population " + std::to_string(tail) + " exceeds 1e-6");
            }
        } else if (type == "fock" || type == "fock_superposition") {
            const bool single = *type == "fock";
            r.known_keys(*s, "initial", {"type", "occupations", "terms"});
            cfg.initial.kind = single ? InitialState::Kind::Fock : InitialState::Kind::FockSuperposition;
            auto occ_list = [&](const json& o, const std::string& f) -> std::optional<std::vector<int>> {
                if (!o.is_array()) {
                    r.error(f, "must be a list of occupation numbers");
                    return std::nullopt;
                }
                std::vector<int> occ;
                for (std::size_t i = 0; i < o.size(); ++i) {
                    auto v = r.as_int(o[i], f + "[" + std::to_string(i) + "]");
                    if (!v) return std::nullopt;
                    occ.push_back(*v);
                }
                if (n > 0 && static_cast<int>(occ.size()) != n) {
                    r.error(f, "needs " + std::to_string(n) + " occupation numbers");
                    return std::nullopt;
                }
                for (std::size_t i = 0; i < occ.size() && i < cfg.dims.size(); ++i)
                    if (occ[i] < 0 || occ[i] >= cfg.dims[i]) {
                        r.error(f, "occupation " + std::to_string(occ[i]) + " of cavity " + std::to_string(i + 1) + " is outside the truncation");
                        return std::nullopt;
                    }
                return occ;
            };
            if (single) {
                if (!s->contains("occupations"))
                    r.error("initial.occupations", "missing required field");
                else if (auto occ = occ_list((*s)["occupations"], "initial.occupations"))
                    cfg.initial.terms.emplace_back(*occ, 1.0);
            } else if (!s->contains("terms") || !(*s)["terms"].is_array() || (*s)["terms"].empty()) {
                r.error("initial.terms", "needs a non-empty list of {occupations, amplitude}");
            } else {
                const json& terms = (*s)["terms"];
                for (std::size_t i = 0; i < terms.size(); ++i) {
                    const std::string f = "initial.terms[" + std::to_string(i) + "]";
                    if (!terms[i].is_object() || !terms[i].contains("occupations")) {
                        r.error(f, "needs an 'occupations' list");
                        continue;
                    }
                    auto occ = occ_list(terms[i]["occupations"], f + ".occupations");
                    cplx amp = 1.0;
                    if (terms[i].contains("amplitude"))
                        if (auto a = r.complex_value(terms[i]["amplitude"], f + ".amplitude")) amp = *a;
                    if (occ) cfg.initial.terms.emplace_back(*occ, amp);
                }
                double norm = 0.0;
                for (auto& t : cfg.initial.terms) norm += std::norm(t.second);
                if (!cfg.initial.terms.empty() && norm == 0.0) r.error("initial.terms", "all amplitudes are zero");
            }
        } else if (type) {
            r.error("initial.type", "unknown initial state '" + *type + "' (expected cat, coherent, fock or fock_superposition)");
        }
    }

    // run
    if (const json* run = r.block(c, "run", true)) {
        r.known_keys(*run, "run", {"method", "t_max", "dt", "sample_dt", "n_traj", "seed", "lindblad_rate", "coeff_backend"});
        auto method = r.string(*run, "run", "method", true);
        if (method) {
            if (*method == "master_zero_t") cfg.run.method = Method::MasterZeroT;
            else if (*method == "master_finite_t") cfg.run.method = Method::MasterFiniteT;
            else if (*method == "lindblad") cfg.run.method = Method::Lindblad;
            else if (*method == "qsd") cfg.run.method = Method::Qsd;
            else r.error("run.method", "unknown method '" + *method + "' (expected master_zero_t, master_finite_t, lindblad or qsd)");
        }
        auto t_max = r.number(*run, "run", "t_max", true);
        auto dt = r.number(*run, "run", "dt", true);
        if (t_max && !(*t_max > 0.0)) r.error("run.t_max", "must be > 0");
        if (dt && !(*dt > 0.0)) r.error("run.dt", "must be > 0");
        if (t_max && dt && *t_max > 0.0 && *dt > 0.0) {
            if (*dt > *t_max) r.error("run.dt", "is larger than run.t_max");
            else if (!on_grid(*t_max, *dt)) r.error("run.t_max", "must be a whole number of steps run.dt");
            cfg.run.t_max = *t_max;
            cfg.run.dt = *dt;
        }
        cfg.run.sample_dt = r.number(*run, "run", "sample_dt", false).value_or(cfg.run.dt);
        if (!(cfg.run.sample_dt > 0.0) || !on_grid(cfg.run.sample_dt, cfg.run.dt))
            r.error("run.sample_dt", "must be a positive multiple of run.dt");
        if (auto nt = r.integer(*run, "run", "n_traj", cfg.run.method == Method::Qsd)) {
            if (*nt < 1) r.error("run.n_traj", "must be >= 1");
            cfg.run.n_traj = static_cast<int>(*nt);
        }
        if (auto seed = r.integer(*run, "run", "seed", false)) {
            if (*seed < 0) r.error("run.seed", "must be >= 0");
            cfg.run.seed = static_cast<std::uint64_t>(*seed);
        }
        cfg.run.lindblad_rate = r.number(*run, "run", "lindblad_rate", false);
        if (cfg.run.lindblad_rate && *cfg.run.lindblad_rate < 0.0) r.error("run.lindblad_rate", "must be >= 0");
        cfg.run.coeff_backend = r.string(*run, "run", "coeff_backend", false).value_or("auto");
        if (cfg.run.coeff_backend != "auto" && cfg.run.coeff_backend != "ou_fast" && cfg.run.coeff_backend != "volterra")
            r.error("run.coeff_backend", "must be auto, ou_fast or volterra");
    }

    // method / bath consistency
    if (kernel) {
        const Method m = cfg.run.method;
        if (kernel->is_markov() && m != Method::Lindblad)
            r.error("bath.kernel", "a markov kernel has no memory and is only accepted with run.method = lindblad");
        if (kernel2 && kernel2->is_markov() && m != Method::Lindblad)
            r.error("bath.kernel2", "a markov kernel is only accepted with run.method = lindblad");
        if (m == Method::MasterZeroT && (nbar > 0.0 || kernel2))
            r.error("run.method", "master_zero_t needs a zero-temperature bath (bath.nbar = 0, no kernel2); use master_finite_t");
        if (m == Method::MasterFiniteT && !nbar_given && !kernel2)
            r.error("bath.nbar", "master_finite_t needs an explicit bath.nbar");
        if (m == Method::Lindblad && kernel2)
            r.error("bath.kernel2", "lindblad runs take the heating rate from bath.nbar only");
        if (cfg.run.coeff_backend == "ou_fast") {
            if (!kernel->is_ou()) r.error("run.coeff_backend", "ou_fast needs an ou kernel");
            if (m != Method::MasterZeroT && m != Method::Qsd)
                r.error("run.coeff_backend", "ou_fast only applies to zero-temperature coefficients");
            if (nbar > 0.0 || kernel2) r.error("run.coeff_backend", "ou_fast only applies at zero temperature");
        }
        if (m == Method::Lindblad && cfg.run.lindblad_rate.has_value() == false && kernel->is_markov() == false)
            r.warning("run.lindblad_rate", "not set; using the rate matched to the kernel");
    }

    // output
    const json empty_output = json::object();
    const json* o = r.block(c, "output", false);
    if (!o) o = &empty_output;
    r.known_keys(*o, "output", {"channels", "wigner_times", "wigner_cavities", "wigner_window", "write_rho", "cat_alpha", "directory"});
    auto channels = r.list<std::string>(*o, "output", "channels", false, [&](const json& v, const std::string& f) -> std::optional<std::string> {
        if (!v.is_string()) {
            r.error(f, "must be a string");
            return std::nullopt;
        }
        return v.get<std::string>();
    });
    cfg.output.channels = channels.value_or(std::vector<std::string>{"occupation", "purity", "trace"});
    for (const auto& ch : cfg.output.channels)
        if (!known_channels().count(ch))
            r.error("output.channels", "unknown channel '" + ch + "' (expected occupation, fidelity, negativity, purity, trace or norm)");
    auto has = [&](const char* ch) {
        return std::find(cfg.output.channels.begin(), cfg.output.channels.end(), ch) != cfg.output.channels.end();
    };
    if (has("norm") && cfg.run.method != Method::Qsd) r.warning("output.channels", "'norm' is only produced by qsd runs");
    if (has("negativity") && n < 2) r.error("output.channels", "'negativity' needs at least two cavities");

    if (o->contains("cat_alpha")) {
        if (auto a = r.complex_value((*o)["cat_alpha"], "output.cat_alpha")) cfg.output.cat_alpha = *a;
    } else if (cfg.initial.kind == InitialState::Kind::Cat) {
        cfg.output.cat_alpha = cfg.initial.alpha;
    }
    if (has("fidelity") && !cfg.output.cat_alpha)
        r.error("output.cat_alpha", "the fidelity channel needs a reference cat amplitude");

    auto times = r.list<double>(*o, "output", "wigner_times", false, [&](const json& v, const std::string& f) { return r.as_number(v, f); });
    if (times) {
        for (double t : *times) {
            if (t < 0.0 || t > cfg.run.t_max + 1e-12)
                r.error("output.wigner_times", "time " + std::to_string(t) + " is outside [0, run.t_max]");
            else if (!on_grid(t, cfg.run.dt))
                r.error("output.wigner_times", "time " + std::to_string(t) + " is not on the run.dt grid");
        }
        cfg.output.wigner_times = *times;
    }
    auto cavs = r.list<int>(*o, "output", "wigner_cavities", false, [&](const json& v, const std::string& f) { return r.as_int(v, f); });
    if (cavs) {
        for (int cv : *cavs) {
            if (cv < 1 || cv > n)
                r.error("output.wigner_cavities", "cavity " + std::to_string(cv) + " does not exist");
            else
                cfg.output.wigner_cavities.push_back(cv - 1);
        }
    } else if (!cfg.output.wigner_times.empty()) {
        for (int i = 0; i < n; ++i) cfg.output.wigner_cavities.push_back(i);
    }
    if (const json* w = r.block(*o, "wigner_window", false)) {
        r.known_keys(*w, "output.wigner_window", {"x", "p", "points"});
        auto range = [&](const char* key, double& lo, double& hi) {
            auto v = r.list<double>(*w, "output.wigner_window", key, false, [&](const json& e, const std::string& f) { return r.as_number(e, f); });
            if (!v) return;
            if (v->size() != 2 || !((*v)[0] < (*v)[1])) {
                r.error(std::string("output.wigner_window.") + key, "must be [min, max] with min < max");
                return;
            }
            lo = (*v)[0];
            hi = (*v)[1];
        };
        range("x", cfg.output.wigner_window.x_min, cfg.output.wigner_window.x_max);
        range("p", cfg.output.wigner_window.p_min, cfg.output.wigner_window.p_max);
        if (auto pts = r.integer(*w, "output.wigner_window", "points", false)) {
            if (*pts < 2 || *pts > 1001)
                r.error("output.wigner_window.points", "must be between 2 and 1001");
            else
                cfg.output.wigner_window.nx = cfg.output.wigner_window.np = static_cast<int>(*pts);
        }
    }
    if (o->contains("write_rho")) {
        if ((*o)["write_rho"].is_boolean())
            cfg.output.write_rho = (*o)["write_rho"].get<bool>();
        else
            r.error("output.write_rho", "must be true or false");
    }
    cfg.output.directory = r.string(*o, "output", "directory", false).value_or(cfg.name);
    if (cfg.output.directory.empty()) r.error("output.directory", "must not be empty");

    if (r.n_errors() != errors_before) return std::nullopt;
    try {
        cfg.model.validate();
    } catch (const std::exception& e) {
        r.error("model", e.what());
        return std::nullopt;
    }
    cfg.resolved = c;
    return cfg;
}

// The base config plus one merged config per variant. With variants, every
// run (the base included, as "base") writes to a subdirectory.
std::vector<std::pair<std::string, json>> expand_variants(const json& config, ValidationReport& rep) {
    std::vector<std::pair<std::string, json>> runs;
    if (!config.is_object() || !config.contains("variants")) {
        runs.emplace_back("", config);
        return runs;
    }
    const json& variants = config["variants"];
    if (!variants.is_array() || variants.empty()) {
        rep.errors.push_back("variants: must be a non-empty list of objects");
        return runs;
    }
    json base = config;
    base.erase("variants");
    const std::string base_name = base.value("name", std::string("run"));
    const std::string base_dir =
        base.contains("output") && base["output"].is_object() && base["output"].contains("directory") && base["output"]["directory"].is_string()
            ? base["output"]["directory"].get<std::string>()
            : base_name;
    auto tagged = [&](json c, const std::string& tag) {
        c["name"] = base_name + "_" + tag;
        c["output"]["directory"] = base_dir + "/" + tag;
        return c;
    };
    runs.emplace_back("", tagged(base, "base"));
    std::set<std::string> seen{"base"};
    for (std::size_t i = 0; i < variants.size(); ++i) {
        const std::string where = "variants[" + std::to_string(i) + "]";
        const json& v = variants[i];
        if (!v.is_object() || !v.contains("name") || !v["name"].is_string() || v["name"].get<std::string>().empty()) {
            rep.errors.push_back(where + ": needs a non-empty 'name'");
            continue;
        }
        const std::string tag = v["name"].get<std::string>();
        if (!seen.insert(tag).second) {
            rep.errors.push_back(where + ".name: duplicate variant name '" + tag + "'");
            continue;
        }
        json patch = v;
        patch.erase("name");
        json merged = base;
        merged.merge_patch(patch);
        runs.emplace_back(where + ": ", tagged(merged, tag));
    }
    return runs;
}

std::vector<ScenarioConfig> parse_all(const json& config, ValidationReport& rep) {
    std::vector<ScenarioConfig> out;
    for (auto& [prefix, c] : expand_variants(config, rep)) {
        Reader r(rep, prefix);
        try {
            if (auto cfg = parse_one(c, r)) {
                rep.runs.push_back(cfg->name);
                out.push_back(std::move(*cfg));
            }
        } catch (const std::exception& e) {
            rep.errors.push_back(prefix + "config: " + e.what());
        }
    }
    return out;
}

}  // namespace

ValidationReport validate_config(const json& config) {
    ValidationReport rep;
    parse_all(config, rep);
    return rep;
}

std::vector<ScenarioConfig> parse_config(const json& config) {
    ValidationReport rep;
    auto runs = parse_all(config, rep);
    for (const auto& w : rep.warnings) warn("config: " + w);
    if (!rep.ok()) {
        std::string msg = "invalid config:";
        for (const auto& e : rep.errors) msg += "\n  " + e;
        throw ConfigError(msg);
    }
    return runs;
}

Ket InitialState::build(const HilbertSpec& spec) const {
    switch (kind) {
        case Kind::Cat: return cat_ket(spec, cavity, alpha);
        case Kind::Coherent: return coherent_ket(spec, cavity, alpha);
        case Kind::Fock:
        case Kind::FockSuperposition: {
            Ket psi{spec, Vec::Zero(static_cast<Eigen::Index>(spec.total_dim()))};
            for (const auto& [occ, amp] : terms) psi.amplitudes(static_cast<Eigen::Index>(spec.flat_index(occ))) += amp;
            const double nrm = psi.amplitudes.norm();
            if (nrm == 0.0) throw ConfigError("initial state has zero norm");
            psi.amplitudes /= nrm;
            return psi;
        }
    }
    throw ConfigError("unknown initial state kind");
}

// ----------------------------------------------------------------- running

namespace {

// Finite-temperature master coefficients cost O(n^3) in the node count;
// beyond this they are solved on a coarser grid and interpolated.
constexpr int kMaxMasterCoeffNodes = 400;

std::vector<int> sample_steps_for(const ScenarioConfig& cfg, const TimeGrid& grid) {
    const int every = std::max(1, static_cast<int>(std::lround(cfg.run.sample_dt / cfg.run.dt)));
    std::vector<int> steps = recorded_steps(grid.n_steps, every, {});
    for (double t : cfg.output.wigner_times) {
        const int k = grid.index_of(t);
        if (k >= 0) steps.push_back(k);
    }
    std::sort(steps.begin(), steps.end());
    steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
    return steps;
}

ZeroTCoeffs zero_t_coeffs(const ScenarioConfig& cfg, const TimeGrid& grid, int threads) {
    const bool fast = cfg.run.coeff_backend == "ou_fast" || (cfg.run.coeff_backend == "auto" && cfg.bath.base.is_ou());
    if (fast) return solve_zero_t_ou_fast(cfg.model, cfg.bath.kernel1(), grid);
    SolverOptions so;
    so.threads = threads;
    return solve_zero_t(cfg.model, cfg.bath, grid, so);
}

// Minimum eigenvalue over at most `budget` evenly spread snapshots (the last
// one always included); full diagonalization of every snapshot dominates the
// run time for the larger spaces.
double sampled_min_eigenvalue(const std::vector<Rho>& states, std::size_t budget) {
    if (states.empty()) return 0.0;
    const std::size_t n = states.size();
    const std::size_t stride = std::max<std::size_t>(1, (n + budget - 1) / budget);
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; i += stride) m = std::min(m, states[i].min_eigenvalue());
    return std::min(m, states.back().min_eigenvalue());
}

void fill_series(ScenarioResult& res, const std::vector<double>& mean_norm_sq, int threads) {
    const ScenarioConfig& cfg = res.config;
    const int n = cfg.model.n_cavities();
    const auto& states = res.states;
    const std::size_t nt = states.size();
    auto has = [&](const char* ch) {
        return std::find(cfg.output.channels.begin(), cfg.output.channels.end(), ch) != cfg.output.channels.end();
    };
    ObservableSeries& s = res.series;
    s.times = res.times;

    if (has("occupation")) {
        std::vector<std::vector<double>> occ(static_cast<std::size_t>(n), std::vector<double>(nt));
        for (std::size_t k = 0; k < nt; ++k) {
            const auto o = mode_occupations(states[k]);
            for (int i = 0; i < n; ++i) occ[static_cast<std::size_t>(i)][k] = o[static_cast<std::size_t>(i)];
        }
        for (int i = 0; i < n; ++i) s.add_channel("n" + std::to_string(i + 1), std::move(occ[static_cast<std::size_t>(i)]));
    }
    if (has("fidelity")) {
        std::vector<std::vector<double>> fid(static_cast<std::size_t>(n), std::vector<double>(nt));
        parallel_for(nt * static_cast<std::size_t>(n), threads, [&](std::size_t job) {
            const std::size_t k = job / static_cast<std::size_t>(n);
            const int i = static_cast<int>(job % static_cast<std::size_t>(n));
            const int keep[] = {i};
            fid[static_cast<std::size_t>(i)][k] = cat_fidelity(partial_trace(states[k], keep), *cfg.output.cat_alpha).fidelity;
        });
        for (int i = 0; i < n; ++i) s.add_channel("F" + std::to_string(i + 1), std::move(fid[static_cast<std::size_t>(i)]));
    }
    if (has("negativity") && n >= 2) {
        std::vector<std::pair<int, int>> pairs;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
        std::vector<std::vector<double>> neg(pairs.size(), std::vector<double>(nt));
        parallel_for(nt * pairs.size(), threads, [&](std::size_t job) {
            const std::size_t k = job / pairs.size();
            const std::size_t p = job % pairs.size();
            neg[p][k] = pair_negativity(states[k], pairs[p].first, pairs[p].second);
        });
        for (std::size_t p = 0; p < pairs.size(); ++p)
            s.add_channel("N" + std::to_string(pairs[p].first + 1) + std::to_string(pairs[p].second + 1), std::move(neg[p]));
    }
    if (has("purity")) {
        std::vector<double> pur(nt);
        for (std::size_t k = 0; k < nt; ++k) pur[k] = states[k].purity();
        s.add_channel("purity", std::move(pur));
    }
    if (has("trace")) {
        std::vector<cplx> tr(nt);
        for (std::size_t k = 0; k < nt; ++k) tr[k] = states[k].trace();
        s.add_complex_channel("trace", tr);
    }
    if (has("norm") && !mean_norm_sq.empty()) s.add_channel("mean_norm_sq", mean_norm_sq);
}

}  // namespace

ScenarioResult run_scenario(const ScenarioConfig& config, int threads) {
    const auto start = std::chrono::steady_clock::now();
    ScenarioResult res;
    res.config = config;
    const ScenarioConfig& cfg = res.config;
    const HilbertSpec spec(cfg.dims);
    const TimeGrid grid = TimeGrid::with_step(cfg.run.t_max, cfg.run.dt);
    const Ket psi0 = cfg.initial.build(spec);
    const Rho rho0 = projector(psi0);
    const std::vector<int> steps = sample_steps_for(cfg, grid);

    PropagationOptions popts;
    popts.sample_steps = steps;
    popts.monitor_positivity = false;
    std::vector<double> mean_norm_sq;
    RhoSeries series;
    bool have_series = false;

    switch (cfg.run.method) {
        case Method::MasterZeroT: {
            series = propagate_zero_t(cfg.model, zero_t_coeffs(cfg, grid, threads), rho0, grid, popts);
            have_series = true;
            break;
        }
        case Method::MasterFiniteT: {
            const TimeGrid cgrid = grid.n_steps > kMaxMasterCoeffNodes ? TimeGrid(grid.t_max, kMaxMasterCoeffNodes) : grid;
            SolverOptions so;
            so.threads = threads;
            const MasterCoeffsFT mc = solve_master_coeffs_ft(cfg.model, cfg.bath, cgrid, cgrid.t_max, so);
            for (int sw : mc.sweeps) res.diagnostics.coefficient_sweeps = std::max(res.diagnostics.coefficient_sweeps, sw);
            series = propagate_finite_t(cfg.model, mc, rho0, grid, popts);
            have_series = true;
            break;
        }
        case Method::Lindblad: {
            const double rate = cfg.run.lindblad_rate.value_or(matched_markov_rate(cfg.bath.base));
            series = propagate_lindblad(cfg.model, rate, cfg.bath.nbar, rho0, grid, popts);
            have_series = true;
            break;
        }
        case Method::Qsd: {
            EnsembleOptions eo;
            eo.n_traj = cfg.run.n_traj;
            eo.seed = cfg.run.seed;
            eo.threads = threads;
            eo.sample_steps = steps;
            EnsembleResult ens;
            if (cfg.bath.is_zero_temperature()) {
                ens = run_ensemble_zero_t(cfg.model, cfg.bath, zero_t_coeffs(cfg, grid, threads), psi0, grid, eo);
            } else {
                SolverOptions so;
                so.threads = threads;
                ens = run_ensemble_finite_t(cfg.model, cfg.bath, solve_finite_t(cfg.model, cfg.bath, grid, so), psi0, grid, eo);
            }
            res.times = ens.times;
            res.states = std::move(ens.rho);
            mean_norm_sq = ens.mean_norm_sq;
            if (!mean_norm_sq.empty()) {
                res.diagnostics.min_mean_norm_sq = *std::min_element(mean_norm_sq.begin(), mean_norm_sq.end());
                res.diagnostics.max_mean_norm_sq = *std::max_element(mean_norm_sq.begin(), mean_norm_sq.end());
            }
            for (const auto& r : res.states) {
                res.diagnostics.max_trace_drift = std::max(res.diagnostics.max_trace_drift, std::abs(r.trace() - 1.0));
                res.diagnostics.max_hermiticity_error = std::max(res.diagnostics.max_hermiticity_error, r.hermiticity_error());
            }
            break;
        }
    }
    if (have_series) {
        res.times = std::move(series.times);
        res.states = std::move(series.states);
        res.diagnostics.max_trace_drift = series.max_trace_drift;
        res.diagnostics.max_hermiticity_error = series.max_hermiticity_error;
    }
    for (const auto& r : res.states)
        for (Eigen::Index i = 0; i < r.matrix.size(); ++i)
            if (!std::isfinite(r.matrix.data()[i].real()) || !std::isfinite(r.matrix.data()[i].imag()))
                throw NumericalError("non-finite density matrix entries; reduce run.dt");
    res.diagnostics.min_eigenvalue = sampled_min_eigenvalue(res.states, 25);
    if (cfg.run.method != Method::Qsd && res.diagnostics.min_eigenvalue < -1e-6)
        warn("density matrix lost positivity: min eigenvalue " + std::to_string(res.diagnostics.min_eigenvalue));

    fill_series(res, mean_norm_sq, threads);

    for (double t : cfg.output.wigner_times) {
        std::size_t k = 0;
        while (k < res.times.size() && std::abs(res.times[k] - t) > 1e-9 * std::max(1.0, t)) ++k;
        if (k == res.times.size()) throw NumericalError("no snapshot recorded at Wigner time " + std::to_string(t));
        for (int cav : cfg.output.wigner_cavities) {
            const int keep[] = {cav};
            res.wigner_keys.emplace_back(t, cav);
            res.wigners.push_back(wigner(partial_trace(res.states[k], keep), cfg.output.wigner_window, threads));
        }
    }
    res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return res;
}

// ----------------------------------------------------------------- output

namespace {

std::string time_tag(double t) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3) << t;
    return os.str();
}

void write_file(const std::filesystem::path& p, const std::function<void(std::ostream&)>& body) {
    std::ofstream out(p);
    if (!out) throw ConfigError("cannot write '" + p.string() + "'");
    body(out);
    if (!out) throw ConfigError("write failed for '" + p.string() + "'");
}

}  // namespace

void write_outputs(const ScenarioResult& result, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory '" + dir.string() + "': " + ec.message());
    const ScenarioConfig& cfg = result.config;

    json files = json::array();
    write_file(dir / "observables.csv", [&](std::ostream& os) { result.series.write_csv(os); });
    files.push_back("observables.csv");
    for (std::size_t i = 0; i < result.wigners.size(); ++i) {
        const auto& [t, cav] = result.wigner_keys[i];
        const std::string name = "wigner_c" + std::to_string(cav + 1) + "_t" + time_tag(t) + ".csv";
        write_file(dir / name, [&](std::ostream& os) { write_wigner_csv(os, result.wigners[i]); });
        files.push_back(name);
    }
    if (cfg.output.write_rho) {
        write_file(dir / "rho.csv", [&](std::ostream& os) { write_rho_csv(os, result.times, result.states); });
        files.push_back("rho.csv");
    }

    const RunDiagnostics& d = result.diagnostics;
    json diag = {{"max_trace_drift", d.max_trace_drift},
                 {"max_hermiticity_error", d.max_hermiticity_error},
                 {"min_eigenvalue_sampled", d.min_eigenvalue}};
    if (cfg.run.method == Method::Qsd) {
        diag["min_mean_norm_sq"] = d.min_mean_norm_sq;
        diag["max_mean_norm_sq"] = d.max_mean_norm_sq;
    }
    if (cfg.run.method == Method::MasterFiniteT) diag["coefficient_sweeps_max"] = d.coefficient_sweeps;
    json manifest = {{"name", cfg.name},
                     {"version", CAVQSD_VERSION},
                     {"method", to_string(cfg.run.method)},
                     {"seed", cfg.run.seed},
                     {"n_traj", cfg.run.method == Method::Qsd ? cfg.run.n_traj : 0},
                     {"hilbert_dims", cfg.dims},
                     {"n_samples", result.times.size()},
                     {"wall_seconds", result.wall_seconds},
                     {"diagnostics", diag},
                     {"files", files},
                     {"config", cfg.resolved}};
    write_file(dir / "manifest.json", [&](std::ostream& os) { os << manifest.dump(2) << '\n'; });
}

void write_rho_csv(std::ostream& os, const std::vector<double>& times, const std::vector<Rho>& states) {
    if (times.size() != states.size()) throw std::invalid_argument("write_rho_csv: times and states differ in length");
    const Eigen::Index dim = states.empty() ? 0 : states.front().matrix.rows();
    os << "# dim=" << dim << '\n' << std::setprecision(17);
    for (std::size_t k = 0; k < states.size(); ++k) {
        os << times[k];
        const Mat& m = states[k].matrix;
        for (Eigen::Index i = 0; i < m.size(); ++i) os << ',' << m.data()[i].real() << ',' << m.data()[i].imag();
        os << '\n';
    }
}

std::pair<std::vector<double>, std::vector<Mat>> read_rho_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line.rfind("# dim=", 0) != 0) throw ConfigError("rho.csv: missing '# dim=' header");
    const long dim = std::stol(line.substr(6));
    if (dim <= 0) throw ConfigError("rho.csv: bad dimension");
    std::vector<double> times;
    std::vector<Mat> mats;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<double> v;
        std::size_t pos = 0;
        while (pos <= line.size()) {
            const std::size_t comma = std::min(line.find(',', pos), line.size());
            v.push_back(std::stod(line.substr(pos, comma - pos)));
            pos = comma + 1;
        }
        if (v.size() != static_cast<std::size_t>(1 + 2 * dim * dim)) throw ConfigError("rho.csv: row has the wrong number of entries");
        Mat m(dim, dim);
        for (Eigen::Index i = 0; i < m.size(); ++i)
            m.data()[i] = cplx{v[static_cast<std::size_t>(1 + 2 * i)], v[static_cast<std::size_t>(2 + 2 * i)]};
        times.push_back(v[0]);
        mats.push_back(std::move(m));
    }
    return {times, mats};
}

namespace {

template <typename T>
T read_from(const std::filesystem::path& p, const std::function<T(std::istream&)>& parse) {
    std::ifstream in(p);
    if (!in) throw ConfigError("cannot read '" + p.string() + "'");
    try {
        return parse(in);
    } catch (const std::invalid_argument& e) {
        throw ConfigError("malformed '" + p.string() + "': " + e.what());
    } catch (const std::out_of_range& e) {
        throw ConfigError("malformed '" + p.string() + "': " + e.what());
    }
}

void check_same_times(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ConfigError("runs have different numbers of samples (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
    for (std::size_t k = 0; k < a.size(); ++k)
        if (std::abs(a[k] - b[k]) > 1e-9 * std::max(1.0, std::abs(a[k])))
            throw ConfigError("runs sample different times (t = " + std::to_string(a[k]) + " vs " + std::to_string(b[k]) + ")");
}

}  // namespace

CompareReport compare_runs(const std::filesystem::path& a, const std::filesystem::path& b, CompareMetric metric) {
    CompareReport rep;
    rep.metric = metric;
    if (metric == CompareMetric::Channel) {
        auto load = [](const std::filesystem::path& d) {
            return read_from<ObservableSeries>(d / "observables.csv", [](std::istream& is) { return ObservableSeries::read_csv(is); });
        };
        const ObservableSeries sa = load(a), sb = load(b);
        check_same_times(sa.times, sb.times);
        rep.times = sa.times;
        for (const auto& name : sa.names) {
            if (!sb.has_channel(name)) continue;
            const auto& x = sa.channel(name);
            const auto& y = sb.channel(name);
            ChannelDeviation dev{name, 0.0, 0.0};
            for (std::size_t k = 0; k < x.size(); ++k) {
                const double e = std::abs(x[k] - y[k]);
                dev.max_abs = std::max(dev.max_abs, e);
                dev.mean_abs += e;
            }
            if (!x.empty()) dev.mean_abs /= static_cast<double>(x.size());
            rep.channels.push_back(dev);
        }
        if (rep.channels.empty()) throw ConfigError("the runs share no observable channels");
        return rep;
    }
    auto load = [](const std::filesystem::path& d) {
        return read_from<std::pair<std::vector<double>, std::vector<Mat>>>(d / "rho.csv", [](std::istream& is) { return read_rho_csv(is); });
    };
    const auto ra = load(a), rb = load(b);
    check_same_times(ra.first, rb.first);
    if (!ra.second.empty() && ra.second.front().rows() != rb.second.front().rows())
        throw ConfigError("runs have different Hilbert-space dimensions");
    rep.times = ra.first;
    for (std::size_t k = 0; k < ra.second.size(); ++k) {
        const double d = trace_distance(ra.second[k], rb.second[k]);
        rep.trace_distances.push_back(d);
        rep.max_trace_distance = std::max(rep.max_trace_distance, d);
        rep.mean_trace_distance += d;
    }
    if (!rep.trace_distances.empty()) rep.mean_trace_distance /= static_cast<double>(rep.trace_distances.size());
    return rep;
}

}  // namespace cavqsd
