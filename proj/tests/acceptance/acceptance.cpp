// Acceptance suite: one PASS/FAIL line per criterion. Criteria can be
// selected by number on the command line (default: all).
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "cavqsd/coeffs.hpp"
#include "cavqsd/types.hpp"
#include "cavqsd/hilbert.hpp"
#include "cavqsd/observables.hpp"
#include "cavqsd/propagators.hpp"
#include "cavqsd/qsd.hpp"
#include "cavqsd/scenario.hpp"

using namespace cavqsd;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

ScenarioResult run_json(const json& config) {
    const auto runs = parse_config(config);
    return run_scenario(runs.front());
}

const std::vector<double>& channel(const ScenarioResult& r, const std::string& name) { return r.series.channel(name); }

// Eigenvalues of the principal submatrix on the rows that carry any weight;
// the propagated states vanish identically outside their excitation sector.
double min_eigenvalue_on_support(const Mat& rho) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < rho.rows(); ++i)
        if (rho.row(i).cwiseAbs().maxCoeff() > 0.0) idx.push_back(i);
    if (idx.empty()) return 0.0;
    const Mat sub = rho(idx, idx);
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (sub + sub.adjoint()), Eigen::EigenvaluesOnly);
    double m = es.eigenvalues().minCoeff();
    if (static_cast<Eigen::Index>(idx.size()) < rho.rows()) m = std::min(m, 0.0);
    return m;
}

// ---- 1: invariants over every builtin master-equation run ----
Outcome invariants() {
    double trace = 0.0, herm = 0.0, eig = 0.0;
    int runs = 0;
    for (const auto& name : builtin_names()) {
        for (const auto& cfg : parse_config(builtin_config(name))) {
            if (cfg.run.method == Method::Qsd) continue;
            const ScenarioResult r = run_scenario(cfg);
            trace = std::max(trace, r.diagnostics.max_trace_drift);
            herm = std::max(herm, r.diagnostics.max_hermiticity_error);
            for (const auto& s : r.states) {
                trace = std::max(trace, std::abs(s.matrix.trace() - 1.0));
                herm = std::max(herm, (s.matrix - s.matrix.adjoint()).cwiseAbs().maxCoeff());
                eig = std::min(eig, min_eigenvalue_on_support(s.matrix));
            }
            ++runs;
        }
    }
    return {trace < 1e-8 && herm < 1e-10 && eig >= -1e-6,
            fmt("%d runs: max |Tr-1| %.2e (<1e-8), hermiticity %.2e (<1e-10), min eig %.2e (>=-1e-6)", runs, trace, herm,
                eig)};
}

// ---- 2: finite-T pipeline at nbar = 0 vs zero-T pipeline ----
json two_cavity_config(const std::string& method) {
    json c = {{"name", "t0_limit"},
              {"model",
               {{"n_cavities", 2},
                {"omegas", {1.0, 1.0}},
                {"lambdas", {1.0, 0.0}},
                {"boundary", "obc"},
                {"couplings", {1.0, 1.0}},
                {"truncation", 6}}},
              {"bath", {{"kernel", {{"type", "ou"}, {"gamma", 0.2}}}, {"nbar", 0.0}}},
              {"initial", {{"type", "cat"}, {"cavity", 1}, {"alpha", 1.0}}},
              {"run", {{"method", method}, {"t_max", 10.0}, {"dt", 0.025}, {"sample_dt", 0.05}}}};
    return c;
}

Outcome t0_limit() {
    const auto ft = run_json(two_cavity_config("master_finite_t"));
    const auto zt = run_json(two_cavity_config("master_zero_t"));
    double dev = 0.0;
    for (std::size_t k = 0; k < zt.states.size(); ++k)
        dev = std::max(dev, (ft.states[k].matrix - zt.states[k].matrix).cwiseAbs().maxCoeff());
    return {dev < 1e-6, fmt("N=2 d=6 gamma=0.2 t<=10: max |rho_FT - rho_0T| %.2e (<1e-6)", dev)};
}

// ---- 3: OU fast path vs generic Volterra solver ----
Outcome backends() {
    double worst = 0.0;
    std::string per;
    for (const char* name : {"fig1", "fig2_obc", "fig2_pbc"}) {
        const auto cfg = parse_config(builtin_config(name)).front();
        const TimeGrid grid(cfg.run.t_max, static_cast<int>(std::lround(cfg.run.t_max / cfg.run.dt)));
        const auto fast = solve_zero_t_ou_fast(cfg.model, cfg.bath.kernel1(), grid);
        const auto slow = solve_zero_t(cfg.model, cfg.bath, grid);
        double d = 0.0;
        for (std::size_t k = 0; k < fast.P.size(); ++k) d = std::max(d, (fast.P[k] - slow.P[k]).cwiseAbs().maxCoeff());
        worst = std::max(worst, d);
        per += fmt(" %s %.2e", name, d);
    }
    return {worst < 1e-6, "max |dP|:" + per + " (<1e-6)"};
}

// ---- 4: QSD ensemble vs zero-T master equation on fig1 ----
Outcome qsd_vs_master() {
    const auto cfg = parse_config(builtin_config("fig1")).front();
    const TimeGrid grid(cfg.run.t_max, static_cast<int>(std::lround(cfg.run.t_max / cfg.run.dt)));
    const HilbertSpec spec(cfg.dims);
    const Ket psi0 = cfg.initial.build(spec);
    const auto coeffs = solve_zero_t_ou_fast(cfg.model, cfg.bath.kernel1(), grid);
    const int every = static_cast<int>(std::lround(cfg.run.sample_dt / cfg.run.dt));
    PropagationOptions po;
    po.sample_every = every;
    po.monitor_positivity = false;
    const RhoSeries me = propagate_zero_t(cfg.model, coeffs, projector(psi0), grid, po);

    const std::vector<int> ns = {500, 1000, 2000, 4000, 8000};
    EnsembleOptions eo;
    eo.n_traj = ns.back();
    eo.seed = 20240611;
    eo.sample_every = every;
    eo.checkpoints = ns;
    std::vector<double> mean_td, max_td;
    run_ensemble_zero_t(cfg.model, cfg.bath, coeffs, psi0, grid, eo, [&](const EnsembleResult& e) {
        double mx = 0.0, sum = 0.0;
        for (std::size_t k = 0; k < e.rho.size(); ++k) {
            const double td = trace_distance(e.rho[k].matrix, me.states[k].matrix);
            mx = std::max(mx, td);
            sum += td;
        }
        max_td.push_back(mx);
        mean_td.push_back(sum / static_cast<double>(e.rho.size() - 1));  // t = 0 is exact
    });
    // Least-squares slope of log(mean TD) against log n.
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double m = static_cast<double>(ns.size());
    for (std::size_t i = 0; i < ns.size(); ++i) {
        const double x = std::log(ns[i]), y = std::log(mean_td[i]);
        sx += x, sy += y, sxx += x * x, sxy += x * y;
    }
    const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    const double td2000 = max_td[2];
    std::string curve;
    for (std::size_t i = 0; i < ns.size(); ++i) curve += fmt(" %d:%.4f", ns[i], mean_td[i]);
    return {td2000 < 0.05 && std::abs(slope + 0.5) <= 0.15,
            fmt("n=2000 max TD %.4f (<0.05); slope %.3f (-0.5+-0.15); mean TD", td2000, slope) + curve};
}

// ---- 5: Markov limit ----
json fig1_window(const std::string& method, double gamma, double t_max, double dt, double sample_dt) {
    json c = builtin_config("fig1");
    c["bath"]["kernel"]["gamma"] = gamma;
    c["run"] = {{"method", method}, {"t_max", t_max}, {"dt", dt}, {"sample_dt", sample_dt}};
    c["output"].erase("wigner_times");
    c["output"].erase("wigner_cavities");
    return c;
}

Outcome markov_limit() {
    const auto ou = run_json(fig1_window("master_zero_t", 40.0, 10.0, 0.005, 0.1));
    const auto lb = run_json(fig1_window("lindblad", 40.0, 10.0, 0.005, 0.1));
    double td = 0.0;
    for (std::size_t k = 0; k < ou.states.size(); ++k) td = std::max(td, trace_distance(ou.states[k].matrix, lb.states[k].matrix));
    return {td < 0.03, fmt("OU gamma=40 vs Lindblad (rate %.3f): max TD %.4f over t<=10 (<0.03)",
                           matched_markov_rate(CorrelationKernel::ornstein_uhlenbeck(40.0)), td)};
}

// ---- 6: memory-assisted cat transfer ----
Outcome cat_transfer() {
    json c = builtin_config("fig1");
    c["output"].erase("wigner_times");
    const auto r = run_json(c);
    const auto& t = r.times;
    const auto& f2 = channel(r, "F2");
    std::size_t best = 0;
    double peak = -1.0;
    for (std::size_t k = 0; k < t.size(); ++k)
        if (t[k] > 5.0 && t[k] < 35.0 && f2[k] > peak) peak = f2[k], best = k;
    const std::vector<int> keep = {1};
    WignerWindow win;
    win.x_min = win.p_min = -3.0;
    win.x_max = win.p_max = 3.0;
    win.nx = win.np = 121;
    const double wmin = wigner(partial_trace(r.states[best], keep), win).min();

    c["run"]["method"] = "lindblad";
    const auto m = run_json(c);
    const auto& mf2 = channel(m, "F2");
    double mpeak = 0.0;
    for (std::size_t k = 0; k < m.times.size(); ++k)
        if (m.times[k] > 5.0 && m.times[k] < 35.0) mpeak = std::max(mpeak, mf2[k]);
    return {peak > 0.8 && wmin < -0.01 && mpeak < 0.5,
            fmt("F2 peak %.4f at t=%.2f (>0.8), W2 min there %.4f (<-0.01); Markov F2 peak %.4f (<0.5)", peak, t[best], wmin,
                mpeak)};
}

// ---- 7: three-cavity transfer and revival ----
Outcome three_cavity() {
    const auto o = run_json(builtin_config("fig2_obc"));
    const auto& t = o.times;
    double f3 = 0.0, f3t = 0.0, f2max = 0.0;
    for (std::size_t k = 0; k < t.size(); ++k) {
        f2max = std::max(f2max, channel(o, "F2")[k]);
        if (t[k] >= 1.8 && t[k] <= 2.6 && channel(o, "F3")[k] > f3) f3 = channel(o, "F3")[k], f3t = t[k];
    }
    const bool obc = f3 >= 0.9 && f2max < f3;

    const auto p = run_json(builtin_config("fig2_pbc"));
    const auto& f1 = channel(p, "F1");
    double rev = -1.0, revt = 0.0;
    for (std::size_t k = 1; k + 1 < p.times.size(); ++k)
        if (std::abs(p.times[k] - 2.0) <= 0.3 && f1[k] >= f1[k - 1] && f1[k] >= f1[k + 1] && f1[k] > rev)
            rev = f1[k], revt = p.times[k];
    double others = 0.0;
    for (std::size_t k = 0; k < p.times.size(); ++k)
        others = std::max({others, channel(p, "F2")[k], channel(p, "F3")[k]});
    const bool pbc = rev > 0.0 && others < rev;
    return {obc && pbc, fmt("OBC: F3 peak %.4f at t=%.2f (>=0.9), max F2 %.4f (<peak); PBC: F1 revival %.4f at t=%.2f, max F2,F3 "
                            "%.4f (<revival)",
                            f3, f3t, f2max, rev, revt, others)};
}

// ---- 8: entanglement transfer ----
Outcome entanglement() {
    const auto o = run_json(builtin_config("fig5_obc"));
    const auto& n23 = channel(o, "N23");
    const double n12_0 = channel(o, "N12").front();
    const auto km = static_cast<std::size_t>(std::max_element(n23.begin(), n23.end()) - n23.begin());
    const double tm = o.times[km];
    const double n12 = channel(o, "N12")[km], n13 = channel(o, "N13")[km];
    const auto p = run_json(builtin_config("fig5_pbc"));
    const auto& p23 = channel(p, "N23");
    const double pmax = *std::max_element(p23.begin(), p23.end());
    return {std::abs(n12_0 - 0.5) < 1e-9 && tm >= 1.8 && tm <= 2.6 && n12 < 0.1 && n13 < 0.1 && pmax < n23[km],
            fmt("N12(0) %.10f (=0.5); OBC N23 max %.4f at t=%.2f (in [1.8,2.6]), N12 %.4f N13 %.4f (<0.1); PBC N23 max %.4f "
                "(<OBC)",
                n12_0, n23[km], tm, n12, n13, pmax)};
}

// ---- 9: pseudomode equivalence ----
// Cavity 1 hopping at lambda to a pseudomode (omega_p = 0) damped at Gamma
// is cavity 1 in an OU bath with gamma = Gamma/2, l^2 = 2 lambda^2 / gamma.
Outcome pseudomode() {
    const double lambda = 1.0, Gamma = 8.0, gamma = Gamma / 2.0, l = std::sqrt(2.0 * lambda * lambda / gamma);
    const json run = {{"t_max", 10.0}, {"dt", 0.005}, {"sample_dt", 0.1}};
    json pm = {{"name", "pseudomode"},
               {"model",
                {{"n_cavities", 2},
                 {"omegas", {1.0, 0.0}},
                 {"lambdas", {lambda, 0.0}},
                 {"boundary", "obc"},
                 {"couplings", {0.0, 1.0}},
                 {"truncation", {15, 15}}}},
               {"bath", {{"kernel", {{"type", "markov"}, {"rate", Gamma}}}, {"nbar", 0.0}}},
               {"initial", {{"type", "cat"}, {"cavity", 1}, {"alpha", 1.0}}},
               {"run", run}};
    pm["run"]["method"] = "lindblad";
    pm["run"]["lindblad_rate"] = Gamma;
    json ou = {{"name", "ou_single"},
               {"model", {{"n_cavities", 1}, {"omegas", {1.0}}, {"lambdas", {0.0}}, {"boundary", "obc"}, {"couplings", {l}}, {"truncation", 15}}},
               {"bath", {{"kernel", {{"type", "ou"}, {"gamma", gamma}}}, {"nbar", 0.0}}},
               {"initial", {{"type", "cat"}, {"cavity", 1}, {"alpha", 1.0}}},
               {"run", run}};
    ou["run"]["method"] = "master_zero_t";
    const auto a = run_json(pm);
    const auto b = run_json(ou);
    const auto& na = channel(a, "n1");
    const auto& nb = channel(b, "n1");
    double rel = 0.0;
    for (std::size_t k = 0; k < na.size(); ++k) rel = std::max(rel, std::abs(na[k] - nb[k]) / nb[k]);
    return {rel < 0.05, fmt("lambda=1 Gamma=8 vs gamma=4 l^2=0.5: max relative n1 deviation %.2e over t<=10 (<5%%), n1(10) %.3e",
                            rel, nb.back())};
}

// ---- 10: observable oracles ----
Outcome oracles() {
    const double e2 = std::exp(-2.0);
    const HilbertSpec one({40});
    std::vector<double> err;
    err.push_back(std::abs(cat_normalization(1.0) - 2.0 * (1.0 + e2)));
    const std::vector<int> vac = {0};
    const Rho vacuum = projector(fock_ket(one, vac));
    err.push_back(std::abs(cat_fidelity(vacuum, 1.0).fidelity - 2.0 * std::exp(-1.0) / (1.0 + e2)));
    err.push_back(std::abs(mode_occupations(projector(cat_ket(one, 0, 1.0)))[0] - std::tanh(1.0)));
    const HilbertSpec two({2, 2});
    const std::vector<int> o00 = {0, 0}, o11 = {1, 1};
    Ket bell = fock_ket(two, o00);
    bell.amplitudes = (bell.amplitudes + fock_ket(two, o11).amplitudes) / std::sqrt(2.0);
    err.push_back(std::abs(pair_negativity(projector(bell), 0, 1) - 0.5));
    err.push_back(std::abs(wigner_point(vacuum, 0.0) - 2.0 / std::numbers::pi));
    const double worst = *std::max_element(err.begin(), err.end());
    return {worst < 1e-6, fmt("Z %.1e, vacuum-cat F %.1e, cat <n> %.1e, Bell N %.1e, W_vac(0) %.1e (each <1e-6)", err[0], err[1],
                              err[2], err[3], err[4])};
}

struct Criterion {
    int id;
    const char* title;
    double budget_s;
    std::function<Outcome()> check;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> all = {
        {1, "structural invariants", 60, invariants},
        {2, "T->0 consistency", 300, t0_limit},
        {3, "backend equivalence", 60, backends},
        {4, "QSD vs master equation", 900, qsd_vs_master},
        {5, "Markov limit", 120, markov_limit},
        {6, "memory-assisted cat transfer", 300, cat_transfer},
        {7, "three-cavity transfer", 600, three_cavity},
        {8, "entanglement transfer", 600, entanglement},
        {9, "pseudomode equivalence", 120, pseudomode},
        {10, "observable oracles", 60, oracles},
    };
    std::set<int> chosen;
    for (int i = 1; i < argc; ++i) chosen.insert(std::atoi(argv[i]));
    set_warning_sink([](const std::string&) {});

    int failed = 0;
    for (const auto& c : all) {
        if (!chosen.empty() && !chosen.count(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.check();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = secs < c.budget_s;
        if (!in_time) o.detail += fmt(" [runtime over %.0f s budget]", c.budget_s);
        const bool pass = o.pass && in_time;
        failed += pass ? 0 : 1;
        std::printf("%s %2d %-30s %7.1fs  %s\n", pass ? "PASS" : "FAIL", c.id, c.title, secs, o.detail.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
