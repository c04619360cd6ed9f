#include <cstdlib>
#include <iomanip>
#include <iostream>

#include <CLI11.hpp>

#include "cavqsd/scenario.hpp"

using namespace cavqsd;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

std::filesystem::path output_root(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv(kOutputRootEnv); env && *env) return env;
    return "runs";
}

int simulate(const std::string& config_path, std::optional<std::uint64_t> seed, int threads, const std::string& out) {
    auto runs = parse_config(load_config_json(config_path));
    const auto root = output_root(out);
    for (auto& cfg : runs) {
        if (seed) {
            cfg.run.seed = *seed;
            cfg.resolved["run"]["seed"] = *seed;
        }
        const auto dir = root / cfg.output.directory;
        std::cerr << "running " << cfg.name << " (" << to_string(cfg.run.method) << ") -> " << dir.string() << '\n';
        const ScenarioResult res = run_scenario(cfg, threads);
        write_outputs(res, dir);
        std::cerr << "  " << res.times.size() << " samples in " << std::fixed << std::setprecision(2) << res.wall_seconds
                  << " s, min eigenvalue " << std::scientific << std::setprecision(2) << res.diagnostics.min_eigenvalue
                  << ", max trace drift " << res.diagnostics.max_trace_drift << std::defaultfloat << '\n';
    }
    return 0;
}

int validate(const std::string& config_path) {
    const ValidationReport rep = validate_config(load_config_json(config_path));
    for (const auto& e : rep.errors) std::cout << "error: " << e << '\n';
    for (const auto& w : rep.warnings) std::cout << "warning: " << w << '\n';
    if (!rep.ok()) return kExitConfig;
    std::cout << "ok:";
    for (const auto& r : rep.runs) std::cout << ' ' << r;
    std::cout << '\n';
    return 0;
}

int compare(const std::string& a, const std::string& b, const std::string& metric_name) {
    const CompareMetric metric = metric_name == "channel" ? CompareMetric::Channel : CompareMetric::TraceDistance;
    const CompareReport rep = compare_runs(a, b, metric);
    std::cout << std::setprecision(6);
    if (metric == CompareMetric::Channel) {
        std::cout << "channel,max_abs,mean_abs\n";
        for (const auto& c : rep.channels) std::cout << c.name << ',' << c.max_abs << ',' << c.mean_abs << '\n';
    } else {
        std::cout << "t,trace_distance\n";
        for (std::size_t k = 0; k < rep.times.size(); ++k) std::cout << rep.times[k] << ',' << rep.trace_distances[k] << '\n';
        std::cout << "# max " << rep.max_trace_distance << " mean " << rep.mean_trace_distance << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Coupled cavities in a common non-Markovian bath"};
    app.set_version_flag("--version", std::string(CAVQSD_VERSION));
    app.require_subcommand(1);

    std::string config, out, dir_a, dir_b, metric;
    std::uint64_t seed = 0;
    int threads = 0;

    auto* sim = app.add_subcommand("simulate", "run a config file or builtin scenario");
    sim->add_option("config", config, "config file or builtin name (fig1 ... fig6)")->required();
    auto* seed_opt = sim->add_option("--seed", seed, "overrides run.seed");
    sim->add_option("--threads", threads, "worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
    sim->add_option("--out", out, std::string("output root (default: $") + kOutputRootEnv + " or ./runs)");

    auto* val = app.add_subcommand("validate", "check a config without running it");
    val->add_option("config", config, "config file or builtin name")->required();

    auto* cmp = app.add_subcommand("compare", "compare two run directories");
    cmp->add_option("dirA", dir_a)->required();
    cmp->add_option("dirB", dir_b)->required();
    cmp->add_option("--metric", metric)->required()->check(CLI::IsMember({"trace_distance", "channel"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    set_warning_sink([](const std::string& m) { std::cerr << "warning: " << m << '\n'; });
    try {
        if (*sim) return simulate(config, *seed_opt ? std::optional<std::uint64_t>(seed) : std::nullopt, threads, out);
        if (*val) return validate(config);
        if (*cmp) return compare(dir_a, dir_b, metric);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    }
    return 0;
}
