#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cavqsd/hilbert.hpp"
#include "cavqsd/model.hpp"
#include "cavqsd/observables.hpp"

namespace cavqsd {

using nlohmann::json;

// Environment variable naming the default output root of `simulate`.
inline constexpr const char* kOutputRootEnv = "CAVQSD_OUTPUT_ROOT";

struct InitialState {
    enum class Kind { Cat, Coherent, Fock, FockSuperposition };
    Kind kind = Kind::Cat;
    int cavity = 0;  // 0-based
    cplx alpha = 1.0;
    // Fock / superposition terms: occupations and (unnormalized) amplitude.
    std::vector<std::pair<std::vector<int>, cplx>> terms;

    Ket build(const HilbertSpec& spec) const;
};

enum class Method { MasterZeroT, MasterFiniteT, Lindblad, Qsd };
std::string to_string(Method m);

struct RunSpec {
    double t_max = 10.0;
    double dt = 0.05;
    double sample_dt = 0.5;
    Method method = Method::MasterZeroT;
    int n_traj = 0;
    std::uint64_t seed = 1;
    std::optional<double> lindblad_rate;  // default: matched to the kernel
    std::string coeff_backend = "auto";   // auto | ou_fast | volterra
};

struct OutputSpec {
    std::vector<std::string> channels;  // occupation, fidelity, negativity, purity, trace, norm
    std::vector<double> wigner_times;
    std::vector<int> wigner_cavities;  // 0-based
    WignerWindow wigner_window;
    bool write_rho = false;
    std::optional<cplx> cat_alpha;  // reference cat for fidelities
    std::string directory;          // relative to the output root
};

struct ScenarioConfig {
    std::string name;
    CavityChainModel model;
    std::vector<int> dims;
    BathSpec bath = BathSpec::zero_temperature(CorrelationKernel::ornstein_uhlenbeck(1.0));
    InitialState initial;
    RunSpec run;
    OutputSpec output;
    json resolved;  // the config object this was parsed from
};

struct ValidationReport {
    std::vector<std::string> errors;
    std::vector<std::string> warnings;
    std::vector<std::string> runs;  // names of the runs the config expands to
    bool ok() const { return errors.empty(); }
};

std::vector<std::string> builtin_names();
json builtin_config(const std::string& name);

// Reads a JSON file, or a builtin when `path_or_name` names one and no such
// file exists. Throws ConfigError with line context on parse failures.
json load_config_json(const std::string& path_or_name);

// Full consistency report without running.
ValidationReport validate_config(const json& config);

// Expands `variants` (each merged into the base as a JSON merge patch) and
// parses every run. Throws ConfigError listing all problems.
std::vector<ScenarioConfig> parse_config(const json& config);

struct RunDiagnostics {
    double max_trace_drift = 0.0;
    double max_hermiticity_error = 0.0;
    double min_eigenvalue = 0.0;
    double min_mean_norm_sq = 1.0, max_mean_norm_sq = 1.0;  // qsd only
    int coefficient_sweeps = 0;                              // finite-T master only
};

struct ScenarioResult {
    ScenarioConfig config;
    std::vector<double> times;
    std::vector<Rho> states;
    ObservableSeries series;
    std::vector<std::pair<double, int>> wigner_keys;  // (time, cavity)
    std::vector<WignerGrid> wigners;
    RunDiagnostics diagnostics;
    double wall_seconds = 0.0;
};

// Runs one scenario in memory. `threads` bounds internal parallelism
// (0 = all cores); results do not depend on it.
ScenarioResult run_scenario(const ScenarioConfig& config, int threads = 0);

// Writes observables.csv, wigner_*.csv, optional rho.csv and manifest.json.
void write_outputs(const ScenarioResult& result, const std::filesystem::path& dir);

// rho.csv: one row per time, t followed by Re/Im interleaved entries of the
// column-major flattened matrix.
void write_rho_csv(std::ostream& os, const std::vector<double>& times, const std::vector<Rho>& states);
std::pair<std::vector<double>, std::vector<Mat>> read_rho_csv(std::istream& is);

enum class CompareMetric { TraceDistance, Channel };

struct ChannelDeviation {
    std::string name;
    double max_abs = 0.0;
    double mean_abs = 0.0;
};

struct CompareReport {
    CompareMetric metric = CompareMetric::Channel;
    std::vector<double> times;
    std::vector<ChannelDeviation> channels;
    std::vector<double> trace_distances;
    double max_trace_distance = 0.0;
    double mean_trace_distance = 0.0;
};

// Compares two run directories on their common channels, or on the trace
// distance of their rho.csv snapshots. Throws ConfigError on misaligned
// time grids or missing data.
CompareReport compare_runs(const std::filesystem::path& a, const std::filesystem::path& b, CompareMetric metric);

}  // namespace cavqsd
