#pragma once

#include "trackmpc/analysis.hpp"
#include "trackmpc/controllers.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace trackmpc {

/**
 * @brief Line-oriented "[section]" / "key = value" document.
 *
 * Keys keep their insertion order inside a section so that serialization is
 * stable. '#' and ';' at the start of a line begin a comment.
 */
class IniDocument {
public:
    static IniDocument parse(const std::string& text);

    void set(const std::string& section, const std::string& key, const std::string& value);
    [[nodiscard]] bool has(const std::string& section, const std::string& key) const;
    /// Throws ConfigError naming "section.key" when absent.
    [[nodiscard]] const std::string& get(const std::string& section, const std::string& key) const;
    [[nodiscard]] std::string get_or(const std::string& section, const std::string& key,
                                     const std::string& fallback) const;
    [[nodiscard]] std::vector<std::string> sections() const;
    [[nodiscard]] std::string serialize() const;

private:
    std::vector<std::pair<std::string, std::vector<std::pair<std::string, std::string>>>> sections_;
};

/// Extra tracking run outside the (N, eta) grid, e.g. the constant-lambda comparison.
struct AblationSpec {
    std::string name;
    int N = 0;
    double eta = 0.0;
    ScalingFn lambda;
};

struct ExperimentConfig {
    std::string name;
    std::string model;
    ConstraintSpec spec;
    Matrix Q;
    Matrix R;
    Vector offset_weights;
    Vector x_e;
    Vector u_e;
    ScalingFn lambda = ScalingFn::affine(1.0, 1.0);
    Vector x0;
    std::vector<int> N_list;
    std::vector<double> eta_list;
    int K = 300;
    bool standard_runs = true;
    WarmStartMode warm_start = WarmStartMode::shift;
    std::vector<AblationSpec> ablations;

    bool oracle_enabled = true;
    OracleOptions oracle;
    bool constants_enabled = true;
    ConstantsOptions constants;

    std::uint64_t seed = 0;
    std::string output_dir = "out";

    /// Builds the model and checks dimensions and boxes. Throws ConfigError.
    void validate() const;
};

/// Throws ConfigError naming the offending field.
[[nodiscard]] ExperimentConfig parse_config(const std::string& text);
[[nodiscard]] ExperimentConfig load_config(const std::string& path);
[[nodiscard]] std::string serialize_config(const ExperimentConfig& config);

/// Named presets: "cstr-paper" and "scalar-lq". Throws ConfigError for other names.
[[nodiscard]] ExperimentConfig preset(const std::string& name);
[[nodiscard]] std::vector<std::string> preset_names();

/// Model, costs and the best reachable reference assembled from a config.
struct ExperimentSetup {
    ModelPtr model;
    ConstraintSpec spec;
    StageCost cost;
    OffsetCost T;  ///< shifted so that T(r_d) = 0
    Reference r_d;
};

[[nodiscard]] ExperimentSetup make_setup(const ExperimentConfig& config);

struct SweepRow {
    std::string scheme;  ///< tracking, standard or ablation:<name>
    int N = 0;
    double eta = 0.0;    ///< NaN for standard MPC
    std::string lambda;
    double J = 0.0;
    double sup_r = 0.0;
    double gamma_fit = 0.0;
    double bound_rhs = 0.0;
    std::string status;
    std::string run_file;
};

struct ExperimentSummary {
    Reference r_d;
    std::vector<SweepRow> rows;
    std::optional<OracleResult> oracle;
    std::string oracle_status;
    std::optional<ConstantsEstimate> constants;
    std::vector<PerformanceReport> reports;
    double eta_hat = 0.0;
    std::vector<std::string> files;
};

struct RunOptions {
    int jobs = 1;
};

/**
 * Runs every (N, eta) tracking cell, the standard MPC runs, the ablations,
 * the oracle and the constants estimate, and writes run CSVs, sweep.csv,
 * manifold.csv and summary.txt into config.output_dir. Cell failures are
 * recorded in the status column. Outputs do not depend on options.jobs.
 */
ExperimentSummary run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path);
/// Chart parameter, x_r, u_r and T(r) on a grid of the admissible interval.
void write_manifold_csv(const ExperimentSetup& setup, const std::string& path, int points = 401);
/// t, x_1..x_n, u_1..u_m, ell for the oracle closed loop (last row holds the state only).
void write_oracle_csv(const OracleResult& oracle, const StageCost& cost, const Reference& r_d,
                      const std::string& path);

}  // namespace trackmpc
