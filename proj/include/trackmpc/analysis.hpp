#pragma once

#include "trackmpc/controllers.hpp"
#include "trackmpc/costs.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace trackmpc {

enum class Provenance { analytic, sampled };

[[nodiscard]] std::string to_string(Provenance p);

/// Constants c1..c6 of the stage-cost bounds.
struct StageConstants {
    double c1 = 0.0;  ///< c1 |x - x_r|^2 <= l*(x, r)
    double c2 = 0.0;  ///< l*(x, r) <= c2 |x - x_r|^2
    double c3 = 0.0;  ///< l(r1) <= c3 l(r2) + c4 |r1|_{r2}^2
    double c4 = 0.0;
    double c5 = 0.0;  ///< l(r1) <= l(r2) + c5 |r1|_{r2}^2 + c6 |r1|_{r2}
    double c6 = 0.0;
};

/**
 * Eigenvalue-based constants for the quadratic stage cost on the box Z:
 * c1 = lmin(Q), c2 = lmax(Q), c3 = 2, c4 = 2 lmax(W), c5 = lmax(W),
 * c6 = 2 lmax(W) diam(Z), where W = blkdiag(Q, R).
 * c1 and c2 use that u_r in U lets the input term of l* vanish.
 */
[[nodiscard]] StageConstants analytic_stage_constants(const StageCost& cost, const ConstraintSpec& spec);

struct ConstantsOptions {
    int references = 200;             ///< manifold references for the gamma/sigma protocol
    int states_per_reference = 50;    ///< perturbed states per reference
    std::vector<double> sigma_levels{1e-4, 1e-3, 1e-2, 1e-1};
    int horizon = 20;                 ///< gamma ratio compared between horizon and horizon + horizon_step
    int horizon_step = 5;
    double stabilization_tol = 0.05;
    int manifold_samples = 1000;      ///< references for the T sandwich and the c1_r, c2_r fit
    std::vector<double> thetas{0.05, 0.1, 0.25, 0.5, 0.75, 1.0};
    std::vector<double> held_out_thetas{0.3, 0.6, 0.9};
    std::uint64_t seed = 0;
    int jobs = 1;
    NlpOptions solver;
};

/// One sigma level of the cost-controllability protocol.
struct SigmaLevel {
    double level = 0.0;
    int samples = 0;          ///< samples with l* <= level
    int infeasible = 0;       ///< of those, standard MPC infeasible at either horizon
    double ratio_N = 0.0;     ///< max J^s_N / l* at the base horizon
    double ratio_N_next = 0.0;
    bool stabilized = false;
};

struct ConstantsEstimate {
    StageConstants stage;
    double gamma = 1.0;
    double sigma = 0.0;
    bool gamma_lower_bound = false;  ///< no tested level stabilized
    std::vector<SigmaLevel> levels;

    double c1_r = 0.0;
    double c2_r = 0.0;
    bool candidate_held_out_ok = false;

    /// (|r|_{r_d}, T(r)) on manifold samples.
    std::vector<std::pair<double, double>> T_bounds;
    bool T_positive = false;
    bool T_monotone = false;

    double delta_r = 0.0;  ///< sampled diameter of the admissible manifold
    double theta_tau = 0.0;
    double c_tau = 0.0;

    std::map<std::string, Provenance> provenance;
    std::vector<std::string> warnings;
};

/**
 * Analytic stage constants plus sampled gamma, sigma, c1_r, c2_r and the T
 * sandwich. Requires a manifold chart and at least 1e3 samples for both the
 * gamma protocol and the manifold checks. Sampling is seeded and the result
 * does not depend on `jobs`.
 */
[[nodiscard]] ConstantsEstimate estimate_constants(const ModelPtr& model, const ConstraintSpec& spec,
                                                   const StageCost& cost, const OffsetCost& T,
                                                   const ConstantsOptions& options = {});

struct SuboptimalityFactor {
    double alpha = 0.0;
    /// alpha > 0, N > N_eta and eta >= gamma sigma.
    bool valid = false;
    std::string reason;
};

/// alpha_N = 1 - (eta / sigma)(gamma - 1) / N. Throws ConfigError for gamma < 1, sigma <= 0 or N < 1.
[[nodiscard]] SuboptimalityFactor alpha_N(double gamma, double sigma, double eta, int N);

/**
 * N_eta = max{eta / sigma, (eta / sigma)(gamma - 1)} rounded down, so that
 * "N > N_eta" holds for an integer N exactly when it holds for the real value.
 */
[[nodiscard]] int N_eta(double gamma, double sigma, double eta);

/// delta(K) = gamma c2 c_s^2 |x0 - x_d|^2 gamma_s'^(2K). Throws ConfigError unless gamma_s' is in (0, 1).
[[nodiscard]] double delta_K(double gamma, double c2, double c_s, double gamma_s_prime, const Vector& x0,
                             const Vector& x_d, int K);

struct ExponentialFit {
    double c = 0.0;       ///< exp(intercept) / |x(0) - x_target|
    double gamma = 0.0;   ///< exp(slope)
    double r_squared = 0.0;
    int points = 0;
};

inline constexpr double kFitNoiseFloor = 1e-9;

/**
 * Least squares on log |x(k) - x_target| over the points above the noise
 * floor. Throws Error when fewer than 3 points are usable or the trajectory is
 * shorter than 10 steps.
 */
[[nodiscard]] ExponentialFit exponential_fit(const Matrix& states, const Vector& x_target);
[[nodiscard]] ExponentialFit exponential_fit(const ClosedLoopRun& run, const Vector& x_target);

struct OracleOptions {
    int N = 1000;
    double tail_tol = 1e-8;
    int K_max = 5000;
    double tail_gamma = 1.0;  ///< gamma-hat in the tail bound gamma-hat l*(x_end, r_d)
    NlpOptions solver;
};

struct OracleResult {
    double J_inf = 0.0;
    int K_used = 0;
    double tail = 0.0;
    std::vector<double> prefix;  ///< prefix[k] = sum_{j<k} l(x(j), u(j), r_d), k = 0..K_used
    Trajectory trajectory;

    /// Oracle cost over the first K steps, falling back to J_inf beyond K_used.
    [[nodiscard]] double cost_over(int K) const;
};

class OracleNonConvergence : public NonConvergenceError {
public:
    OracleNonConvergence(double partial_sum, const std::string& what)
        : NonConvergenceError(partial_sum, what) {}
    [[nodiscard]] double partial_sum() const { return residual(); }
};

/**
 * Standard MPC with respect to r_d in closed loop until l(x, mu, r_d) < tail_tol,
 * plus gamma-hat l*(x_end, r_d). Throws OracleNonConvergence after K_max steps
 * and InfeasibleError when a solve fails.
 */
[[nodiscard]] OracleResult infinite_horizon_oracle(const ModelPtr& model, const ConstraintSpec& spec,
                                                   const StageCost& cost, const Reference& r_d, const Vector& x0,
                                                   const OracleOptions& options = {});

/// Inputs to the transient bound that are not part of the run or the constants.
struct BoundInputs {
    StageCost cost;
    Reference r_d;
    int N = 0;
    double eta = 0.0;
    int K = 0;
    double c_s = 1.0;
    double gamma_s_prime = 0.99;
    double eta_hat = 0.0;
};

struct PerformanceReport {
    int N = 0;
    double eta = 0.0;
    int K = 0;
    SuboptimalityFactor alpha;
    int N_eta = 0;
    double delta = 0.0;
    double error_sum = 0.0;
    bool bound_defined = false;
    double bound_rhs = 0.0;  ///< NaN when undefined
    double J_closed = 0.0;
    double J_oracle = 0.0;   ///< oracle cost over K steps
    bool dominance = false;
    double c_s = 0.0;
    double gamma_s = 0.0;
    double c_exp = 0.0;
    double gamma_exp = 0.0;
    double fit_r_squared = 0.0;
    double eta_hat = 0.0;
    double kappa = 0.0;
    double oracle_endpoint_error = 0.0;
    /// Oracle endpoint outside B_kappa(x_d): the endpoint-constrained infimum is not represented by the oracle.
    bool small_K_regime = false;
    /// min_k (H*(k) - H*(k+1)) / l(x(k), mu(k), r*(k)) along the run.
    double empirical_alpha = 0.0;
    std::vector<std::string> diagnostics;
};

/**
 * bound_rhs = (oracle_K + delta(K)) / alpha_N + sum_{k<K} (c5 |r*(k)|^2 + c6 |r*(k)|),
 * distances taken to r_d. K is clipped to the run length.
 */
[[nodiscard]] PerformanceReport transient_bound(const ClosedLoopRun& run, const ConstantsEstimate& consts,
                                                const OracleResult& oracle, const BoundInputs& inputs);

/// sum_{k<K} (c5 |r*(k)|_{r_d}^2 + c6 |r*(k)|_{r_d}).
[[nodiscard]] double reference_error_sum(const ClosedLoopRun& run, const StageConstants& stage,
                                         const Reference& r_d, Index K);

/// sup_{k<K} |r*(k)|_{r_d}.
[[nodiscard]] double sup_reference_distance(const ClosedLoopRun& run, const Reference& r_d, Index K);

struct RelaxedDpCheck {
    int checked = 0;
    int violations = 0;
    double worst_excess = 0.0;  ///< max of l - (H(k) - H(k+1)) / alpha - tol
    double empirical_alpha = 0.0;
};

/// l(x(k), mu(k), r*(k)) <= (H*(k) - H*(k+1)) / alpha + rel_tol (1 + H*(k)) for every k with a successor.
[[nodiscard]] RelaxedDpCheck relaxed_dp_check(const ClosedLoopRun& run, const StageCost& cost, double alpha,
                                              double rel_tol = 1e-4);

/**
 * @brief Moves r a fraction theta of the way toward r_d along the manifold chart.
 *
 * theta = 0 returns r unchanged. Throws Error when r or r_d are not on the
 * chart, or when the target parameter leaves the chart's domain.
 */
[[nodiscard]] Reference candidate_reference(const ManifoldChart& chart, const Reference& r, double theta,
                                            const Reference& r_d);

struct ConvergenceRow {
    int N = 0;
    double sup_r = 0.0;
    double J = 0.0;
    double error_sum = 0.0;
    double J_standard = 0.0;  ///< J^s_N(x0, r_d), NaN when infeasible
    bool completed = false;
    std::string diagnostic;
};

struct ConvergenceStudy {
    std::vector<ConvergenceRow> rows;
    /// max over tested N of J^s_N(x0, r_d): the smallest eta dominating all of them.
    double eta_hat = 0.0;
    bool J_nonincreasing = false;
    bool sup_r_nonincreasing = false;
};

struct StudyOptions {
    WarmStartMode warm_start = WarmStartMode::shift;
    NlpOptions solver;
    int jobs = 1;
};

/// Tracking closed loops for each N in N_list; infeasible cells are recorded, not thrown.
[[nodiscard]] ConvergenceStudy convergence_study(const ModelPtr& model, const ConstraintSpec& spec,
                                                 const StageCost& cost, const OffsetCost& T,
                                                 const ScalingFn& lambda, const Vector& x0,
                                                 const std::vector<int>& N_list, double eta, int K,
                                                 const StageConstants& stage, const StudyOptions& options = {});

/// Flat "key = value" reports.
void write_report(const ConstantsEstimate& estimate, std::ostream& out);
void write_report(const PerformanceReport& report, std::ostream& out);

}  // namespace trackmpc
