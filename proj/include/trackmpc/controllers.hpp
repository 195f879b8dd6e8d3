#pragma once

#include "trackmpc/costs.hpp"
#include "trackmpc/nlp.hpp"
#include "trackmpc/shooting.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace trackmpc {

enum class WarmStartMode { shift, cold };

struct ControllerConfig {
    int N = 10;
    double eta = 10.0;                                 ///< tracking only
    ScalingFn lambda = ScalingFn::affine(1.0, 1.0);    ///< tracking only
    WarmStartMode warm_start = WarmStartMode::shift;
    /// Also try 8 manifold-seeded starts at the first solve of a run (tracking only).
    bool multistart = false;
    NlpOptions solver;

    /// Throws ConfigError when N < 1, or for tracking when eta <= 0 or lambda(0) < 1.
    void validate(bool tracking) const;
};

/// Candidate handed to a solve: inputs (m x N), reference (tracking) and multipliers.
struct WarmStart {
    Matrix inputs;
    std::optional<Reference> reference;
    std::optional<Multipliers> multipliers;
};

struct MpcSolution {
    Matrix inputs;         ///< m x N
    Reference reference;   ///< artificial reference (tracking) or the fixed one (standard)
    double value = 0.0;    ///< H*_{N,eta}(x) or J^s_N(x, r)
    double open_loop_cost = 0.0;
    SolveReport report;
    Multipliers multipliers;
    bool feasible = false;  ///< constraint violation within feas_tol
};

/// Standard MPC: min J_N(x, u, r) subject to Z along the rollout.
[[nodiscard]] MpcSolution solve_standard_mpc(const ModelPtr& model, const ConstraintSpec& spec,
                                             const StageCost& cost, const Vector& x, const Reference& r, int N,
                                             const NlpOptions& options = {}, const WarmStart* warm = nullptr);

/// MPC for tracking: min J_N + lambda(N) T(r) over (u, r) with r in S, J_N <= eta and Z.
[[nodiscard]] MpcSolution solve_tracking_mpc(const ModelPtr& model, const ConstraintSpec& spec,
                                             const StageCost& cost, const OffsetCost& T, const ScalingFn& lambda,
                                             const Vector& x, int N, double eta, const NlpOptions& options = {},
                                             const WarmStart* warm = nullptr);

/// What happened at one receding-horizon step, beyond the solution itself.
struct StepOutcome {
    MpcSolution solution;
    /// Objective of the shifted candidate on the new problem; NaN when there was none.
    double warm_objective = 0.0;
    bool warm_feasible = false;
    bool retried = false;
};

/**
 * @brief Receding-horizon controller with warm-start state.
 *
 * Each instance belongs to one closed-loop run. reset() forgets the previous
 * solution so the next step starts from the cold candidate.
 */
class MpcController {
public:
    MpcController(ModelPtr model, ConstraintSpec spec, StageCost cost, ControllerConfig config);
    virtual ~MpcController() = default;

    [[nodiscard]] virtual bool is_tracking() const = 0;
    [[nodiscard]] StepOutcome step(const Vector& x);
    void reset() { warm_.reset(); }

    [[nodiscard]] const ModelPtr& model() const { return model_; }
    [[nodiscard]] const ConstraintSpec& spec() const { return spec_; }
    [[nodiscard]] const StageCost& cost() const { return cost_; }
    [[nodiscard]] const ControllerConfig& config() const { return config_; }

protected:
    [[nodiscard]] virtual ShootingProblem make_problem(const Vector& x) const = 0;
    /// Cold candidate; variant 1 is a second, different guess used for the retry.
    [[nodiscard]] virtual WarmStart cold_candidate(const Vector& x, int variant) const = 0;
    [[nodiscard]] virtual std::vector<WarmStart> multistart_candidates(const Vector& x) const;

    ModelPtr model_;
    ConstraintSpec spec_;
    StageCost cost_;
    ControllerConfig config_;

private:
    [[nodiscard]] MpcSolution run_solve(const ShootingProblem& problem, const WarmStart& start) const;
    void store_warm_start(const ShootingProblem& problem, const MpcSolution& solution);

    std::optional<WarmStart> warm_;
};

class StandardMpc final : public MpcController {
public:
    StandardMpc(ModelPtr model, ConstraintSpec spec, StageCost cost, Reference r, ControllerConfig config);

    [[nodiscard]] bool is_tracking() const override { return false; }
    [[nodiscard]] const Reference& reference() const { return r_; }

protected:
    [[nodiscard]] ShootingProblem make_problem(const Vector& x) const override;
    [[nodiscard]] WarmStart cold_candidate(const Vector& x, int variant) const override;

private:
    Reference r_;
};

class TrackingMpc final : public MpcController {
public:
    TrackingMpc(ModelPtr model, ConstraintSpec spec, StageCost cost, OffsetCost T, ControllerConfig config);

    [[nodiscard]] bool is_tracking() const override { return true; }
    [[nodiscard]] const OffsetCost& offset_cost() const { return T_; }

protected:
    [[nodiscard]] ShootingProblem make_problem(const Vector& x) const override;
    [[nodiscard]] WarmStart cold_candidate(const Vector& x, int variant) const override;
    [[nodiscard]] std::vector<WarmStart> multistart_candidates(const Vector& x) const override;

private:
    OffsetCost T_;
};

struct StepLog {
    SolveStatus status = SolveStatus::max_iter;
    int iterations = 0;
    double warm_objective = 0.0;
    bool warm_feasible = false;
    bool retried = false;
};

/**
 * @brief Logs of one closed-loop run over k = 0..K.
 *
 * Column k of ref_states/ref_inputs, value[k], open_loop_cost[k] and steps[k]
 * belong to the solve at x(k). A run cut short by an infeasible solve at
 * step k > 0 holds k applied inputs and records the step in failed_at.
 */
struct ClosedLoopRun {
    bool tracking = false;
    Trajectory trajectory;
    Matrix ref_states;
    Matrix ref_inputs;
    std::vector<double> value;
    std::vector<double> open_loop_cost;
    std::vector<StepLog> steps;
    std::optional<Index> failed_at;
    std::string diagnostic;

    [[nodiscard]] Index length() const { return trajectory.inputs.cols(); }
    [[nodiscard]] bool completed() const { return !failed_at.has_value(); }
    [[nodiscard]] Reference reference(Index k) const;
};

/**
 * Iterates solve, apply the first input, advance the state, K times.
 * Throws InfeasibleError when the very first solve is infeasible; later
 * infeasibility ends the run and is recorded as a diagnostic.
 */
[[nodiscard]] ClosedLoopRun closed_loop(MpcController& controller, const Vector& x0, int K);

/// J_K^d of a run: sum over k < K of l(x(k), mu(k), r_d). K is clipped to the run length.
[[nodiscard]] double performance_measure(const ClosedLoopRun& run, const StageCost& cost, const Reference& r_d,
                                         Index K);

/// CSV with columns t, x_1..x_n, u_1..u_m, xr_1..xr_n, ur_1..ur_m, H_star, J_open, status, solve_iters.
void write_run_csv(const ClosedLoopRun& run, std::ostream& out);
void write_run_csv(const ClosedLoopRun& run, const std::string& path);

}  // namespace trackmpc
