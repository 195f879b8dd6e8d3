#include "trackmpc/controllers.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

namespace trackmpc {

void ControllerConfig::validate(bool tracking) const {
    if (N < 1) {
        throw ConfigError("controller: N must be at least 1");
    }
    if (tracking) {
        if (!(eta > 0.0)) {
            throw ConfigError("controller: eta must be positive");
        }
        if (lambda(0) < 1.0) {
            throw ConfigError("controller: lambda(0) must be at least 1");
        }
        if (lambda.kind == ScalingFn::Kind::affine && lambda.a < 0.0) {
            throw ConfigError("controller: lambda slope must be nonnegative");
        }
    }
}

namespace {

double violation_of(const NlpEvaluation& ev) {
    double v = 0.0;
    if (ev.inequalities.size() > 0) {
        v = std::max(v, ev.inequalities.maxCoeff());
    }
    if (ev.equalities.size() > 0) {
        v = std::max(v, ev.equalities.lpNorm<Eigen::Infinity>());
    }
    return v;
}

/// Moves a reference returned by the solver back onto the manifold, or leaves it unchanged.
Reference polish_reference(const SystemModel& model, const ConstraintSpec& spec, const Reference& r) {
    if (r.residual <= kEqTol) {
        return r;
    }
    try {
        SteadyStateOptions opts;
        opts.tol = 1e-12;
        opts.max_iter = 20;
        Reference polished = solve_steady_state(model, r.u, r.x, opts);
        if (is_admissible_reference(spec, model, polished)) {
            return polished;
        }
    } catch (const Error&) {
    }
    if (const auto chart = model.manifold_chart()) {
        Reference on_chart = chart->at(chart->coordinate(r));
        if (is_admissible_reference(spec, model, on_chart)) {
            return on_chart;
        }
    }
    return r;
}

MpcSolution make_solution(const ShootingProblem& problem, const NlpResult& result, double feas_tol) {
    MpcSolution sol;
    sol.inputs = problem.unpack_inputs(result.z);
    sol.reference = problem.unpack_reference(result.z);
    sol.value = result.report.objective;
    sol.open_loop_cost = problem.open_loop_cost(result.z);
    sol.report = result.report;
    sol.multipliers = result.multipliers;
    sol.feasible = result.report.status != SolveStatus::diverged && result.report.constraint_violation <= feas_tol;
    return sol;
}

MpcSolution solve_from(const ShootingProblem& problem, const WarmStart& start, const NlpOptions& options) {
    const Vector z0 = problem.pack(start.inputs, start.reference);
    const Multipliers* mult = start.multipliers ? &*start.multipliers : nullptr;
    return make_solution(problem, solve(problem, z0, options, mult), options.feas_tol);
}

bool better(const MpcSolution& a, const MpcSolution& b) {
    if (a.feasible != b.feasible) {
        return a.feasible;
    }
    if (!a.feasible) {
        return a.report.constraint_violation < b.report.constraint_violation;
    }
    return a.value < b.value;
}

}  // namespace

MpcSolution solve_standard_mpc(const ModelPtr& model, const ConstraintSpec& spec, const StageCost& cost,
                               const Vector& x, const Reference& r, int N, const NlpOptions& options,
                               const WarmStart* warm) {
    const ShootingProblem problem(model, spec, cost, x, N, r);
    WarmStart start;
    if (warm != nullptr) {
        start = *warm;
    } else {
        start.inputs = r.u.replicate(1, N);
    }
    return solve_from(problem, start, options);
}

MpcSolution solve_tracking_mpc(const ModelPtr& model, const ConstraintSpec& spec, const StageCost& cost,
                               const OffsetCost& T, const ScalingFn& lambda, const Vector& x, int N, double eta,
                               const NlpOptions& options, const WarmStart* warm) {
    const ShootingProblem problem(model, spec, cost, x, N, T, lambda(N), eta);
    WarmStart start;
    if (warm != nullptr) {
        start = *warm;
    } else {
        const Reference r0 = nearest_manifold_point(*model, spec, x);
        start.inputs = r0.u.replicate(1, N);
        start.reference = r0;
    }
    MpcSolution sol = solve_from(problem, start, options);
    if (sol.feasible) {
        sol.reference = polish_reference(*model, spec, sol.reference);
    }
    return sol;
}

MpcController::MpcController(ModelPtr model, ConstraintSpec spec, StageCost cost, ControllerConfig config)
    : model_(std::move(model)), spec_(std::move(spec)), cost_(std::move(cost)), config_(std::move(config)) {
    spec_.validate(model_->state_dim(), model_->input_dim());
}

std::vector<WarmStart> MpcController::multistart_candidates(const Vector&) const { return {}; }

MpcSolution MpcController::run_solve(const ShootingProblem& problem, const WarmStart& start) const {
    return solve_from(problem, start, config_.solver);
}

void MpcController::store_warm_start(const ShootingProblem& problem, const MpcSolution& solution) {
    const Index N = solution.inputs.cols();
    WarmStart next;
    next.inputs.resize(solution.inputs.rows(), N);
    if (N > 1) {
        next.inputs.leftCols(N - 1) = solution.inputs.rightCols(N - 1);
    }
    next.inputs.col(N - 1) = solution.reference.u;
    if (is_tracking()) {
        next.reference = solution.reference;
    }
    next.multipliers = problem.shifted(solution.multipliers);
    warm_ = std::move(next);
}

StepOutcome MpcController::step(const Vector& x) {
    const ShootingProblem problem = make_problem(x);
    const bool first = !warm_.has_value();
    const bool from_warm = !first && config_.warm_start == WarmStartMode::shift;

    StepOutcome outcome;
    outcome.warm_objective = std::numeric_limits<double>::quiet_NaN();
    const WarmStart start = from_warm ? *warm_ : cold_candidate(x, 0);
    if (from_warm) {
        NlpEvaluation ev;
        if (problem.evaluate(problem.pack(start.inputs, start.reference), ev)) {
            outcome.warm_objective = ev.objective;
            outcome.warm_feasible = violation_of(ev) <= config_.solver.feas_tol;
        }
    }

    MpcSolution sol = run_solve(problem, start);
    if (first && config_.multistart) {
        for (const WarmStart& seed : multistart_candidates(x)) {
            MpcSolution candidate = run_solve(problem, seed);
            if (better(candidate, sol)) {
                sol = std::move(candidate);
            }
        }
    }
    if (!sol.feasible) {
        outcome.retried = true;
        MpcSolution retry = run_solve(problem, cold_candidate(x, from_warm ? 0 : 1));
        if (better(retry, sol)) {
            sol = std::move(retry);
        }
    }
    if (sol.feasible) {
        if (is_tracking()) {
            sol.reference = polish_reference(*model_, spec_, sol.reference);
        }
        store_warm_start(problem, sol);
    } else {
        warm_.reset();
    }
    outcome.solution = std::move(sol);
    return outcome;
}

StandardMpc::StandardMpc(ModelPtr model, ConstraintSpec spec, StageCost cost, Reference r, ControllerConfig config)
    : MpcController(std::move(model), std::move(spec), std::move(cost), std::move(config)), r_(std::move(r)) {
    config_.validate(false);
}

ShootingProblem StandardMpc::make_problem(const Vector& x) const {
    return ShootingProblem(model_, spec_, cost_, x, config_.N, r_);
}

WarmStart StandardMpc::cold_candidate(const Vector&, int variant) const {
    WarmStart start;
    const Vector u = variant == 0 ? r_.u : spec_.input.center();
    start.inputs = u.replicate(1, config_.N);
    return start;
}

TrackingMpc::TrackingMpc(ModelPtr model, ConstraintSpec spec, StageCost cost, OffsetCost T, ControllerConfig config)
    : MpcController(std::move(model), std::move(spec), std::move(cost), std::move(config)), T_(std::move(T)) {
    config_.validate(true);
}

ShootingProblem TrackingMpc::make_problem(const Vector& x) const {
    return ShootingProblem(model_, spec_, cost_, x, config_.N, T_, config_.lambda(config_.N), config_.eta);
}

WarmStart TrackingMpc::cold_candidate(const Vector& x, int variant) const {
    Reference r;
    const auto chart = model_->manifold_chart();
    if (variant == 0 && chart) {
        r = nearest_manifold_point(*model_, spec_, x);
    } else if (chart) {
        const ChartInterval iv = admissible_chart_interval(*model_, spec_);
        r = chart->at(0.5 * (iv.lo + iv.hi));
    } else {
        r = solve_steady_state(*model_, spec_.ref_input.center(), variant == 0 ? x : spec_.ref_state.center());
    }
    WarmStart start;
    start.inputs = r.u.replicate(1, config_.N);
    start.reference = r;
    return start;
}

std::vector<WarmStart> TrackingMpc::multistart_candidates(const Vector&) const {
    std::vector<WarmStart> seeds;
    const auto chart = model_->manifold_chart();
    if (!chart) {
        return seeds;
    }
    const ChartInterval iv = admissible_chart_interval(*model_, spec_);
    constexpr int kSeeds = 8;
    for (int i = 0; i < kSeeds; ++i) {
        const double s = iv.lo + (iv.hi - iv.lo) * (i + 0.5) / kSeeds;
        WarmStart start;
        start.reference = chart->at(s);
        start.inputs = start.reference->u.replicate(1, config_.N);
        seeds.push_back(std::move(start));
    }
    return seeds;
}

Reference ClosedLoopRun::reference(Index k) const {
    Reference r;
    r.x = ref_states.col(k);
    r.u = ref_inputs.col(k);
    return r;
}

ClosedLoopRun closed_loop(MpcController& controller, const Vector& x0, int K) {
    const SystemModel& model = *controller.model();
    const Index n = model.state_dim();
    const Index m = model.input_dim();
    if (x0.size() != n || !x0.allFinite()) {
        throw ConfigError("closed_loop: initial state has wrong dimension or is not finite");
    }
    if (K < 0) {
        throw ConfigError("closed_loop: K must be nonnegative");
    }
    controller.reset();

    ClosedLoopRun run;
    run.tracking = controller.is_tracking();
    run.trajectory.states.resize(n, K + 1);
    run.trajectory.inputs.resize(m, K);
    run.ref_states.resize(n, K);
    run.ref_inputs.resize(m, K);
    run.trajectory.states.col(0) = x0;

    Vector x = x0;
    Index done = 0;
    for (Index k = 0; k < K; ++k) {
        StepOutcome outcome = controller.step(x);
        const MpcSolution& sol = outcome.solution;
        if (!sol.feasible) {
            std::ostringstream msg;
            msg << "step " << k << ": solve returned " << to_string(sol.report.status)
                << " with constraint violation " << sol.report.constraint_violation;
            if (k == 0) {
                throw InfeasibleError("closed_loop: initial state is not feasible for the controller; " + msg.str());
            }
            run.failed_at = k;
            run.diagnostic = "recursive feasibility violated at " + msg.str();
            break;
        }
        run.trajectory.inputs.col(k) = sol.inputs.col(0);
        run.ref_states.col(k) = sol.reference.x;
        run.ref_inputs.col(k) = sol.reference.u;
        run.value.push_back(sol.value);
        run.open_loop_cost.push_back(sol.open_loop_cost);
        run.steps.push_back({sol.report.status, sol.report.iterations, outcome.warm_objective, outcome.warm_feasible,
                             outcome.retried});
        x = model.step(x, sol.inputs.col(0));
        if (!x.allFinite()) {
            throw DivergedError(static_cast<std::size_t>(k + 1), "closed_loop: state became non-finite");
        }
        run.trajectory.states.col(k + 1) = x;
        done = k + 1;
    }
    run.trajectory.states.conservativeResize(n, done + 1);
    run.trajectory.inputs.conservativeResize(m, done);
    run.ref_states.conservativeResize(n, done);
    run.ref_inputs.conservativeResize(m, done);
    return run;
}

double performance_measure(const ClosedLoopRun& run, const StageCost& cost, const Reference& r_d, Index K) {
    const Index upto = std::min(K, run.length());
    double total = 0.0;
    for (Index k = 0; k < upto; ++k) {
        total += cost.value(run.trajectory.states.col(k), run.trajectory.inputs.col(k), r_d);
    }
    return total;
}

void write_run_csv(const ClosedLoopRun& run, std::ostream& out) {
    const Index n = run.trajectory.states.rows();
    const Index m = run.trajectory.inputs.rows();
    out << "t";
    for (Index i = 1; i <= n; ++i) {
        out << ",x_" << i;
    }
    for (Index i = 1; i <= m; ++i) {
        out << ",u_" << i;
    }
    for (Index i = 1; i <= n; ++i) {
        out << ",xr_" << i;
    }
    for (Index i = 1; i <= m; ++i) {
        out << ",ur_" << i;
    }
    out << ",H_star,J_open,status,solve_iters\n";
    out << std::setprecision(17);
    const Index K = run.length();
    for (Index k = 0; k <= K; ++k) {
        out << k;
        for (Index i = 0; i < n; ++i) {
            out << ',' << run.trajectory.states(i, k);
        }
        if (k == K) {
            // Final state: no solve happened here.
            for (Index i = 0; i < 2 * m + n + 4; ++i) {
                out << ',';
            }
            out << '\n';
            continue;
        }
        for (Index i = 0; i < m; ++i) {
            out << ',' << run.trajectory.inputs(i, k);
        }
        for (Index i = 0; i < n; ++i) {
            out << ',' << run.ref_states(i, k);
        }
        for (Index i = 0; i < m; ++i) {
            out << ',' << run.ref_inputs(i, k);
        }
        out << ',' << run.value[static_cast<std::size_t>(k)] << ',' << run.open_loop_cost[static_cast<std::size_t>(k)]
            << ',' << to_string(run.steps[static_cast<std::size_t>(k)].status) << ','
            << run.steps[static_cast<std::size_t>(k)].iterations << '\n';
    }
}

void write_run_csv(const ClosedLoopRun& run, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write " + path);
    }
    write_run_csv(run, out);
}

}  // namespace trackmpc
