#pragma once

#include "trackmpc/types.hpp"

#include <functional>
#include <string>

namespace trackmpc {

/// Objective value plus inequality (g <= 0) and equality (h = 0) constraint values.
struct NlpEvaluation {
    double objective = 0.0;
    Vector inequalities;
    Vector equalities;
};

/**
 * @brief Smooth nonlinear program
 *
 *   min f(z)  s.t.  g(z) <= 0,  h(z) = 0,  lower <= z <= upper.
 *
 * Derivatives are exposed as the vector-Jacobian product
 *   w_obj * grad f + J_g' w_ineq + J_h' w_eq,
 * which is what an adjoint pass through a rollout produces in O(N).
 * Dense Jacobians are derived from it and are only meant for diagnostics.
 */
class NlpProblem {
public:
    virtual ~NlpProblem() = default;

    [[nodiscard]] virtual Index num_variables() const = 0;
    [[nodiscard]] virtual Index num_inequalities() const = 0;
    [[nodiscard]] virtual Index num_equalities() const = 0;
    [[nodiscard]] virtual const Vector& lower_bounds() const = 0;
    [[nodiscard]] virtual const Vector& upper_bounds() const = 0;

    /// Returns false when the evaluation is not finite.
    virtual bool evaluate(const Vector& z, NlpEvaluation& out) const = 0;
    virtual bool weighted_gradient(const Vector& z, double w_obj, const Vector& w_ineq, const Vector& w_eq,
                                   Vector& grad) const = 0;

    [[nodiscard]] Vector objective_gradient(const Vector& z) const;
    [[nodiscard]] Matrix inequality_jacobian(const Vector& z) const;
    [[nodiscard]] Matrix equality_jacobian(const Vector& z) const;
};

enum class SolveStatus { optimal, max_iter, infeasible, diverged };

[[nodiscard]] const char* to_string(SolveStatus status);

struct SolveReport {
    SolveStatus status = SolveStatus::max_iter;
    double objective = 0.0;
    double constraint_violation = 0.0;  ///< infinity norm of max(g, 0) and h
    int iterations = 0;                 ///< inner quasi-Newton iterations, summed
    int outer_iterations = 0;
    double kkt_residual = 0.0;
};

struct NlpOptions {
    double feas_tol = 1e-6;
    double opt_tol = 1e-6;
    double penalty_init = 10.0;
    double penalty_growth = 10.0;
    double penalty_max = 1e10;
    int max_outer = 50;
    int max_inner = 200;
    int lbfgs_memory = 15;
    /// Relative improvement of the best feasible objective over three outer rounds below which solve() stops.
    double stall_tol = 1e-9;
    /// When non-empty, one CSV row per outer iteration is appended to this file.
    std::string trace_csv;
};

/// Multiplier estimates and penalty, returned by solve() and accepted back as a warm start.
struct Multipliers {
    Vector inequality;
    Vector equality;
    double penalty = 0.0;
};

struct NlpResult {
    Vector z;
    SolveReport report;
    Multipliers multipliers;
};

/**
 * Augmented Lagrangian (PHR) outer loop around a projected L-BFGS solver for
 * the bound-constrained subproblems. Returns the best feasible iterate seen,
 * the warm start included, so a feasible z0 is never made worse.
 */
[[nodiscard]] NlpResult solve(const NlpProblem& problem, const Vector& z0, const NlpOptions& options = {},
                              const Multipliers* warm = nullptr);

/// Max relative error of the analytic derivatives against central differences
/// with step 1e-6 (1 + |z_i|), over the objective gradient and both Jacobians.
[[nodiscard]] double check_gradients(const NlpProblem& problem, const Vector& z);

/// Bound-constrained smooth minimization, exposed for testing the inner solver.
struct BoxMinimizeOptions {
    int max_iter = 200;
    double grad_tol = 1e-8;  ///< on the projected gradient, infinity norm
    int memory = 15;
};
struct BoxMinimizeResult {
    double value = 0.0;
    double projected_gradient = 0.0;
    int iterations = 0;
    bool converged = false;
    bool diverged = false;
};
/// fn(z, grad) returns f(z) and fills grad; returns NaN to signal failure.
using SmoothFunction = std::function<double(const Vector&, Vector&)>;
BoxMinimizeResult minimize_box(const SmoothFunction& fn, Vector& z, const Vector& lower, const Vector& upper,
                               const BoxMinimizeOptions& options = {});

}  // namespace trackmpc
