#pragma once

#include "trackmpc/costs.hpp"
#include "trackmpc/nlp.hpp"

#include <optional>

namespace trackmpc {

/**
 * @brief Single-shooting transcription of the finite-horizon MPC problems.
 *
 * Decision vector z = (u_0, ..., u_{N-1}) for the standard problem and
 * z = (u_0, ..., u_{N-1}, x_r, u_r) for the tracking problem. Input and
 * reference boxes are simple bounds on z. Inequalities are, in order,
 *   x_k - x_ub, x_lb - x_k   for k = 1..N-1   (2n entries per k),
 *   J_N(x, u, r) - eta                       (tracking only).
 * Equalities (tracking only) are the scaled steady-state residual
 * kEqualityScale * (f(x_r, u_r) - x_r).
 *
 * Scratch buffers are mutable, so one instance must not be evaluated from two
 * threads at once.
 */
class ShootingProblem final : public NlpProblem {
public:
    static constexpr double kEqualityScale = 10.0;

    /// Standard MPC for the fixed reference r.
    ShootingProblem(ModelPtr model, ConstraintSpec spec, StageCost cost, Vector x0, int N, Reference r);

    /// MPC for tracking with offset weight lambda_N = lambda(N) and cost bound eta.
    ShootingProblem(ModelPtr model, ConstraintSpec spec, StageCost cost, Vector x0, int N, OffsetCost T,
                    double lambda_N, double eta);

    [[nodiscard]] bool is_tracking() const { return offset_.has_value(); }
    [[nodiscard]] int horizon() const { return N_; }

    [[nodiscard]] Index num_variables() const override { return lower_.size(); }
    [[nodiscard]] Index num_inequalities() const override;
    [[nodiscard]] Index num_equalities() const override { return is_tracking() ? n_ : 0; }
    [[nodiscard]] const Vector& lower_bounds() const override { return lower_; }
    [[nodiscard]] const Vector& upper_bounds() const override { return upper_; }

    bool evaluate(const Vector& z, NlpEvaluation& out) const override;
    bool weighted_gradient(const Vector& z, double w_obj, const Vector& w_ineq, const Vector& w_eq,
                           Vector& grad) const override;

    [[nodiscard]] Vector pack(const Matrix& inputs, const std::optional<Reference>& r = std::nullopt) const;
    [[nodiscard]] Matrix unpack_inputs(const Vector& z) const;
    /// The reference carried by z (tracking) or the fixed reference (standard).
    [[nodiscard]] Reference unpack_reference(const Vector& z) const;

    /// Multipliers of this problem moved one stage forward, for warm-starting the next step.
    [[nodiscard]] Multipliers shifted(const Multipliers& mult) const;

    /// J_N(x0, u, r) along the rollout of z.
    [[nodiscard]] double open_loop_cost(const Vector& z) const;

private:
    void init_bounds();
    bool forward(const Vector& z) const;
    [[nodiscard]] double stage_sum(const Vector& z) const;

    ModelPtr model_;
    ConstraintSpec spec_;
    StageCost cost_;
    Vector x0_;
    int N_;
    Index n_;
    Index m_;
    Reference fixed_ref_;
    std::optional<OffsetCost> offset_;
    double lambda_N_ = 0.0;
    double eta_ = 0.0;
    Vector lower_;
    Vector upper_;

    mutable Vector cached_z_;  ///< decision vector of the last rollout held in states_
    mutable bool cached_ok_ = false;
    mutable Matrix states_;  ///< n x (N+1)
    mutable Matrix A_;
    mutable Matrix B_;
    mutable Vector p_;
    mutable Vector p_next_;
    mutable Vector dx_;
    mutable Vector du_;
    mutable Vector qdx_;
    mutable Vector rdu_;
};

}  // namespace trackmpc
