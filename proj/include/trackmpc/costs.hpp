#pragma once

#include "trackmpc/model.hpp"

#include <string>

namespace trackmpc {

/**
 * @brief Quadratic tracking stage cost
 *   l(x, u, r) = (x - x_r)' Q (x - x_r) + (u - u_r)' R (u - u_r)
 * with Q symmetric positive definite and R symmetric positive semidefinite.
 */
class StageCost {
public:
    StageCost(Matrix Q, Matrix R);

    [[nodiscard]] double value(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& u,
                               const Eigen::Ref<const Vector>& xr, const Eigen::Ref<const Vector>& ur) const;
    [[nodiscard]] double value(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& u,
                               const Reference& r) const {
        return value(x, u, r.x, r.u);
    }

    /// Adds scale * dl/dx and scale * dl/du. Gradients w.r.t. (x_r, u_r) are the negatives.
    void accumulate_gradient(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& u,
                             const Eigen::Ref<const Vector>& xr, const Eigen::Ref<const Vector>& ur, double scale,
                             Eigen::Ref<Vector> gx, Eigen::Ref<Vector> gu) const;

    [[nodiscard]] const Matrix& Q() const { return Q_; }
    [[nodiscard]] const Matrix& R() const { return R_; }
    [[nodiscard]] bool r_is_diagonal() const { return r_diagonal_; }

private:
    Matrix Q_;
    Matrix R_;
    bool r_diagonal_ = true;
};

/**
 * @brief Offset cost T(r) = ||r - r_e||_S^2 - T_bar on stacked r = (x_r, u_r).
 *
 * The weighted form uses a diagonal S and T_bar = 0. shifted_to_zero_at()
 * returns a copy with T_bar chosen so that T vanishes at a given reference,
 * which is how the best reachable reference is normalized to T(r_d) = 0.
 */
class OffsetCost {
public:
    OffsetCost(Matrix S, Reference target, double t_bar = 0.0);

    static OffsetCost weighted(const Vector& weights, const Reference& target);

    [[nodiscard]] double value(const Eigen::Ref<const Vector>& xr, const Eigen::Ref<const Vector>& ur) const;
    [[nodiscard]] double value(const Reference& r) const { return value(r.x, r.u); }
    /// Adds scale * dT/d(x_r, u_r).
    void accumulate_gradient(const Eigen::Ref<const Vector>& xr, const Eigen::Ref<const Vector>& ur, double scale,
                             Eigen::Ref<Vector> gxr, Eigen::Ref<Vector> gur) const;

    [[nodiscard]] OffsetCost shifted_to_zero_at(const Reference& r) const;

    [[nodiscard]] const Matrix& S() const { return S_; }
    [[nodiscard]] const Reference& target() const { return target_; }
    [[nodiscard]] double t_bar() const { return t_bar_; }

private:
    Matrix S_;
    Reference target_;
    Vector target_stacked_;
    double t_bar_;
};

/// lambda(N) = a N + b (affine) or c (constant).
struct ScalingFn {
    enum class Kind { affine, constant };
    Kind kind = Kind::affine;
    double a = 1.0;
    double b = 1.0;

    static ScalingFn affine(double a, double b) { return {Kind::affine, a, b}; }
    static ScalingFn constant(double c) { return {Kind::constant, 0.0, c}; }

    [[nodiscard]] double operator()(int N) const {
        return kind == Kind::affine ? a * static_cast<double>(N) + b : b;
    }
    [[nodiscard]] std::string describe() const;
};

/// sum_{k<N} l(x_u(k, x0), u(k), r) along the rollout of `inputs`.
[[nodiscard]] double tracking_cost(const SystemModel& model, const StageCost& cost, const Eigen::Ref<const Vector>& x0,
                                   const Eigen::Ref<const Matrix>& inputs, const Reference& r);

/// J_K^d for an open-loop input sequence (K = inputs.cols()).
[[nodiscard]] double performance_measure(const SystemModel& model, const StageCost& cost,
                                         const Eigen::Ref<const Vector>& x0, const Eigen::Ref<const Matrix>& inputs,
                                         const Reference& r_d);

/**
 * l*(x, r) = min over u with (x, u) in Z of l(x, u, r). Exact: the input part
 * is a box-constrained convex QP solved by clamping for diagonal R and by
 * cyclic exact coordinate minimization otherwise. Throws InfeasibleError if
 * x is outside X.
 */
[[nodiscard]] double ell_star(const SystemModel& model, const ConstraintSpec& spec, const StageCost& cost,
                              const Eigen::Ref<const Vector>& x, const Reference& r);

[[nodiscard]] inline double offset_cost(const OffsetCost& T, const Reference& r) { return T.value(r); }
[[nodiscard]] inline double scaled_offset(const OffsetCost& T, const ScalingFn& lambda, int N, const Reference& r) {
    return lambda(N) * T.value(r);
}

/// argmin of T over the admissible steady states, computed along the manifold chart.
[[nodiscard]] Reference best_reachable_reference(const SystemModel& model, const ConstraintSpec& spec,
                                                 const OffsetCost& T);

}  // namespace trackmpc
