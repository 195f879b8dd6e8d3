#pragma once

#include "trackmpc/types.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>

namespace trackmpc {

/// Steady-state pair r = (x_r, u_r) together with its fixed-point residual.
struct Reference {
    Vector x;
    Vector u;
    double residual = 0.0;  ///< ||f(x_r,u_r) - x_r||_2
};

/// |r1|_{r2} = sqrt(|x1 - x2|^2 + |u1 - u2|^2)
[[nodiscard]] double reference_distance(const Reference& r1, const Reference& r2);

/// Stacked (x_r, u_r) vector.
[[nodiscard]] Vector stack(const Reference& r);

/**
 * @brief One-parameter chart of the steady-state manifold.
 *
 * Every model shipped with the toolkit has a one-dimensional manifold of
 * equilibria that admits an explicit parametrization. `at(s)` returns an exact
 * steady state for parameter s, `coordinate(r)` recovers s from a reference.
 */
struct ManifoldChart {
    std::string parameter_name;
    double parameter_min = 0.0;
    double parameter_max = 0.0;
    std::function<Reference(double)> at;
    std::function<double(const Reference&)> coordinate;
};

/**
 * @brief Discrete-time dynamics x+ = f(x, u) with analytic Jacobians.
 *
 * Implementations must be deterministic and free of shared mutable state so
 * that a single model instance can be used from several threads.
 */
class SystemModel {
public:
    virtual ~SystemModel() = default;

    [[nodiscard]] virtual std::string name() const = 0;
    [[nodiscard]] virtual Index state_dim() const = 0;
    [[nodiscard]] virtual Index input_dim() const = 0;

    virtual void step(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& u,
                      Eigen::Ref<Vector> next) const = 0;

    /// A = df/dx (n x n), B = df/du (n x m).
    virtual void jacobians(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& u,
                           Eigen::Ref<Matrix> A, Eigen::Ref<Matrix> B) const = 0;

    [[nodiscard]] virtual std::optional<ManifoldChart> manifold_chart() const { return std::nullopt; }

    [[nodiscard]] Vector step(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& u) const;
};

using ModelPtr = std::shared_ptr<const SystemModel>;

/// Builds a Reference and fills in its residual.
[[nodiscard]] Reference make_reference(const SystemModel& model, Vector x, Vector u);

/**
 * @brief State-input box Z = X x U and the reference box Zr = Xr x Ur.
 */
struct ConstraintSpec {
    Box state;
    Box input;
    Box ref_state;
    Box ref_input;

    /// Checks compactness, dimensions and Zr inside int(Z). Throws ConfigError.
    void validate(Index n, Index m) const;

    [[nodiscard]] bool in_z(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& u,
                            double tol = 0.0) const;
    [[nodiscard]] bool in_zr(const Reference& r, double tol = 0.0) const;
    /// Diameter of Z as a box in R^{n+m}.
    [[nodiscard]] double z_diameter() const;
};

/// x(0..K) and u(0..K-1) stored column-wise.
struct Trajectory {
    Matrix states;  ///< n x (K+1)
    Matrix inputs;  ///< m x K

    [[nodiscard]] Index length() const { return inputs.cols(); }
};

struct RolloutResult {
    Trajectory trajectory;
    /// First k with (x(k), u(k)) outside Z, when a constraint spec was given.
    std::optional<Index> first_violation;
};

/// Simulates x(k+1) = f(x(k), u(k)). Throws DivergedError on non-finite states.
[[nodiscard]] RolloutResult rollout(const SystemModel& model, const Eigen::Ref<const Vector>& x0,
                                    const Eigen::Ref<const Matrix>& inputs,
                                    const ConstraintSpec* spec = nullptr);

struct SteadyStateOptions {
    int max_iter = 50;
    double tol = kEqTol;
};

/**
 * Newton iteration on g(x) = f(x, u_fixed) - x starting at x_guess.
 * Throws SingularityError when dg/dx is singular and NonConvergenceError with
 * the best residual when max_iter is exhausted.
 */
[[nodiscard]] Reference solve_steady_state(const SystemModel& model, const Eigen::Ref<const Vector>& u_fixed,
                                           const Eigen::Ref<const Vector>& x_guess,
                                           const SteadyStateOptions& options = {});

/// (x_r, u_r) in Zr and ||f(x_r,u_r) - x_r|| <= eq_tol (residual is recomputed).
[[nodiscard]] bool is_admissible_reference(const ConstraintSpec& spec, const SystemModel& model,
                                           const Reference& r, double eq_tol = kEqTol);

/// Admissible manifold point closest to x in the state norm. Requires a chart.
[[nodiscard]] Reference nearest_manifold_point(const SystemModel& model, const ConstraintSpec& spec,
                                               const Eigen::Ref<const Vector>& x);

/// Parameter interval of the chart whose steady states lie in Zr (largest connected piece).
struct ChartInterval {
    double lo = 0.0;
    double hi = 0.0;
};
[[nodiscard]] ChartInterval admissible_chart_interval(const SystemModel& model, const ConstraintSpec& spec,
                                                      int samples = 4001);

}  // namespace trackmpc
