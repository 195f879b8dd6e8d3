#pragma once

#include "trackmpc/model.hpp"

#include <string>
#include <vector>

namespace trackmpc {

/**
 * @brief Exothermic continuous stirred-tank reactor, forward-Euler discretized.
 *
 * States are the normalized concentration x1 and temperature x2, the input is
 * the coolant flow u:
 *
 *   dx1/dt = (1 - x1)/theta - k x1 exp(-M/x2)
 *   dx2/dt = (x_f - x2)/theta + k x1 exp(-M/x2) - alpha u (x2 - x_c)
 *
 * with theta = 20, k = 300, M = 5, x_f = 0.3947, x_c = 0.3816, alpha = 0.117
 * (Mayne et al., Int. J. Robust Nonlinear Control, 2011) and step h = 0.1.
 *
 * The steady states form a curve parametrized by the temperature x2; the
 * input is not monotone along it (there is a fold near u = 0.7687), so the
 * chart coordinate is x2 rather than u.
 */
class CstrModel final : public SystemModel {
public:
    struct Parameters {
        double theta = 20.0;
        double k = 300.0;
        double M = 5.0;
        double xf = 0.3947;
        double xc = 0.3816;
        double alpha = 0.117;
        double h = 0.1;
    };

    CstrModel() = default;
    explicit CstrModel(const Parameters& p) : p_(p) {}

    [[nodiscard]] std::string name() const override { return "cstr"; }
    [[nodiscard]] Index state_dim() const override { return 2; }
    [[nodiscard]] Index input_dim() const override { return 1; }
    void step(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& u,
              Eigen::Ref<Vector> next) const override;
    void jacobians(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& u, Eigen::Ref<Matrix> A,
                   Eigen::Ref<Matrix> B) const override;
    [[nodiscard]] std::optional<ManifoldChart> manifold_chart() const override;

    /// Exact equilibrium at temperature x2 (requires x2 > x_c).
    [[nodiscard]] Reference steady_state_at_temperature(double x2) const;
    [[nodiscard]] const Parameters& parameters() const { return p_; }

private:
    Parameters p_{};
};

/// x+ = [p + h v, v + h u]; equilibria are (p, 0) with u = 0.
class DoubleIntegratorModel final : public SystemModel {
public:
    explicit DoubleIntegratorModel(double h = 0.1, double chart_min = -10.0, double chart_max = 10.0)
        : h_(h), chart_min_(chart_min), chart_max_(chart_max) {}

    [[nodiscard]] std::string name() const override { return "double_integrator"; }
    [[nodiscard]] Index state_dim() const override { return 2; }
    [[nodiscard]] Index input_dim() const override { return 1; }
    void step(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& u,
              Eigen::Ref<Vector> next) const override;
    void jacobians(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& u, Eigen::Ref<Matrix> A,
                   Eigen::Ref<Matrix> B) const override;
    [[nodiscard]] std::optional<ManifoldChart> manifold_chart() const override;

private:
    double h_;
    double chart_min_;
    double chart_max_;
};

/// Scalar linear system x+ = a x + b u (defaults a = b = 1).
class ScalarLinearModel final : public SystemModel {
public:
    explicit ScalarLinearModel(double a = 1.0, double b = 1.0, double chart_min = -10.0, double chart_max = 10.0);

    [[nodiscard]] std::string name() const override { return "scalar_lq"; }
    [[nodiscard]] Index state_dim() const override { return 1; }
    [[nodiscard]] Index input_dim() const override { return 1; }
    void step(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& u,
              Eigen::Ref<Vector> next) const override;
    void jacobians(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& u, Eigen::Ref<Matrix> A,
                   Eigen::Ref<Matrix> B) const override;
    [[nodiscard]] std::optional<ManifoldChart> manifold_chart() const override;

    [[nodiscard]] double a() const { return a_; }
    [[nodiscard]] double b() const { return b_; }

private:
    double a_;
    double b_;
    double chart_min_;
    double chart_max_;
};

/// Registered model names: "cstr", "double_integrator", "scalar_lq".
[[nodiscard]] std::vector<std::string> registered_models();

/// Throws ConfigError for unknown names.
[[nodiscard]] ModelPtr make_model(const std::string& name);

/// Largest relative error between analytic Jacobians and central differences at (x, u).
[[nodiscard]] double jacobian_check(const SystemModel& model, const Vector& x, const Vector& u);

}  // namespace trackmpc
