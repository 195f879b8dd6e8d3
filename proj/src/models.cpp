#include "trackmpc/models.hpp"

#include <algorithm>
#include <cmath>

namespace trackmpc {

void CstrModel::step(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& u,
                     Eigen::Ref<Vector> next) const {
    const double x1 = x[0];
    const double x2 = x[1];
    const double rate = p_.k * x1 * std::exp(-p_.M / x2);
    const double dx1 = (1.0 - x1) / p_.theta - rate;
    const double dx2 = (p_.xf - x2) / p_.theta + rate - p_.alpha * u[0] * (x2 - p_.xc);
    next[0] = x1 + p_.h * dx1;
    next[1] = x2 + p_.h * dx2;
}

void CstrModel::jacobians(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& u,
                          Eigen::Ref<Matrix> A, Eigen::Ref<Matrix> B) const {
    const double x1 = x[0];
    const double x2 = x[1];
    const double e = std::exp(-p_.M / x2);
    const double ke = p_.k * e;
    const double drate_dx2 = p_.k * x1 * e * p_.M / (x2 * x2);
    A(0, 0) = 1.0 + p_.h * (-1.0 / p_.theta - ke);
    A(0, 1) = -p_.h * drate_dx2;
    A(1, 0) = p_.h * ke;
    A(1, 1) = 1.0 + p_.h * (-1.0 / p_.theta + drate_dx2 - p_.alpha * u[0]);
    B(0, 0) = 0.0;
    B(1, 0) = -p_.h * p_.alpha * (x2 - p_.xc);
}

Reference CstrModel::steady_state_at_temperature(double x2) const {
    const double ke = p_.k * std::exp(-p_.M / x2);
    const double x1 = (1.0 / p_.theta) / (1.0 / p_.theta + ke);
    const double u = ((p_.xf - x2) / p_.theta + ke * x1) / (p_.alpha * (x2 - p_.xc));
    Vector xs(2);
    xs << x1, x2;
    Vector us(1);
    us << u;
    return make_reference(*this, std::move(xs), std::move(us));
}

std::optional<ManifoldChart> CstrModel::manifold_chart() const {
    ManifoldChart chart;
    chart.parameter_name = "x2";
    chart.parameter_min = p_.xc + 0.01;
    chart.parameter_max = 1.0;
    chart.at = [m = *this](double s) { return m.steady_state_at_temperature(s); };
    chart.coordinate = [](const Reference& r) { return r.x[1]; };
    return chart;
}

void DoubleIntegratorModel::step(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& u,
                                 Eigen::Ref<Vector> next) const {
    const double p = x[0];
    const double v = x[1];
    next[0] = p + h_ * v;
    next[1] = v + h_ * u[0];
}

void DoubleIntegratorModel::jacobians(const Eigen::Ref<const Vector>&, const Eigen::Ref<const Vector>&,
                                      Eigen::Ref<Matrix> A, Eigen::Ref<Matrix> B) const {
    A << 1.0, h_, 0.0, 1.0;
    B << 0.0, h_;
}

std::optional<ManifoldChart> DoubleIntegratorModel::manifold_chart() const {
    ManifoldChart chart;
    chart.parameter_name = "position";
    chart.parameter_min = chart_min_;
    chart.parameter_max = chart_max_;
    chart.at = [m = *this](double s) {
        Vector x(2);
        x << s, 0.0;
        return make_reference(m, std::move(x), Vector::Zero(1));
    };
    chart.coordinate = [](const Reference& r) { return r.x[0]; };
    return chart;
}

ScalarLinearModel::ScalarLinearModel(double a, double b, double chart_min, double chart_max)
    : a_(a), b_(b), chart_min_(chart_min), chart_max_(chart_max) {
    if (b_ == 0.0) {
        throw ConfigError("scalar model requires b != 0");
    }
}

void ScalarLinearModel::step(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& u,
                             Eigen::Ref<Vector> next) const {
    next[0] = a_ * x[0] + b_ * u[0];
}

void ScalarLinearModel::jacobians(const Eigen::Ref<const Vector>&, const Eigen::Ref<const Vector>&,
                                  Eigen::Ref<Matrix> A, Eigen::Ref<Matrix> B) const {
    A(0, 0) = a_;
    B(0, 0) = b_;
}

std::optional<ManifoldChart> ScalarLinearModel::manifold_chart() const {
    ManifoldChart chart;
    chart.parameter_name = "x";
    chart.parameter_min = chart_min_;
    chart.parameter_max = chart_max_;
    chart.at = [m = *this](double s) {
        Vector x(1);
        x << s;
        Vector u(1);
        u << (1.0 - m.a()) * s / m.b();
        return make_reference(m, std::move(x), std::move(u));
    };
    chart.coordinate = [](const Reference& r) { return r.x[0]; };
    return chart;
}

std::vector<std::string> registered_models() { return {"cstr", "double_integrator", "scalar_lq"}; }

ModelPtr make_model(const std::string& name) {
    if (name == "cstr") {
        return std::make_shared<CstrModel>();
    }
    if (name == "double_integrator") {
        return std::make_shared<DoubleIntegratorModel>();
    }
    if (name == "scalar_lq") {
        return std::make_shared<ScalarLinearModel>();
    }
    throw ConfigError("unknown model '" + name + "'");
}

double jacobian_check(const SystemModel& model, const Vector& x, const Vector& u) {
    const Index n = model.state_dim();
    const Index m = model.input_dim();
    Matrix A(n, n);
    Matrix B(n, m);
    model.jacobians(x, u, A, B);
    double worst = 0.0;
    const auto compare = [&](const Vector& analytic, const Vector& numeric) {
        const double scale = std::max(1.0, numeric.lpNorm<Eigen::Infinity>());
        worst = std::max(worst, (analytic - numeric).lpNorm<Eigen::Infinity>() / scale);
    };
    for (Index j = 0; j < n; ++j) {
        const double step = 1e-6 * (1.0 + std::abs(x[j]));
        Vector xp = x;
        Vector xm = x;
        xp[j] += step;
        xm[j] -= step;
        compare(A.col(j), (model.step(xp, u) - model.step(xm, u)) / (2.0 * step));
    }
    for (Index j = 0; j < m; ++j) {
        const double step = 1e-6 * (1.0 + std::abs(u[j]));
        Vector up = u;
        Vector um = u;
        up[j] += step;
        um[j] -= step;
        compare(B.col(j), (model.step(x, up) - model.step(x, um)) / (2.0 * step));
    }
    return worst;
}

}  // namespace trackmpc
