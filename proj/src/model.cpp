#include "trackmpc/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace trackmpc {

Box::Box(Vector lo, Vector hi) : lower(std::move(lo)), upper(std::move(hi)) {
    if (lower.size() != upper.size()) {
        throw ConfigError("box bounds have mismatched dimensions");
    }
}

bool Box::contains(const Eigen::Ref<const Vector>& v, double tol) const {
    if (v.size() != lower.size()) {
        return false;
    }
    for (Index i = 0; i < v.size(); ++i) {
        if (!(v[i] >= lower[i] - tol && v[i] <= upper[i] + tol)) {
            return false;
        }
    }
    return true;
}

bool Box::strictly_inside(const Box& outer) const {
    if (outer.dim() != dim()) {
        return false;
    }
    return (lower.array() > outer.lower.array()).all() && (upper.array() < outer.upper.array()).all();
}

bool Box::is_bounded() const {
    return lower.allFinite() && upper.allFinite() && (lower.array() <= upper.array()).all();
}

Vector Box::clamp(const Eigen::Ref<const Vector>& v) const {
    return v.cwiseMax(lower).cwiseMin(upper);
}

double reference_distance(const Reference& r1, const Reference& r2) {
    return std::sqrt((r1.x - r2.x).squaredNorm() + (r1.u - r2.u).squaredNorm());
}

Vector stack(const Reference& r) {
    Vector v(r.x.size() + r.u.size());
    v << r.x, r.u;
    return v;
}

Vector SystemModel::step(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& u) const {
    Vector next(state_dim());
    step(x, u, next);
    return next;
}

Reference make_reference(const SystemModel& model, Vector x, Vector u) {
    Reference r{std::move(x), std::move(u), 0.0};
    r.residual = (model.step(r.x, r.u) - r.x).norm();
    return r;
}

void ConstraintSpec::validate(Index n, Index m) const {
    if (state.dim() != n || ref_state.dim() != n) {
        throw ConfigError("state constraint boxes must have dimension " + std::to_string(n));
    }
    if (input.dim() != m || ref_input.dim() != m) {
        throw ConfigError("input constraint boxes must have dimension " + std::to_string(m));
    }
    if (!state.is_bounded() || !input.is_bounded() || !ref_state.is_bounded() || !ref_input.is_bounded()) {
        throw ConfigError("constraint boxes must be finite with lower <= upper");
    }
    if (!ref_state.strictly_inside(state) || !ref_input.strictly_inside(input)) {
        throw ConfigError("reference box Zr must lie strictly inside Z");
    }
}

bool ConstraintSpec::in_z(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& u, double tol) const {
    return state.contains(x, tol) && input.contains(u, tol);
}

bool ConstraintSpec::in_zr(const Reference& r, double tol) const {
    return ref_state.contains(r.x, tol) && ref_input.contains(r.u, tol);
}

double ConstraintSpec::z_diameter() const {
    return std::sqrt(state.diameter() * state.diameter() + input.diameter() * input.diameter());
}

RolloutResult rollout(const SystemModel& model, const Eigen::Ref<const Vector>& x0,
                      const Eigen::Ref<const Matrix>& inputs, const ConstraintSpec* spec) {
    const Index n = model.state_dim();
    const Index K = inputs.cols();
    if (x0.size() != n || (K > 0 && inputs.rows() != model.input_dim())) {
        throw Error("rollout: dimension mismatch");
    }
    if (!x0.allFinite()) {
        throw DivergedError(0, "rollout: initial state is not finite");
    }
    RolloutResult result;
    result.trajectory.states.resize(n, K + 1);
    result.trajectory.inputs = inputs;
    result.trajectory.states.col(0) = x0;
    for (Index k = 0; k < K; ++k) {
        if (spec != nullptr && !result.first_violation && !spec->in_z(result.trajectory.states.col(k), inputs.col(k))) {
            result.first_violation = k;
        }
        model.step(result.trajectory.states.col(k), inputs.col(k), result.trajectory.states.col(k + 1));
        if (!result.trajectory.states.col(k + 1).allFinite()) {
            std::ostringstream msg;
            msg << "rollout diverged at step " << (k + 1);
            throw DivergedError(static_cast<std::size_t>(k + 1), msg.str());
        }
    }
    return result;
}

Reference solve_steady_state(const SystemModel& model, const Eigen::Ref<const Vector>& u_fixed,
                             const Eigen::Ref<const Vector>& x_guess, const SteadyStateOptions& options) {
    const Index n = model.state_dim();
    Matrix A(n, n);
    Matrix B(n, model.input_dim());
    Vector x = x_guess;
    Vector g = model.step(x, u_fixed) - x;
    double res = g.norm();
    Vector best = x;
    double best_res = res;
    for (int it = 0; it < options.max_iter && res > options.tol; ++it) {
        model.jacobians(x, u_fixed, A, B);
        const Matrix G = A - Matrix::Identity(n, n);
        Eigen::FullPivLU<Matrix> lu(G);
        if (!lu.isInvertible()) {
            throw SingularityError("steady-state Jacobian df/dx - I is singular");
        }
        const Vector dx = lu.solve(-g);
        // Backtracking on the residual norm.
        double t = 1.0;
        Vector trial = x + dx;
        Vector gt = model.step(trial, u_fixed) - trial;
        while (!(gt.allFinite() && gt.norm() < res) && t > 1e-6) {
            t *= 0.5;
            trial = x + t * dx;
            gt = model.step(trial, u_fixed) - trial;
        }
        if (!gt.allFinite()) {
            break;
        }
        x = trial;
        g = gt;
        res = g.norm();
        if (res < best_res) {
            best_res = res;
            best = x;
        }
        if (t <= 1e-6) {
            break;
        }
    }
    if (best_res > options.tol) {
        std::ostringstream msg;
        msg << "steady-state Newton did not converge, residual " << best_res;
        throw NonConvergenceError(best_res, msg.str());
    }
    return Reference{best, Vector(u_fixed), best_res};
}

bool is_admissible_reference(const ConstraintSpec& spec, const SystemModel& model, const Reference& r,
                             double eq_tol) {
    if (r.x.size() != model.state_dim() || r.u.size() != model.input_dim()) {
        return false;
    }
    if (!spec.in_zr(r)) {
        return false;
    }
    const double residual = (model.step(r.x, r.u) - r.x).norm();
    return residual <= eq_tol;
}

namespace {

const ManifoldChart& require_chart(const std::optional<ManifoldChart>& chart, const SystemModel& model) {
    if (!chart) {
        throw Error("model '" + model.name() + "' provides no steady-state manifold chart");
    }
    return *chart;
}

}  // namespace

ChartInterval admissible_chart_interval(const SystemModel& model, const ConstraintSpec& spec, int samples) {
    const auto chart_opt = model.manifold_chart();
    const ManifoldChart& chart = require_chart(chart_opt, model);
    const auto inside = [&](double s) { return spec.in_zr(chart.at(s)); };
    const double lo = chart.parameter_min;
    const double hi = chart.parameter_max;
    const auto param = [&](int i) { return lo + (hi - lo) * static_cast<double>(i) / (samples - 1); };

    int best_start = -1;
    int best_len = 0;
    int run_start = -1;
    for (int i = 0; i < samples; ++i) {
        if (inside(param(i))) {
            if (run_start < 0) {
                run_start = i;
            }
            if (i - run_start + 1 > best_len) {
                best_len = i - run_start + 1;
                best_start = run_start;
            }
        } else {
            run_start = -1;
        }
    }
    if (best_start < 0) {
        throw InfeasibleError("no steady state of the chart lies inside Zr");
    }
    // Refine both endpoints by bisection between the last inside and first outside sample.
    const auto refine = [&](double in, double out) {
        for (int it = 0; it < 60; ++it) {
            const double mid = 0.5 * (in + out);
            (inside(mid) ? in : out) = mid;
        }
        return in;
    };
    ChartInterval interval{param(best_start), param(best_start + best_len - 1)};
    if (best_start > 0) {
        interval.lo = refine(interval.lo, param(best_start - 1));
    }
    if (best_start + best_len < samples) {
        interval.hi = refine(interval.hi, param(best_start + best_len));
    }
    return interval;
}

Reference nearest_manifold_point(const SystemModel& model, const ConstraintSpec& spec,
                                 const Eigen::Ref<const Vector>& x) {
    const auto chart_opt = model.manifold_chart();
    const ManifoldChart& chart = require_chart(chart_opt, model);
    const ChartInterval iv = admissible_chart_interval(model, spec);
    const auto dist = [&](double s) { return (chart.at(s).x - x).squaredNorm(); };

    constexpr int kGrid = 2001;
    double best_s = iv.lo;
    double best_d = std::numeric_limits<double>::infinity();
    for (int i = 0; i < kGrid; ++i) {
        const double s = iv.lo + (iv.hi - iv.lo) * i / (kGrid - 1);
        const double d = dist(s);
        if (d < best_d) {
            best_d = d;
            best_s = s;
        }
    }
    // Golden-section refinement inside the neighbouring grid cells.
    const double step = (iv.hi - iv.lo) / (kGrid - 1);
    double a = std::max(iv.lo, best_s - step);
    double b = std::min(iv.hi, best_s + step);
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    double c = b - phi * (b - a);
    double d = a + phi * (b - a);
    for (int it = 0; it < 80; ++it) {
        if (dist(c) < dist(d)) {
            b = d;
        } else {
            a = c;
        }
        c = b - phi * (b - a);
        d = a + phi * (b - a);
    }
    const double s = 0.5 * (a + b);
    return dist(s) <= best_d ? chart.at(s) : chart.at(best_s);
}

}  // namespace trackmpc
