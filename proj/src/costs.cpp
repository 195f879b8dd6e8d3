#include "trackmpc/costs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace trackmpc {

StageCost::StageCost(Matrix Q, Matrix R) : Q_(std::move(Q)), R_(std::move(R)) {
    if (Q_.rows() != Q_.cols() || R_.rows() != R_.cols()) {
        throw ConfigError("stage cost weights must be square");
    }
    if (!(Q_ - Q_.transpose()).isZero(1e-12) || !(R_ - R_.transpose()).isZero(1e-12)) {
        throw ConfigError("stage cost weights must be symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eq(Q_);
    if (eq.eigenvalues().minCoeff() <= 0.0) {
        throw ConfigError("Q must be positive definite");
    }
    if (R_.size() > 0) {
        Eigen::SelfAdjointEigenSolver<Matrix> er(R_);
        if (er.eigenvalues().minCoeff() < -1e-12) {
            throw ConfigError("R must be positive semidefinite");
        }
    }
    r_diagonal_ = R_.isDiagonal();
}

double StageCost::value(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& u,
                        const Eigen::Ref<const Vector>& xr, const Eigen::Ref<const Vector>& ur) const {
    const Vector dx = x - xr;
    const Vector du = u - ur;
    return dx.dot(Q_ * dx) + du.dot(R_ * du);
}

void StageCost::accumulate_gradient(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& u,
                                    const Eigen::Ref<const Vector>& xr, const Eigen::Ref<const Vector>& ur,
                                    double scale, Eigen::Ref<Vector> gx, Eigen::Ref<Vector> gu) const {
    gx.noalias() += (2.0 * scale) * (Q_ * (x - xr));
    gu.noalias() += (2.0 * scale) * (R_ * (u - ur));
}

OffsetCost::OffsetCost(Matrix S, Reference target, double t_bar)
    : S_(std::move(S)), target_(std::move(target)), t_bar_(t_bar) {
    target_stacked_ = stack(target_);
    if (S_.rows() != target_stacked_.size() || S_.cols() != target_stacked_.size()) {
        throw ConfigError("offset cost matrix must be (n+m) x (n+m)");
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(S_);
    if (es.eigenvalues().minCoeff() < 0.0) {
        throw ConfigError("offset cost matrix must be positive semidefinite");
    }
}

OffsetCost OffsetCost::weighted(const Vector& weights, const Reference& target) {
    return OffsetCost(weights.asDiagonal().toDenseMatrix(), target, 0.0);
}

double OffsetCost::value(const Eigen::Ref<const Vector>& xr, const Eigen::Ref<const Vector>& ur) const {
    const Index n = xr.size();
    Vector d(target_stacked_.size());
    d.head(n) = xr - target_stacked_.head(n);
    d.tail(ur.size()) = ur - target_stacked_.tail(ur.size());
    return d.dot(S_ * d) - t_bar_;
}

void OffsetCost::accumulate_gradient(const Eigen::Ref<const Vector>& xr, const Eigen::Ref<const Vector>& ur,
                                     double scale, Eigen::Ref<Vector> gxr, Eigen::Ref<Vector> gur) const {
    const Index n = xr.size();
    Vector d(target_stacked_.size());
    d.head(n) = xr - target_stacked_.head(n);
    d.tail(ur.size()) = ur - target_stacked_.tail(ur.size());
    const Vector g = (2.0 * scale) * (S_ * d);
    gxr += g.head(n);
    gur += g.tail(ur.size());
}

OffsetCost OffsetCost::shifted_to_zero_at(const Reference& r) const {
    OffsetCost shifted(S_, target_, 0.0);
    shifted.t_bar_ = shifted.value(r);
    return shifted;
}

std::string ScalingFn::describe() const {
    std::ostringstream out;
    if (kind == Kind::affine) {
        out << "affine(" << a << "," << b << ")";
    } else {
        out << "constant(" << b << ")";
    }
    return out.str();
}

double tracking_cost(const SystemModel& model, const StageCost& cost, const Eigen::Ref<const Vector>& x0,
                     const Eigen::Ref<const Matrix>& inputs, const Reference& r) {
    const Index N = inputs.cols();
    if (N == 0) {
        return 0.0;
    }
    const RolloutResult ro = rollout(model, x0, inputs);
    double total = 0.0;
    for (Index k = 0; k < N; ++k) {
        total += cost.value(ro.trajectory.states.col(k), inputs.col(k), r);
    }
    return total;
}

double performance_measure(const SystemModel& model, const StageCost& cost, const Eigen::Ref<const Vector>& x0,
                           const Eigen::Ref<const Matrix>& inputs, const Reference& r_d) {
    return tracking_cost(model, cost, x0, inputs, r_d);
}

double ell_star(const SystemModel& model, const ConstraintSpec& spec, const StageCost& cost,
                const Eigen::Ref<const Vector>& x, const Reference& r) {
    (void)model;
    if (!spec.state.contains(x)) {
        throw InfeasibleError("ell_star: no admissible input, state outside X");
    }
    const Vector dx = x - r.x;
    const double state_part = dx.dot(cost.Q() * dx);
    const Matrix& R = cost.R();
    const Index m = spec.input.dim();
    if (m == 0 || R.isZero()) {
        return state_part;
    }
    // min_u (u - u_r)' R (u - u_r) over the input box.
    Vector u = spec.input.clamp(r.u);
    if (!cost.r_is_diagonal()) {
        for (int sweep = 0; sweep < 500; ++sweep) {
            double change = 0.0;
            for (Index i = 0; i < m; ++i) {
                if (R(i, i) <= 0.0) {
                    continue;
                }
                const Vector du = u - r.u;
                const double off = R.row(i).dot(du) - R(i, i) * du[i];
                const double unconstrained = r.u[i] - off / R(i, i);
                const double next = std::clamp(unconstrained, spec.input.lower[i], spec.input.upper[i]);
                change = std::max(change, std::abs(next - u[i]));
                u[i] = next;
            }
            if (change < 1e-15) {
                break;
            }
        }
    }
    const Vector du = u - r.u;
    return state_part + du.dot(R * du);
}

Reference best_reachable_reference(const SystemModel& model, const ConstraintSpec& spec, const OffsetCost& T) {
    const auto chart = model.manifold_chart();
    if (!chart) {
        throw Error("best_reachable_reference requires a manifold chart");
    }
    const ChartInterval iv = admissible_chart_interval(model, spec);
    const auto value = [&](double s) { return T.value(chart->at(s)); };
    constexpr int kGrid = 4001;
    double best_s = iv.lo;
    double best_v = std::numeric_limits<double>::infinity();
    for (int i = 0; i < kGrid; ++i) {
        const double s = iv.lo + (iv.hi - iv.lo) * i / (kGrid - 1);
        const double v = value(s);
        if (v < best_v) {
            best_v = v;
            best_s = s;
        }
    }
    const double step = (iv.hi - iv.lo) / (kGrid - 1);
    double a = std::max(iv.lo, best_s - step);
    double b = std::min(iv.hi, best_s + step);
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    for (int it = 0; it < 100; ++it) {
        const double c = b - phi * (b - a);
        const double d = a + phi * (b - a);
        if (value(c) < value(d)) {
            b = d;
        } else {
            a = c;
        }
    }
    const double s = 0.5 * (a + b);
    return value(s) <= best_v ? chart->at(s) : chart->at(best_s);
}

}  // namespace trackmpc
