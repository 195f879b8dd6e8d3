#include "trackmpc/shooting.hpp"

#include <cmath>

namespace trackmpc {

ShootingProblem::ShootingProblem(ModelPtr model, ConstraintSpec spec, StageCost cost, Vector x0, int N,
                                 Reference r)
    : model_(std::move(model)),
      spec_(std::move(spec)),
      cost_(std::move(cost)),
      x0_(std::move(x0)),
      N_(N),
      fixed_ref_(std::move(r)) {
    init_bounds();
}

ShootingProblem::ShootingProblem(ModelPtr model, ConstraintSpec spec, StageCost cost, Vector x0, int N,
                                 OffsetCost T, double lambda_N, double eta)
    : model_(std::move(model)),
      spec_(std::move(spec)),
      cost_(std::move(cost)),
      x0_(std::move(x0)),
      N_(N),
      offset_(std::move(T)),
      lambda_N_(lambda_N),
      eta_(eta) {
    if (eta_ <= 0.0) {
        throw ConfigError("cost bound eta must be positive");
    }
    init_bounds();
}

void ShootingProblem::init_bounds() {
    if (N_ < 1) {
        throw ConfigError("prediction horizon must be at least 1");
    }
    n_ = model_->state_dim();
    m_ = model_->input_dim();
    if (x0_.size() != n_) {
        throw ConfigError("initial state has wrong dimension");
    }
    const Index nu = m_ * N_;
    const Index nz = nu + (is_tracking() ? n_ + m_ : 0);
    lower_.resize(nz);
    upper_.resize(nz);
    for (int k = 0; k < N_; ++k) {
        lower_.segment(k * m_, m_) = spec_.input.lower;
        upper_.segment(k * m_, m_) = spec_.input.upper;
    }
    if (is_tracking()) {
        lower_.segment(nu, n_) = spec_.ref_state.lower;
        upper_.segment(nu, n_) = spec_.ref_state.upper;
        lower_.segment(nu + n_, m_) = spec_.ref_input.lower;
        upper_.segment(nu + n_, m_) = spec_.ref_input.upper;
    } else if (fixed_ref_.x.size() != n_ || fixed_ref_.u.size() != m_) {
        throw ConfigError("reference has wrong dimension");
    }
    states_.resize(n_, N_ + 1);
    A_.resize(n_, n_);
    B_.resize(n_, m_);
    p_.resize(n_);
    p_next_.resize(n_);
    dx_.resize(n_);
    du_.resize(m_);
    qdx_.resize(n_);
    rdu_.resize(m_);
}

Index ShootingProblem::num_inequalities() const { return 2 * n_ * (N_ - 1) + (is_tracking() ? 1 : 0); }

bool ShootingProblem::forward(const Vector& z) const {
    if (cached_z_.size() == z.size() && cached_z_ == z) {
        return cached_ok_;
    }
    cached_z_ = z;
    cached_ok_ = false;
    states_.col(0) = x0_;
    for (int k = 0; k < N_; ++k) {
        model_->step(states_.col(k), z.segment(k * m_, m_), states_.col(k + 1));
        if (!states_.col(k + 1).allFinite()) {
            return false;
        }
    }
    cached_ok_ = true;
    return true;
}

double ShootingProblem::stage_sum(const Vector& z) const {
    const Index nu = m_ * N_;
    const auto xr = is_tracking() ? z.segment(nu, n_) : fixed_ref_.x.segment(0, n_);
    const auto ur = is_tracking() ? z.segment(nu + n_, m_) : fixed_ref_.u.segment(0, m_);
    double total = 0.0;
    for (int k = 0; k < N_; ++k) {
        dx_ = states_.col(k) - xr;
        du_ = z.segment(k * m_, m_) - ur;
        qdx_.noalias() = cost_.Q() * dx_;
        rdu_.noalias() = cost_.R() * du_;
        total += dx_.dot(qdx_) + du_.dot(rdu_);
    }
    return total;
}

bool ShootingProblem::evaluate(const Vector& z, NlpEvaluation& out) const {
    if (!z.allFinite() || !forward(z)) {
        return false;
    }
    const double J = stage_sum(z);
    const Index ni = num_inequalities();
    out.inequalities.resize(ni);
    for (int k = 1; k < N_; ++k) {
        const Index base = 2 * n_ * (k - 1);
        out.inequalities.segment(base, n_) = states_.col(k) - spec_.state.upper;
        out.inequalities.segment(base + n_, n_) = spec_.state.lower - states_.col(k);
    }
    if (is_tracking()) {
        const Index nu = m_ * N_;
        const auto xr = z.segment(nu, n_);
        const auto ur = z.segment(nu + n_, m_);
        out.objective = J + lambda_N_ * offset_->value(xr, ur);
        out.inequalities[ni - 1] = J - eta_;
        out.equalities.resize(n_);
        model_->step(xr, ur, out.equalities);
        out.equalities = kEqualityScale * (out.equalities - xr);
    } else {
        out.objective = J;
        out.equalities.resize(0);
    }
    return std::isfinite(out.objective) && out.equalities.allFinite();
}

bool ShootingProblem::weighted_gradient(const Vector& z, double w_obj, const Vector& w_ineq, const Vector& w_eq,
                                        Vector& grad) const {
    if (!z.allFinite() || !forward(z)) {
        return false;
    }
    const Index nu = m_ * N_;
    const Index ni = num_inequalities();
    grad.setZero(num_variables());
    const auto xr = is_tracking() ? z.segment(nu, n_) : fixed_ref_.x.segment(0, n_);
    const auto ur = is_tracking() ? z.segment(nu + n_, m_) : fixed_ref_.u.segment(0, m_);
    const double c_J = w_obj + (is_tracking() ? w_ineq[ni - 1] : 0.0);

    Vector gxr = Vector::Zero(n_);
    Vector gur = Vector::Zero(m_);
    p_next_.setZero();
    for (int k = N_ - 1; k >= 0; --k) {
        dx_ = states_.col(k) - xr;
        du_ = z.segment(k * m_, m_) - ur;
        qdx_.noalias() = (2.0 * c_J) * (cost_.Q() * dx_);
        rdu_.noalias() = (2.0 * c_J) * (cost_.R() * du_);
        model_->jacobians(states_.col(k), z.segment(k * m_, m_), A_, B_);
        grad.segment(k * m_, m_) = rdu_;
        grad.segment(k * m_, m_).noalias() += B_.transpose() * p_next_;
        gxr -= qdx_;
        gur -= rdu_;
        if (k >= 1) {
            const Index base = 2 * n_ * (k - 1);
            p_ = qdx_ + w_ineq.segment(base, n_) - w_ineq.segment(base + n_, n_);
            p_.noalias() += A_.transpose() * p_next_;
            p_next_.swap(p_);
        }
    }
    if (is_tracking()) {
        offset_->accumulate_gradient(xr, ur, w_obj * lambda_N_, gxr, gur);
        model_->jacobians(xr, ur, A_, B_);
        gxr.noalias() += kEqualityScale * (A_.transpose() * w_eq - w_eq);
        gur.noalias() += kEqualityScale * (B_.transpose() * w_eq);
        grad.segment(nu, n_) = gxr;
        grad.segment(nu + n_, m_) = gur;
    }
    return grad.allFinite();
}

Vector ShootingProblem::pack(const Matrix& inputs, const std::optional<Reference>& r) const {
    if (inputs.rows() != m_ || inputs.cols() != N_) {
        throw Error("pack: input sequence has wrong shape");
    }
    Vector z(num_variables());
    z.head(m_ * N_) = Eigen::Map<const Vector>(inputs.data(), m_ * N_);
    if (is_tracking()) {
        if (!r) {
            throw Error("pack: tracking problem needs a reference");
        }
        z.segment(m_ * N_, n_) = r->x;
        z.segment(m_ * N_ + n_, m_) = r->u;
    }
    return z;
}

Matrix ShootingProblem::unpack_inputs(const Vector& z) const {
    return Eigen::Map<const Matrix>(z.data(), m_, N_);
}

Reference ShootingProblem::unpack_reference(const Vector& z) const {
    if (!is_tracking()) {
        return fixed_ref_;
    }
    return make_reference(*model_, z.segment(m_ * N_, n_), z.segment(m_ * N_ + n_, m_));
}

Multipliers ShootingProblem::shifted(const Multipliers& mult) const {
    Multipliers out = mult;
    if (mult.inequality.size() != num_inequalities()) {
        return out;
    }
    const Index block = 2 * n_;
    const Index stages = 2 * n_ * (N_ - 1);
    if (stages > block) {
        out.inequality.head(stages - block) = mult.inequality.segment(block, stages - block);
    }
    if (stages > 0) {
        out.inequality.segment(std::max<Index>(0, stages - block), std::min(block, stages)).setZero();
    }
    return out;
}

double ShootingProblem::open_loop_cost(const Vector& z) const {
    if (!forward(z)) {
        throw DivergedError(static_cast<std::size_t>(N_), "open_loop_cost: rollout diverged");
    }
    return stage_sum(z);
}

}  // namespace trackmpc
