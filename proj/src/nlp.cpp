#include "trackmpc/nlp.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>

namespace trackmpc {

const char* to_string(SolveStatus status) {
    switch (status) {
        case SolveStatus::optimal:
            return "optimal";
        case SolveStatus::max_iter:
            return "max_iter";
        case SolveStatus::infeasible:
            return "infeasible";
        case SolveStatus::diverged:
            return "diverged";
    }
    return "unknown";
}

Vector NlpProblem::objective_gradient(const Vector& z) const {
    Vector grad(num_variables());
    weighted_gradient(z, 1.0, Vector::Zero(num_inequalities()), Vector::Zero(num_equalities()), grad);
    return grad;
}

Matrix NlpProblem::inequality_jacobian(const Vector& z) const {
    const Index ni = num_inequalities();
    Matrix jac(ni, num_variables());
    Vector w = Vector::Zero(ni);
    Vector grad(num_variables());
    const Vector weq = Vector::Zero(num_equalities());
    for (Index i = 0; i < ni; ++i) {
        w[i] = 1.0;
        weighted_gradient(z, 0.0, w, weq, grad);
        jac.row(i) = grad.transpose();
        w[i] = 0.0;
    }
    return jac;
}

Matrix NlpProblem::equality_jacobian(const Vector& z) const {
    const Index ne = num_equalities();
    Matrix jac(ne, num_variables());
    Vector w = Vector::Zero(ne);
    Vector grad(num_variables());
    const Vector wineq = Vector::Zero(num_inequalities());
    for (Index j = 0; j < ne; ++j) {
        w[j] = 1.0;
        weighted_gradient(z, 0.0, wineq, w, grad);
        jac.row(j) = grad.transpose();
        w[j] = 0.0;
    }
    return jac;
}

namespace {

Vector project(const Vector& z, const Vector& lo, const Vector& hi) { return z.cwiseMax(lo).cwiseMin(hi); }

double projected_gradient_norm(const Vector& z, const Vector& g, const Vector& lo, const Vector& hi) {
    return (project(z - g, lo, hi) - z).lpNorm<Eigen::Infinity>();
}

struct CurvaturePair {
    Vector s;
    Vector y;
};

}  // namespace

BoxMinimizeResult minimize_box(const SmoothFunction& fn, Vector& z, const Vector& lower, const Vector& upper,
                               const BoxMinimizeOptions& options) {
    const Index n = z.size();
    BoxMinimizeResult result;
    z = project(z, lower, upper);
    Vector g(n);
    double f = fn(z, g);
    if (!std::isfinite(f) || !g.allFinite()) {
        result.diverged = true;
        result.value = f;
        return result;
    }

    std::deque<CurvaturePair> memory;
    Vector q(n);
    Vector d(n);
    Vector zt(n);
    Vector gt(n);
    std::vector<double> alpha;
    std::vector<double> rho;
    Vector free(n);  // 1 for free variables, 0 for variables held at a bound
    int stalled = 0;

    for (result.iterations = 0; result.iterations < options.max_iter; ++result.iterations) {
        result.projected_gradient = projected_gradient_norm(z, g, lower, upper);
        if (result.projected_gradient <= options.grad_tol) {
            result.converged = true;
            break;
        }

        // Variables within eps of a bound whose gradient pushes outward are held fixed.
        const double eps = std::min(1e-8, result.projected_gradient);
        for (Index i = 0; i < n; ++i) {
            const bool at_lower = z[i] <= lower[i] + eps && g[i] > 0.0;
            const bool at_upper = z[i] >= upper[i] - eps && g[i] < 0.0;
            free[i] = (at_lower || at_upper) ? 0.0 : 1.0;
        }
        const auto mask = [&](Vector& v) { v.array() *= free.array(); };

        bool line_search_ok = false;
        for (int attempt = 0; attempt < 2 && !line_search_ok; ++attempt) {
            // Two-loop recursion restricted to the free variables; q stays zero on held variables.
            q = g;
            mask(q);
            const std::size_t mem = memory.size();
            alpha.assign(mem, 0.0);
            rho.assign(mem, 0.0);
            double gamma = 0.0;
            for (std::size_t j = mem; j-- > 0;) {
                const Vector& sj = memory[j].s;
                const Vector& yj = memory[j].y;
                const double sy = sj.cwiseProduct(free).dot(yj);
                const double yy = yj.cwiseProduct(free).squaredNorm();
                if (sy <= 1e-16 * std::max(1.0, yy)) {
                    continue;
                }
                rho[j] = 1.0 / sy;
                if (gamma == 0.0) {
                    gamma = sy / yy;
                }
                alpha[j] = rho[j] * sj.dot(q);
                q -= alpha[j] * yj.cwiseProduct(free);
            }
            if (gamma == 0.0) {
                const double gmax = q.lpNorm<Eigen::Infinity>();
                gamma = gmax > 0.0 ? std::min(1.0, 1.0 / gmax) : 1.0;
            }
            q *= gamma;
            for (std::size_t j = 0; j < mem; ++j) {
                if (rho[j] == 0.0) {
                    continue;
                }
                const double beta = rho[j] * memory[j].y.dot(q);
                q += (alpha[j] - beta) * memory[j].s.cwiseProduct(free);
            }
            d = -q;
            mask(d);
            double slope = g.dot(d);
            if (!(slope < 0.0) || !d.allFinite()) {
                memory.clear();
                d = -g;
                mask(d);
                const double gmax = d.lpNorm<Eigen::Infinity>();
                if (gmax > 0.0) {
                    d *= std::min(1.0, 1.0 / gmax);
                }
                slope = g.dot(d);
            }

            double step = 1.0;
            for (int ls = 0; ls < 40; ++ls) {
                zt = project(z + step * d, lower, upper);
                const double ft = fn(zt, gt);
                if (std::isfinite(ft) && gt.allFinite() && ft <= f + 1e-4 * g.dot(zt - z)) {
                    const Vector s = zt - z;
                    const Vector y = gt - g;
                    if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
                        memory.push_back({s, y});
                        if (static_cast<int>(memory.size()) > options.memory) {
                            memory.pop_front();
                        }
                    }
                    stalled = (std::abs(f - ft) <= 1e-15 * (1.0 + std::abs(f))) ? stalled + 1 : 0;
                    z = zt;
                    f = ft;
                    g = gt;
                    line_search_ok = true;
                    break;
                }
                step *= 0.5;
            }
            if (!line_search_ok) {
                if (memory.empty()) {
                    break;
                }
                memory.clear();
            }
        }
        if (!line_search_ok || stalled >= 5) {
            result.projected_gradient = projected_gradient_norm(z, g, lower, upper);
            result.converged = result.projected_gradient <= options.grad_tol;
            ++result.iterations;
            break;
        }
    }
    if (result.iterations >= options.max_iter) {
        result.projected_gradient = projected_gradient_norm(z, g, lower, upper);
        result.converged = result.projected_gradient <= options.grad_tol;
    }
    result.value = f;
    return result;
}

namespace {

double violation(const NlpEvaluation& ev) {
    double v = 0.0;
    if (ev.inequalities.size() > 0) {
        v = std::max(v, ev.inequalities.maxCoeff());
    }
    if (ev.equalities.size() > 0) {
        v = std::max(v, ev.equalities.lpNorm<Eigen::Infinity>());
    }
    return std::max(v, 0.0);
}

double kkt_residual(const NlpProblem& problem, const Vector& z, const NlpEvaluation& ev, const Vector& y,
                    const Vector& lambda) {
    Vector grad(problem.num_variables());
    problem.weighted_gradient(z, 1.0, y, lambda, grad);
    double r = projected_gradient_norm(z, grad, problem.lower_bounds(), problem.upper_bounds());
    for (Index i = 0; i < ev.inequalities.size(); ++i) {
        r = std::max(r, std::abs(std::min(-ev.inequalities[i], y[i])));
    }
    return r;
}

}  // namespace

NlpResult solve(const NlpProblem& problem, const Vector& z0, const NlpOptions& options, const Multipliers* warm) {
    const Index nz = problem.num_variables();
    const Index ni = problem.num_inequalities();
    const Index ne = problem.num_equalities();
    const Vector& lo = problem.lower_bounds();
    const Vector& hi = problem.upper_bounds();
    if (z0.size() != nz || lo.size() != nz || hi.size() != nz) {
        throw Error("nlp solve: dimension mismatch");
    }

    std::ofstream trace;
    if (!options.trace_csv.empty()) {
        trace.open(options.trace_csv, std::ios::app);
        trace << "outer,objective,violation,kkt,penalty,inner_iters\n";
    }

    NlpResult result;
    Vector z = project(z0, lo, hi);
    NlpEvaluation ev;
    if (!z0.allFinite() || !problem.evaluate(z, ev)) {
        result.z = z;
        result.report.status = SolveStatus::diverged;
        return result;
    }

    Vector y = Vector::Zero(ni);
    Vector lambda = Vector::Zero(ne);
    double penalty = options.penalty_init;
    if (warm != nullptr && warm->inequality.size() == ni && warm->equality.size() == ne) {
        y = warm->inequality.cwiseMax(0.0);
        lambda = warm->equality;
        penalty = std::clamp(0.1 * warm->penalty, options.penalty_init, options.penalty_max);
    }
    double viol = violation(ev);
    double prev_viol = viol;

    bool have_best = false;
    Vector best_z;
    double best_f = std::numeric_limits<double>::infinity();
    const auto consider = [&](const Vector& cand, const NlpEvaluation& cev) {
        if (violation(cev) <= options.feas_tol && cev.objective < best_f) {
            best_f = cev.objective;
            best_z = cand;
            have_best = true;
        }
    };
    consider(z, ev);

    NlpEvaluation work;
    Vector wg(ni);
    Vector wh(ne);
    const SmoothFunction merit = [&](const Vector& zz, Vector& grad) -> double {
        if (!problem.evaluate(zz, work)) {
            return std::numeric_limits<double>::quiet_NaN();
        }
        double val = work.objective;
        for (Index i = 0; i < ni; ++i) {
            const double shifted = std::max(0.0, y[i] + penalty * work.inequalities[i]);
            val += (shifted * shifted - y[i] * y[i]) / (2.0 * penalty);
            wg[i] = shifted;
        }
        for (Index j = 0; j < ne; ++j) {
            const double h = work.equalities[j];
            val += lambda[j] * h + 0.5 * penalty * h * h;
            wh[j] = lambda[j] + penalty * h;
        }
        if (!problem.weighted_gradient(zz, 1.0, wg, wh, grad)) {
            return std::numeric_limits<double>::quiet_NaN();
        }
        return val;
    };

    BoxMinimizeOptions inner;
    inner.max_iter = options.max_inner;
    inner.memory = options.lbfgs_memory;
    inner.grad_tol = std::max(options.opt_tol, 1e-3);

    SolveStatus status = SolveStatus::max_iter;
    double kkt = std::numeric_limits<double>::infinity();
    std::vector<double> best_history;
    int outer = 0;
    for (outer = 1; outer <= options.max_outer; ++outer) {
        const BoxMinimizeResult inner_result = minimize_box(merit, z, lo, hi, inner);
        result.report.iterations += inner_result.iterations;
        if (inner_result.diverged || !problem.evaluate(z, ev)) {
            status = SolveStatus::diverged;
            break;
        }
        viol = violation(ev);
        for (Index i = 0; i < ni; ++i) {
            y[i] = std::max(0.0, y[i] + penalty * ev.inequalities[i]);
        }
        for (Index j = 0; j < ne; ++j) {
            lambda[j] += penalty * ev.equalities[j];
        }
        kkt = kkt_residual(problem, z, ev, y, lambda);
        consider(z, ev);
        if (trace.is_open()) {
            trace << outer << ',' << ev.objective << ',' << viol << ',' << kkt << ',' << penalty << ','
                  << inner_result.iterations << '\n';
        }
        if (viol <= options.feas_tol && kkt <= options.opt_tol) {
            status = SolveStatus::optimal;
            break;
        }
        // Stop once the best feasible objective has stopped improving over a window of outer rounds.
        best_history.push_back(best_f);
        const std::size_t window = 3;
        if (viol <= options.feas_tol && best_history.size() > window) {
            const double earlier = best_history[best_history.size() - 1 - window];
            if (earlier - best_f <= options.stall_tol * (1.0 + std::abs(best_f))) {
                break;
            }
        }
        if (viol > options.feas_tol && viol > 0.25 * prev_viol) {
            penalty *= options.penalty_growth;
            if (penalty > options.penalty_max) {
                status = SolveStatus::infeasible;
                break;
            }
        }
        prev_viol = viol;
        inner.grad_tol = std::max(options.opt_tol, 0.1 * inner.grad_tol);
    }
    result.report.outer_iterations = std::min(outer, options.max_outer);

    if (status == SolveStatus::diverged) {
        result.z = have_best ? best_z : z;
    } else if (have_best) {
        result.z = best_z;
    } else {
        result.z = z;
        if (status != SolveStatus::infeasible) {
            status = SolveStatus::max_iter;
        }
    }
    problem.evaluate(result.z, ev);
    result.report.objective = ev.objective;
    result.report.constraint_violation = violation(ev);
    result.report.kkt_residual = kkt_residual(problem, result.z, ev, y, lambda);
    if (status != SolveStatus::diverged && status != SolveStatus::infeasible) {
        const bool ok = result.report.constraint_violation <= options.feas_tol &&
                        result.report.kkt_residual <= options.opt_tol;
        status = ok ? SolveStatus::optimal : SolveStatus::max_iter;
    }
    if (status == SolveStatus::infeasible && have_best) {
        status = SolveStatus::max_iter;
    }
    result.report.status = status;
    result.multipliers = {y, lambda, penalty};
    return result;
}

double check_gradients(const NlpProblem& problem, const Vector& z) {
    const Index nz = problem.num_variables();
    const Index ni = problem.num_inequalities();
    const Index ne = problem.num_equalities();
    const Vector grad = problem.objective_gradient(z);
    const Matrix jg = problem.inequality_jacobian(z);
    const Matrix jh = problem.equality_jacobian(z);

    Vector num_grad(nz);
    Matrix num_jg(ni, nz);
    Matrix num_jh(ne, nz);
    NlpEvaluation plus;
    NlpEvaluation minus;
    for (Index i = 0; i < nz; ++i) {
        const double step = 1e-6 * (1.0 + std::abs(z[i]));
        Vector zp = z;
        Vector zm = z;
        zp[i] += step;
        zm[i] -= step;
        problem.evaluate(zp, plus);
        problem.evaluate(zm, minus);
        num_grad[i] = (plus.objective - minus.objective) / (2.0 * step);
        num_jg.col(i) = (plus.inequalities - minus.inequalities) / (2.0 * step);
        num_jh.col(i) = (plus.equalities - minus.equalities) / (2.0 * step);
    }
    const auto rel = [](const auto& a, const auto& b) {
        const double scale = std::max(1.0, b.template lpNorm<Eigen::Infinity>());
        return (a - b).template lpNorm<Eigen::Infinity>() / scale;
    };
    double worst = rel(grad, num_grad);
    for (Index i = 0; i < ni; ++i) {
        worst = std::max(worst, rel(Vector(jg.row(i).transpose()), Vector(num_jg.row(i).transpose())));
    }
    for (Index j = 0; j < ne; ++j) {
        worst = std::max(worst, rel(Vector(jh.row(j).transpose()), Vector(num_jh.row(j).transpose())));
    }
    return worst;
}

}  // namespace trackmpc
