#include "trackmpc/analysis.hpp"

#include "trackmpc/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>

namespace trackmpc {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Below this distance to r_d a reference counts as r_d itself.
constexpr double kSameReference = 1e-6;

double max_eigenvalue(const Matrix& M) {
    if (M.size() == 0) {
        return 0.0;
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(M);
    return es.eigenvalues().maxCoeff();
}

double min_eigenvalue(const Matrix& M) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(M);
    return es.eigenvalues().minCoeff();
}

ManifoldChart require_chart(const SystemModel& model) {
    auto chart = model.manifold_chart();
    if (!chart) {
        throw ConfigError("model '" + model.name() + "' has no manifold chart");
    }
    return *chart;
}

struct GammaSample {
    Reference r;
    Vector x;
    double ell = 0.0;
    double J_N = kNaN;
    double J_next = kNaN;
    bool feasible = false;
};

void estimate_gamma_sigma(const ModelPtr& model, const ConstraintSpec& spec, const StageCost& cost,
                          const ManifoldChart& chart, const ChartInterval& interval,
                          const ConstantsOptions& options, std::mt19937_64& rng, ConstantsEstimate& out) {
    std::vector<double> levels = options.sigma_levels;
    std::sort(levels.begin(), levels.end());
    if (levels.empty() || levels.front() <= 0.0) {
        throw ConfigError("sigma_levels must be nonempty and positive");
    }
    const Index n = model->state_dim();
    std::uniform_real_distribution<double> param(interval.lo, interval.hi);
    std::uniform_real_distribution<double> fraction(0.05, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    std::vector<GammaSample> samples;
    samples.reserve(static_cast<std::size_t>(options.references) * options.states_per_reference);
    int skipped = 0;
    for (int i = 0; i < options.references; ++i) {
        const Reference r = chart.at(param(rng));
        for (int j = 0; j < options.states_per_reference; ++j) {
            const double target = levels[static_cast<std::size_t>(j) % levels.size()] * fraction(rng);
            bool placed = false;
            for (int attempt = 0; attempt < 20 && !placed; ++attempt) {
                Vector d(n);
                for (Index a = 0; a < n; ++a) {
                    d[a] = normal(rng);
                }
                const double dq = d.dot(cost.Q() * d);
                if (dq <= 0.0) {
                    continue;
                }
                Vector x = r.x + std::sqrt(target / dq) * d;
                if (spec.state.contains(x)) {
                    GammaSample s;
                    s.r = r;
                    s.x = std::move(x);
                    samples.push_back(std::move(s));
                    placed = true;
                }
            }
            skipped += placed ? 0 : 1;
        }
    }
    if (skipped > 0) {
        out.warnings.push_back(std::to_string(skipped) + " gamma samples could not be placed inside X");
    }

    const int N1 = options.horizon;
    const int N2 = options.horizon + options.horizon_step;
    parallel_for(samples.size(), options.jobs, [&](std::size_t i) {
        GammaSample& s = samples[i];
        s.ell = ell_star(*model, spec, cost, s.x, s.r);
        const MpcSolution a = solve_standard_mpc(model, spec, cost, s.x, s.r, N1, options.solver);
        const MpcSolution b = solve_standard_mpc(model, spec, cost, s.x, s.r, N2, options.solver);
        s.feasible = a.feasible && b.feasible;
        s.J_N = a.value;
        s.J_next = b.value;
    });

    out.levels.clear();
    for (double level : levels) {
        SigmaLevel L;
        L.level = level;
        for (const GammaSample& s : samples) {
            if (s.ell > level || s.ell <= 0.0) {
                continue;
            }
            ++L.samples;
            if (!s.feasible) {
                ++L.infeasible;
                continue;
            }
            L.ratio_N = std::max(L.ratio_N, s.J_N / s.ell);
            L.ratio_N_next = std::max(L.ratio_N_next, s.J_next / s.ell);
        }
        L.stabilized = L.samples > 0 && L.infeasible == 0 && L.ratio_N > 0.0 &&
                       std::abs(L.ratio_N_next - L.ratio_N) <= options.stabilization_tol * L.ratio_N;
        out.levels.push_back(L);
    }

    const SigmaLevel* chosen = nullptr;
    for (const SigmaLevel& L : out.levels) {
        if (L.stabilized) {
            chosen = &L;
        }
    }
    if (chosen == nullptr) {
        chosen = &out.levels.front();
        out.gamma_lower_bound = true;
        out.warnings.push_back("cost-controllability ratio did not stabilize between N=" + std::to_string(N1) +
                               " and N=" + std::to_string(N2) + " at any tested level; gamma is a lower bound");
    }
    out.sigma = chosen->level;
    out.gamma = std::max(1.0, std::max(chosen->ratio_N, chosen->ratio_N_next));
}

void manifold_checks(const SystemModel& model, const ConstraintSpec& spec, const OffsetCost& T, const ManifoldChart& chart,
                     const ChartInterval& interval, const ConstantsOptions& options, std::mt19937_64& rng,
                     ConstantsEstimate& out) {
    const Reference r_d_ref = best_reachable_reference(model, spec, T);
    const double s_d = chart.coordinate(r_d_ref);

    std::uniform_real_distribution<double> param(interval.lo, interval.hi);
    std::vector<double> params(static_cast<std::size_t>(options.manifold_samples));
    for (double& s : params) {
        s = param(rng);
    }
    std::sort(params.begin(), params.end());

    std::vector<Reference> refs;
    refs.reserve(params.size());
    out.T_bounds.clear();
    for (double s : params) {
        refs.push_back(chart.at(s));
        out.T_bounds.emplace_back(reference_distance(refs.back(), r_d_ref), T.value(refs.back()));
    }

    out.T_positive = true;
    for (const auto& [dist, value] : out.T_bounds) {
        if (dist > kSameReference && value <= 0.0) {
            out.T_positive = false;
        }
    }
    if (!out.T_positive) {
        out.warnings.push_back("T is not positive on every sampled reference away from r_d");
    }
    // Monotone along the chart parameter moving away from s_d on both sides.
    out.T_monotone = true;
    const double slack = 1e-12;
    for (std::size_t i = 1; i < params.size(); ++i) {
        const double t_prev = out.T_bounds[i - 1].second;
        const double t_cur = out.T_bounds[i].second;
        if (params[i - 1] >= s_d && t_cur < t_prev - slack) {
            out.T_monotone = false;
        }
        if (params[i] <= s_d && t_prev < t_cur - slack) {
            out.T_monotone = false;
        }
    }
    if (!out.T_monotone) {
        out.warnings.push_back("T is not monotone along the chart parameter away from r_d");
    }

    double c1_r = 0.0;
    double c2_r = std::numeric_limits<double>::infinity();
    int used = 0;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const double dist = out.T_bounds[i].first;
        if (dist <= kSameReference) {
            continue;
        }
        for (double theta : options.thetas) {
            if (theta <= 0.0) {
                continue;
            }
            const Reference rh = candidate_reference(chart, refs[i], theta, r_d_ref);
            c1_r = std::max(c1_r, reference_distance(rh, refs[i]) / (theta * dist));
            c2_r = std::min(c2_r, (out.T_bounds[i].second - T.value(rh)) / (theta * dist * dist));
            ++used;
        }
    }
    if (used == 0) {
        throw Error("estimate_constants: no manifold samples away from r_d");
    }
    out.c1_r = c1_r;
    out.c2_r = c2_r;
    if (c2_r <= 0.0) {
        out.warnings.push_back("fitted c2_r is not positive; the candidate reference does not decrease T");
    }

    out.candidate_held_out_ok = true;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const double dist = out.T_bounds[i].first;
        if (dist <= kSameReference) {
            continue;
        }
        for (double theta : options.held_out_thetas) {
            const Reference rh = candidate_reference(chart, refs[i], theta, r_d_ref);
            const bool upper = reference_distance(rh, refs[i]) <= c1_r * theta * dist * (1.0 + 1e-9);
            const bool decrease =
                T.value(rh) - out.T_bounds[i].second <= -c2_r * theta * dist * dist + 1e-12;
            if (!upper || !decrease) {
                out.candidate_held_out_ok = false;
            }
        }
    }
    if (!out.candidate_held_out_ok) {
        out.warnings.push_back("c1_r/c2_r fit fails on held-out theta values");
    }

    double diameter = 0.0;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        for (std::size_t j = i + 1; j < refs.size(); ++j) {
            diameter = std::max(diameter, reference_distance(refs[i], refs[j]));
        }
    }
    out.delta_r = diameter;
}

void c_tau_diagnostic(ConstantsEstimate& out) {
    const double v2 = out.sigma / (4.0 * out.stage.c2);
    const double v = std::sqrt(v2);
    double alpha_up = 0.0;
    double alpha_lo = std::numeric_limits<double>::infinity();
    for (const auto& [dist, value] : out.T_bounds) {
        alpha_up = std::max(alpha_up, value);
        if (dist >= v) {
            alpha_lo = std::min(alpha_lo, value);
        }
    }
    if (!std::isfinite(alpha_lo)) {
        alpha_lo = alpha_up;
    }
    out.theta_tau = (out.c1_r > 0.0 && out.delta_r > 0.0) ? std::min(1.0, v / (out.c1_r * out.delta_r)) : 1.0;
    if (out.c2_r > 0.0) {
        out.c_tau = 3.0 + std::max(0.0, alpha_up - alpha_lo) / (out.c2_r * out.theta_tau * v2);
    } else {
        out.c_tau = std::numeric_limits<double>::infinity();
    }
}

}  // namespace

std::string to_string(Provenance p) { return p == Provenance::analytic ? "analytic" : "sampled"; }

StageConstants analytic_stage_constants(const StageCost& cost, const ConstraintSpec& spec) {
    const double lw = std::max(max_eigenvalue(cost.Q()), max_eigenvalue(cost.R()));
    StageConstants c;
    c.c1 = min_eigenvalue(cost.Q());
    c.c2 = max_eigenvalue(cost.Q());
    c.c3 = 2.0;
    c.c4 = 2.0 * lw;
    c.c5 = lw;
    c.c6 = 2.0 * lw * spec.z_diameter();
    return c;
}

ConstantsEstimate estimate_constants(const ModelPtr& model, const ConstraintSpec& spec, const StageCost& cost,
                                     const OffsetCost& T, const ConstantsOptions& options) {
    if (static_cast<long>(options.references) * options.states_per_reference < 1000) {
        throw ConfigError("estimate_constants: need at least 1000 cost-controllability samples");
    }
    if (options.manifold_samples < 1000) {
        throw ConfigError("estimate_constants: need at least 1000 manifold samples");
    }
    if (options.horizon < 1 || options.horizon_step < 1) {
        throw ConfigError("estimate_constants: horizons must be positive");
    }
    spec.validate(model->state_dim(), model->input_dim());
    const ManifoldChart chart = require_chart(*model);
    const ChartInterval interval = admissible_chart_interval(*model, spec);

    ConstantsEstimate out;
    out.stage = analytic_stage_constants(cost, spec);
    for (const char* key : {"c1_l", "c2_l", "c3_l", "c4_l", "c5_l", "c6_l"}) {
        out.provenance[key] = Provenance::analytic;
    }
    for (const char* key : {"gamma", "sigma", "c1_r", "c2_r", "T_bounds", "delta_r", "c_tau"}) {
        out.provenance[key] = Provenance::sampled;
    }

    std::mt19937_64 rng(options.seed);
    estimate_gamma_sigma(model, spec, cost, chart, interval, options, rng, out);
    manifold_checks(*model, spec, T, chart, interval, options, rng, out);
    c_tau_diagnostic(out);
    return out;
}

SuboptimalityFactor alpha_N(double gamma, double sigma, double eta, int N) {
    if (!(gamma >= 1.0) || !(sigma > 0.0) || N < 1) {
        throw ConfigError("alpha_N: need gamma >= 1, sigma > 0 and N >= 1");
    }
    SuboptimalityFactor f;
    f.alpha = 1.0 - (eta / sigma) * (gamma - 1.0) / static_cast<double>(N);
    if (eta < gamma * sigma) {
        f.reason = "eta < gamma sigma";
    } else if (N <= N_eta(gamma, sigma, eta)) {
        f.reason = "N <= N_eta";
    } else if (f.alpha <= 0.0) {
        f.reason = "alpha_N <= 0";
    } else {
        f.valid = true;
    }
    return f;
}

int N_eta(double gamma, double sigma, double eta) {
    if (!(gamma >= 1.0) || !(sigma > 0.0)) {
        throw ConfigError("N_eta: need gamma >= 1 and sigma > 0");
    }
    const double ratio = eta / sigma;
    const double value = std::max(ratio, ratio * (gamma - 1.0));
    if (value >= static_cast<double>(std::numeric_limits<int>::max())) {
        return std::numeric_limits<int>::max();
    }
    return static_cast<int>(std::floor(value));
}

double delta_K(double gamma, double c2, double c_s, double gamma_s_prime, const Vector& x0, const Vector& x_d,
               int K) {
    if (!(gamma_s_prime > 0.0 && gamma_s_prime < 1.0)) {
        throw ConfigError("delta_K: gamma_s' must lie in (0, 1)");
    }
    return gamma * c2 * c_s * c_s * (x0 - x_d).squaredNorm() * std::pow(gamma_s_prime, 2.0 * K);
}

ExponentialFit exponential_fit(const Matrix& states, const Vector& x_target) {
    if (states.cols() < 11) {
        throw Error("exponential_fit: run shorter than 10 steps");
    }
    const double e0 = (states.col(0) - x_target).norm();
    if (!(e0 > 10.0 * kFitNoiseFloor)) {
        throw Error("exponential_fit: insufficient data (initial error at noise floor)");
    }
    std::vector<double> ks;
    std::vector<double> ls;
    for (Index k = 0; k < states.cols(); ++k) {
        const double e = (states.col(k) - x_target).norm();
        if (e > kFitNoiseFloor) {
            ks.push_back(static_cast<double>(k));
            ls.push_back(std::log(e));
        }
    }
    if (ks.size() < 3) {
        throw Error("exponential_fit: insufficient data (fewer than 3 points above the noise floor)");
    }
    const double n = static_cast<double>(ks.size());
    double mk = 0.0;
    double ml = 0.0;
    for (std::size_t i = 0; i < ks.size(); ++i) {
        mk += ks[i];
        ml += ls[i];
    }
    mk /= n;
    ml /= n;
    double skk = 0.0;
    double skl = 0.0;
    double sll = 0.0;
    for (std::size_t i = 0; i < ks.size(); ++i) {
        skk += (ks[i] - mk) * (ks[i] - mk);
        skl += (ks[i] - mk) * (ls[i] - ml);
        sll += (ls[i] - ml) * (ls[i] - ml);
    }
    const double slope = skl / skk;
    const double intercept = ml - slope * mk;
    double ss_res = 0.0;
    for (std::size_t i = 0; i < ks.size(); ++i) {
        const double res = ls[i] - (intercept + slope * ks[i]);
        ss_res += res * res;
    }
    ExponentialFit fit;
    fit.gamma = std::exp(slope);
    fit.c = std::exp(intercept) / e0;
    fit.r_squared = sll > 0.0 ? 1.0 - ss_res / sll : 1.0;
    fit.points = static_cast<int>(ks.size());
    return fit;
}

ExponentialFit exponential_fit(const ClosedLoopRun& run, const Vector& x_target) {
    return exponential_fit(run.trajectory.states, x_target);
}

double OracleResult::cost_over(int K) const {
    if (K < 0) {
        return 0.0;
    }
    if (static_cast<std::size_t>(K) < prefix.size()) {
        return prefix[static_cast<std::size_t>(K)];
    }
    return J_inf;
}

OracleResult infinite_horizon_oracle(const ModelPtr& model, const ConstraintSpec& spec, const StageCost& cost,
                                     const Reference& r_d, const Vector& x0, const OracleOptions& options) {
    ControllerConfig config;
    config.N = options.N;
    config.solver = options.solver;
    StandardMpc controller(model, spec, cost, r_d, config);
    controller.reset();

    const Index n = model->state_dim();
    const Index m = model->input_dim();
    std::vector<Vector> xs{x0};
    std::vector<Vector> us;
    OracleResult out;
    out.prefix.push_back(0.0);
    Vector x = x0;
    double sum = 0.0;
    bool converged = false;
    for (int k = 0; k < options.K_max; ++k) {
        const StepOutcome outcome = controller.step(x);
        if (!outcome.solution.feasible) {
            throw InfeasibleError("infinite_horizon_oracle: standard MPC infeasible at step " + std::to_string(k));
        }
        const Vector u = outcome.solution.inputs.col(0);
        const double ell = cost.value(x, u, r_d);
        if (ell < options.tail_tol) {
            out.K_used = k;
            out.tail = options.tail_gamma * ell_star(*model, spec, cost, x, r_d);
            converged = true;
            break;
        }
        sum += ell;
        out.prefix.push_back(sum);
        x = model->step(x, u);
        if (!x.allFinite()) {
            throw DivergedError(static_cast<std::size_t>(k + 1), "infinite_horizon_oracle: state became non-finite");
        }
        us.push_back(u);
        xs.push_back(x);
    }
    if (!converged) {
        throw OracleNonConvergence(sum, "infinite_horizon_oracle: no convergence within K_max=" +
                                            std::to_string(options.K_max) + " steps (partial sum " +
                                            std::to_string(sum) + ")");
    }
    out.J_inf = sum + out.tail;
    out.trajectory.states.resize(n, static_cast<Index>(xs.size()));
    out.trajectory.inputs.resize(m, static_cast<Index>(us.size()));
    for (std::size_t k = 0; k < xs.size(); ++k) {
        out.trajectory.states.col(static_cast<Index>(k)) = xs[k];
    }
    for (std::size_t k = 0; k < us.size(); ++k) {
        out.trajectory.inputs.col(static_cast<Index>(k)) = us[k];
    }
    return out;
}

double reference_error_sum(const ClosedLoopRun& run, const StageConstants& stage, const Reference& r_d, Index K) {
    const Index last = std::min<Index>(K, run.ref_states.cols());
    double sum = 0.0;
    for (Index k = 0; k < last; ++k) {
        const double d = reference_distance(run.reference(k), r_d);
        sum += stage.c5 * d * d + stage.c6 * d;
    }
    return sum;
}

double sup_reference_distance(const ClosedLoopRun& run, const Reference& r_d, Index K) {
    const Index last = std::min<Index>(K, run.ref_states.cols());
    double sup = 0.0;
    for (Index k = 0; k < last; ++k) {
        sup = std::max(sup, reference_distance(run.reference(k), r_d));
    }
    return sup;
}

RelaxedDpCheck relaxed_dp_check(const ClosedLoopRun& run, const StageCost& cost, double alpha, double rel_tol) {
    RelaxedDpCheck check;
    check.worst_excess = -std::numeric_limits<double>::infinity();
    check.empirical_alpha = std::numeric_limits<double>::infinity();
    const Index steps = std::min<Index>(run.length(), static_cast<Index>(run.value.size()) - 1);
    for (Index k = 0; k < steps; ++k) {
        const double H0 = run.value[static_cast<std::size_t>(k)];
        const double H1 = run.value[static_cast<std::size_t>(k + 1)];
        const double ell = cost.value(run.trajectory.states.col(k), run.trajectory.inputs.col(k),
                                      run.ref_states.col(k), run.ref_inputs.col(k));
        if (ell > 1e-12) {
            check.empirical_alpha = std::min(check.empirical_alpha, (H0 - H1) / ell);
        }
        if (alpha > 0.0) {
            const double excess = ell - (H0 - H1) / alpha - rel_tol * (1.0 + H0);
            check.worst_excess = std::max(check.worst_excess, excess);
            check.violations += excess > 0.0 ? 1 : 0;
        }
        ++check.checked;
    }
    if (alpha <= 0.0) {
        check.violations = check.checked;
    }
    return check;
}

Reference candidate_reference(const ManifoldChart& chart, const Reference& r, double theta, const Reference& r_d) {
    if (!(theta >= 0.0 && theta <= 1.0)) {
        throw ConfigError("candidate_reference: theta must lie in [0, 1]");
    }
    if (theta == 0.0) {
        return r;
    }
    const double s = chart.coordinate(r);
    const double s_d = chart.coordinate(r_d);
    const double on_chart_tol = 1e-6;
    if (reference_distance(chart.at(s), r) > on_chart_tol || reference_distance(chart.at(s_d), r_d) > on_chart_tol) {
        throw Error("candidate_reference: reference is not on the manifold chart");
    }
    const double s_hat = s + theta * (s_d - s);
    if (s_hat < chart.parameter_min || s_hat > chart.parameter_max) {
        throw Error("candidate_reference: chart parameter leaves its domain");
    }
    return chart.at(s_hat);
}

PerformanceReport transient_bound(const ClosedLoopRun& run, const ConstantsEstimate& consts,
                                  const OracleResult& oracle, const BoundInputs& inputs) {
    PerformanceReport rep;
    rep.N = inputs.N;
    rep.eta = inputs.eta;
    rep.K = static_cast<int>(std::min<Index>(inputs.K, run.length()));
    if (rep.K < inputs.K) {
        rep.diagnostics.push_back("K clipped to the run length " + std::to_string(rep.K));
    }
    const Vector& x0 = run.trajectory.states.col(0);
    const Vector& x_d = inputs.r_d.x;

    rep.J_closed = performance_measure(run, inputs.cost, inputs.r_d, rep.K);
    rep.alpha = alpha_N(consts.gamma, consts.sigma, inputs.eta, inputs.N);
    rep.N_eta = N_eta(consts.gamma, consts.sigma, inputs.eta);
    rep.c_s = inputs.c_s;
    rep.gamma_s = inputs.gamma_s_prime;
    rep.delta = delta_K(consts.gamma, consts.stage.c2, inputs.c_s, inputs.gamma_s_prime, x0, x_d, rep.K);
    rep.error_sum = reference_error_sum(run, consts.stage, inputs.r_d, rep.K);
    rep.J_oracle = oracle.cost_over(rep.K);
    rep.eta_hat = inputs.eta_hat;

    rep.kappa = inputs.c_s * (x0 - x_d).norm() * std::pow(inputs.gamma_s_prime, rep.K);
    const Index end_col = std::min<Index>(rep.K, oracle.trajectory.states.cols() - 1);
    rep.oracle_endpoint_error = end_col >= 0 ? (oracle.trajectory.states.col(end_col) - x_d).norm() : 0.0;
    rep.small_K_regime = rep.oracle_endpoint_error > rep.kappa;
    if (rep.small_K_regime) {
        rep.diagnostics.push_back("oracle endpoint outside B_kappa(x_d); K is in the small-K regime and the bound is "
                                  "reported, not certified");
    }
    if (consts.gamma_lower_bound) {
        rep.diagnostics.push_back("gamma is only a lower bound");
    }

    if (rep.alpha.valid) {
        rep.bound_defined = true;
        rep.bound_rhs = (rep.J_oracle + rep.delta) / rep.alpha.alpha + rep.error_sum;
        rep.dominance = rep.bound_rhs >= rep.J_closed;
        if (!rep.dominance) {
            rep.diagnostics.push_back("bound_rhs < J_closed: constant estimates do not certify this run");
        }
    } else {
        rep.bound_rhs = kNaN;
        rep.diagnostics.push_back("bound undefined: " + rep.alpha.reason + " (alpha_N = " +
                                  std::to_string(rep.alpha.alpha) + ", N_eta = " + std::to_string(rep.N_eta) + ")");
    }

    try {
        const ExponentialFit fit = exponential_fit(run, x_d);
        rep.c_exp = fit.c;
        rep.gamma_exp = fit.gamma;
        rep.fit_r_squared = fit.r_squared;
    } catch (const Error& e) {
        rep.c_exp = kNaN;
        rep.gamma_exp = kNaN;
        rep.diagnostics.push_back(e.what());
    }
    rep.empirical_alpha = relaxed_dp_check(run, inputs.cost, 1.0).empirical_alpha;
    return rep;
}

ConvergenceStudy convergence_study(const ModelPtr& model, const ConstraintSpec& spec, const StageCost& cost,
                                   const OffsetCost& T, const ScalingFn& lambda, const Vector& x0,
                                   const std::vector<int>& N_list, double eta, int K, const StageConstants& stage,
                                   const StudyOptions& options) {
    if (!std::is_sorted(N_list.begin(), N_list.end())) {
        throw ConfigError("convergence_study: N_list must be ascending");
    }
    const Reference r_d = best_reachable_reference(*model, spec, T);
    ConvergenceStudy study;
    study.rows.resize(N_list.size());
    parallel_for(N_list.size(), options.jobs, [&](std::size_t i) {
        ConvergenceRow& row = study.rows[i];
        row.N = N_list[i];
        ControllerConfig config;
        config.N = row.N;
        config.eta = eta;
        config.lambda = lambda;
        config.warm_start = options.warm_start;
        config.solver = options.solver;
        const MpcSolution standard = solve_standard_mpc(model, spec, cost, x0, r_d, row.N, options.solver);
        row.J_standard = standard.feasible ? standard.value : kNaN;
        try {
            TrackingMpc controller(model, spec, cost, T, config);
            const ClosedLoopRun run = closed_loop(controller, x0, K);
            row.completed = run.completed();
            row.diagnostic = run.diagnostic;
            row.J = performance_measure(run, cost, r_d, K);
            row.sup_r = sup_reference_distance(run, r_d, K);
            row.error_sum = reference_error_sum(run, stage, r_d, K);
        } catch (const Error& e) {
            row.completed = false;
            row.diagnostic = e.what();
            row.J = kNaN;
            row.sup_r = kNaN;
            row.error_sum = kNaN;
        }
    });

    study.eta_hat = 0.0;
    for (const ConvergenceRow& row : study.rows) {
        if (std::isfinite(row.J_standard)) {
            study.eta_hat = std::max(study.eta_hat, row.J_standard);
        }
    }
    study.J_nonincreasing = true;
    study.sup_r_nonincreasing = true;
    const ConvergenceRow* prev = nullptr;
    for (const ConvergenceRow& row : study.rows) {
        if (!row.completed) {
            continue;
        }
        if (prev != nullptr) {
            study.J_nonincreasing = study.J_nonincreasing && row.J <= prev->J * (1.0 + 1e-9);
            study.sup_r_nonincreasing = study.sup_r_nonincreasing && row.sup_r <= prev->sup_r * (1.0 + 1e-9);
        }
        prev = &row;
    }
    return study;
}

void write_report(const ConstantsEstimate& e, std::ostream& out) {
    const auto flags = out.flags();
    const auto prec = out.precision();
    out << std::setprecision(17);
    out << "c1_l = " << e.stage.c1 << "\n"
        << "c2_l = " << e.stage.c2 << "\n"
        << "c3_l = " << e.stage.c3 << "\n"
        << "c4_l = " << e.stage.c4 << "\n"
        << "c5_l = " << e.stage.c5 << "\n"
        << "c6_l = " << e.stage.c6 << "\n"
        << "gamma = " << e.gamma << "\n"
        << "sigma = " << e.sigma << "\n"
        << "gamma_lower_bound = " << (e.gamma_lower_bound ? "true" : "false") << "\n";
    for (const SigmaLevel& L : e.levels) {
        std::ostringstream key;
        key << "level[" << L.level << "]";
        out << key.str() << ".samples = " << L.samples << "\n"
            << key.str() << ".infeasible = " << L.infeasible << "\n"
            << key.str() << ".ratio_N = " << L.ratio_N << "\n"
            << key.str() << ".ratio_N_next = " << L.ratio_N_next << "\n"
            << key.str() << ".stabilized = " << (L.stabilized ? "true" : "false") << "\n";
    }
    out << "c1_r = " << e.c1_r << "\n"
        << "c2_r = " << e.c2_r << "\n"
        << "candidate_held_out_ok = " << (e.candidate_held_out_ok ? "true" : "false") << "\n"
        << "T_samples = " << e.T_bounds.size() << "\n"
        << "T_positive = " << (e.T_positive ? "true" : "false") << "\n"
        << "T_monotone = " << (e.T_monotone ? "true" : "false") << "\n"
        << "delta_r = " << e.delta_r << "\n"
        << "theta_tau = " << e.theta_tau << "\n"
        << "c_tau = " << e.c_tau << "\n";
    for (const auto& [key, p] : e.provenance) {
        out << "provenance." << key << " = " << to_string(p) << "\n";
    }
    for (std::size_t i = 0; i < e.warnings.size(); ++i) {
        out << "warning[" << i << "] = " << e.warnings[i] << "\n";
    }
    out.flags(flags);
    out.precision(prec);
}

void write_report(const PerformanceReport& r, std::ostream& out) {
    const auto flags = out.flags();
    const auto prec = out.precision();
    out << std::setprecision(17);
    out << "N = " << r.N << "\n"
        << "eta = " << r.eta << "\n"
        << "K = " << r.K << "\n"
        << "alpha_N = " << r.alpha.alpha << "\n"
        << "alpha_valid = " << (r.alpha.valid ? "true" : "false") << "\n"
        << "N_eta = " << r.N_eta << "\n"
        << "delta_K = " << r.delta << "\n"
        << "error_sum = " << r.error_sum << "\n"
        << "bound_defined = " << (r.bound_defined ? "true" : "false") << "\n"
        << "bound_rhs = " << r.bound_rhs << "\n"
        << "J_closed = " << r.J_closed << "\n"
        << "J_oracle = " << r.J_oracle << "\n"
        << "dominance = " << (r.dominance ? "true" : "false") << "\n"
        << "c_s = " << r.c_s << "\n"
        << "gamma_s = " << r.gamma_s << "\n"
        << "c_exp = " << r.c_exp << "\n"
        << "gamma_exp = " << r.gamma_exp << "\n"
        << "fit_r_squared = " << r.fit_r_squared << "\n"
        << "eta_hat = " << r.eta_hat << "\n"
        << "kappa = " << r.kappa << "\n"
        << "oracle_endpoint_error = " << r.oracle_endpoint_error << "\n"
        << "small_K_regime = " << (r.small_K_regime ? "true" : "false") << "\n"
        << "empirical_alpha = " << r.empirical_alpha << "\n";
    for (std::size_t i = 0; i < r.diagnostics.size(); ++i) {
        out << "diagnostic[" << i << "] = " << r.diagnostics[i] << "\n";
    }
    out.flags(flags);
    out.precision(prec);
}

}  // namespace trackmpc
