#include "fixtures.hpp"
#include "trackmpc/analysis.hpp"
#include "trackmpc/controllers.hpp"
#include "trackmpc/models.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

using namespace trackmpc;
using fixtures::vec;

namespace {

Vector uniform_in(const Box& box, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Vector v(box.dim());
    for (Index i = 0; i < v.size(); ++i) {
        v[i] = box.lower[i] + (box.upper[i] - box.lower[i]) * unit(rng);
    }
    return v;
}

// Chart point with u_r = target, found by bisection on a bracket of the chart parameter.
Reference chart_point_with_input(const ManifoldChart& chart, double lo, double hi, double target) {
    double flo = chart.at(lo).u[0] - target;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        const double fmid = chart.at(mid).u[0] - target;
        if ((fmid < 0.0) == (flo < 0.0)) {
            lo = mid;
            flo = fmid;
        } else {
            hi = mid;
        }
    }
    return chart.at(0.5 * (lo + hi));
}

}  // namespace

TEST_SUITE("analysis") {

TEST_CASE("suboptimality factor examples") {
    const SuboptimalityFactor a = alpha_N(2.0, 1.0, 10.0, 20);
    CHECK(a.alpha == doctest::Approx(0.5));
    CHECK(a.valid);
    CHECK(N_eta(2.0, 1.0, 10.0) == 10);

    for (int N : {1, 7, 500}) {
        CHECK(alpha_N(1.0, 0.3, 4.0, N).alpha == 1.0);
    }
    // eta = gamma sigma: alpha_N -> 1 as N grows
    CHECK(alpha_N(1.5, 2.0, 3.0, 1000000).alpha == doctest::Approx(1.0).epsilon(1e-5));

    const SuboptimalityFactor short_horizon = alpha_N(2.0, 1.0, 10.0, 10);
    CHECK_FALSE(short_horizon.valid);
    CHECK(short_horizon.alpha == doctest::Approx(0.0));
    CHECK(short_horizon.reason == "N <= N_eta");
    CHECK_FALSE(alpha_N(2.0, 1.0, 1.0, 50).valid);  // eta < gamma sigma

    CHECK_THROWS_AS((void)alpha_N(0.9, 1.0, 1.0, 5), ConfigError);
    CHECK_THROWS_AS((void)alpha_N(2.0, 0.0, 1.0, 5), ConfigError);
    CHECK_THROWS_AS((void)alpha_N(2.0, 1.0, 1.0, 0), ConfigError);
}

TEST_CASE("N_eta rounds down so that N > N_eta is exact") {
    CHECK(N_eta(3.0, 1.0, 1.5) == 3);
    CHECK(N_eta(1.2, 0.5, 2.5) == 5);
    CHECK(N_eta(2.0, 1.0, 10.5) == 10);
    CHECK(alpha_N(2.0, 1.0, 10.5, 11).valid);
    CHECK(alpha_N(2.0, 1.0, 10.5, 11).alpha > 0.0);
}

TEST_CASE("delta(K) substitution and decay") {
    const Vector xd = vec({0.0, 0.0});
    const Vector x0 = vec({0.6, 0.8});
    CHECK(delta_K(2.0, 1.0, 3.0, 0.9, x0, xd, 10) == doctest::Approx(2.0 * 9.0 * std::pow(0.9, 20)));
    CHECK(delta_K(2.0, 1.0, 3.0, 0.9, x0, xd, 10) == doctest::Approx(2.18838).epsilon(1e-5));
    CHECK(delta_K(2.0, 1.0, 3.0, 0.9, xd, xd, 3) == 0.0);
    double prev = delta_K(2.0, 1.0, 3.0, 0.9, x0, xd, 0);
    for (int K = 1; K <= 100; ++K) {
        const double d = delta_K(2.0, 1.0, 3.0, 0.9, x0, xd, K);
        CHECK(d < prev);
        prev = d;
    }
    CHECK(prev < 1e-7);
    CHECK_THROWS_AS((void)delta_K(2.0, 1.0, 3.0, 1.0, x0, xd, 3), ConfigError);
}

TEST_CASE("exponential fit on exact geometric data") {
    Matrix states(1, 30);
    for (Index k = 0; k < states.cols(); ++k) {
        states(0, k) = 2.0 * std::pow(0.5, static_cast<double>(k));
    }
    const ExponentialFit fit = exponential_fit(states, vec({0.0}));
    CHECK(fit.c * 2.0 == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(fit.gamma == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(fit.r_squared == doctest::Approx(1.0).epsilon(1e-12));
    // 2 * 0.5^k stays above the noise floor for k <= 30 only
    CHECK(fit.points == 30);

    CHECK_THROWS_AS((void)exponential_fit(Matrix::Constant(1, 30, 0.7), vec({0.7})), Error);
    CHECK_THROWS_AS((void)exponential_fit(Matrix::Constant(1, 5, 1.0), vec({0.0})), Error);
}

TEST_CASE("analytic stage constants satisfy the sandwich inequalities on samples") {
    const auto setup = fixtures::cstr();
    const StageConstants sc = analytic_stage_constants(setup.cost, setup.spec);
    CHECK(sc.c1 == 1.0);
    CHECK(sc.c2 == 1.0);
    CHECK(sc.c3 >= 1.0);
    std::mt19937_64 rng(5);
    const ManifoldChart chart = *setup.model->manifold_chart();
    const ChartInterval iv = admissible_chart_interval(*setup.model, setup.spec);
    std::uniform_real_distribution<double> param(iv.lo, iv.hi);
    for (int i = 0; i < 500; ++i) {
        const Vector x = uniform_in(setup.spec.state, rng);
        const Vector u = uniform_in(setup.spec.input, rng);
        const Reference r1 = chart.at(param(rng));
        const Reference r2 = chart.at(param(rng));
        const double d = reference_distance(r1, r2);
        const double l1 = setup.cost.value(x, u, r1);
        const double l2 = setup.cost.value(x, u, r2);
        CHECK(l1 <= sc.c3 * l2 + sc.c4 * d * d + 1e-12);
        CHECK(l1 <= l2 + sc.c5 * d * d + sc.c6 * d + 1e-12);
        const double ls = ell_star(*setup.model, setup.spec, setup.cost, x, r1);
        const double dx2 = (x - r1.x).squaredNorm();
        CHECK(sc.c1 * dx2 <= ls + 1e-12);
        CHECK(ls <= sc.c2 * dx2 + 1e-12);
    }
    // r1 = r2: equality slack zero for c3 = 1
    const Vector x = vec({0.4, 0.6});
    const Vector u = vec({0.5});
    CHECK(setup.cost.value(x, u, setup.r_d) <= sc.c3 * setup.cost.value(x, u, setup.r_d));
}

TEST_CASE("candidate references along the cstr manifold") {
    const auto setup = fixtures::cstr();
    const ManifoldChart chart = *setup.model->manifold_chart();
    const ChartInterval iv = admissible_chart_interval(*setup.model, setup.spec);

    // The steady-state input is below 0.2 on the low-temperature end of the admissible interval.
    REQUIRE(chart.at(iv.lo).u[0] < 0.2);
    const Reference r = chart_point_with_input(chart, iv.lo, setup.r_d.x[1], 0.2);
    REQUIRE(std::abs(r.u[0] - 0.2) < 1e-9);

    const Reference same = candidate_reference(chart, r, 0.0, setup.r_d);
    CHECK(reference_distance(same, r) == 0.0);
    const Reference full = candidate_reference(chart, r, 1.0, setup.r_d);
    CHECK(reference_distance(full, setup.r_d) <= 1e-6);
    CHECK(full.residual <= kEqTol);

    // Fit c1 over manifold samples on a theta grid that excludes the checked values, then re-check at r.
    const double dist = reference_distance(r, setup.r_d);
    double c1 = 0.0;
    for (int i = 0; i <= 200; ++i) {
        const Reference ri = chart.at(iv.lo + (iv.hi - iv.lo) * i / 200.0);
        const double di = reference_distance(ri, setup.r_d);
        if (di < 1e-6) {
            continue;
        }
        for (double theta : {0.05, 0.1, 0.25, 0.75, 1.0}) {
            c1 = std::max(c1, reference_distance(candidate_reference(chart, ri, theta, setup.r_d), ri) / (theta * di));
        }
    }
    for (double theta : {0.5, 0.3, 0.6, 0.9}) {
        const Reference rh = candidate_reference(chart, r, theta, setup.r_d);
        CHECK(rh.residual <= kEqTol);
        CHECK(reference_distance(rh, r) <= c1 * theta * dist * (1.0 + 1e-9));
    }

    CHECK_THROWS_AS((void)candidate_reference(chart, r, 1.5, setup.r_d), ConfigError);
    Reference off = r;
    off.u[0] += 0.05;
    CHECK_THROWS_AS((void)candidate_reference(chart, off, 0.5, setup.r_d), Error);
}

TEST_CASE("offset cost is positive and monotone along the cstr manifold") {
    const auto setup = fixtures::cstr();
    const ManifoldChart chart = *setup.model->manifold_chart();
    const ChartInterval iv = admissible_chart_interval(*setup.model, setup.spec);
    const double sd = chart.coordinate(setup.r_d);
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> param(iv.lo, iv.hi);
    std::vector<double> params(1000);
    for (double& s : params) {
        s = param(rng);
    }
    std::sort(params.begin(), params.end());
    double prev_left = 0.0;
    std::vector<std::pair<double, double>> left;
    std::vector<std::pair<double, double>> right;
    for (double s : params) {
        const Reference r = chart.at(s);
        const double d = reference_distance(r, setup.r_d);
        const double t = setup.T.value(r);
        if (d > 1e-6) {
            CHECK(t > 0.0);
        }
        (s < sd ? left : right).emplace_back(std::abs(s - sd), t);
    }
    std::sort(left.begin(), left.end());
    std::sort(right.begin(), right.end());
    for (const auto* side : {&left, &right}) {
        prev_left = 0.0;
        for (const auto& [gap, t] : *side) {
            CHECK(t >= prev_left - 1e-12);
            prev_left = t;
        }
    }
}

TEST_CASE("constants estimator on the scalar system recovers the Riccati ratio") {
    const auto setup = fixtures::scalar();
    ConstantsOptions opts;
    opts.references = 20;
    opts.states_per_reference = 50;
    opts.horizon = 30;
    opts.sigma_levels = {0.01, 0.1, 1.0, 10.0};
    const ConstantsEstimate est = estimate_constants(setup.model, setup.spec, setup.cost, setup.T, opts);
    CHECK(est.gamma == doctest::Approx(fixtures::golden_ratio()).epsilon(0.1));
    CHECK_FALSE(est.gamma_lower_bound);
    CHECK(est.T_positive);
    CHECK(est.T_monotone);
    CHECK(est.provenance.at("c1_l") == Provenance::analytic);
    CHECK(est.provenance.at("gamma") == Provenance::sampled);

    std::ostringstream report;
    write_report(est, report);
    CHECK(report.str().find("gamma = ") != std::string::npos);

    ConstantsOptions few = opts;
    few.references = 10;
    CHECK_THROWS_AS((void)estimate_constants(setup.model, setup.spec, setup.cost, setup.T, few), ConfigError);
    few = opts;
    few.manifold_samples = 999;
    CHECK_THROWS_AS((void)estimate_constants(setup.model, setup.spec, setup.cost, setup.T, few), ConfigError);
}

TEST_CASE("oracle on the scalar system matches the Riccati cost") {
    const auto setup = fixtures::scalar();
    OracleOptions opts;
    opts.N = 30;
    opts.tail_tol = 1e-12;
    const OracleResult res = infinite_horizon_oracle(setup.model, setup.spec, setup.cost, setup.r_d, vec({2.0}), opts);
    CHECK(res.J_inf == doctest::Approx(fixtures::golden_ratio() * 4.0).epsilon(0.01));
    CHECK(res.prefix.front() == 0.0);
    CHECK(res.prefix.size() == static_cast<std::size_t>(res.K_used) + 1);
    CHECK(res.cost_over(res.K_used) <= res.J_inf);

    const OracleResult at_target =
        infinite_horizon_oracle(setup.model, setup.spec, setup.cost, setup.r_d, setup.r_d.x, opts);
    CHECK(at_target.J_inf <= 1e-12);

    OracleOptions tight = opts;
    tight.K_max = 3;
    CHECK_THROWS_AS((void)infinite_horizon_oracle(setup.model, setup.spec, setup.cost, setup.r_d, vec({2.0}), tight),
                    OracleNonConvergence);
}

TEST_CASE("value function relation between tracking and standard MPC") {
    const auto setup = fixtures::scalar();
    const double eta = 100.0;
    const int N = 5;
    for (double x : {-3.0, -1.0, 0.5, 2.0, 4.0}) {
        const MpcSolution s = solve_standard_mpc(setup.model, setup.spec, setup.cost, vec({x}), setup.r_d, N);
        REQUIRE(s.feasible);
        REQUIRE(s.value <= eta);
        const MpcSolution t = solve_tracking_mpc(setup.model, setup.spec, setup.cost, setup.T,
                                                 ScalingFn::affine(1.0, 1.0), vec({x}), N, eta);
        REQUIRE(t.feasible);
        CHECK(t.value <= s.value + 1e-6);
    }

    const auto cstr = fixtures::cstr();
    for (const Vector& x : {vec({0.3, 0.63}), vec({0.25, 0.66})}) {
        const MpcSolution s = solve_standard_mpc(cstr.model, cstr.spec, cstr.cost, x, cstr.r_d, 10);
        if (!s.feasible || s.value > 10.0) {
            continue;
        }
        const MpcSolution t = solve_tracking_mpc(cstr.model, cstr.spec, cstr.cost, cstr.T,
                                                 ScalingFn::affine(1.0, 1.0), x, 10, 10.0);
        CHECK(t.value <= s.value + 1e-6);
    }
}

TEST_CASE("relaxed dynamic programming along a scalar tracking run") {
    const auto setup = fixtures::scalar();
    ControllerConfig cfg;
    cfg.N = 10;
    cfg.eta = 100.0;
    TrackingMpc mpc(setup.model, setup.spec, setup.cost, setup.T, cfg);
    const ClosedLoopRun run = closed_loop(mpc, vec({2.0}), 30);
    REQUIRE(run.completed());
    const RelaxedDpCheck probe = relaxed_dp_check(run, setup.cost, 1.0);
    CHECK(probe.checked == 29);
    CHECK(probe.empirical_alpha > 0.5);
    const RelaxedDpCheck at_empirical = relaxed_dp_check(run, setup.cost, probe.empirical_alpha);
    CHECK(at_empirical.violations == 0);
    const RelaxedDpCheck undefined = relaxed_dp_check(run, setup.cost, -0.5);
    CHECK(undefined.violations == undefined.checked);
}

TEST_CASE("transient bound at the target is trivially dominated") {
    const auto setup = fixtures::scalar();
    ControllerConfig cfg;
    cfg.N = 5;
    cfg.eta = 100.0;
    TrackingMpc mpc(setup.model, setup.spec, setup.cost, setup.T, cfg);
    const ClosedLoopRun run = closed_loop(mpc, setup.r_d.x, 20);
    OracleOptions oopts;
    oopts.N = 10;
    const OracleResult oracle =
        infinite_horizon_oracle(setup.model, setup.spec, setup.cost, setup.r_d, setup.r_d.x, oopts);
    ConstantsEstimate consts;
    consts.stage = analytic_stage_constants(setup.cost, setup.spec);
    consts.gamma = 1.0;
    consts.sigma = 100.0;  // N_eta = 1, so N = 5 gives a defined bound
    const BoundInputs inputs{setup.cost, setup.r_d, 5, 100.0, 20, 1.0, 0.9, 0.0};
    const PerformanceReport rep = transient_bound(run, consts, oracle, inputs);
    CHECK(rep.J_closed <= 1e-12);
    CHECK(rep.error_sum <= 1e-9);
    CHECK(rep.bound_defined);
    CHECK(rep.J_closed <= rep.bound_rhs);
    CHECK(rep.dominance);
    CHECK(sup_reference_distance(run, setup.r_d, 20) <= 1e-6);

    std::ostringstream out;
    write_report(rep, out);
    CHECK(out.str().find("bound_rhs = ") != std::string::npos);
}

TEST_CASE("convergence study on the scalar system") {
    const auto setup = fixtures::scalar();
    const StageConstants stage = analytic_stage_constants(setup.cost, setup.spec);
    const ConvergenceStudy study = convergence_study(setup.model, setup.spec, setup.cost, setup.T,
                                                     ScalingFn::affine(1.0, 1.0), vec({2.0}), {2, 5, 10, 30}, 100.0,
                                                     60, stage);
    REQUIRE(study.rows.size() == 4);
    for (const ConvergenceRow& row : study.rows) {
        CHECK(row.completed);
    }
    CHECK(study.J_nonincreasing);
    CHECK(study.sup_r_nonincreasing);
    CHECK(study.rows.back().J == doctest::Approx(fixtures::golden_ratio() * 4.0).epsilon(0.01));
    CHECK(study.eta_hat >= study.rows.front().J_standard);

    const ConvergenceStudy at_target = convergence_study(setup.model, setup.spec, setup.cost, setup.T,
                                                         ScalingFn::affine(1.0, 1.0), setup.r_d.x, {2, 5}, 100.0,
                                                         20, stage);
    for (const ConvergenceRow& row : at_target.rows) {
        CHECK(row.sup_r <= 1e-6);
        CHECK(row.J <= 1e-12);
    }
}

}  // TEST_SUITE
