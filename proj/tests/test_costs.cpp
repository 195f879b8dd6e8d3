#include "fixtures.hpp"
#include "trackmpc/models.hpp"

#include <doctest.h>

#include <memory>
#include <random>

using namespace trackmpc;
using fixtures::vec;

TEST_SUITE("costs") {

TEST_CASE("quadratic stage cost and its gradient") {
    Matrix Q(2, 2);
    Q << 2.0, 0.5, 0.5, 1.0;
    const StageCost cost(Q, Matrix::Identity(1, 1) * 3.0);
    const Vector x = vec({1.0, -1.0});
    const Vector u = vec({0.5});
    const Vector xr = vec({0.2, 0.1});
    const Vector ur = vec({0.1});
    const Vector dx = x - xr;
    CHECK(cost.value(x, u, xr, ur) == doctest::Approx(dx.dot(Q * dx) + 3.0 * 0.16));

    Vector gx = Vector::Zero(2);
    Vector gu = Vector::Zero(1);
    cost.accumulate_gradient(x, u, xr, ur, 1.0, gx, gu);
    const double h = 1e-6;
    for (Index i = 0; i < 2; ++i) {
        Vector xp = x;
        Vector xm = x;
        xp[i] += h;
        xm[i] -= h;
        CHECK(gx[i] == doctest::Approx((cost.value(xp, u, xr, ur) - cost.value(xm, u, xr, ur)) / (2 * h)));
    }
    CHECK(gu[0] == doctest::Approx(2.0 * 3.0 * 0.4));
}

TEST_CASE("stage cost rejects indefinite weights") {
    CHECK_THROWS_AS(StageCost(-Matrix::Identity(1, 1), Matrix::Zero(1, 1)), ConfigError);
    CHECK_THROWS_AS(StageCost(Matrix::Identity(2, 2), -Matrix::Identity(1, 1)), ConfigError);
}

TEST_CASE("l* for Q = I, R = 0 is the squared state distance") {
    const auto setup = fixtures::cstr();
    const Vector x = vec({0.7, 0.5});
    CHECK(ell_star(*setup.model, setup.spec, setup.cost, x, setup.r_d) ==
          doctest::Approx((x - setup.r_d.x).squaredNorm()));
    CHECK_THROWS_AS((void)ell_star(*setup.model, setup.spec, setup.cost, vec({1.5, 0.5}), setup.r_d),
                    InfeasibleError);
}

TEST_CASE("l* clamps the input for a reference input outside U") {
    const auto model = std::make_shared<ScalarLinearModel>();
    ConstraintSpec spec;
    spec.state = Box(vec({-5.0}), vec({5.0}));
    spec.input = Box(vec({-1.0}), vec({1.0}));
    const StageCost cost(Matrix::Identity(1, 1), Matrix::Identity(1, 1));
    const Reference r{vec({0.0}), vec({3.0}), 0.0};
    CHECK(ell_star(*model, spec, cost, vec({2.0}), r) == doctest::Approx(4.0 + 4.0));
}

TEST_CASE("l* with a weighted input matches a grid search") {
    const auto model = std::make_shared<DoubleIntegratorModel>();
    ConstraintSpec spec;
    spec.state = Box(vec({-5.0, -5.0}), vec({5.0, 5.0}));
    spec.input = Box(vec({-0.3}), vec({0.3}));
    const StageCost cost(Matrix::Identity(2, 2), Matrix::Identity(1, 1) * 2.0);
    const Reference r{vec({1.0, 0.0}), vec({0.8}), 0.0};
    const Vector x = vec({0.0, 1.0});
    double best = 1e9;
    for (int i = 0; i <= 60000; ++i) {
        const double u = -0.3 + 0.6 * i / 60000.0;
        best = std::min(best, cost.value(x, vec({u}), r));
    }
    CHECK(ell_star(*model, spec, cost, x, r) == doctest::Approx(best).epsilon(1e-8));
}

TEST_CASE("offset cost shifted to zero at r_d") {
    const auto setup = fixtures::cstr();
    CHECK(std::abs(setup.T.value(setup.r_d)) < 1e-12);
    const ManifoldChart chart = *setup.model->manifold_chart();
    for (double s : {0.45, 0.6, 0.7, 0.85}) {
        CHECK(setup.T.value(chart.at(s)) > 0.0);
    }
}

TEST_CASE("offset cost gradient matches finite differences") {
    const OffsetCost T = OffsetCost::weighted(vec({0.01, 1000.0, 1.0}), Reference{vec({0.2, 0.6}), vec({0.7}), 0.0});
    const Vector xr = vec({0.3, 0.55});
    const Vector ur = vec({0.5});
    Vector gx = Vector::Zero(2);
    Vector gu = Vector::Zero(1);
    T.accumulate_gradient(xr, ur, 1.0, gx, gu);
    CHECK(gx[0] == doctest::Approx(2 * 0.01 * 0.1));
    CHECK(gx[1] == doctest::Approx(2 * 1000.0 * -0.05));
    CHECK(gu[0] == doctest::Approx(2 * -0.2));
}

TEST_CASE("scaling functions") {
    CHECK(ScalingFn::affine(1.0, 1.0)(0) == 1.0);
    CHECK(ScalingFn::affine(1.0, 1.0)(50) == 51.0);
    CHECK(ScalingFn::constant(1.0)(1000) == 1.0);
    CHECK(ScalingFn::affine(2.0, 1.0).describe() == "affine(2,1)");
}

TEST_CASE("best reachable reference equals r_e when r_e is admissible") {
    const auto setup = fixtures::cstr();
    CHECK(std::abs(setup.r_d.x[0] - 0.2632) < 1e-3);
    CHECK(std::abs(setup.r_d.x[1] - 0.6519) < 1e-3);
    CHECK(std::abs(setup.r_d.u[0] - 0.7585) < 1e-3);
    CHECK(setup.r_d.residual <= kEqTol);
}

TEST_CASE("best reachable reference agrees with dense enumeration") {
    const auto setup = fixtures::cstr();
    const auto model = std::static_pointer_cast<const CstrModel>(setup.model);
    // Unshifted T with the target moved off the manifold, so r_d is a genuine projection.
    const Reference target{vec({0.5, 0.7}), vec({0.4}), 0.0};
    const OffsetCost T = OffsetCost::weighted(vec({1.0, 1.0, 1.0}), target);
    double best_v = 1e18;
    Reference best;
    for (int i = 0; i <= 200000; ++i) {
        const double s = 0.40 + (0.99 - 0.40) * i / 200000.0;
        const Reference r = model->steady_state_at_temperature(s);
        if (!setup.spec.in_zr(r)) {
            continue;
        }
        const double v = T.value(r);
        if (v < best_v) {
            best_v = v;
            best = r;
        }
    }
    const Reference rd = best_reachable_reference(*setup.model, setup.spec, T);
    CHECK(T.value(rd) <= best_v + 1e-10);
    CHECK(reference_distance(rd, best) < 1e-4);
}

TEST_CASE("tracking cost and performance measure on the scalar system") {
    const auto model = std::make_shared<ScalarLinearModel>();
    const StageCost cost(Matrix::Identity(1, 1), Matrix::Identity(1, 1));
    Matrix u(1, 3);
    u << -1.0, -0.5, 0.0;
    const Reference r0{vec({0.0}), vec({0.0}), 0.0};
    // x = 2, 1, 0.5 with inputs -1, -0.5, 0
    CHECK(tracking_cost(*model, cost, vec({2.0}), u, r0) == doctest::Approx(4 + 1 + 1 + 0.25 + 0.25));
    CHECK(performance_measure(*model, cost, vec({2.0}), u, r0) == doctest::Approx(6.5));
}

}  // TEST_SUITE
