#include "fixtures.hpp"
#include "trackmpc/models.hpp"

#include <doctest.h>

#include <memory>
#include <random>

using namespace trackmpc;
using fixtures::vec;

TEST_SUITE("model") {

TEST_CASE("cstr equilibrium at the target pair") {
    const auto model = make_model("cstr");
    const Vector xd = vec({0.2632, 0.6519});
    const Vector ud = vec({0.7585});
    const Vector next = model->step(xd, ud);
    CHECK((next - xd).norm() <= 1e-3);
}

TEST_CASE("cstr Euler step matches a hand evaluation") {
    const auto model = make_model("cstr");
    const Vector x = vec({0.5, 0.6});
    const Vector u = vec({0.3});
    const double r = 300.0 * 0.5 * std::exp(-5.0 / 0.6);
    const double dx1 = (1.0 - 0.5) / 20.0 - r;
    const double dx2 = (0.3947 - 0.6) / 20.0 + r - 0.117 * 0.3 * (0.6 - 0.3816);
    const Vector next = model->step(x, u);
    CHECK(next[0] == doctest::Approx(0.5 + 0.1 * dx1).epsilon(1e-14));
    CHECK(next[1] == doctest::Approx(0.6 + 0.1 * dx2).epsilon(1e-14));
}

TEST_CASE("analytic jacobians agree with finite differences") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (const std::string& name : registered_models()) {
        const auto model = make_model(name);
        for (int i = 0; i < 20; ++i) {
            Vector x(model->state_dim());
            Vector u(model->input_dim());
            for (Index k = 0; k < x.size(); ++k) {
                x[k] = 0.1 + 0.9 * unit(rng);
            }
            for (Index k = 0; k < u.size(); ++k) {
                u[k] = 2.0 * unit(rng);
            }
            CHECK(jacobian_check(*model, x, u) < 1e-6);
        }
    }
}

TEST_CASE("unknown model names are config errors") {
    CHECK_THROWS_AS((void)make_model("pendulum"), ConfigError);
}

TEST_CASE("steady-state Newton solve and the manifold chart agree") {
    const auto model = make_model("cstr");
    const ManifoldChart chart = *model->manifold_chart();
    for (double s : {0.45, 0.55, 0.6519, 0.8}) {
        const Reference r = chart.at(s);
        CHECK(r.residual <= kEqTol);
        CHECK(chart.coordinate(r) == doctest::Approx(s));
        const Reference n = solve_steady_state(*model, r.u, r.x + vec({0.01, -0.01}));
        CHECK((n.x - r.x).norm() < 1e-7);
    }
}

TEST_CASE("steady-state solve reports non-convergence") {
    const auto model = make_model("cstr");
    SteadyStateOptions opts;
    opts.max_iter = 1;
    opts.tol = 1e-30;
    CHECK_THROWS_AS((void)solve_steady_state(*model, vec({0.5}), vec({0.9, 0.3}), opts), NonConvergenceError);
}

TEST_CASE("rollout flags constraint violations and divergence") {
    const auto model = std::make_shared<ScalarLinearModel>(2.0, 1.0);
    ConstraintSpec spec;
    spec.state = Box(vec({-1.0}), vec({1.0}));
    spec.input = Box(vec({-1.0}), vec({1.0}));
    const Matrix inputs = Matrix::Zero(1, 4);
    const RolloutResult res = rollout(*model, vec({0.3}), inputs, &spec);
    CHECK(res.trajectory.states(0, 4) == doctest::Approx(4.8));
    REQUIRE(res.first_violation.has_value());
    CHECK(*res.first_violation == 2);

    const auto wild = std::make_shared<ScalarLinearModel>(1e200, 1.0);
    CHECK_THROWS_AS((void)rollout(*wild, vec({1e200}), inputs), DivergedError);
}

TEST_CASE("constraint spec validation") {
    const auto setup = fixtures::cstr();
    CHECK_NOTHROW(setup.spec.validate(2, 1));
    ConstraintSpec bad = setup.spec;
    bad.ref_input = Box(vec({0.0}), vec({0.7}));  // touches the boundary of U
    CHECK_THROWS_AS(bad.validate(2, 1), ConfigError);
    CHECK_THROWS_AS(setup.spec.validate(3, 1), ConfigError);
    CHECK(setup.spec.z_diameter() == doctest::Approx(std::sqrt(6.0)));
}

TEST_CASE("box helpers") {
    const Box b(vec({0.0, -1.0}), vec({1.0, 1.0}));
    CHECK(b.contains(vec({0.5, 0.0})));
    CHECK_FALSE(b.contains(vec({1.5, 0.0})));
    CHECK(b.contains(vec({1.0 + 1e-9, 0.0}), 1e-8));
    const Vector c = b.clamp(vec({2.0, -3.0}));
    CHECK(c[0] == 1.0);
    CHECK(c[1] == -1.0);
    CHECK_THROWS_AS(Box(vec({0.0}), vec({1.0, 2.0})), ConfigError);
}

TEST_CASE("admissible references and the nearest manifold point") {
    const auto setup = fixtures::cstr();
    CHECK(is_admissible_reference(setup.spec, *setup.model, setup.r_d));
    Reference off = setup.r_d;
    off.u[0] = 0.1;  // below the reference input box and off the manifold
    CHECK_FALSE(is_admissible_reference(setup.spec, *setup.model, off));

    const ChartInterval iv = admissible_chart_interval(*setup.model, setup.spec);
    CHECK(iv.lo < setup.r_d.x[1]);
    CHECK(iv.hi > setup.r_d.x[1]);

    // Brute force over a fine chart grid is the reference for the projection.
    const Vector x0 = vec({0.9492, 0.43});
    const Reference near = nearest_manifold_point(*setup.model, setup.spec, x0);
    const ManifoldChart chart = *setup.model->manifold_chart();
    double best = 1e9;
    for (int i = 0; i <= 20000; ++i) {
        const Reference r = chart.at(iv.lo + (iv.hi - iv.lo) * i / 20000.0);
        best = std::min(best, (r.x - x0).norm());
    }
    CHECK((near.x - x0).norm() <= best + 1e-6);
    CHECK(setup.spec.in_zr(near, 1e-9));
}

TEST_CASE("reference distance and stacking") {
    Reference a{vec({1.0, 2.0}), vec({3.0}), 0.0};
    Reference b{vec({1.0, 0.0}), vec({0.0}), 0.0};
    CHECK(reference_distance(a, b) == doctest::Approx(std::sqrt(13.0)));
    CHECK(stack(a).size() == 3);
    CHECK(stack(a)[2] == 3.0);
}

}  // TEST_SUITE
