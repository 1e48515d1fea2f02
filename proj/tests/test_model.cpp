#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "peerfx/model.hpp"
#include "peerfx/rng.hpp"

using namespace peerfx;

namespace {

StructuralParams theta1(double gamma, double delta, double beta, double sigma2 = 0.0) {
    StructuralParams t;
    t.gamma = {gamma};
    t.delta = {delta};
    t.beta = beta;
    t.sigma2 = sigma2;
    return t;
}

}  // namespace

TEST_CASE("reduced-form coefficient pi1") {
    CHECK(pi1(2, theta1(1.0, 0.0, 0.0))[0] == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(pi1(2, theta1(1.0, 0.5, 0.0))[0] == doctest::Approx(0.5).epsilon(1e-14));
    // (0.5 + 0.5)*0.5 / (1 - 0.5*1.5*0.5) = 0.8
    CHECK(pi1(3, theta1(1.0, 0.5, 0.5))[0] == doctest::Approx(0.8).epsilon(1e-14));
    CHECK_THROWS_AS(pi1(1, theta1(1.0, 0.5, 0.0)), std::invalid_argument);
    CHECK_THROWS_AS(pi1(3, theta1(1.0, 0.5, 1.0)), std::invalid_argument);
}

TEST_CASE("reduced-form coefficient pi2") {
    for (long n : {2L, 3L, 7L}) {
        CHECK(pi2(n, theta1(1.0, 0.5, 0.0))[0] == doctest::Approx(1.0).epsilon(1e-14));
    }
    CHECK(pi2(2, theta1(1.0, 0.5, 0.5))[0] == doctest::Approx(5.0 / 3.0).epsilon(1e-14));
    CHECK(pi2(3, theta1(0.0, 0.0, 0.9))[0] == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("within-group slope pi and its identity with pi2 - pi1") {
    for (long n : {2L, 3L, 5L, 9L}) {
        CHECK(pi(n, theta1(0.7, 0.0, 0.0))[0] == doctest::Approx(0.7).epsilon(1e-14));
    }
    CHECK(pi(2, theta1(1.0, 0.5, 0.0))[0] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(pi(4, theta1(1.0, 0.5, 0.5))[0] == doctest::Approx(5.0 / 7.0).epsilon(1e-14));

    rng::Stream s(rng::derive_key({42, 1}));
    for (int trial = 0; trial < 200; ++trial) {
        const long n = s.uniform_int(2, 12);
        const StructuralParams t =
            theta1(s.uniform(-2.0, 2.0), s.uniform(-2.0, 2.0), s.uniform(-0.95, 0.95));
        const double direct = pi(n, t)[0];
        const double via_parts = pi2(n, t)[0] - pi1(n, t)[0];
        CHECK(direct == doctest::Approx(via_parts).epsilon(1e-12));
    }
}

TEST_CASE("pi gradient matches central differences") {
    rng::Stream s(rng::derive_key({42, 2}));
    for (int trial = 0; trial < 100; ++trial) {
        const long n = s.uniform_int(2, 10);
        const double g = s.uniform(-2.0, 2.0);
        const double d = s.uniform(-2.0, 2.0);
        const double b = s.uniform(-0.9, 0.9);
        const PiGrad grad = pi_scalar_grad(n, g, d, b);
        const double h = 1e-6;
        const double fd_g = testutil::central_diff(
            [&](double v) { return pi_scalar(n, v, d, b); }, g, h);
        const double fd_d = testutil::central_diff(
            [&](double v) { return pi_scalar(n, g, v, b); }, d, h);
        const double fd_b = testutil::central_diff(
            [&](double v) { return pi_scalar(n, g, d, v); }, b, h);
        CHECK(grad.dgamma == doctest::Approx(fd_g).epsilon(1e-6));
        CHECK(grad.ddelta == doctest::Approx(fd_d).epsilon(1e-6));
        CHECK(grad.dbeta == doctest::Approx(fd_b).epsilon(1e-6));
    }
}

namespace {

Population make_population(const std::vector<int>& sizes, std::uint64_t seed) {
    Population pop;
    long id = 1;
    rng::Stream xs(rng::derive_key({seed, 77}));
    for (std::size_t g = 0; g < sizes.size(); ++g) {
        const long gid = static_cast<long>(g) + 1;
        pop.group_sizes[gid] = sizes[g];
        for (int j = 0; j < sizes[g]; ++j) {
            pop.individuals.push_back({id++, gid, {xs.normal()}, {}, {}});
        }
    }
    return pop;
}

}  // namespace

TEST_CASE("simulation degenerates to y = x when only the own effect is active") {
    Population pop = make_population({2, 3, 4}, 5);
    StructuralParams t = theta1(1.0, 0.0, 0.0, 0.0);
    t.alpha_spec.mean_value = 0.0;
    const Dataset data = simulate_outcomes(pop, t, 7);
    for (std::size_t i = 0; i < data.rows.size(); ++i) {
        CHECK(std::fabs(data.rows[i].y - pop.individuals[i].x[0]) <= 1e-12);
    }
}

TEST_CASE("two-member group solve matches the hand inversion") {
    // For a pair with endogenous effect beta and no other terms, the solved
    // outcomes are y1 = (e1 + beta*e2)/(1-beta^2), y2 symmetric. At
    // e = (1, 0), beta = 0.5 that is (4/3, 2/3).
    const double beta = 0.5;
    const double e1 = 1.0, e2 = 0.0;
    const double y1 = (e1 + beta * e2) / (1.0 - beta * beta);
    const double y2 = (e2 + beta * e1) / (1.0 - beta * beta);
    CHECK(y1 == doctest::Approx(4.0 / 3.0).epsilon(1e-15));
    CHECK(y2 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

    Population pop = make_population({2}, 11);
    StructuralParams t = theta1(0.0, 0.0, beta, 1.0);
    t.alpha_spec.mean_value = 0.0;
    SimTrace trace;
    const Dataset data = simulate_outcomes(pop, t, 13, &trace);
    const double eps1 = trace.epsilon.at(1);
    const double eps2 = trace.epsilon.at(2);
    CHECK(data.rows[0].y ==
          doctest::Approx((eps1 + beta * eps2) / (1.0 - beta * beta)).epsilon(1e-11));
    CHECK(data.rows[1].y ==
          doctest::Approx((eps2 + beta * eps1) / (1.0 - beta * beta)).epsilon(1e-11));
}

TEST_CASE("simulated outcomes satisfy the structural equation with residual epsilon") {
    Population pop = make_population({2, 3, 4, 2, 4, 3, 2}, 23);
    StructuralParams t = theta1(1.0, 0.5, 0.4, 7.0 / 3.0);
    t.alpha_spec.mean_value = 1.0;
    t.alpha_spec.stddev = std::sqrt(7.0 / 3.0);
    SimTrace trace;
    const Dataset data = simulate_outcomes(pop, t, 31, &trace);

    std::map<long, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < data.rows.size(); ++i) {
        members[pop.individuals[i].true_group_id].push_back(i);
    }
    double worst = 0.0;
    for (const auto& [gid, idx] : members) {
        const double n = static_cast<double>(idx.size());
        double ysum = 0.0, xsum = 0.0;
        for (std::size_t i : idx) {
            ysum += data.rows[i].y;
            xsum += data.rows[i].x[0];
        }
        for (std::size_t i : idx) {
            const Row& r = data.rows[i];
            const double peer_y = (ysum - r.y) / (n - 1.0);
            const double peer_x = (xsum - r.x[0]) / (n - 1.0);
            const double rhs = trace.alpha.at(gid) + t.beta * peer_y + t.delta[0] * peer_x +
                               t.gamma[0] * r.x[0] + trace.epsilon.at(r.id);
            worst = std::max(worst, std::fabs(r.y - rhs));
        }
    }
    CHECK(worst <= 1e-10);
}

TEST_CASE("within transform demeans, zeroes singletons, and is idempotent") {
    {
        const std::vector<double> v{3.5, 3.5, 3.5};
        const std::vector<long> g{1, 1, 1};
        for (double d : within_transform(v, g)) CHECK(d == 0.0);
    }
    {
        const std::vector<double> v{1.0, 3.0};
        const std::vector<long> g{4, 4};
        const auto out = within_transform(v, g);
        CHECK(out[0] == doctest::Approx(-1.0).epsilon(1e-15));
        CHECK(out[1] == doctest::Approx(1.0).epsilon(1e-15));
    }
    {
        const std::vector<double> v{42.0};
        const std::vector<long> g{9};
        CHECK(within_transform(v, g)[0] == 0.0);
    }
    rng::Stream s(rng::derive_key({42, 3}));
    std::vector<double> v;
    std::vector<long> g;
    for (int i = 0; i < 200; ++i) {
        v.push_back(s.uniform(-10.0, 10.0));
        g.push_back(s.uniform_int(1, 17));
    }
    const auto once = within_transform(v, g);
    const auto twice = within_transform(once, g);
    std::map<long, double> sums;
    for (std::size_t i = 0; i < once.size(); ++i) {
        sums[g[i]] += once[i];
        CHECK(std::fabs(twice[i] - once[i]) <= 1e-12);
    }
    for (const auto& [gid, sum] : sums) CHECK(std::fabs(sum) <= 1e-12);
}

TEST_CASE("parameter diagnostics flag offsetting effects and explosive beta") {
    {
        const ParamDiagnostics d = check_parameters(theta1(1.0, -0.5, 0.5));
        CHECK(!d.beta_out_of_range);
        CHECK(d.has_warning());
    }
    {
        const ParamDiagnostics d = check_parameters(theta1(1.0, 0.5, 0.0));
        CHECK(!d.beta_out_of_range);
        CHECK(!d.has_warning());
    }
    {
        const ParamDiagnostics d = check_parameters(theta1(1.0, 0.5, 1.0));
        CHECK(d.beta_out_of_range);
    }
}

TEST_CASE("normal inverse cdf reference points") {
    CHECK(rng::normal_icdf(0.5) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(rng::normal_icdf(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
    CHECK(rng::normal_icdf(0.025) == doctest::Approx(-1.959963984540054).epsilon(1e-12));
    CHECK(rng::normal_icdf(0.995) == doctest::Approx(2.5758293035489004).epsilon(1e-12));
    CHECK(rng::normal_icdf(0.9999) == doctest::Approx(3.719016485455709).epsilon(1e-11));
}
