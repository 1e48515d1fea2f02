#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "peerfx/identification.hpp"
#include "peerfx/model.hpp"
#include "peerfx/rng.hpp"

using namespace peerfx;

TEST_CASE("support graph construction") {
    {
        const SupportGraph g = build_support_graph({{2, 4, 10}, {3, 4, 5}});
        CHECK(g.left.size() + g.right.size() == 3);
        CHECK(g.edges.size() == 2);
        CHECK(connected_components(g).size() == 1);
    }
    {
        const SupportGraph g = build_support_graph({{2, 4, 1}, {3, 6, 1}});
        CHECK(g.left.size() + g.right.size() == 4);
        CHECK(g.edges.size() == 2);
        CHECK(connected_components(g).size() == 2);
    }
    {
        const SupportGraph g = build_support_graph({{2, 4, 1}, {3, 4, 1}, {4, 8, 1}});
        const auto comps = connected_components(g);
        REQUIRE(comps.size() == 2);
        CHECK(comps[0].left == std::vector<int>{2, 3});
        CHECK(comps[0].right == std::vector<int>{4});
        CHECK(comps[1].left == std::vector<int>{4});
        CHECK(comps[1].right == std::vector<int>{8});
    }
    CHECK_THROWS_AS(build_support_graph({{5, 4, 1}}), DataError);
    CHECK_THROWS_AS(build_support_graph({{1, 4, 1}}), DataError);
}

TEST_CASE("components match a breadth-first-search oracle") {
    rng::Stream s(rng::derive_key({44, 1}));
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::tuple<int, int, long>> pairs;
        const int n_edges = static_cast<int>(s.uniform_int(1, 12));
        for (int e = 0; e < n_edges; ++e) {
            const int n1 = static_cast<int>(s.uniform_int(2, 7));
            const int n2 = static_cast<int>(s.uniform_int(n1, 12));
            pairs.emplace_back(n1, n2, 1);
        }
        const SupportGraph g = build_support_graph(pairs);
        const auto comps = connected_components(g);
        const auto oracle = testutil::bfs_components(g.edges);
        REQUIRE(comps.size() == oracle.size());
        // Components partition the vertex set.
        std::size_t vertices = 0;
        for (const auto& c : comps) vertices += c.left.size() + c.right.size();
        CHECK(vertices == g.left.size() + g.right.size());
        for (const auto& c : comps) {
            std::set<std::pair<int, int>> as_set;
            for (int l : c.left) as_set.insert({0, l});
            for (int r : c.right) as_set.insert({1, r});
            CHECK(std::find(oracle.begin(), oracle.end(), as_set) != oracle.end());
        }
    }
}

TEST_CASE("identification requirements per case") {
    {
        IdentificationInput in;
        in.kind = IdCase::UnknownSize;
        in.support = {2, 3, 4};
        CHECK(check_identification(in).passed);
        in.support = {2, 3};
        CHECK(!check_identification(in).passed);
    }
    {
        IdentificationInput in;
        in.kind = IdCase::KnownSize;
        in.support = {2, 3, 4};
        CHECK(check_identification(in).passed);
    }
    {
        IdentificationInput in;
        in.kind = IdCase::UncertainGroups;
        in.graph = build_support_graph({{2, 8, 1}, {3, 8, 1}, {4, 8, 1}});
        CHECK(check_identification(in).passed);
        in.graph = build_support_graph({{2, 8, 1}, {3, 9, 1}, {4, 10, 1}});
        CHECK(!check_identification(in).passed);
    }
    {
        // Offsetting effects fail the check when a candidate is supplied.
        IdentificationInput in;
        in.kind = IdCase::KnownSize;
        in.support = {2, 3, 4};
        StructuralParams theta;
        theta.gamma = {1.0};
        theta.delta = {-0.5};
        theta.beta = 0.5;
        in.theta = theta;
        CHECK(!check_identification(in).passed);
        theta.delta = {0.5};
        in.theta = theta;
        CHECK(check_identification(in).passed);
    }
}

TEST_CASE("adding support or edges never flips a pass to a fail") {
    rng::Stream s(rng::derive_key({44, 2}));
    for (int trial = 0; trial < 40; ++trial) {
        std::vector<std::tuple<int, int, long>> pairs;
        const int n_edges = static_cast<int>(s.uniform_int(1, 6));
        for (int e = 0; e < n_edges; ++e) {
            const int n1 = static_cast<int>(s.uniform_int(2, 6));
            const int n2 = static_cast<int>(s.uniform_int(n1, 10));
            pairs.emplace_back(n1, n2, 1);
        }
        IdentificationInput in;
        in.kind = IdCase::UncertainGroups;
        in.graph = build_support_graph(pairs);
        const bool before = check_identification(in).passed;
        const int n1 = static_cast<int>(s.uniform_int(2, 6));
        pairs.emplace_back(n1, static_cast<int>(s.uniform_int(n1, 10)), 1);
        in.graph = build_support_graph(pairs);
        const bool after = check_identification(in).passed;
        if (before) CHECK(after);
    }
    {
        IdentificationInput in;
        in.kind = IdCase::UnknownSize;
        in.support = {2, 3};
        const bool before = check_identification(in).passed;
        in.support = {2, 3, 5};
        CHECK((check_identification(in).passed || !before));
        CHECK(check_identification(in).passed);
    }
}

TEST_CASE("closed-form recovery inverts the mixture forward map") {
    {
        const UncertainComponent comp{{2, 3, 4}, 8};
        const auto mu = uncertain_forward_map(comp, 1.0, 0.5, 0.0, 0.6);
        const UncertainRecovery rec = recover_uncertain_closed_form(mu, comp);
        CHECK(std::fabs(rec.gamma - 1.0) <= 1e-10);
        CHECK(std::fabs(rec.delta - 0.5) <= 1e-10);
        CHECK(std::fabs(rec.beta - 0.0) <= 1e-10);
        CHECK(std::fabs(rec.psi - 0.6) <= 1e-10);
        CHECK(std::fabs(rec.psi_gbd - 0.3) <= 1e-10);
        CHECK(rec.max_roundtrip_error <= 1e-12);
    }
    {
        // With no endogenous effect the difference ratio depends only on the
        // three smaller sizes: (2-3)(4-1) / ((2-4)(3-1)) = 3/4.
        const UncertainComponent comp{{2, 3, 4}, 8};
        const auto mu = uncertain_forward_map(comp, 1.3, -0.4, 0.0, 0.37);
        const double d1 = mu.at(2) + mu.at(8);
        const double d2 = mu.at(3) + mu.at(8);
        const double d3 = mu.at(4) + mu.at(8);
        CHECK((d1 - d2) / (d1 - d3) == doctest::Approx(0.75).epsilon(1e-12));
        const UncertainRecovery rec = recover_uncertain_closed_form(mu, comp);
        CHECK(std::fabs(rec.beta) <= 1e-10);
        CHECK(std::fabs(rec.psi - 0.37) <= 1e-10);
    }
    {
        // psi = 1: the mixture collapses onto the smaller candidate and the
        // right-node value is zero.
        const UncertainComponent comp{{2, 3, 4}, 8};
        const auto mu = uncertain_forward_map(comp, 1.0, 0.5, 0.25, 1.0);
        const UncertainRecovery rec = recover_uncertain_closed_form(mu, comp);
        CHECK(std::fabs(rec.psi - 1.0) <= 1e-10);
        CHECK(std::fabs(rec.gamma - 1.0) <= 1e-9);
        CHECK(std::fabs(rec.delta - 0.5) <= 1e-9);
        CHECK(std::fabs(rec.beta - 0.25) <= 1e-9);
    }
    rng::Stream s(rng::derive_key({44, 3}));
    int done = 0;
    while (done < 60) {
        const double gamma = s.uniform(-2.0, 2.0);
        const double delta = s.uniform(-2.0, 2.0);
        const double beta = s.uniform(-0.9, 0.9);
        const double psi = s.uniform(0.05, 0.95);
        if (std::fabs(gamma * beta + delta) < 0.05) continue;
        const int n11 = static_cast<int>(s.uniform_int(2, 4));
        const int n12 = n11 + static_cast<int>(s.uniform_int(1, 3));
        const int n13 = n12 + static_cast<int>(s.uniform_int(1, 3));
        const int n2 = n13 + static_cast<int>(s.uniform_int(1, 6));
        const UncertainComponent comp{{n11, n12, n13}, n2};
        const auto mu = uncertain_forward_map(comp, gamma, delta, beta, psi);
        if (std::fabs(pi_scalar(n2, gamma, delta, beta)) < 0.05) continue;
        const UncertainRecovery rec = recover_uncertain_closed_form(mu, comp);
        CHECK(std::fabs(rec.gamma - gamma) <= 1e-9);
        CHECK(std::fabs(rec.delta - delta) <= 1e-9);
        CHECK(std::fabs(rec.beta - beta) <= 1e-9);
        CHECK(std::fabs(rec.psi - psi) <= 1e-9);
        ++done;
    }
}

TEST_CASE("closed-form recovery rejects flat reduced forms") {
    // gamma*beta + delta = 0 makes the slope constant across sizes.
    const UncertainComponent comp{{2, 3, 4}, 8};
    const auto mu = uncertain_forward_map(comp, 1.0, -0.5, 0.5, 0.5);
    CHECK_THROWS_AS(recover_uncertain_closed_form(mu, comp), NumericalError);
}

TEST_CASE("extra smaller-candidate sizes act as over-identification checks") {
    const UncertainComponent comp{{2, 3, 4, 5, 6}, 9};
    const auto mu = uncertain_forward_map(comp, 1.1, 0.4, 0.2, 0.55);
    const UncertainRecovery rec = recover_uncertain_closed_form(mu, comp);
    CHECK(std::fabs(rec.gamma - 1.1) <= 1e-9);
    CHECK(std::fabs(rec.psi - 0.55) <= 1e-9);
    // The round-trip diagnostic covers the sizes beyond the three used.
    CHECK(rec.max_roundtrip_error <= 1e-11);

    auto corrupted = mu;
    corrupted[6] += 0.05;
    const UncertainRecovery rec2 = recover_uncertain_closed_form(corrupted, comp);
    CHECK(rec2.max_roundtrip_error >= 0.049);
}
