#pragma once

#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "peerfx/types.hpp"

namespace peerfx {

// Bipartite graph on the joint support of the two candidate group sizes.
// Left vertices are sizes of the smaller candidate, right vertices sizes of
// the larger one; an edge marks a pair with positive mass.
struct SupportGraph {
    std::vector<int> left;
    std::vector<int> right;
    std::vector<std::pair<int, int>> edges;  // (left size, right size)
};

struct GraphComponent {
    std::vector<int> left;
    std::vector<int> right;
};

// pairs: (n1, n2, count). Requires 2 <= n1 <= n2 for every positive-count
// pair; zero-count pairs are ignored.
SupportGraph build_support_graph(const std::vector<std::tuple<int, int, long>>& pairs);

// Components ordered by their smallest left vertex (components without a
// left vertex cannot occur in a bipartite graph built from pairs).
std::vector<GraphComponent> connected_components(const SupportGraph& g);

enum class IdCase { KnownSize, UnknownSize, UncertainGroups };

struct ConditionCheck {
    std::string name;
    bool required = true;
    bool passed = false;
    std::string detail;
};

struct IdentificationReport {
    IdCase kind = IdCase::KnownSize;
    bool passed = false;
    std::vector<ConditionCheck> reasons;
};

struct IdentificationInput {
    IdCase kind = IdCase::KnownSize;
    std::vector<int> support;               // known/unknown cases: sizes >= 2
    std::optional<SupportGraph> graph;      // uncertain case
    std::optional<StructuralParams> theta;  // enables the gamma*beta+delta check
};

IdentificationReport check_identification(const IdentificationInput& input);

struct UncertainComponent {
    std::vector<int> left_sizes;  // at least three, distinct, >= 2
    int right_size = 0;
};

struct UncertainRecovery {
    double beta = 0.0;
    double psi_gbd = 0.0;  // psi * (gamma*beta + delta)
    double gamma = 0.0;
    double delta = 0.0;
    double psi = 0.0;
    // Worst round-trip error of the forward map over all supplied sizes;
    // extra left sizes beyond the three used act as over-identification
    // diagnostics.
    double max_roundtrip_error = 0.0;
};

// Forward map: node values mu with the zero-constant normalization, i.e.
// mu(n1) = psi*pi(n1) on the left and mu(n2) = (1-psi)*pi(n2) on the right.
std::map<int, double> uncertain_forward_map(const UncertainComponent& comp,
                                            double gamma, double delta, double beta,
                                            double psi);

// Closed-form inversion of the forward map from mu known at three left
// sizes and one right size. Requires the interior branch psi in (0,1) and
// psi*(gamma*beta+delta) != 0.
UncertainRecovery recover_uncertain_closed_form(const std::map<int, double>& mu,
                                                const UncertainComponent& comp);

}  // namespace peerfx
