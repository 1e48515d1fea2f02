#include "peerfx/identification.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "peerfx/model.hpp"

namespace peerfx {

namespace {

// Path-compressed union-find over vertex indices.
struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    int find(int x) { return parent[x] == x ? x : parent[x] = find(parent[x]); }
    void unite(int a, int b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[b] = a;
    }
};

}  // namespace

SupportGraph build_support_graph(const std::vector<std::tuple<int, int, long>>& pairs) {
    std::set<int> left, right;
    std::set<std::pair<int, int>> edges;
    for (const auto& [n1, n2, count] : pairs) {
        if (count <= 0) continue;
        if (n1 < 2) {
            throw DataError("support graph: candidate group size " + std::to_string(n1) +
                            " is below 2");
        }
        if (n1 > n2) {
            throw DataError("support graph: nesting violated, smaller candidate size " +
                            std::to_string(n1) + " exceeds larger candidate size " +
                            std::to_string(n2));
        }
        left.insert(n1);
        right.insert(n2);
        edges.emplace(n1, n2);
    }
    SupportGraph g;
    g.left.assign(left.begin(), left.end());
    g.right.assign(right.begin(), right.end());
    g.edges.assign(edges.begin(), edges.end());
    return g;
}

std::vector<GraphComponent> connected_components(const SupportGraph& g) {
    const int nl = static_cast<int>(g.left.size());
    const int nr = static_cast<int>(g.right.size());
    UnionFind uf(nl + nr);
    auto left_index = [&](int size) {
        return static_cast<int>(std::lower_bound(g.left.begin(), g.left.end(), size) -
                                g.left.begin());
    };
    auto right_index = [&](int size) {
        return nl + static_cast<int>(std::lower_bound(g.right.begin(), g.right.end(), size) -
                                     g.right.begin());
    };
    for (const auto& [n1, n2] : g.edges) {
        uf.unite(left_index(n1), right_index(n2));
    }
    std::map<int, GraphComponent> by_root;
    for (int i = 0; i < nl; ++i) by_root[uf.find(i)].left.push_back(g.left[i]);
    for (int j = 0; j < nr; ++j) by_root[uf.find(nl + j)].right.push_back(g.right[j]);

    std::vector<GraphComponent> out;
    out.reserve(by_root.size());
    for (auto& [root, comp] : by_root) {
        std::sort(comp.left.begin(), comp.left.end());
        std::sort(comp.right.begin(), comp.right.end());
        out.push_back(std::move(comp));
    }
    std::sort(out.begin(), out.end(), [](const GraphComponent& a, const GraphComponent& b) {
        const int amin = a.left.empty() ? a.right.front() : a.left.front();
        const int bmin = b.left.empty() ? b.right.front() : b.left.front();
        if (amin != bmin) return amin < bmin;
        return !a.left.empty() && b.left.empty();
    });
    return out;
}

IdentificationReport check_identification(const IdentificationInput& input) {
    IdentificationReport report;
    report.kind = input.kind;

    auto add = [&](std::string name, bool required, bool passed, std::string detail) {
        report.reasons.push_back({std::move(name), required, passed, std::move(detail)});
    };

    if (input.kind == IdCase::KnownSize || input.kind == IdCase::UnknownSize) {
        std::set<int> support(input.support.begin(), input.support.end());
        support.erase(1);
        const bool enough = support.size() >= 3;
        add("group_size_support_at_least_three", true, enough,
            "distinct group sizes >= 2: " + std::to_string(support.size()));
        if (input.kind == IdCase::UnknownSize) {
            const bool bounded = !support.empty();
            add("group_size_support_bounded", true, bounded,
                bounded ? "largest size " + std::to_string(*support.rbegin()) : "empty support");
        }
    } else {
        if (!input.graph.has_value()) {
            throw DataError("identification check: uncertain case requires a support graph");
        }
        const auto comps = connected_components(*input.graph);
        std::size_t best_left = 0, best_right = 0;
        for (const auto& c : comps) {
            best_left = std::max(best_left, c.left.size());
            best_right = std::max(best_right, c.right.size());
        }
        const bool comp_ok = best_left >= 3 || best_right >= 3;
        add("component_with_three_same_side_sizes", true, comp_ok,
            "largest component has " + std::to_string(best_left) + " smaller-candidate and " +
                std::to_string(best_right) + " larger-candidate sizes");
        add("smaller_candidate_support_at_least_three", false,
            input.graph->left.size() >= 3,
            "distinct smaller-candidate sizes: " + std::to_string(input.graph->left.size()));
        add("larger_candidate_support_at_least_three", false,
            input.graph->right.size() >= 3,
            "distinct larger-candidate sizes: " + std::to_string(input.graph->right.size()));
    }

    if (input.theta.has_value()) {
        const ParamDiagnostics diag = check_parameters(*input.theta);
        add("beta_within_unit_interval", true, !diag.beta_out_of_range,
            "|beta| = " + std::to_string(std::fabs(input.theta->beta)));
        add("slope_moves_with_group_size", true, !diag.has_warning(),
            diag.has_warning() ? "gamma*beta + delta vanishes; the slope is flat in the group size"
                               : "gamma*beta + delta is non-zero");
    }

    report.passed = true;
    for (const auto& c : report.reasons) {
        if (c.required && !c.passed) report.passed = false;
    }
    return report;
}

std::map<int, double> uncertain_forward_map(const UncertainComponent& comp, double gamma,
                                            double delta, double beta, double psi) {
    std::map<int, double> mu;
    for (int n1 : comp.left_sizes) {
        mu[n1] = psi * pi_scalar(n1, gamma, delta, beta);
    }
    mu[comp.right_size] = (1.0 - psi) * pi_scalar(comp.right_size, gamma, delta, beta);
    return mu;
}

UncertainRecovery recover_uncertain_closed_form(const std::map<int, double>& mu,
                                                const UncertainComponent& comp) {
    std::vector<int> left = comp.left_sizes;
    std::sort(left.begin(), left.end());
    left.erase(std::unique(left.begin(), left.end()), left.end());
    if (left.size() < 3) {
        throw DataError("closed-form recovery: need at least three smaller-candidate sizes");
    }
    if (left.front() < 2 || comp.right_size < 2) {
        throw DataError("closed-form recovery: group sizes must be >= 2");
    }
    auto mu_at = [&](int n) {
        auto it = mu.find(n);
        if (it == mu.end()) {
            throw DataError("closed-form recovery: no reduced-form value for size " +
                            std::to_string(n));
        }
        return it->second;
    };

    const int n11 = left[0], n12 = left[1], n13 = left[2];
    const int n2 = comp.right_size;
    if (n2 == n11 || n2 == n12 || n2 == n13) {
        throw DataError(
            "closed-form recovery: the larger-candidate size coincides with a "
            "smaller-candidate size, making a size-keyed value map ambiguous");
    }
    const double mu2 = mu_at(n2);
    const double d1 = mu_at(n11) + mu2;
    const double d2 = mu_at(n12) + mu2;
    const double d3 = mu_at(n13) + mu2;

    const double scale = std::max({1.0, std::fabs(d1), std::fabs(d2), std::fabs(d3)});
    if (std::fabs(d1 - d3) <= 1e-13 * scale) {
        throw NumericalError(
            "closed-form recovery: reduced-form values are flat across sizes, which means "
            "psi*(gamma*beta+delta) = 0 and the mixture weight is not recoverable");
    }
    const double ratio = (d1 - d2) / (d1 - d3);

    const double den = ratio * (n11 - n13) - (n11 - n12);
    if (std::fabs(den) <= 1e-13 * (std::fabs(ratio * (n11 - n13)) + std::fabs(n11 - n12))) {
        throw NumericalError("closed-form recovery: degenerate size configuration");
    }
    const double beta =
        ((n11 - n12) * (n13 - 1.0) - ratio * (n11 - n13) * (n12 - 1.0)) / den;

    const double psi_gbd = (d1 - d2) * (n11 - 1.0 + beta) * (n12 - 1.0 + beta) /
                           static_cast<double>(n11 - n12);

    // pi at the right size, then psi from the right-node level, then the two
    // linear relations pin gamma and delta.
    const double pi_n2 =
        d1 - psi_gbd * (n11 - n2) / ((n11 - 1.0 + beta) * (n2 - 1.0 + beta));
    if (std::fabs(pi_n2) <= 1e-12 * std::max(1.0, std::fabs(d1))) {
        throw NumericalError(
            "closed-form recovery: the slope at the larger candidate size vanishes; the "
            "mixture weight cannot be separated");
    }
    double psi = 1.0 - mu2 / pi_n2;
    // The boundary case where the smaller candidate is always the group:
    // the right-node value vanishes and the weight sits at one.
    if (std::fabs(psi - 1.0) <= 1e-9) psi = 1.0;
    if (!(psi > 0.0 && psi <= 1.0)) {
        throw NumericalError("closed-form recovery: recovered mixture weight " +
                             std::to_string(psi) + " lies outside (0,1]");
    }
    const double gbd = psi_gbd / psi;
    const double gamma = pi_n2 + gbd / (n2 - 1.0 + beta);
    const double delta = gbd - beta * gamma;

    UncertainRecovery rec;
    rec.beta = beta;
    rec.psi_gbd = psi_gbd;
    rec.gamma = gamma;
    rec.delta = delta;
    rec.psi = psi;

    const auto fwd = uncertain_forward_map(comp, gamma, delta, beta, psi);
    double err = 0.0;
    for (const auto& [n, v] : fwd) {
        auto it = mu.find(n);
        if (it != mu.end()) err = std::max(err, std::fabs(v - it->second));
    }
    rec.max_roundtrip_error = err;
    return rec;
}

}  // namespace peerfx
