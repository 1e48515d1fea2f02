#include "peerfx/types.hpp"

#include <cmath>
#include <set>
#include <unordered_map>
#include <unordered_set>

namespace peerfx {

void StructuralParams::validate() const {
    if (gamma.empty() || gamma.size() != delta.size()) {
        throw DataError("structural parameters: gamma and delta must be non-empty and equally sized");
    }
    if (!(std::fabs(beta) < 1.0)) {
        throw DataError("structural parameters: |beta| must be < 1");
    }
    if (!(sigma2 >= 0.0)) {
        throw DataError("structural parameters: sigma2 must be >= 0");
    }
    if (!(alpha_spec.stddev >= 0.0)) {
        throw DataError("structural parameters: group-effect stddev must be >= 0");
    }
}

void Population::validate() const {
    std::unordered_map<long, long> counts;
    std::unordered_set<long> ids;
    std::size_t k = individuals.empty() ? 0 : individuals.front().x.size();
    for (const auto& ind : individuals) {
        if (!ids.insert(ind.id).second) {
            throw DataError("population: duplicate individual id " + std::to_string(ind.id));
        }
        if (ind.x.size() != k) {
            throw DataError("population: inconsistent covariate dimension");
        }
        ++counts[ind.true_group_id];
    }
    if (counts.size() != group_sizes.size()) {
        throw DataError("population: group count does not match size table");
    }
    for (const auto& [gid, size] : group_sizes) {
        if (size < 2) {
            throw DataError("population: group " + std::to_string(gid) + " has size < 2");
        }
        auto it = counts.find(gid);
        if (it == counts.end() || it->second != size) {
            throw DataError("population: member count mismatch for group " + std::to_string(gid));
        }
    }
}

bool Dataset::has_group2() const {
    for (const auto& r : rows) {
        if (r.group2_id.has_value()) return true;
    }
    return false;
}

bool Dataset::has_true_sizes() const {
    for (const auto& r : rows) {
        if (r.true_group_size.has_value()) return true;
    }
    return false;
}

void Dataset::validate() const {
    std::unordered_set<long> ids;
    std::unordered_map<long, long> nest;  // group -> group2
    const std::size_t k = rows.empty() ? 0 : rows.front().x.size();
    for (const auto& r : rows) {
        if (!ids.insert(r.id).second) {
            throw DataError("dataset: duplicate row id " + std::to_string(r.id));
        }
        if (r.x.size() != k) {
            throw DataError("dataset: inconsistent covariate dimension");
        }
        if (r.group2_id.has_value()) {
            auto [it, inserted] = nest.emplace(r.group_id, *r.group2_id);
            if (!inserted && it->second != *r.group2_id) {
                throw DataError("dataset: group " + std::to_string(r.group_id) +
                                " is not nested in a unique second group");
            }
        }
        if (r.true_group_size.has_value() && *r.true_group_size < 1) {
            throw DataError("dataset: non-positive true group size on row " +
                            std::to_string(r.id));
        }
    }
}

}  // namespace peerfx
