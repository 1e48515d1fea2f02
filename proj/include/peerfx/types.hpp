#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace peerfx {

// Raised for malformed or inconsistent input data (CLI exit code 2).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Raised when a computation cannot be completed numerically (CLI exit code 3).
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// How the group-level effect is generated in simulations: a normal draw
// around either a fixed constant or the group mean of the first covariate.
struct GroupEffectSpec {
    enum class Mean { Constant, GroupMeanX };
    Mean mean_kind = Mean::Constant;
    double mean_value = 0.0;
    double stddev = 0.0;
};

// Structural coefficients of the group-interactions outcome equation:
// own effect (gamma, per covariate), contextual effect (delta, per
// covariate), endogenous effect (beta, scalar), plus the generators for the
// group effect and the idiosyncratic error.
struct StructuralParams {
    std::vector<double> gamma{1.0};
    std::vector<double> delta{0.0};
    double beta = 0.0;
    GroupEffectSpec alpha_spec;
    double sigma2 = 0.0;

    int K() const { return static_cast<int>(gamma.size()); }

    // |beta| < 1 so the reduced form exists; sigma2 >= 0; K >= 1 with
    // matching gamma/delta lengths.
    void validate() const;
};

struct Individual {
    long id = 0;
    long true_group_id = 0;
    std::vector<double> x;
    // Nested candidate labels, filled by generators that produce two
    // candidate groupings (e.g. room and floor).
    std::optional<long> group1_id;
    std::optional<long> group2_id;
};

struct Population {
    std::vector<Individual> individuals;
    std::map<long, long> group_sizes;  // true group id -> size (>= 2)

    void validate() const;
};

struct Row {
    long id = 0;
    long group_id = 0;                      // specified group
    std::optional<long> group2_id;          // larger nested candidate, if any
    std::optional<long> true_group_size;    // only when explicitly requested
    double y = 0.0;
    std::vector<double> x;
};

struct Dataset {
    std::vector<Row> rows;

    int K() const { return rows.empty() ? 0 : static_cast<int>(rows.front().x.size()); }
    bool has_group2() const;
    bool has_true_sizes() const;

    // Unique ids, consistent covariate dimension, and (when a second label
    // is present) specified groups nesting inside the second groups.
    void validate() const;
};

struct ParamDiagnostics {
    bool beta_out_of_range = false;
    // Covariate indices where gamma*beta + delta == 0, the knife-edge at
    // which group-size variation stops moving the reduced-form slope.
    std::vector<int> offset_warning_coords;
    bool ok() const { return !beta_out_of_range; }
    bool has_warning() const { return !offset_warning_coords.empty(); }
};

}  // namespace peerfx
