#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "peerfx/estimators.hpp"
#include "peerfx/types.hpp"

namespace peerfx {

enum class MCVariant {
    MissingData,         // thinned samples, grid over rho
    GroupUncertainty,    // nested room/floor candidates, grid over psi
    GroupUncertaintyFE,  // as above with the group effect centered on the
                         // group mean of the covariate
};

// Size distribution used by every design: sizes 2..4 with
// P[2]=0.5625, P[3]=0.375, P[4]=0.0625, mean 2.5.
inline constexpr double kMeanGroupSize = 2.5;
inline constexpr int kDesignNbar = 4;
inline constexpr double kDesignOmega = 0.25;

struct MCDesign {
    MCVariant variant = MCVariant::MissingData;
    long m_target = 1600;        // expected observed sample size
    std::vector<double> grid;    // rho values or psi values
    int replications = 200;
    std::uint64_t master_seed = 1;
    double gamma = 1.0;
    double beta = 0.0;
    double delta = 0.5;
    bool impose_beta_zero = true;
    int threads = 1;
    int nbar = kDesignNbar;

    // sigma^2 = 2*(gamma^2 + delta^2 / E[n-1]) so the group effect plus the
    // error carry 0.8 of the outcome variance at the design's mean size.
    double sigma2() const;
    void validate() const;
};

long design_group_count(long m_target, double rho);

std::pair<Population, Dataset> gen_missing_data(const MCDesign& design, double rho,
                                                std::uint64_t seed);

std::pair<Population, Dataset> gen_group_uncertainty(const MCDesign& design, double psi,
                                                     std::uint64_t seed,
                                                     bool fe_variant);

struct MCCell {
    std::string estimator;
    std::string param;
    double truth = 0.0;
    double mean = 0.0;
    double rmse = 0.0;
    int reps_ok = 0;
    int reps_failed = 0;
};

struct MCPointResult {
    double point = 0.0;  // rho or psi
    std::vector<std::uint64_t> rep_seeds;
    std::vector<MCCell> cells;
    // Per-replication estimates; NaN marks a failed replication.
    std::map<std::string, std::map<std::string, std::vector<double>>> draws;
    std::map<std::string, int> failures;
    std::vector<std::string> failure_notes;
};

struct MCReport {
    MCDesign design;
    std::vector<Estimator> estimators;
    std::vector<MCPointResult> points;
};

// Runs every estimator on the same dataset per replication. Replication r
// of design point v is seeded by (master_seed, bits of v, r), so reports
// are bit-identical for any thread count and any grid subset containing v.
MCReport run_mc(const MCDesign& design, const std::vector<Estimator>& estimators);

std::vector<Estimator> default_estimators(MCVariant variant);

void write_report_csv(const MCReport& report, std::ostream& os);
void write_report_markdown(const MCReport& report, std::ostream& os);

}  // namespace peerfx
