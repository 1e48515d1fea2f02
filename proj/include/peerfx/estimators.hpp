#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "peerfx/sampling.hpp"
#include "peerfx/types.hpp"

namespace peerfx {

enum class Estimator {
    Misspecified,       // slope at the observed group size
    Known,              // slope at the true group size
    Unknown,            // joint size-distribution ML + slope, free q
    UnknownParametric,  // as Unknown with binomial-shaped q(omega)
    Room,               // smaller candidate taken as the group
    Floor,              // larger candidate taken as the group
    UncertainKnownPsi,  // mixture slope with the weight fixed
    Uncertain,          // mixture slope with the weight estimated
};

std::string estimator_name(Estimator tag);
Estimator estimator_from_name(const std::string& name);

struct MomentSpec {
    Estimator tag = Estimator::Known;
    bool impose_beta_zero = false;
    int nbar = 0;  // 0: use the largest observed group size
    std::optional<double> psi_fixed;
    bool use_complete_indicator = false;

    // Box constraints shared by every estimator.
    static constexpr double kBetaBound = 1.0 - 1e-6;
    static constexpr double kRhoLo = 1e-6;
};

struct EstimationResult {
    std::string estimator;
    std::map<std::string, double> estimates;
    double objective = 0.0;
    bool converged = false;
    int iterations = 0;
    int starts_used = 0;
    std::map<std::string, double> diagnostics;
    std::vector<std::string> warnings;
};

// Nonlinear least squares of the demeaned outcome on the demeaned
// covariates, with the slope argument chosen by the estimator tag
// (observed size, true size, or one of the candidate sizes).
EstimationResult nls_fit(const Dataset& data, const MomentSpec& spec);

// Total log-likelihood of observed group-size counts (counts[i] is the
// number of groups seen with i+1 members). Returns -inf if any observed
// size has zero model probability.
double size_loglik(std::span<const long> counts, double rho,
                   const GroupSizeDistribution& d);

// Score of the average log-likelihood with respect to the free parameters
// (rho, q_2 ... q_{nbar-1}), with q_nbar substituted.
std::vector<double> size_score(std::span<const long> counts, double rho,
                               const GroupSizeDistribution& d);

// Joint estimator when group sizes are unobserved: maximum likelihood for
// (rho, q) on the observed size counts stacked with the least-squares
// moments for the structural parameters. The stacked system is
// just-identified, so it is solved blockwise and the moments are checked at
// the solution.
EstimationResult gmm_unknown_fit(const Dataset& data, int nbar,
                                 bool impose_beta_zero = true,
                                 bool use_complete_indicator = false);

// As gmm_unknown_fit with q constrained to a shifted binomial with
// parameter omega.
EstimationResult gmm_unknown_parametric_fit(const Dataset& data, int nbar,
                                            bool impose_beta_zero = true,
                                            bool use_complete_indicator = false);

// Mixture estimator under nested candidate groups: demeans within the
// smaller candidate and fits the psi-weighted slope mixture.
EstimationResult nls_uncertain_fit(const Dataset& data, bool impose_beta_zero = true,
                                   std::optional<double> psi_fixed = {});

// Dispatch on spec.tag.
EstimationResult fit(const Dataset& data, const MomentSpec& spec);

}  // namespace peerfx
