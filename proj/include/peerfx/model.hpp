#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "peerfx/types.hpp"

namespace peerfx {

// Reduced-form coefficient on the peer sum of covariates in a group of
// size n. Defined for n >= 2 and |beta| < 1.
std::vector<double> pi1(long n, const StructuralParams& theta);

// Reduced-form coefficient on the own covariate.
std::vector<double> pi2(long n, const StructuralParams& theta);

// Slope of the demeaned outcome on the demeaned covariate in a group of
// size n. Identity pi(n) = pi2(n) - pi1(n) holds coordinate-wise.
std::vector<double> pi(long n, const StructuralParams& theta);

double pi_scalar(long n, double gamma, double delta, double beta);

struct PiGrad {
    double dgamma = 0.0;
    double ddelta = 0.0;
    double dbeta = 0.0;
};
PiGrad pi_scalar_grad(long n, double gamma, double delta, double beta);

// Per-group draws made while simulating, exposed for verification.
struct SimTrace {
    std::map<long, double> alpha;      // true group id -> group effect
    std::map<long, double> epsilon;    // individual id -> idiosyncratic error
};

// Outcomes are snapped to this grid after the per-group solve. It is far
// below any tolerance used downstream and makes the group-effect term an
// exactly representable per-group constant, so runs that differ only in the
// group-effect draw demean to bit-identical data.
inline constexpr double kOutcomeGrid = 0x1.0p-40;

// Draws the group effect per true group and the error per individual, then
// solves each group's outcome system exactly with a dense solve. Rows come
// back in population order with specified group = true group and the true
// size filled in.
Dataset simulate_outcomes(const Population& pop, const StructuralParams& theta,
                          std::uint64_t seed, SimTrace* trace = nullptr);

// Subtracts the group mean, computed as (n*v_i - sum) / n so that group
// sums vanish and per-group constant shifts cancel exactly. Singleton
// groups map to zero.
std::vector<double> within_transform(std::span<const double> values,
                                     std::span<const long> groups);

ParamDiagnostics check_parameters(const StructuralParams& theta);

}  // namespace peerfx
