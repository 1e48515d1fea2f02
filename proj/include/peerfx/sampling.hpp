#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "peerfx/linalg.hpp"
#include "peerfx/types.hpp"

namespace peerfx {

// Distribution of true group sizes on {1, ..., nbar} with no mass at 1.
struct GroupSizeDistribution {
    int nbar = 2;
    std::vector<double> q;  // q[i] is the probability of size i+1

    double at(int size) const { return q[static_cast<std::size_t>(size - 1)]; }
    void validate(double tol = 1e-12) const;
};

// Independent per-individual observation: probability rho plus a uniform
// perturbation of half-width jitter.
struct SamplingDesign {
    double rho = 1.0;
    double jitter = 0.0;

    void validate() const;
};

// Thins a fully simulated dataset: each row is kept independently with
// probability rho + U(-jitter, jitter). Groups with no observed member
// disappear. True group sizes are dropped unless keep_true_size is set.
Dataset sample_observed(const Dataset& full, const SamplingDesign& design,
                        std::uint64_t seed, bool keep_true_size = false);

// Upper-triangular matrix of thinning probabilities: entry (i,j) is the
// chance that a group of true size j is observed with size i (1-based).
Matrix mixing_matrix(int nbar, double rho);

// P[observed size = n | observed size >= 1] for n = 1..nbar.
std::vector<double> observed_size_pmf(const GroupSizeDistribution& d, double rho);

// P[true size = m | observed size = n_obs] over m = 1..nbar (zero below
// n_obs). Sums to one.
std::vector<double> posterior_true_size(const GroupSizeDistribution& d, double rho,
                                        int n_obs);

struct DeconvolutionResult {
    double rho = 1.0;
    GroupSizeDistribution dist;
    double roundtrip_error = 0.0;
};

// Recovers (rho, q) from an observed-size pmf. The unnormalized candidate
// q(rho) is the triangular solve A(rho)^{-1} p; the admissible rho is the
// largest root in (0,1] of its first coordinate, located by scan plus
// bisection. Entries of the recovered q in (-1e-8, 0) are clipped to zero;
// anything more negative, or a forward-map round trip worse than 1e-8,
// means the input was not generated by the thinning model.
DeconvolutionResult deconvolve_exact(std::span<const double> p);

// Candidate first coordinate q1(rho) for a fixed observed pmf; exposed for
// the monotonicity checks. valid is set when the normalizer is positive.
double deconvolve_q1(std::span<const double> p, double rho, bool* valid = nullptr);

}  // namespace peerfx
