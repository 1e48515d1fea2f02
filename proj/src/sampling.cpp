#include "peerfx/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "peerfx/rng.hpp"

namespace peerfx {

namespace {

double binom(int n, int k) {
    if (k < 0 || k > n) return 0.0;
    k = std::min(k, n - k);
    double r = 1.0;
    for (int i = 1; i <= k; ++i) {
        r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
    }
    return r;
}

// Unnormalized candidate for the true-size distribution at a trial rho:
// the triangular solve A(rho)^{-1} p.
std::vector<double> candidate_v(std::span<const double> p, double rho) {
    const int nbar = static_cast<int>(p.size());
    const Matrix a = mixing_matrix(nbar, rho);
    return solve_upper_triangular(a, p);
}

}  // namespace

void GroupSizeDistribution::validate(double tol) const {
    if (nbar < 2 || static_cast<int>(q.size()) != nbar) {
        throw DataError("size distribution: need nbar >= 2 and a probability per size 1..nbar");
    }
    double sum = 0.0;
    for (double v : q) {
        if (v < -tol) throw DataError("size distribution: negative probability");
        sum += v;
    }
    if (std::fabs(sum - 1.0) > 1e-12 + tol) {
        throw DataError("size distribution: probabilities must sum to 1");
    }
    if (std::fabs(q.front()) > tol) {
        throw DataError("size distribution: mass at size 1 must be zero");
    }
    if (!(q.back() > 0.0)) {
        throw DataError("size distribution: mass at nbar must be positive");
    }
}

void SamplingDesign::validate() const {
    if (!(rho > 0.0 && rho <= 1.0)) {
        throw DataError("sampling design: rho must lie in (0,1]");
    }
    if (jitter < 0.0) throw DataError("sampling design: jitter must be >= 0");
    if (jitter > 0.0 && (rho - jitter <= 0.0 || rho + jitter > 1.0)) {
        throw DataError("sampling design: rho +/- jitter must stay in (0,1]");
    }
}

Dataset sample_observed(const Dataset& full, const SamplingDesign& design,
                        std::uint64_t seed, bool keep_true_size) {
    design.validate();
    Dataset out;
    out.rows.reserve(full.rows.size());
    for (const auto& row : full.rows) {
        rng::Stream s(rng::derive_key({seed, static_cast<std::uint64_t>(rng::Role::Sampling),
                                       static_cast<std::uint64_t>(row.id)}));
        const double p = design.jitter > 0.0
                             ? design.rho + s.uniform(-design.jitter, design.jitter)
                             : design.rho;
        if (!s.bernoulli(p)) continue;
        Row kept = row;
        if (!keep_true_size) kept.true_group_size.reset();
        out.rows.push_back(std::move(kept));
    }
    return out;
}

Matrix mixing_matrix(int nbar, double rho) {
    if (nbar < 2) throw std::invalid_argument("mixing_matrix: nbar must be >= 2");
    if (!(rho > 0.0 && rho <= 1.0)) {
        throw std::invalid_argument("mixing_matrix: rho must lie in (0,1]");
    }
    Matrix a(nbar, nbar);
    for (int j = 1; j <= nbar; ++j) {
        for (int i = 1; i <= j; ++i) {
            a(i - 1, j - 1) = binom(j, i) * std::pow(rho, i) * std::pow(1.0 - rho, j - i);
        }
    }
    return a;
}

std::vector<double> observed_size_pmf(const GroupSizeDistribution& d, double rho) {
    d.validate();
    if (!(rho > 0.0 && rho <= 1.0)) {
        throw std::invalid_argument("observed_size_pmf: rho must lie in (0,1]");
    }
    double denom = 1.0;
    for (int m = 1; m <= d.nbar; ++m) {
        denom -= d.at(m) * std::pow(1.0 - rho, m);
    }
    if (!(denom > 0.0)) {
        throw NumericalError("observed_size_pmf: zero probability of observing a group");
    }
    std::vector<double> p(static_cast<std::size_t>(d.nbar), 0.0);
    for (int n = 1; n <= d.nbar; ++n) {
        double s = 0.0;
        for (int m = n; m <= d.nbar; ++m) {
            s += d.at(m) * binom(m, n) * std::pow(rho, n) * std::pow(1.0 - rho, m - n);
        }
        p[static_cast<std::size_t>(n - 1)] = s / denom;
    }
    return p;
}

std::vector<double> posterior_true_size(const GroupSizeDistribution& d, double rho,
                                        int n_obs) {
    d.validate();
    if (n_obs < 1 || n_obs > d.nbar) {
        throw std::invalid_argument("posterior_true_size: observed size out of range");
    }
    std::vector<double> w(static_cast<std::size_t>(d.nbar), 0.0);
    double total = 0.0;
    for (int m = n_obs; m <= d.nbar; ++m) {
        const double v = d.at(m) * binom(m, n_obs) * std::pow(rho, n_obs) *
                         std::pow(1.0 - rho, m - n_obs);
        w[static_cast<std::size_t>(m - 1)] = v;
        total += v;
    }
    if (!(total > 0.0)) {
        throw NumericalError("posterior_true_size: observed size " + std::to_string(n_obs) +
                             " has zero probability under the given distribution");
    }
    for (double& v : w) v /= total;
    return w;
}

double deconvolve_q1(std::span<const double> p, double rho, bool* valid) {
    const std::vector<double> v = candidate_v(p, rho);
    double total = 0.0;
    for (double x : v) total += x;
    if (valid) *valid = total > 0.0;
    return v.front() / total;
}

DeconvolutionResult deconvolve_exact(std::span<const double> p_in) {
    // The support's upper end is the last strictly positive entry.
    int nbar = static_cast<int>(p_in.size());
    while (nbar > 0 && p_in[static_cast<std::size_t>(nbar - 1)] <= 0.0) --nbar;
    if (nbar < 1) throw DataError("deconvolve: empty observed-size distribution");
    std::vector<double> p(p_in.begin(), p_in.begin() + nbar);
    double sum = 0.0;
    for (double v : p) {
        if (v < 0.0) throw DataError("deconvolve: negative probability");
        sum += v;
    }
    if (std::fabs(sum - 1.0) > 1e-9) {
        throw DataError("deconvolve: observed-size probabilities must sum to 1");
    }
    if (nbar == 1) {
        throw DataError("deconvolve: all observed groups are singletons; sizes >= 2 are required");
    }

    DeconvolutionResult res;
    if (p.front() <= 1e-14) {
        // No singletons observed: no thinning happened.
        res.rho = 1.0;
        res.dist.nbar = nbar;
        res.dist.q = p;
        res.dist.q.front() = 0.0;
        res.roundtrip_error = 0.0;
        res.dist.validate(1e-9);
        return res;
    }

    // v1(rho) is positive at rho = 1 (it equals the singleton share there)
    // and vanishes at the admissible rho. The candidate function can carry
    // further roots at smaller rho, but those produce signed masses, so:
    // scan down, bisect every sign change, and accept the first candidate
    // that is a genuine distribution and reproduces p through the forward
    // map. Model-generated inputs always have exactly one such root.
    auto try_candidate = [&](double rho, DeconvolutionResult* out) -> bool {
        std::vector<double> v = candidate_v(p, rho);
        double total = 0.0;
        for (double x : v) total += x;
        if (!(total > 0.0)) return false;
        std::vector<double> q(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) q[i] = v[i] / total;
        q.front() = 0.0;
        double renorm = 0.0;
        for (double& x : q) {
            if (x < 0.0) {
                if (x < -1e-8) return false;
                x = 0.0;
            }
            renorm += x;
        }
        for (double& x : q) x /= renorm;
        if (!(q.back() > 0.0)) return false;
        out->rho = rho;
        out->dist.nbar = nbar;
        out->dist.q = std::move(q);
        const std::vector<double> back = observed_size_pmf(out->dist, out->rho);
        double err = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            err = std::max(err, std::fabs(back[i] - p[i]));
        }
        out->roundtrip_error = err;
        return err <= 1e-8;
    };

    const double lo_limit = 1e-6;
    const int steps = 2048;
    double hi = 1.0;
    double v_hi = candidate_v(p, hi).front();
    for (int s = 1; s <= steps; ++s) {
        const double lo = 1.0 + (lo_limit - 1.0) * static_cast<double>(s) / steps;
        const double v_lo = candidate_v(p, lo).front();
        const bool crossing = v_lo == 0.0 || (v_lo < 0.0) != (v_hi < 0.0);
        if (crossing) {
            double a = lo, b = hi, v_b = v_hi;
            for (int it = 0; it < 200 && b - a > 1e-12; ++it) {
                const double mid = 0.5 * (a + b);
                const double v_mid = candidate_v(p, mid).front();
                if (v_mid == 0.0) {
                    a = b = mid;
                    break;
                }
                if ((v_mid < 0.0) == (v_b < 0.0)) {
                    b = mid;
                    v_b = v_mid;
                } else {
                    a = mid;
                }
            }
            if (try_candidate(0.5 * (a + b), &res)) {
                res.dist.validate(1e-8);
                return res;
            }
        }
        hi = lo;
        v_hi = v_lo;
    }
    throw NumericalError(
        "deconvolve: no admissible rho in (0,1]; the input is not consistent with "
        "independent thinning of groups of size >= 2");
}

}  // namespace peerfx
