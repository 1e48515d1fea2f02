#include "peerfx/model.hpp"

#include <cmath>
#include <map>
#include <unordered_map>

#include "peerfx/linalg.hpp"
#include "peerfx/rng.hpp"

namespace peerfx {

namespace {

void require_valid(long n, double beta) {
    if (n < 2) throw std::invalid_argument("pi: group size must be >= 2");
    if (!(std::fabs(beta) < 1.0)) throw std::invalid_argument("pi: |beta| must be < 1");
}

double quantize(double v) {
    return kOutcomeGrid * std::nearbyint(v / kOutcomeGrid);
}

}  // namespace

std::vector<double> pi1(long n, const StructuralParams& theta) {
    require_valid(n, theta.beta);
    const double inv = 1.0 / static_cast<double>(n - 1);
    const double den = 1.0 - theta.beta * (theta.beta + static_cast<double>(n) - 2.0) * inv;
    std::vector<double> out(theta.gamma.size());
    for (std::size_t k = 0; k < out.size(); ++k) {
        out[k] = (theta.delta[k] + theta.beta * theta.gamma[k]) * inv / den;
    }
    return out;
}

std::vector<double> pi2(long n, const StructuralParams& theta) {
    require_valid(n, theta.beta);
    const double inv = 1.0 / static_cast<double>(n - 1);
    const double den = 1.0 - theta.beta * (theta.beta + static_cast<double>(n) - 2.0) * inv;
    std::vector<double> out(theta.gamma.size());
    for (std::size_t k = 0; k < out.size(); ++k) {
        const double num =
            theta.gamma[k] +
            theta.beta * (theta.delta[k] - theta.gamma[k] * (static_cast<double>(n) - 2.0)) * inv;
        out[k] = num / den;
    }
    return out;
}

std::vector<double> pi(long n, const StructuralParams& theta) {
    require_valid(n, theta.beta);
    std::vector<double> out(theta.gamma.size());
    for (std::size_t k = 0; k < out.size(); ++k) {
        out[k] = pi_scalar(n, theta.gamma[k], theta.delta[k], theta.beta);
    }
    return out;
}

double pi_scalar(long n, double gamma, double delta, double beta) {
    const double nm1 = static_cast<double>(n - 1);
    return (gamma * nm1 - delta) / (nm1 + beta);
}

PiGrad pi_scalar_grad(long n, double gamma, double delta, double beta) {
    const double nm1 = static_cast<double>(n - 1);
    const double den = nm1 + beta;
    PiGrad g;
    g.dgamma = nm1 / den;
    g.ddelta = -1.0 / den;
    g.dbeta = -(gamma * nm1 - delta) / (den * den);
    return g;
}

Dataset simulate_outcomes(const Population& pop, const StructuralParams& theta,
                          std::uint64_t seed, SimTrace* trace) {
    pop.validate();
    theta.validate();
    const int k = pop.individuals.empty() ? theta.K()
                                          : static_cast<int>(pop.individuals.front().x.size());
    if (k != theta.K()) {
        throw DataError("simulate_outcomes: covariate dimension does not match parameters");
    }
    const double eps_sd = std::sqrt(theta.sigma2);

    // Bucket members per true group, preserving population order.
    std::map<long, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < pop.individuals.size(); ++i) {
        members[pop.individuals[i].true_group_id].push_back(i);
    }

    std::vector<double> alpha_over(pop.individuals.size(), 0.0);
    std::vector<double> core(pop.individuals.size(), 0.0);
    std::unordered_map<long, double> alphas;
    std::unordered_map<long, double> epsilons;

    for (const auto& [gid, idx] : members) {
        const int n = static_cast<int>(idx.size());
        double alpha_mean = theta.alpha_spec.mean_value;
        if (theta.alpha_spec.mean_kind == GroupEffectSpec::Mean::GroupMeanX) {
            double s = 0.0;
            for (std::size_t i : idx) s += pop.individuals[i].x[0];
            alpha_mean = s / n;
        }
        rng::Stream astream(rng::derive_key(
            {seed, static_cast<std::uint64_t>(rng::Role::Alpha), static_cast<std::uint64_t>(gid)}));
        const double alpha = theta.alpha_spec.stddev > 0.0
                                 ? astream.normal(alpha_mean, theta.alpha_spec.stddev)
                                 : alpha_mean;
        alphas[gid] = alpha;

        std::vector<double> xsum(k, 0.0);
        for (std::size_t i : idx) {
            for (int c = 0; c < k; ++c) xsum[c] += pop.individuals[i].x[c];
        }
        const double inv = 1.0 / static_cast<double>(n - 1);

        // (I - beta*W) y = x*gamma + Wx*delta + eps, with the group effect
        // added afterwards as its exact constant alpha/(1-beta).
        Matrix m(n, n);
        std::vector<double> rhs(n, 0.0);
        for (int r = 0; r < n; ++r) {
            const auto& ind = pop.individuals[idx[static_cast<std::size_t>(r)]];
            rng::Stream estream(rng::derive_key({seed,
                                                 static_cast<std::uint64_t>(rng::Role::Epsilon),
                                                 static_cast<std::uint64_t>(ind.id)}));
            const double eps = eps_sd > 0.0 ? estream.normal(0.0, eps_sd) : 0.0;
            epsilons[ind.id] = eps;
            double v = eps;
            for (int c = 0; c < k; ++c) {
                const double peer_mean_x = (xsum[c] - ind.x[c]) * inv;
                v += theta.gamma[c] * ind.x[c] + theta.delta[c] * peer_mean_x;
            }
            rhs[r] = v;
            for (int ccol = 0; ccol < n; ++ccol) {
                m(r, ccol) = (r == ccol) ? 1.0 : -theta.beta * inv;
            }
        }
        const std::vector<double> y = solve_dense(std::move(m), std::move(rhs));
        const double shift = quantize(alpha / (1.0 - theta.beta));
        for (int r = 0; r < n; ++r) {
            const std::size_t i = idx[static_cast<std::size_t>(r)];
            core[i] = quantize(y[static_cast<std::size_t>(r)]);
            alpha_over[i] = shift;
        }
    }

    Dataset out;
    out.rows.reserve(pop.individuals.size());
    for (std::size_t i = 0; i < pop.individuals.size(); ++i) {
        const auto& ind = pop.individuals[i];
        Row row;
        row.id = ind.id;
        row.group_id = ind.true_group_id;
        row.true_group_size = pop.group_sizes.at(ind.true_group_id);
        row.y = core[i] + alpha_over[i];
        row.x = ind.x;
        out.rows.push_back(std::move(row));
    }
    if (trace) {
        trace->alpha.clear();
        trace->epsilon.clear();
        for (const auto& [gid, a] : alphas) trace->alpha[gid] = a;
        for (const auto& [id, e] : epsilons) trace->epsilon[id] = e;
    }
    return out;
}

std::vector<double> within_transform(std::span<const double> values,
                                     std::span<const long> groups) {
    if (values.size() != groups.size()) {
        throw std::invalid_argument("within_transform: values and groups differ in length");
    }
    std::unordered_map<long, std::pair<double, long>> acc;  // sum, count
    for (std::size_t i = 0; i < values.size(); ++i) {
        auto& [sum, count] = acc[groups[i]];
        sum += values[i];
        ++count;
    }
    std::vector<double> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto& [sum, count] = acc[groups[i]];
        const double n = static_cast<double>(count);
        out[i] = (n * values[i] - sum) / n;
    }
    return out;
}

ParamDiagnostics check_parameters(const StructuralParams& theta) {
    ParamDiagnostics diag;
    diag.beta_out_of_range = !(std::fabs(theta.beta) < 1.0);
    for (std::size_t kidx = 0; kidx < theta.gamma.size(); ++kidx) {
        const double combo = theta.gamma[kidx] * theta.beta + theta.delta[kidx];
        const double scale =
            std::max({1.0, std::fabs(theta.gamma[kidx] * theta.beta), std::fabs(theta.delta[kidx])});
        if (std::fabs(combo) <= 1e-10 * scale) {
            diag.offset_warning_coords.push_back(static_cast<int>(kidx));
        }
    }
    return diag;
}

}  // namespace peerfx
