#include "peerfx/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <utility>

#include "peerfx/model.hpp"
#include "peerfx/optimize.hpp"

namespace peerfx {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double binom(int n, int k) {
    if (k < 0 || k > n) return 0.0;
    k = std::min(k, n - k);
    double r = 1.0;
    for (int i = 1; i <= k; ++i) {
        r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Data preparation: canonical grouping, within-group demeaning, per-row size
// information. Groups are ordered by their smallest row id and members by id,
// so results do not depend on row order or on the label values themselves.
// ---------------------------------------------------------------------------

struct PreparedRow {
    double ybar = 0.0;
    std::vector<double> xbar;
    int sig = 0;  // index into the size-signature table
};

struct SizeSignature {
    int n = 0;        // simple / posterior size argument
    int n1 = 0;       // mixture: smaller candidate size
    int n2 = 0;       // mixture: larger candidate size
};

struct Prepared {
    int K = 1;
    std::vector<PreparedRow> rows;
    std::vector<SizeSignature> sigs;
    // Observed-size counts over all groups (incl. singletons), for the size
    // likelihood. counts[i] is the number of groups observed with i+1 rows.
    std::vector<long> size_counts;
    int max_obs = 0;
    long n_groups = 0;
    // (observed size, observed == true size), when true sizes are available
    // for every row of the group.
    std::vector<std::pair<int, bool>> group_complete;
    bool have_complete = false;
};

using GroupKey = std::pair<int, long>;

struct Grouped {
    std::vector<std::vector<std::size_t>> groups;  // row indices, canonical order
};

Grouped group_rows(const Dataset& data, const std::function<GroupKey(const Row&)>& key) {
    std::map<GroupKey, std::vector<std::size_t>> buckets;
    for (std::size_t i = 0; i < data.rows.size(); ++i) {
        buckets[key(data.rows[i])].push_back(i);
    }
    std::vector<std::vector<std::size_t>> groups;
    groups.reserve(buckets.size());
    for (auto& [k, idx] : buckets) {
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            return data.rows[a].id < data.rows[b].id;
        });
        groups.push_back(std::move(idx));
    }
    std::sort(groups.begin(), groups.end(),
              [&](const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
                  return data.rows[a.front()].id < data.rows[b.front()].id;
              });
    return {std::move(groups)};
}

// Demeans y and x within a member list via (n*v - sum)/n.
void demean_group(const Dataset& data, const std::vector<std::size_t>& members, int k,
                  std::vector<double>& ybar, std::vector<Row const*>& row_of,
                  std::vector<std::vector<double>>& xbar) {
    const double n = static_cast<double>(members.size());
    double ysum = 0.0;
    std::vector<double> xsum(static_cast<std::size_t>(k), 0.0);
    for (std::size_t i : members) {
        ysum += data.rows[i].y;
        for (int c = 0; c < k; ++c) xsum[static_cast<std::size_t>(c)] += data.rows[i].x[static_cast<std::size_t>(c)];
    }
    for (std::size_t i : members) {
        const Row& r = data.rows[i];
        ybar.push_back((n * r.y - ysum) / n);
        std::vector<double> xb(static_cast<std::size_t>(k));
        for (int c = 0; c < k; ++c) {
            xb[static_cast<std::size_t>(c)] = (n * r.x[static_cast<std::size_t>(c)] - xsum[static_cast<std::size_t>(c)]) / n;
        }
        xbar.push_back(std::move(xb));
        row_of.push_back(&r);
    }
}

long require_true_size(const Dataset& data, const std::vector<std::size_t>& members) {
    long size = -1;
    for (std::size_t i : members) {
        const Row& r = data.rows[i];
        if (!r.true_group_size.has_value()) {
            throw DataError("estimator 'known' requires true group sizes "
                            "(true_group_size column) on every row");
        }
        if (size < 0) {
            size = *r.true_group_size;
        } else if (size != *r.true_group_size) {
            throw DataError("inconsistent true group size within group of row " +
                            std::to_string(r.id));
        }
    }
    if (size < 2) throw DataError("true group size must be >= 2");
    if (size < static_cast<long>(members.size())) {
        throw DataError("group has more observed members than its true size");
    }
    return size;
}

Prepared prepare(const Dataset& data, Estimator tag) {
    data.validate();
    if (data.rows.empty()) throw DataError("estimation: dataset is empty");
    Prepared prep;
    prep.K = data.K();
    if (prep.K < 1) throw DataError("estimation: no covariates");

    const bool needs_group2 =
        tag == Estimator::Floor || tag == Estimator::Uncertain || tag == Estimator::UncertainKnownPsi;
    if (needs_group2) {
        for (const auto& r : data.rows) {
            if (!r.group2_id.has_value()) {
                throw DataError("estimator '" + estimator_name(tag) +
                                "' requires the second candidate group (group2_id column)");
            }
        }
    }

    // Observed size of each smaller-candidate (specified) group.
    const Grouped spec_groups = group_rows(data, [](const Row& r) { return GroupKey{0, r.group_id}; });
    std::map<long, int> spec_size;
    for (const auto& members : spec_groups.groups) {
        spec_size[data.rows[members.front()].group_id] = static_cast<int>(members.size());
    }
    std::map<long, int> floor_size;
    if (data.has_group2()) {
        const Grouped g2 = group_rows(data, [](const Row& r) { return GroupKey{1, r.group2_id.value_or(-1)}; });
        for (const auto& members : g2.groups) {
            floor_size[data.rows[members.front()].group2_id.value_or(-1)] =
                static_cast<int>(members.size());
        }
    }

    // Demeaning groups: the specified group except for Floor (larger
    // candidate) and Known (derived true group).
    Grouped demean_groups = spec_groups;
    if (tag == Estimator::Floor) {
        demean_groups = group_rows(data, [](const Row& r) { return GroupKey{1, *r.group2_id}; });
    } else if (tag == Estimator::Known && data.has_group2()) {
        // The realized group is the smaller candidate exactly when the true
        // size matches its member count; otherwise it is the larger one.
        std::map<long, bool> room_is_true;
        for (const auto& members : spec_groups.groups) {
            const long true_size = require_true_size(data, members);
            room_is_true[data.rows[members.front()].group_id] =
                true_size == static_cast<long>(members.size());
        }
        demean_groups = group_rows(data, [&](const Row& r) {
            return room_is_true.at(r.group_id) ? GroupKey{0, r.group_id}
                                               : GroupKey{1, *r.group2_id};
        });
    }

    // Size counts over specified groups (used by the size likelihood).
    prep.n_groups = static_cast<long>(spec_groups.groups.size());
    for (const auto& members : spec_groups.groups) {
        const int n = static_cast<int>(members.size());
        prep.max_obs = std::max(prep.max_obs, n);
        if (static_cast<int>(prep.size_counts.size()) < n) prep.size_counts.resize(static_cast<std::size_t>(n), 0);
        ++prep.size_counts[static_cast<std::size_t>(n - 1)];
    }
    prep.have_complete = data.has_true_sizes();
    if (prep.have_complete) {
        for (const auto& members : spec_groups.groups) {
            bool all = true;
            long size = -1;
            for (std::size_t i : members) {
                if (!data.rows[i].true_group_size.has_value()) {
                    all = false;
                    break;
                }
                size = *data.rows[i].true_group_size;
            }
            if (!all) {
                prep.have_complete = false;
                break;
            }
            prep.group_complete.emplace_back(static_cast<int>(members.size()),
                                             size == static_cast<long>(members.size()));
        }
    }

    std::map<std::tuple<int, int, int>, int> sig_index;
    auto sig_of = [&](int n, int n1, int n2) {
        auto [it, inserted] = sig_index.emplace(std::make_tuple(n, n1, n2),
                                                static_cast<int>(prep.sigs.size()));
        if (inserted) prep.sigs.push_back({n, n1, n2});
        return it->second;
    };

    std::vector<double> ybar;
    std::vector<std::vector<double>> xbar;
    std::vector<Row const*> row_of;
    for (const auto& members : demean_groups.groups) {
        if (members.size() < 2) continue;  // demeaned to zero, carries no signal

        long n_known = 0;
        if (tag == Estimator::Known) {
            n_known = require_true_size(data, members);
        }
        ybar.clear();
        xbar.clear();
        row_of.clear();
        demean_group(data, members, prep.K, ybar, row_of, xbar);

        for (std::size_t j = 0; j < members.size(); ++j) {
            const Row& r = *row_of[j];
            PreparedRow pr;
            pr.ybar = ybar[j];
            pr.xbar = std::move(xbar[j]);
            switch (tag) {
                case Estimator::Misspecified:
                case Estimator::Room:
                    pr.sig = sig_of(spec_size.at(r.group_id), 0, 0);
                    break;
                case Estimator::Floor:
                    pr.sig = sig_of(floor_size.at(*r.group2_id), 0, 0);
                    break;
                case Estimator::Known:
                    pr.sig = sig_of(static_cast<int>(n_known), 0, 0);
                    break;
                case Estimator::Unknown:
                case Estimator::UnknownParametric:
                    pr.sig = sig_of(spec_size.at(r.group_id), 0, 0);
                    break;
                case Estimator::Uncertain:
                case Estimator::UncertainKnownPsi: {
                    const int n1 = spec_size.at(r.group_id);
                    const int n2 = floor_size.at(*r.group2_id);
                    if (n1 > n2) throw DataError("candidate groups are not nested by size");
                    pr.sig = sig_of(0, n1, n2);
                    break;
                }
            }
            prep.rows.push_back(std::move(pr));
        }
    }
    return prep;
}

// ---------------------------------------------------------------------------
// Least-squares problem: residual r_i = ybar_i - sum_k xbar_ik (gamma_k A_i -
// delta_k B_i) where (A, B) depend on the row's size signature and on beta
// (and psi for the mixture variant). Parameters are laid out as
// [gamma_0.., delta_0.., z_beta?, z_psi?] with identity maps on gamma/delta.
// ---------------------------------------------------------------------------

enum class SlopeKind { Simple, Posterior, Mixture };

struct NlsProblem final : LeastSquaresFunction {
    const Prepared* prep = nullptr;
    SlopeKind kind = SlopeKind::Simple;
    bool beta_free = false;
    bool psi_free = false;
    double psi_fixed = 1.0;
    // posterior weights per signature: list of (size m, weight)
    std::vector<std::vector<std::pair<int, double>>> weights;
    TanhBox beta_box{MomentSpec::kBetaBound};
    LogisticBox psi_box{0.0, 1.0};

    int K() const { return prep->K; }
    int dim() const override {
        return 2 * K() + (beta_free ? 1 : 0) + (psi_free ? 1 : 0);
    }

    double beta_of(std::span<const double> x) const {
        return beta_free ? beta_box.to_model(x[static_cast<std::size_t>(2 * K())]) : 0.0;
    }
    double psi_of(std::span<const double> x) const {
        if (!psi_free) return psi_fixed;
        return psi_box.to_model(x[static_cast<std::size_t>(2 * K() + (beta_free ? 1 : 0))]);
    }

    struct SlopeTerms {
        double a = 0.0, b = 0.0;        // slope = gamma*a - delta*b
        double da_dbeta = 0.0, db_dbeta = 0.0;
        double da_dpsi = 0.0, db_dpsi = 0.0;
    };

    void slope_tables(double beta, double psi, std::vector<SlopeTerms>& out) const {
        out.assign(prep->sigs.size(), SlopeTerms{});
        for (std::size_t s = 0; s < prep->sigs.size(); ++s) {
            const SizeSignature& sig = prep->sigs[s];
            SlopeTerms t;
            if (kind == SlopeKind::Simple) {
                const double den = sig.n - 1.0 + beta;
                t.a = (sig.n - 1.0) / den;
                t.b = 1.0 / den;
                t.da_dbeta = -(sig.n - 1.0) / (den * den);
                t.db_dbeta = -1.0 / (den * den);
            } else if (kind == SlopeKind::Posterior) {
                for (const auto& [m, w] : weights[s]) {
                    const double den = m - 1.0 + beta;
                    t.a += w * (m - 1.0) / den;
                    t.b += w * 1.0 / den;
                    t.da_dbeta -= w * (m - 1.0) / (den * den);
                    t.db_dbeta -= w * 1.0 / (den * den);
                }
            } else {
                const double den1 = sig.n1 - 1.0 + beta;
                const double den2 = sig.n2 - 1.0 + beta;
                const double a1 = (sig.n1 - 1.0) / den1, b1 = 1.0 / den1;
                const double a2 = (sig.n2 - 1.0) / den2, b2 = 1.0 / den2;
                t.a = psi * a1 + (1.0 - psi) * a2;
                t.b = psi * b1 + (1.0 - psi) * b2;
                t.da_dbeta = -(psi * (sig.n1 - 1.0) / (den1 * den1) +
                               (1.0 - psi) * (sig.n2 - 1.0) / (den2 * den2));
                t.db_dbeta = -(psi / (den1 * den1) + (1.0 - psi) / (den2 * den2));
                t.da_dpsi = a1 - a2;
                t.db_dpsi = b1 - b2;
            }
            out[s] = t;
        }
    }

    double eval(std::span<const double> x, std::vector<double>* grad, Matrix* gn) const override {
        const int k = K();
        const int p = dim();
        const double beta = beta_of(x);
        const double psi = psi_of(x);
        const double dbeta_dz =
            beta_free ? beta_box.deriv(x[static_cast<std::size_t>(2 * k)]) : 0.0;
        const double dpsi_dz =
            psi_free ? psi_box.deriv(x[static_cast<std::size_t>(2 * k + (beta_free ? 1 : 0))]) : 0.0;

        std::vector<SlopeTerms> terms;
        slope_tables(beta, psi, terms);

        if (grad) {
            grad->assign(static_cast<std::size_t>(p), 0.0);
            *gn = Matrix(p, p);
        }
        std::vector<double> jrow(static_cast<std::size_t>(p), 0.0);
        double ssr = 0.0;
        for (const PreparedRow& row : prep->rows) {
            const SlopeTerms& t = terms[static_cast<std::size_t>(row.sig)];
            double pred = 0.0;
            double dpred_dbeta = 0.0;
            double dpred_dpsi = 0.0;
            for (int c = 0; c < k; ++c) {
                const double g = x[static_cast<std::size_t>(c)];
                const double d = x[static_cast<std::size_t>(k + c)];
                const double xb = row.xbar[static_cast<std::size_t>(c)];
                pred += xb * (g * t.a - d * t.b);
                if (beta_free) dpred_dbeta += xb * (g * t.da_dbeta - d * t.db_dbeta);
                if (psi_free) dpred_dpsi += xb * (g * t.da_dpsi - d * t.db_dpsi);
            }
            const double r = row.ybar - pred;
            ssr += r * r;
            if (!grad) continue;
            for (int c = 0; c < k; ++c) {
                const double xb = row.xbar[static_cast<std::size_t>(c)];
                jrow[static_cast<std::size_t>(c)] = -xb * t.a;
                jrow[static_cast<std::size_t>(k + c)] = xb * t.b;
            }
            int at = 2 * k;
            if (beta_free) jrow[static_cast<std::size_t>(at++)] = -dpred_dbeta * dbeta_dz;
            if (psi_free) jrow[static_cast<std::size_t>(at)] = -dpred_dpsi * dpsi_dz;
            for (int i = 0; i < p; ++i) {
                (*grad)[static_cast<std::size_t>(i)] += jrow[static_cast<std::size_t>(i)] * r;
                for (int j = i; j < p; ++j) {
                    (*gn)(i, j) += jrow[static_cast<std::size_t>(i)] * jrow[static_cast<std::size_t>(j)];
                }
            }
        }
        if (grad) {
            for (int i = 0; i < p; ++i) {
                for (int j = 0; j < i; ++j) (*gn)(i, j) = (*gn)(j, i);
            }
        }
        return ssr;
    }

    // Least-squares solution for (gamma, delta) with beta and psi held fixed;
    // the predictor is linear in them.
    std::vector<double> profile_linear(double beta, double psi) const {
        const int k = K();
        std::vector<SlopeTerms> terms;
        slope_tables(beta, psi, terms);
        Matrix h(2 * k, 2 * k);
        std::vector<double> rhs(static_cast<std::size_t>(2 * k), 0.0);
        std::vector<double> col(static_cast<std::size_t>(2 * k), 0.0);
        for (const PreparedRow& row : prep->rows) {
            const SlopeTerms& t = terms[static_cast<std::size_t>(row.sig)];
            for (int c = 0; c < k; ++c) {
                const double xb = row.xbar[static_cast<std::size_t>(c)];
                col[static_cast<std::size_t>(c)] = xb * t.a;
                col[static_cast<std::size_t>(k + c)] = -xb * t.b;
            }
            for (int i = 0; i < 2 * k; ++i) {
                rhs[static_cast<std::size_t>(i)] += col[static_cast<std::size_t>(i)] * row.ybar;
                for (int j = i; j < 2 * k; ++j) {
                    h(i, j) += col[static_cast<std::size_t>(i)] * col[static_cast<std::size_t>(j)];
                }
            }
        }
        for (int i = 0; i < 2 * k; ++i) {
            for (int j = 0; j < i; ++j) h(i, j) = h(j, i);
        }
        try {
            return solve_dense(std::move(h), std::move(rhs));
        } catch (const NumericalError&) {
            throw DataError("estimation: no within-group covariate variation in usable rows");
        }
    }
};

struct FitOutcome {
    LMResult lm;
    int starts = 0;
};

FitOutcome run_multistart(const NlsProblem& prob, const std::vector<double>& beta_starts,
                          const std::vector<double>& psi_starts) {
    FitOutcome out;
    bool have = false;
    for (double b0 : beta_starts) {
        for (double p0 : psi_starts) {
            std::vector<double> w = prob.profile_linear(b0, p0);
            std::vector<double> z = w;
            if (prob.beta_free) z.push_back(prob.beta_box.from_model(b0));
            if (prob.psi_free) z.push_back(prob.psi_box.from_model(p0));
            LMResult res = levenberg_marquardt(prob, std::move(z));
            ++out.starts;
            if (!have || res.objective < out.lm.objective) {
                out.lm = std::move(res);
                have = true;
            }
        }
    }
    return out;
}

void fill_structural_estimates(const NlsProblem& prob, const LMResult& lm,
                               EstimationResult& result, bool impose_beta_zero) {
    const int k = prob.K();
    for (int c = 0; c < k; ++c) {
        const std::string suffix = k == 1 ? "" : "_" + std::to_string(c + 1);
        result.estimates["gamma" + suffix] = lm.x[static_cast<std::size_t>(c)];
        result.estimates["delta" + suffix] = lm.x[static_cast<std::size_t>(k + c)];
    }
    if (prob.beta_free) {
        result.estimates["beta"] = prob.beta_of(lm.x);
    } else if (!impose_beta_zero) {
        result.estimates["beta"] = 0.0;
    }
    if (prob.psi_free) {
        result.estimates["psi"] = prob.psi_of(lm.x);
    } else if (prob.kind == SlopeKind::Mixture) {
        result.estimates["psi"] = prob.psi_fixed;
    }
    result.objective = lm.objective;
    result.converged = lm.converged;
    result.iterations = lm.iterations;
    result.diagnostics["nls_grad_norm"] = lm.grad_norm;
    result.diagnostics["nls_rows"] = static_cast<double>(prob.prep->rows.size());
    if (!lm.converged) {
        result.warnings.push_back("least-squares stage did not meet the convergence tolerances");
    }
}

// ---------------------------------------------------------------------------
// Size-distribution likelihood internals.
// ---------------------------------------------------------------------------

struct SizePmfParts {
    std::vector<double> s;  // numerators per observed size
    double d = 1.0;         // probability that a group is observed at all
};

SizePmfParts size_pmf_parts(double rho, std::span<const double> q) {
    const int nbar = static_cast<int>(q.size());
    SizePmfParts parts;
    parts.s.assign(static_cast<std::size_t>(nbar), 0.0);
    parts.d = 1.0;
    for (int m = 1; m <= nbar; ++m) {
        parts.d -= q[static_cast<std::size_t>(m - 1)] * std::pow(1.0 - rho, m);
    }
    for (int n = 1; n <= nbar; ++n) {
        double s = 0.0;
        for (int m = n; m <= nbar; ++m) {
            s += q[static_cast<std::size_t>(m - 1)] * binom(m, n) * std::pow(rho, n) *
                 std::pow(1.0 - rho, m - n);
        }
        parts.s[static_cast<std::size_t>(n - 1)] = s;
    }
    return parts;
}

// Average log-likelihood and raw gradients with respect to rho and each q_m.
double size_avg_loglik_grad(std::span<const long> counts, double rho,
                            std::span<const double> q, double* dl_drho,
                            std::vector<double>* dl_dq) {
    const int nbar = static_cast<int>(q.size());
    const SizePmfParts parts = size_pmf_parts(rho, q);
    double total = 0.0;
    for (long c : counts) total += static_cast<double>(c);
    if (total <= 0.0) throw DataError("size likelihood: no observed groups");
    if (!(parts.d > 0.0)) return -kInf;

    double ll = 0.0;
    for (int n = 1; n <= static_cast<int>(counts.size()); ++n) {
        const long c = counts[static_cast<std::size_t>(n - 1)];
        if (c == 0) continue;
        if (n > nbar || !(parts.s[static_cast<std::size_t>(n - 1)] > 0.0)) return -kInf;
        ll += static_cast<double>(c) / total *
              (std::log(parts.s[static_cast<std::size_t>(n - 1)]) - std::log(parts.d));
    }
    if (!dl_drho && !dl_dq) return ll;

    double dd_drho = 0.0;
    for (int m = 1; m <= nbar; ++m) {
        dd_drho += q[static_cast<std::size_t>(m - 1)] * m * std::pow(1.0 - rho, m - 1);
    }
    if (dl_drho) {
        double acc = -dd_drho / parts.d;
        for (int n = 1; n <= static_cast<int>(counts.size()); ++n) {
            const long c = counts[static_cast<std::size_t>(n - 1)];
            if (c == 0) continue;
            double ds = 0.0;
            for (int m = n; m <= nbar; ++m) {
                double term = n * std::pow(rho, n - 1) * std::pow(1.0 - rho, m - n);
                if (m > n) {
                    term -= static_cast<double>(m - n) * std::pow(rho, n) *
                            std::pow(1.0 - rho, m - n - 1);
                }
                ds += q[static_cast<std::size_t>(m - 1)] * binom(m, n) * term;
            }
            acc += static_cast<double>(c) / total * ds / parts.s[static_cast<std::size_t>(n - 1)];
        }
        *dl_drho = acc;
    }
    if (dl_dq) {
        dl_dq->assign(static_cast<std::size_t>(nbar), 0.0);
        for (int m = 1; m <= nbar; ++m) {
            double acc = std::pow(1.0 - rho, m) / parts.d;
            for (int n = 1; n <= std::min<int>(m, static_cast<int>(counts.size())); ++n) {
                const long c = counts[static_cast<std::size_t>(n - 1)];
                if (c == 0) continue;
                acc += static_cast<double>(c) / total * binom(m, n) * std::pow(rho, n) *
                       std::pow(1.0 - rho, m - n) / parts.s[static_cast<std::size_t>(n - 1)];
            }
            (*dl_dq)[static_cast<std::size_t>(m - 1)] = acc;
        }
    }
    return ll;
}

// ---------------------------------------------------------------------------
// Stage A of the unknown-size estimators: maximum likelihood for the size
// distribution, either with free masses (softmax over sizes 2..nbar, last
// logit pinned) or with the shifted-binomial restriction q(omega).
// ---------------------------------------------------------------------------

struct SizeFit {
    double rho = 1.0;
    GroupSizeDistribution dist;
    double omega = 0.0;
    bool parametric = false;
    double avg_loglik = -kInf;
    bool converged = false;
    int iterations = 0;
    int starts = 0;
    std::vector<double> z;  // final optimizer coordinates
};

std::vector<double> binomial_q(int nbar, double omega) {
    std::vector<double> q(static_cast<std::size_t>(nbar), 0.0);
    for (int m = 2; m <= nbar; ++m) {
        q[static_cast<std::size_t>(m - 1)] =
            binom(nbar - 2, m - 2) * std::pow(omega, m - 2) * std::pow(1.0 - omega, nbar - m);
    }
    return q;
}

struct SizeParam {
    int nbar = 2;
    bool parametric = false;
    LogisticBox rho_box{MomentSpec::kRhoLo, 1.0};
    LogisticBox omega_box{0.0, 1.0};

    int dim() const { return 1 + (parametric ? (nbar > 2 ? 1 : 0) : nbar - 2); }

    void unpack(std::span<const double> z, double* rho, std::vector<double>* q,
                double* omega) const {
        *rho = rho_box.to_model(z[0]);
        if (parametric) {
            *omega = nbar > 2 ? omega_box.to_model(z[1]) : 0.0;
            *q = binomial_q(nbar, *omega);
        } else {
            // softmax over sizes 2..nbar with the last logit pinned to zero
            q->assign(static_cast<std::size_t>(nbar), 0.0);
            double zmax = 0.0;
            for (int m = 2; m < nbar; ++m) zmax = std::max(zmax, z[static_cast<std::size_t>(m - 1)]);
            double sum = std::exp(0.0 - zmax);
            (*q)[static_cast<std::size_t>(nbar - 1)] = sum;
            for (int m = 2; m < nbar; ++m) {
                const double e = std::exp(z[static_cast<std::size_t>(m - 1)] - zmax);
                (*q)[static_cast<std::size_t>(m - 1)] = e;
                sum += e;
            }
            for (int m = 2; m <= nbar; ++m) (*q)[static_cast<std::size_t>(m - 1)] /= sum;
        }
    }

    // z-space gradient from raw model gradients.
    void chain(std::span<const double> z, std::span<const double> q, double omega,
               double dl_drho, std::span<const double> dl_dq, std::vector<double>* gz) const {
        gz->assign(static_cast<std::size_t>(dim()), 0.0);
        (*gz)[0] = dl_drho * rho_box.deriv(z[0]);
        if (parametric) {
            if (nbar > 2) {
                double dl_domega = 0.0;
                for (int m = 2; m <= nbar; ++m) {
                    const double qm = q[static_cast<std::size_t>(m - 1)];
                    const double dq = qm * ((m - 2.0) / std::max(omega, 1e-300) -
                                            (nbar - m) / std::max(1.0 - omega, 1e-300));
                    dl_domega += dl_dq[static_cast<std::size_t>(m - 1)] * dq;
                }
                (*gz)[1] = dl_domega * omega_box.deriv(z[1]);
            }
        } else {
            double avg = 0.0;
            for (int m = 2; m <= nbar; ++m) {
                avg += dl_dq[static_cast<std::size_t>(m - 1)] * q[static_cast<std::size_t>(m - 1)];
            }
            for (int j = 2; j < nbar; ++j) {
                const double qj = q[static_cast<std::size_t>(j - 1)];
                (*gz)[static_cast<std::size_t>(j - 1)] =
                    qj * (dl_dq[static_cast<std::size_t>(j - 1)] - avg);
            }
        }
    }
};

SizeFit fit_size_distribution(std::span<const long> counts, int nbar, bool parametric) {
    SizeParam par;
    par.nbar = nbar;
    par.parametric = parametric;

    auto objective = [&](std::span<const double> z, std::vector<double>* grad) -> double {
        double rho, omega = 0.0;
        std::vector<double> q;
        par.unpack(z, &rho, &q, &omega);
        if (!grad) {
            const double ll = size_avg_loglik_grad(counts, rho, q, nullptr, nullptr);
            return -ll;
        }
        double dl_drho = 0.0;
        std::vector<double> dl_dq;
        const double ll = size_avg_loglik_grad(counts, rho, q, &dl_drho, &dl_dq);
        if (ll == -kInf) {
            grad->assign(static_cast<std::size_t>(par.dim()), 0.0);
            return kInf;
        }
        par.chain(z, q, omega, dl_drho, dl_dq, grad);
        for (double& g : *grad) g = -g;
        return -ll;
    };

    // Deterministic starts: the exact deconvolution of the empirical
    // distribution when it is admissible, then two coarse fallbacks.
    double total = 0.0;
    for (long c : counts) total += static_cast<double>(c);
    std::vector<double> emp(static_cast<std::size_t>(nbar), 0.0);
    for (int n = 1; n <= std::min<int>(nbar, static_cast<int>(counts.size())); ++n) {
        emp[static_cast<std::size_t>(n - 1)] = static_cast<double>(counts[static_cast<std::size_t>(n - 1)]) / total;
    }

    struct Start {
        double rho;
        std::vector<double> q;
    };
    std::vector<Start> starts;
    try {
        const DeconvolutionResult dec = deconvolve_exact(emp);
        std::vector<double> q(static_cast<std::size_t>(nbar), 1e-6);
        q[0] = 0.0;
        for (int m = 2; m <= dec.dist.nbar && m <= nbar; ++m) {
            q[static_cast<std::size_t>(m - 1)] = std::max(dec.dist.at(m), 1e-6);
        }
        starts.push_back({dec.rho, std::move(q)});
    } catch (const std::exception&) {
        // fall through to the coarse starts
    }
    {
        std::vector<double> q(static_cast<std::size_t>(nbar), 1.0 / (nbar - 1));
        q[0] = 0.0;
        starts.push_back({0.75, std::move(q)});
    }
    {
        std::vector<double> q(static_cast<std::size_t>(nbar), 1e-6);
        q[0] = 0.0;
        double s = 0.0;
        for (int m = 2; m <= nbar; ++m) {
            q[static_cast<std::size_t>(m - 1)] =
                std::max(m <= static_cast<int>(counts.size())
                             ? static_cast<double>(counts[static_cast<std::size_t>(m - 1)]) / total
                             : 0.0,
                         1e-6);
            s += q[static_cast<std::size_t>(m - 1)];
        }
        for (int m = 2; m <= nbar; ++m) q[static_cast<std::size_t>(m - 1)] /= s;
        starts.push_back({0.95, std::move(q)});
    }

    SizeFit best;
    for (const Start& st : starts) {
        std::vector<double> z(static_cast<std::size_t>(par.dim()), 0.0);
        z[0] = par.rho_box.from_model(std::clamp(st.rho, MomentSpec::kRhoLo, 1.0));
        if (parametric) {
            double mean = 0.0;
            for (int m = 2; m <= nbar; ++m) mean += m * st.q[static_cast<std::size_t>(m - 1)];
            if (nbar > 2) {
                const double w0 = std::clamp((mean - 2.0) / (nbar - 2.0), 0.02, 0.98);
                z[1] = par.omega_box.from_model(w0);
            }
        } else {
            const double ref = std::max(st.q[static_cast<std::size_t>(nbar - 1)], 1e-9);
            for (int m = 2; m < nbar; ++m) {
                z[static_cast<std::size_t>(m - 1)] =
                    clamp_z(std::log(std::max(st.q[static_cast<std::size_t>(m - 1)], 1e-9) / ref));
            }
        }
        NewtonResult nr = minimize_newton(objective, std::move(z));
        ++best.starts;
        if (-nr.value > best.avg_loglik) {
            best.avg_loglik = -nr.value;
            best.converged = nr.converged;
            best.iterations = nr.iterations;
            best.z = nr.x;
        }
    }
    if (best.z.empty()) throw NumericalError("size likelihood: optimization failed");

    double rho, omega = 0.0;
    std::vector<double> q;
    par.unpack(best.z, &rho, &q, &omega);
    best.rho = rho;
    best.omega = omega;
    best.parametric = parametric;
    best.dist.nbar = nbar;
    best.dist.q = std::move(q);
    return best;
}

EstimationResult gmm_unknown_impl(const Dataset& data, int nbar, bool impose_beta_zero,
                                  bool parametric, bool use_complete_indicator) {
    const Estimator tag = parametric ? Estimator::UnknownParametric : Estimator::Unknown;
    Prepared prep = prepare(data, tag);
    if (nbar == 0) nbar = prep.max_obs;
    if (nbar < prep.max_obs) {
        throw DataError("nbar (" + std::to_string(nbar) +
                        ") is below the largest observed group size (" +
                        std::to_string(prep.max_obs) + ")");
    }
    if (nbar < 2) throw DataError("nbar must be >= 2");

    EstimationResult result;
    result.estimator = estimator_name(tag);
    if (nbar - 1 < 3) {
        result.warnings.push_back(
            "true group sizes can take fewer than three values; the structural "
            "parameters are weakly identified");
    }

    prep.size_counts.resize(static_cast<std::size_t>(nbar), 0);
    SizeFit sfit = fit_size_distribution(prep.size_counts, nbar, parametric);

    if (use_complete_indicator) {
        if (!prep.have_complete) {
            result.warnings.push_back(
                "complete-group indicator requested but true sizes are missing; moment skipped");
        } else {
            // Stack the likelihood scores with the complete-group moment
            // E[1{complete} - rho^{n_obs}] = 0 and solve the small
            // over-identified system in least squares.
            SizeParam par;
            par.nbar = nbar;
            par.parametric = parametric;
            auto moments = [&](std::span<const double> z) {
                double rho, omega = 0.0;
                std::vector<double> q;
                par.unpack(z, &rho, &q, &omega);
                double dl_drho = 0.0;
                std::vector<double> dl_dq;
                const double ll = size_avg_loglik_grad(prep.size_counts, rho, q, &dl_drho, &dl_dq);
                std::vector<double> m;
                if (ll == -kInf) {
                    m.assign(static_cast<std::size_t>(par.dim()) + 1, 1e6);
                    return m;
                }
                par.chain(z, q, omega, dl_drho, dl_dq, &m);
                double extra = 0.0;
                for (const auto& [n_obs, complete] : prep.group_complete) {
                    extra += (complete ? 1.0 : 0.0) - std::pow(rho, n_obs);
                }
                m.push_back(extra / static_cast<double>(prep.group_complete.size()));
                return m;
            };
            struct MomentLS final : LeastSquaresFunction {
                std::function<std::vector<double>(std::span<const double>)> fn;
                int p = 0;
                int dim() const override { return p; }
                double eval(std::span<const double> x, std::vector<double>* grad,
                            Matrix* gn) const override {
                    const std::vector<double> r = fn(x);
                    double ssr = 0.0;
                    for (double v : r) ssr += v * v;
                    if (!grad) return ssr;
                    const int m = static_cast<int>(r.size());
                    Matrix jac(m, p);
                    std::vector<double> xp(x.begin(), x.end());
                    for (int j = 0; j < p; ++j) {
                        const double h = 1e-6 * std::max(1.0, std::fabs(x[static_cast<std::size_t>(j)]));
                        xp[static_cast<std::size_t>(j)] = x[static_cast<std::size_t>(j)] + h;
                        const std::vector<double> rp = fn(xp);
                        xp[static_cast<std::size_t>(j)] = x[static_cast<std::size_t>(j)] - h;
                        const std::vector<double> rm = fn(xp);
                        xp[static_cast<std::size_t>(j)] = x[static_cast<std::size_t>(j)];
                        for (int i = 0; i < m; ++i) {
                            jac(i, j) = (rp[static_cast<std::size_t>(i)] - rm[static_cast<std::size_t>(i)]) / (2.0 * h);
                        }
                    }
                    grad->assign(static_cast<std::size_t>(p), 0.0);
                    *gn = Matrix(p, p);
                    for (int i = 0; i < m; ++i) {
                        for (int a = 0; a < p; ++a) {
                            (*grad)[static_cast<std::size_t>(a)] += jac(i, a) * r[static_cast<std::size_t>(i)];
                            for (int b = a; b < p; ++b) (*gn)(a, b) += jac(i, a) * jac(i, b);
                        }
                    }
                    for (int a = 0; a < p; ++a) {
                        for (int b = 0; b < a; ++b) (*gn)(a, b) = (*gn)(b, a);
                    }
                    return ssr;
                }
            };
            MomentLS ls;
            ls.fn = moments;
            ls.p = par.dim();
            LMResult lr = levenberg_marquardt(ls, sfit.z);
            sfit.z = lr.x;
            sfit.iterations += lr.iterations;
            sfit.converged = sfit.converged && lr.converged;
            double rho, omega = 0.0;
            std::vector<double> q;
            par.unpack(sfit.z, &rho, &q, &omega);
            sfit.rho = rho;
            sfit.omega = omega;
            sfit.dist.q = std::move(q);
            sfit.avg_loglik = size_avg_loglik_grad(prep.size_counts, sfit.rho, sfit.dist.q,
                                                   nullptr, nullptr);
            result.diagnostics["complete_moment_ssr"] = lr.objective;
        }
    }

    // Stage B: least squares with the slope averaged over the posterior of
    // the true size given the observed size.
    NlsProblem prob;
    prob.prep = &prep;
    prob.kind = SlopeKind::Posterior;
    prob.beta_free = !impose_beta_zero;
    prob.weights.assign(prep.sigs.size(), {});
    for (std::size_t s = 0; s < prep.sigs.size(); ++s) {
        const int n_obs = prep.sigs[s].n;
        const std::vector<double> post = posterior_true_size(sfit.dist, sfit.rho, n_obs);
        for (int m = std::max(2, n_obs); m <= nbar; ++m) {
            const double w = post[static_cast<std::size_t>(m - 1)];
            if (w > 0.0) prob.weights[s].emplace_back(m, w);
        }
    }
    const std::vector<double> beta_starts =
        prob.beta_free ? std::vector<double>{-0.5, 0.0, 0.5} : std::vector<double>{0.0};
    FitOutcome fit = run_multistart(prob, beta_starts, {1.0});

    fill_structural_estimates(prob, fit.lm, result, impose_beta_zero);
    result.estimates["rho"] = sfit.rho;
    if (parametric) {
        result.estimates["omega"] = sfit.omega;
    }
    for (int m = 2; m <= nbar; ++m) {
        result.estimates["q_" + std::to_string(m)] = sfit.dist.at(m);
    }
    result.converged = result.converged && sfit.converged;
    result.iterations += sfit.iterations;
    result.starts_used = fit.starts + sfit.starts;
    result.diagnostics["size_avg_loglik"] = sfit.avg_loglik;
    result.diagnostics["nbar"] = static_cast<double>(nbar);
    int effective_support = 0;
    for (int m = 2; m <= nbar; ++m) {
        if (sfit.dist.at(m) > 1e-4) ++effective_support;
    }
    result.diagnostics["q_support_points"] = static_cast<double>(effective_support);
    if (effective_support < 3) {
        result.warnings.push_back(
            "fitted size distribution concentrates on fewer than three sizes; the "
            "structural coefficients are weakly identified in this sample");
    }

    // The stacked system (likelihood scores + least-squares normal
    // equations) is just-identified, so at an interior solution every moment
    // is zero and the identity GMM weighting is immaterial. Verify.
    std::vector<double> moments;
    {
        double dl_drho = 0.0;
        std::vector<double> dl_dq;
        size_avg_loglik_grad(prep.size_counts, sfit.rho, sfit.dist.q, &dl_drho, &dl_dq);
        const bool rho_interior = sfit.rho < 1.0 - 1e-9 && sfit.rho > MomentSpec::kRhoLo + 1e-9;
        if (rho_interior) moments.push_back(dl_drho);
        if (parametric) {
            if (nbar > 2 && sfit.omega > 1e-9 && sfit.omega < 1.0 - 1e-9) {
                double dl_domega = 0.0;
                for (int m = 2; m <= nbar; ++m) {
                    const double qm = sfit.dist.at(m);
                    dl_domega += dl_dq[static_cast<std::size_t>(m - 1)] * qm *
                                 ((m - 2.0) / sfit.omega - (nbar - m) / (1.0 - sfit.omega));
                }
                moments.push_back(dl_domega);
            }
        } else {
            for (int m = 2; m < nbar; ++m) {
                const double qm = sfit.dist.at(m);
                if (qm > 1e-9 && qm < 1.0 - 1e-9) {
                    moments.push_back(dl_dq[static_cast<std::size_t>(m - 1)] -
                                      dl_dq[static_cast<std::size_t>(nbar - 1)]);
                }
            }
        }
        std::vector<double> grad;
        Matrix gn(prob.dim(), prob.dim());
        prob.eval(fit.lm.x, &grad, &gn);
        const double scale = 1.0 / std::max<std::size_t>(prep.rows.size(), 1);
        for (double g : grad) moments.push_back(g * scale);
    }
    double msq = 0.0, mmax = 0.0;
    for (double v : moments) {
        msq += v * v;
        mmax = std::max(mmax, std::fabs(v));
    }
    result.objective = msq;
    result.diagnostics["gmm_moment_max_interior"] = mmax;
    result.diagnostics["nls_ssr"] = fit.lm.objective;
    if (use_complete_indicator && prep.have_complete) {
        // over-identified: the indicator moment need not vanish
    } else if (mmax > 1e-5 && result.converged) {
        result.warnings.push_back("stacked moments are not numerically zero at the solution");
    }
    return result;
}

}  // namespace

std::string estimator_name(Estimator tag) {
    switch (tag) {
        case Estimator::Misspecified: return "missspecified";
        case Estimator::Known: return "known";
        case Estimator::Unknown: return "unknown";
        case Estimator::UnknownParametric: return "unknown_parametric";
        case Estimator::Room: return "room";
        case Estimator::Floor: return "floor";
        case Estimator::UncertainKnownPsi: return "uncertain_known_psi_case";
        case Estimator::Uncertain: return "uncertain";
    }
    return "unknown";
}

Estimator estimator_from_name(const std::string& name) {
    if (name == "missspecified" || name == "misspecified") return Estimator::Misspecified;
    if (name == "known") return Estimator::Known;
    if (name == "unknown") return Estimator::Unknown;
    if (name == "unknown_parametric" || name == "unknown-p") return Estimator::UnknownParametric;
    if (name == "room") return Estimator::Room;
    if (name == "floor") return Estimator::Floor;
    if (name == "uncertain_known_psi_case") return Estimator::UncertainKnownPsi;
    if (name == "uncertain") return Estimator::Uncertain;
    throw DataError("unknown estimator '" + name + "'");
}

EstimationResult nls_fit(const Dataset& data, const MomentSpec& spec) {
    switch (spec.tag) {
        case Estimator::Unknown:
        case Estimator::UnknownParametric:
            return fit(data, spec);
        case Estimator::Uncertain:
        case Estimator::UncertainKnownPsi:
            return nls_uncertain_fit(data, spec.impose_beta_zero, spec.psi_fixed);
        default:
            break;
    }
    Prepared prep = prepare(data, spec.tag);
    if (prep.rows.empty()) {
        throw DataError("estimation: no usable rows (all observed groups are singletons)");
    }
    NlsProblem prob;
    prob.prep = &prep;
    prob.kind = SlopeKind::Simple;
    prob.beta_free = !spec.impose_beta_zero;

    const std::vector<double> beta_starts =
        prob.beta_free ? std::vector<double>{-0.5, 0.0, 0.5} : std::vector<double>{0.0};
    FitOutcome out = run_multistart(prob, beta_starts, {1.0});

    EstimationResult result;
    result.estimator = estimator_name(spec.tag);
    fill_structural_estimates(prob, out.lm, result, spec.impose_beta_zero);
    result.starts_used = out.starts;
    return result;
}

double size_loglik(std::span<const long> counts, double rho, const GroupSizeDistribution& d) {
    d.validate(1e-9);
    if (!(rho > 0.0 && rho <= 1.0)) {
        throw std::invalid_argument("size_loglik: rho must lie in (0,1]");
    }
    double total = 0.0;
    for (long c : counts) total += static_cast<double>(c);
    if (total <= 0.0) throw DataError("size_loglik: no observed groups");
    for (std::size_t i = d.q.size(); i < counts.size(); ++i) {
        if (counts[i] > 0) return -kInf;
    }
    const double avg = size_avg_loglik_grad(counts, rho, d.q, nullptr, nullptr);
    return avg == -kInf ? -kInf : avg * total;
}

std::vector<double> size_score(std::span<const long> counts, double rho,
                               const GroupSizeDistribution& d) {
    double dl_drho = 0.0;
    std::vector<double> dl_dq;
    const double ll = size_avg_loglik_grad(counts, rho, d.q, &dl_drho, &dl_dq);
    if (ll == -kInf) throw NumericalError("size_score: zero-probability observed size");
    std::vector<double> score;
    score.push_back(dl_drho);
    for (int m = 2; m < d.nbar; ++m) {
        score.push_back(dl_dq[static_cast<std::size_t>(m - 1)] -
                        dl_dq[static_cast<std::size_t>(d.nbar - 1)]);
    }
    return score;
}

EstimationResult gmm_unknown_fit(const Dataset& data, int nbar, bool impose_beta_zero,
                                 bool use_complete_indicator) {
    return gmm_unknown_impl(data, nbar, impose_beta_zero, false, use_complete_indicator);
}

EstimationResult gmm_unknown_parametric_fit(const Dataset& data, int nbar,
                                            bool impose_beta_zero,
                                            bool use_complete_indicator) {
    return gmm_unknown_impl(data, nbar, impose_beta_zero, true, use_complete_indicator);
}

EstimationResult nls_uncertain_fit(const Dataset& data, bool impose_beta_zero,
                                   std::optional<double> psi_fixed) {
    const Estimator tag = psi_fixed ? Estimator::UncertainKnownPsi : Estimator::Uncertain;
    Prepared prep = prepare(data, tag);
    if (prep.rows.empty()) {
        throw DataError("estimation: no usable rows (all observed groups are singletons)");
    }
    NlsProblem prob;
    prob.prep = &prep;
    prob.kind = SlopeKind::Mixture;
    prob.beta_free = !impose_beta_zero;
    prob.psi_free = !psi_fixed.has_value();
    if (psi_fixed) {
        if (!(*psi_fixed >= 0.0 && *psi_fixed <= 1.0)) {
            throw DataError("psi must lie in [0,1]");
        }
        prob.psi_fixed = *psi_fixed;
    }

    const std::vector<double> beta_starts =
        prob.beta_free ? std::vector<double>{-0.5, 0.0, 0.5} : std::vector<double>{0.0};
    const std::vector<double> psi_starts =
        prob.psi_free ? std::vector<double>{0.25, 0.75} : std::vector<double>{prob.psi_fixed};
    FitOutcome out = run_multistart(prob, beta_starts, psi_starts);

    EstimationResult result;
    result.estimator = estimator_name(tag);
    fill_structural_estimates(prob, out.lm, result, impose_beta_zero);
    result.starts_used = out.starts;
    return result;
}

EstimationResult fit(const Dataset& data, const MomentSpec& spec) {
    switch (spec.tag) {
        case Estimator::Unknown:
            return gmm_unknown_fit(data, spec.nbar, spec.impose_beta_zero,
                                   spec.use_complete_indicator);
        case Estimator::UnknownParametric:
            return gmm_unknown_parametric_fit(data, spec.nbar, spec.impose_beta_zero,
                                              spec.use_complete_indicator);
        case Estimator::Uncertain:
            return nls_uncertain_fit(data, spec.impose_beta_zero, {});
        case Estimator::UncertainKnownPsi:
            if (!spec.psi_fixed) {
                throw DataError("estimator 'uncertain_known_psi_case' requires a fixed psi");
            }
            return nls_uncertain_fit(data, spec.impose_beta_zero, spec.psi_fixed);
        default:
            return nls_fit(data, spec);
    }
}

}  // namespace peerfx
