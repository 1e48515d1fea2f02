#include "peerfx/monte_carlo.hpp"

#include <atomic>
#include <cstdio>
#include <functional>
#include <limits>
#include <set>
#include <bit>
#include <cmath>
#include <ostream>
#include <thread>

#include "peerfx/model.hpp"
#include "peerfx/rng.hpp"
#include "peerfx/sampling.hpp"

namespace peerfx {

namespace {

const char* variant_name(MCVariant v) {
    switch (v) {
        case MCVariant::MissingData: return "missing_data";
        case MCVariant::GroupUncertainty: return "group_uncertainty";
        case MCVariant::GroupUncertaintyFE: return "group_uncertainty_fe";
    }
    return "?";
}

// Room sizes: 2 plus a Binomial(2, 0.25) draw.
int draw_group_size(rng::Stream& s) {
    int n = 2;
    if (s.bernoulli(kDesignOmega)) ++n;
    if (s.bernoulli(kDesignOmega)) ++n;
    return n;
}

StructuralParams design_params(const MCDesign& design, bool fe_variant) {
    StructuralParams theta;
    theta.gamma = {design.gamma};
    theta.delta = {design.delta};
    theta.beta = design.beta;
    theta.sigma2 = design.sigma2();
    theta.alpha_spec.mean_kind =
        fe_variant ? GroupEffectSpec::Mean::GroupMeanX : GroupEffectSpec::Mean::Constant;
    theta.alpha_spec.mean_value = fe_variant ? 0.0 : 1.0;
    theta.alpha_spec.stddev = std::sqrt(theta.sigma2);
    return theta;
}

void parallel_for(int n, int threads, const std::function<void(int)>& body) {
    threads = std::max(1, std::min({threads, n, static_cast<int>(std::thread::hardware_concurrency())}));
    if (threads <= 1) {
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&]() {
            for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) body(i);
        });
    }
    for (auto& th : pool) th.join();
}

struct RepResult {
    std::map<std::string, std::map<std::string, double>> estimates;  // estimator -> param -> value
    std::map<std::string, std::string> errors;                       // estimator -> message
};

}  // namespace

double MCDesign::sigma2() const {
    return 2.0 * (gamma * gamma + delta * delta / (kMeanGroupSize - 1.0));
}

void MCDesign::validate() const {
    if (m_target < 10) throw DataError("monte carlo: target sample size too small");
    if (replications < 1) throw DataError("monte carlo: need at least one replication");
    if (grid.empty()) throw DataError("monte carlo: empty design grid");
    for (double v : grid) {
        if (!(v > 0.0 && v <= 1.0)) {
            throw DataError("monte carlo: grid values must lie in (0,1]");
        }
    }
}

long design_group_count(long m_target, double rho) {
    return std::llround(static_cast<double>(m_target) / (rho * kMeanGroupSize));
}

std::pair<Population, Dataset> gen_missing_data(const MCDesign& design, double rho,
                                                std::uint64_t seed) {
    const long g0 = design_group_count(design.m_target, rho);
    Population pop;
    long next_id = 1;
    for (long g = 1; g <= g0; ++g) {
        rng::Stream s(rng::derive_key({seed, static_cast<std::uint64_t>(rng::Role::GroupSize),
                                       static_cast<std::uint64_t>(g)}));
        const int n = draw_group_size(s);
        pop.group_sizes[g] = n;
        for (int j = 0; j < n; ++j) {
            Individual ind;
            ind.id = next_id++;
            ind.true_group_id = g;
            rng::Stream xs(rng::derive_key({seed, static_cast<std::uint64_t>(rng::Role::Covariate),
                                            static_cast<std::uint64_t>(ind.id)}));
            ind.x = {xs.normal()};
            pop.individuals.push_back(std::move(ind));
        }
    }
    const StructuralParams theta = design_params(design, false);
    const Dataset full = simulate_outcomes(pop, theta, seed);
    SamplingDesign sampling;
    sampling.rho = rho;
    sampling.jitter = rho < 1.0 ? 0.1 : 0.0;
    Dataset observed = sample_observed(full, sampling, seed, /*keep_true_size=*/true);
    return {std::move(pop), std::move(observed)};
}

std::pair<Population, Dataset> gen_group_uncertainty(const MCDesign& design, double psi,
                                                     std::uint64_t seed, bool fe_variant) {
    const long n_rooms = design_group_count(design.m_target, 1.0);
    Population pop;
    std::vector<int> room_size(static_cast<std::size_t>(n_rooms) + 1, 0);
    long next_id = 1;
    for (long g = 1; g <= n_rooms; ++g) {
        rng::Stream s(rng::derive_key({seed, static_cast<std::uint64_t>(rng::Role::GroupSize),
                                       static_cast<std::uint64_t>(g)}));
        room_size[static_cast<std::size_t>(g)] = draw_group_size(s);
    }

    // Floors consume 1..5 consecutive rooms; the realized group is the room
    // with probability psi (drawn once per floor) and the floor otherwise.
    struct RoomInfo {
        long floor_id = 0;
        long true_id = 0;
    };
    std::vector<RoomInfo> rooms(static_cast<std::size_t>(n_rooms) + 1);
    long floor_index = 0;
    long room = 1;
    while (room <= n_rooms) {
        ++floor_index;
        const long floor_id = n_rooms + floor_index;
        rng::Stream fs(rng::derive_key({seed, static_cast<std::uint64_t>(rng::Role::FloorSize),
                                        static_cast<std::uint64_t>(floor_index)}));
        const long span = fs.uniform_int(1, 5);
        rng::Stream rs(rng::derive_key({seed, static_cast<std::uint64_t>(rng::Role::Regime),
                                        static_cast<std::uint64_t>(floor_index)}));
        const bool rooms_are_true = rs.bernoulli(psi);
        for (long k = 0; k < span && room <= n_rooms; ++k, ++room) {
            rooms[static_cast<std::size_t>(room)] = {floor_id,
                                                     rooms_are_true ? room : floor_id};
        }
    }

    for (long g = 1; g <= n_rooms; ++g) {
        const RoomInfo& info = rooms[static_cast<std::size_t>(g)];
        for (int j = 0; j < room_size[static_cast<std::size_t>(g)]; ++j) {
            Individual ind;
            ind.id = next_id++;
            ind.true_group_id = info.true_id;
            ind.group1_id = g;
            ind.group2_id = info.floor_id;
            rng::Stream xs(rng::derive_key({seed, static_cast<std::uint64_t>(rng::Role::Covariate),
                                            static_cast<std::uint64_t>(ind.id)}));
            ind.x = {xs.normal()};
            pop.individuals.push_back(std::move(ind));
        }
    }
    for (const auto& ind : pop.individuals) {
        ++pop.group_sizes[ind.true_group_id];
    }
    // group_sizes was used as a counter; it now holds the realized sizes.

    const StructuralParams theta = design_params(design, fe_variant);
    const Dataset full = simulate_outcomes(pop, theta, seed);

    Dataset out;
    out.rows.reserve(full.rows.size());
    for (std::size_t i = 0; i < full.rows.size(); ++i) {
        Row row = full.rows[i];
        const Individual& ind = pop.individuals[i];
        row.group_id = *ind.group1_id;
        row.group2_id = ind.group2_id;
        out.rows.push_back(std::move(row));
    }
    return {std::move(pop), std::move(out)};
}

std::vector<Estimator> default_estimators(MCVariant variant) {
    if (variant == MCVariant::MissingData) {
        return {Estimator::Misspecified, Estimator::Known, Estimator::Unknown,
                Estimator::UnknownParametric};
    }
    return {Estimator::Room, Estimator::Floor, Estimator::Known, Estimator::Uncertain};
}

MCReport run_mc(const MCDesign& design, const std::vector<Estimator>& estimators) {
    design.validate();
    MCReport report;
    report.design = design;
    report.estimators = estimators;

    const bool missing = design.variant == MCVariant::MissingData;
    const bool fe = design.variant == MCVariant::GroupUncertaintyFE;

    for (double point : design.grid) {
        MCPointResult pres;
        pres.point = point;
        pres.rep_seeds.resize(static_cast<std::size_t>(design.replications));
        for (int r = 0; r < design.replications; ++r) {
            pres.rep_seeds[static_cast<std::size_t>(r)] = rng::derive_key(
                {design.master_seed, std::bit_cast<std::uint64_t>(point),
                 static_cast<std::uint64_t>(r)});
        }

        std::vector<RepResult> reps(static_cast<std::size_t>(design.replications));
        parallel_for(design.replications, design.threads, [&](int r) {
            const std::uint64_t seed = pres.rep_seeds[static_cast<std::size_t>(r)];
            RepResult& rep = reps[static_cast<std::size_t>(r)];
            Dataset data;
            try {
                if (missing) {
                    data = gen_missing_data(design, point, seed).second;
                } else {
                    data = gen_group_uncertainty(design, point, seed, fe).second;
                }
            } catch (const std::exception& e) {
                for (Estimator tag : estimators) {
                    rep.errors[estimator_name(tag)] = std::string("generation: ") + e.what();
                }
                return;
            }
            for (Estimator tag : estimators) {
                MomentSpec spec;
                spec.tag = tag;
                spec.impose_beta_zero = design.impose_beta_zero;
                spec.nbar = design.nbar;
                try {
                    const EstimationResult res = fit(data, spec);
                    auto& dest = rep.estimates[estimator_name(tag)];
                    for (const char* key : {"gamma", "delta", "beta", "psi", "rho", "omega"}) {
                        auto it = res.estimates.find(key);
                        if (it != res.estimates.end()) dest[key] = it->second;
                    }
                } catch (const std::exception& e) {
                    rep.errors[estimator_name(tag)] = e.what();
                }
            }
        });

        // Truth values per reported parameter.
        std::map<std::string, double> truth = {{"gamma", design.gamma},
                                               {"delta", design.delta},
                                               {"beta", design.beta}};
        if (missing) {
            truth["rho"] = point;
            truth["omega"] = kDesignOmega;
        } else {
            truth["psi"] = point;
        }

        for (Estimator tag : estimators) {
            const std::string name = estimator_name(tag);
            int n_failed = 0;
            for (const RepResult& rep : reps) {
                if (rep.errors.count(name)) ++n_failed;
            }
            pres.failures[name] = n_failed;

            // Collect per-parameter draws in replication order.
            std::set<std::string> params;
            for (const RepResult& rep : reps) {
                auto it = rep.estimates.find(name);
                if (it == rep.estimates.end()) continue;
                for (const auto& [p, v] : it->second) params.insert(p);
            }
            for (const std::string& p : params) {
                std::vector<double>& draws = pres.draws[name][p];
                draws.assign(static_cast<std::size_t>(design.replications),
                             std::numeric_limits<double>::quiet_NaN());
                double sum = 0.0, sumsq = 0.0;
                int ok = 0;
                const double t = truth.count(p) ? truth.at(p)
                                                : std::numeric_limits<double>::quiet_NaN();
                for (int r = 0; r < design.replications; ++r) {
                    const auto& rep = reps[static_cast<std::size_t>(r)];
                    auto it = rep.estimates.find(name);
                    if (it == rep.estimates.end()) continue;
                    auto pv = it->second.find(p);
                    if (pv == it->second.end()) continue;
                    draws[static_cast<std::size_t>(r)] = pv->second;
                    sum += pv->second;
                    const double err = pv->second - t;
                    sumsq += err * err;
                    ++ok;
                }
                MCCell cell;
                cell.estimator = name;
                cell.param = p;
                cell.truth = t;
                cell.mean = ok > 0 ? sum / ok : std::numeric_limits<double>::quiet_NaN();
                cell.rmse = ok > 0 ? std::sqrt(sumsq / ok) : std::numeric_limits<double>::quiet_NaN();
                cell.reps_ok = ok;
                cell.reps_failed = n_failed;
                pres.cells.push_back(std::move(cell));
            }
            for (const RepResult& rep : reps) {
                auto it = rep.errors.find(name);
                if (it != rep.errors.end() && pres.failure_notes.size() < 8) {
                    pres.failure_notes.push_back(name + ": " + it->second);
                }
            }
        }
        report.points.push_back(std::move(pres));
    }
    return report;
}

void write_report_csv(const MCReport& report, std::ostream& os) {
    os << "variant,m,block,point,estimator,param,truth,mean,rmse,reps_ok,reps_failed\n";
    const char* block = report.design.impose_beta_zero ? "contextual_only" : "with_endogenous";
    os.precision(17);
    for (const auto& point : report.points) {
        for (const auto& cell : point.cells) {
            os << variant_name(report.design.variant) << ',' << report.design.m_target << ','
               << block << ',' << point.point << ',' << cell.estimator << ',' << cell.param
               << ',' << cell.truth << ',' << cell.mean << ',' << cell.rmse << ','
               << cell.reps_ok << ',' << cell.reps_failed << '\n';
        }
    }
}

namespace {

std::string fmt3(double v) {
    if (std::isnan(v)) return "-";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

}  // namespace

void write_report_markdown(const MCReport& report, std::ostream& os) {
    const bool missing = report.design.variant == MCVariant::MissingData;
    os << "## " << variant_name(report.design.variant) << ", M=" << report.design.m_target
       << ", " << (report.design.impose_beta_zero ? "contextual effect only (beta imposed at 0)"
                                                  : "contextual and endogenous effects")
       << ", " << report.design.replications << " replications\n\n";
    os << "| " << (missing ? "rho" : "psi") << " | param |";
    for (Estimator tag : report.estimators) os << ' ' << estimator_name(tag) << " Mean | RMSE |";
    os << '\n';
    os << "|---|---|";
    for (std::size_t i = 0; i < report.estimators.size(); ++i) os << "---|---|";
    os << '\n';

    std::vector<std::string> params = report.design.impose_beta_zero
                                          ? std::vector<std::string>{"delta", "gamma"}
                                          : std::vector<std::string>{"beta", "delta", "gamma"};
    for (const auto& point : report.points) {
        for (const std::string& p : params) {
            os << "| " << point.point << " | " << p << " |";
            for (Estimator tag : report.estimators) {
                const std::string name = estimator_name(tag);
                double mean = std::numeric_limits<double>::quiet_NaN();
                double rmse = std::numeric_limits<double>::quiet_NaN();
                for (const auto& cell : point.cells) {
                    if (cell.estimator == name && cell.param == p) {
                        mean = cell.mean;
                        rmse = cell.rmse;
                    }
                }
                os << ' ' << fmt3(mean) << " | " << fmt3(rmse) << " |";
            }
            os << '\n';
        }
    }
    os << '\n';
    for (const auto& point : report.points) {
        for (const auto& [name, n] : point.failures) {
            if (n > 0) {
                os << "- point " << point.point << ": " << name << " failed on " << n
                   << " replications\n";
            }
        }
    }
}

}  // namespace peerfx
