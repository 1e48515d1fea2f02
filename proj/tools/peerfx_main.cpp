#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "peerfx/csv.hpp"
#include "peerfx/estimators.hpp"
#include "peerfx/identification.hpp"
#include "peerfx/json_io.hpp"
#include "peerfx/model.hpp"
#include "peerfx/monte_carlo.hpp"
#include "peerfx/sampling.hpp"
#include "peerfx/version.hpp"

namespace {

using nlohmann::json;

std::string fnv_hex(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

json provenance(const std::string& command, std::uint64_t seed, const json& config) {
    return json{{"tool", "peerfx"},
                {"version", peerfx::kVersion},
                {"command", command},
                {"seed", seed},
                {"config_hash", fnv_hex(config.dump())}};
}

std::string provenance_comment(const json& prov) {
    return "peerfx " + std::string(peerfx::kVersion) + " command=" +
           prov.at("command").get<std::string>() +
           " seed=" + std::to_string(prov.at("seed").get<std::uint64_t>()) +
           " config=" + prov.at("config_hash").get<std::string>();
}

void write_json_output(const json& j, const std::string& path) {
    if (path.empty() || path == "-") {
        std::cout << j.dump(2) << std::endl;
        return;
    }
    std::ofstream os(path);
    if (!os) throw peerfx::DataError("cannot open output file '" + path + "'");
    os << j.dump(2) << '\n';
}

// Pre-scan for --config and load JSON defaults; explicit flags still win
// because values from the file are installed before argv is parsed.
json load_config(int argc, char** argv) {
    std::string path;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--config" && i + 1 < argc) {
            path = argv[i + 1];
        } else if (a.rfind("--config=", 0) == 0) {
            path = a.substr(9);
        }
    }
    if (path.empty()) return json::object();
    std::ifstream is(path);
    if (!is) throw peerfx::DataError("cannot open config file '" + path + "'");
    json cfg = json::parse(is, nullptr, true, true);
    if (!cfg.is_object()) throw peerfx::DataError("config file must hold a JSON object");
    return cfg;
}

template <typename T>
void config_default(const json& cfg, const char* cmd, const char* key, T& var) {
    if (cfg.contains(cmd) && cfg[cmd].contains(key)) {
        var = cfg[cmd][key].get<T>();
    }
}

peerfx::MCDesign table_design(int table, long m, int reps, std::uint64_t seed, int threads,
                              bool impose_beta_zero) {
    peerfx::MCDesign d;
    if (table == 1) {
        d.variant = peerfx::MCVariant::MissingData;
        d.grid = {0.3, 0.5, 0.7, 0.9, 1.0};
    } else {
        d.variant = table == 2 ? peerfx::MCVariant::GroupUncertainty
                               : peerfx::MCVariant::GroupUncertaintyFE;
        d.grid = {0.2, 0.4, 0.6, 0.8};
    }
    d.m_target = m;
    d.replications = reps;
    d.master_seed = seed;
    d.impose_beta_zero = impose_beta_zero;
    d.threads = threads;
    return d;
}

int run(int argc, char** argv) {
    const json cfg = load_config(argc, argv);

    CLI::App app{"peerfx: simulation and estimation for group peer effects under "
                 "missing members and uncertain group definitions"};
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("--config", config_path, "JSON config file with per-command defaults");
    auto add_config_opt = [&config_path](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file with per-command defaults");
    };

    // ---- simulate ----
    auto* sim = app.add_subcommand("simulate", "generate a synthetic dataset CSV");
    add_config_opt(sim);
    std::string sim_design = "missing";
    long sim_m = 1600;
    double sim_rho = 1.0, sim_psi = 0.5;
    std::uint64_t sim_seed = 1;
    double sim_gamma = 1.0, sim_delta = 0.5, sim_beta = 0.0;
    bool sim_true_size = false;
    std::string sim_out;
    config_default(cfg, "simulate", "design", sim_design);
    config_default(cfg, "simulate", "m", sim_m);
    config_default(cfg, "simulate", "rho", sim_rho);
    config_default(cfg, "simulate", "psi", sim_psi);
    config_default(cfg, "simulate", "seed", sim_seed);
    config_default(cfg, "simulate", "gamma", sim_gamma);
    config_default(cfg, "simulate", "delta", sim_delta);
    config_default(cfg, "simulate", "beta", sim_beta);
    config_default(cfg, "simulate", "with-true-size", sim_true_size);
    config_default(cfg, "simulate", "out", sim_out);
    sim->add_option("--design", sim_design, "missing | uncertain | uncertain-fe")
        ->check(CLI::IsMember({"missing", "uncertain", "uncertain-fe"}));
    sim->add_option("--m", sim_m, "target observed sample size");
    sim->add_option("--rho", sim_rho, "observation probability (missing design)");
    sim->add_option("--psi", sim_psi, "probability the smaller candidate is the group");
    sim->add_option("--seed", sim_seed, "random seed");
    sim->add_option("--gamma", sim_gamma, "own effect");
    sim->add_option("--delta", sim_delta, "contextual effect");
    sim->add_option("--beta", sim_beta, "endogenous effect");
    sim->add_flag("--with-true-size", sim_true_size, "include the true_group_size column");
    sim->add_option("--out", sim_out, "output CSV path")->required();

    // ---- estimate ----
    auto* est = app.add_subcommand("estimate", "fit an estimator on a dataset CSV");
    add_config_opt(est);
    std::string est_data, est_name = "known", est_out;
    bool est_beta_zero = false, est_complete = false;
    int est_nbar = 0;
    double est_psi = -1.0;
    config_default(cfg, "estimate", "data", est_data);
    config_default(cfg, "estimate", "estimator", est_name);
    config_default(cfg, "estimate", "impose-beta-zero", est_beta_zero);
    config_default(cfg, "estimate", "nbar", est_nbar);
    config_default(cfg, "estimate", "psi", est_psi);
    config_default(cfg, "estimate", "use-complete-indicator", est_complete);
    config_default(cfg, "estimate", "out", est_out);
    est->add_option("--data", est_data, "dataset CSV")->required();
    est->add_option("--estimator", est_name,
                    "missspecified | known | unknown | unknown-p | room | floor | uncertain")
        ->check(CLI::IsMember({"missspecified", "misspecified", "known", "unknown", "unknown-p",
                               "unknown_parametric", "room", "floor", "uncertain",
                               "uncertain_known_psi_case"}));
    est->add_flag("--impose-beta-zero", est_beta_zero, "fix the endogenous effect at zero");
    est->add_option("--nbar", est_nbar, "upper bound on the true group size (0 = max observed)");
    est->add_option("--psi", est_psi, "fix the mixture weight (uncertain estimator)");
    est->add_flag("--use-complete-indicator", est_complete,
                  "add the complete-group moment (needs true sizes)");
    est->add_option("--out", est_out, "output JSON path (default stdout)");

    // ---- deconvolve ----
    auto* dec = app.add_subcommand("deconvolve",
                                   "recover (rho, size distribution) from observed size counts");
    add_config_opt(dec);
    std::string dec_data, dec_out;
    config_default(cfg, "deconvolve", "data", dec_data);
    config_default(cfg, "deconvolve", "out", dec_out);
    dec->add_option("--data", dec_data, "CSV with columns size,count")->required();
    dec->add_option("--out", dec_out, "output JSON path (default stdout)");

    // ---- idcheck ----
    auto* idc = app.add_subcommand("idcheck", "identification diagnostics for a dataset");
    add_config_opt(idc);
    std::string idc_data, idc_case = "auto", idc_out;
    double idc_gamma = 0.0, idc_delta = 0.0, idc_beta = 0.0;
    bool idc_have_theta = false;
    config_default(cfg, "idcheck", "data", idc_data);
    config_default(cfg, "idcheck", "case", idc_case);
    config_default(cfg, "idcheck", "out", idc_out);
    idc->add_option("--data", idc_data, "dataset CSV")->required();
    idc->add_option("--case", idc_case, "auto | known | unknown | uncertain")
        ->check(CLI::IsMember({"auto", "known", "unknown", "uncertain"}));
    auto* tg = idc->add_option("--gamma", idc_gamma, "candidate own effect");
    auto* td = idc->add_option("--delta", idc_delta, "candidate contextual effect");
    auto* tb = idc->add_option("--beta", idc_beta, "candidate endogenous effect");
    idc->add_option("--out", idc_out, "output JSON path (default stdout)");

    // ---- mc ----
    auto* mc = app.add_subcommand("mc", "run a replication study and write table files");
    add_config_opt(mc);
    int mc_table = 1, mc_reps = 200, mc_threads = 1;
    long mc_m = 1600;
    std::uint64_t mc_seed = 1;
    std::string mc_out = ".";
    bool mc_contextual_only = false;
    config_default(cfg, "mc", "table", mc_table);
    config_default(cfg, "mc", "m", mc_m);
    config_default(cfg, "mc", "reps", mc_reps);
    config_default(cfg, "mc", "seed", mc_seed);
    config_default(cfg, "mc", "out", mc_out);
    config_default(cfg, "mc", "threads", mc_threads);
    config_default(cfg, "mc", "contextual-only", mc_contextual_only);
    mc->add_option("--table", mc_table, "1: missing data, 2: uncertain groups, 3: uncertain groups (FE)")
        ->check(CLI::IsMember({1, 2, 3}));
    mc->add_option("--m", mc_m, "target observed sample size (1600 or 8000 for the reference tables)");
    mc->add_option("--reps", mc_reps, "replications per design point");
    mc->add_option("--seed", mc_seed, "master seed");
    mc->add_option("--out", mc_out, "output directory (PEERFX_OUT_DIR overrides)");
    mc->add_option("--threads", mc_threads, "worker threads (results identical for any count)");
    mc->add_flag("--contextual-only", mc_contextual_only,
                 "skip the block that also estimates the endogenous effect");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    if (sim->parsed()) {
        json echo{{"design", sim_design}, {"m", sim_m},     {"rho", sim_rho},
                  {"psi", sim_psi},       {"seed", sim_seed}, {"gamma", sim_gamma},
                  {"delta", sim_delta},   {"beta", sim_beta}, {"with_true_size", sim_true_size}};
        const json prov = provenance("simulate", sim_seed, echo);
        peerfx::MCDesign d;
        d.m_target = sim_m;
        d.gamma = sim_gamma;
        d.delta = sim_delta;
        d.beta = sim_beta;
        peerfx::Dataset data;
        if (sim_design == "missing") {
            d.variant = peerfx::MCVariant::MissingData;
            data = peerfx::gen_missing_data(d, sim_rho, sim_seed).second;
        } else {
            d.variant = sim_design == "uncertain" ? peerfx::MCVariant::GroupUncertainty
                                                  : peerfx::MCVariant::GroupUncertaintyFE;
            data = peerfx::gen_group_uncertainty(d, sim_psi, sim_seed,
                                                 sim_design == "uncertain-fe")
                       .second;
        }
        if (!sim_true_size) {
            for (auto& row : data.rows) row.true_group_size.reset();
        }
        std::ofstream os(sim_out);
        if (!os) throw peerfx::DataError("cannot open output file '" + sim_out + "'");
        peerfx::write_dataset_csv(data, os, provenance_comment(prov));
        std::cout << "wrote " << data.rows.size() << " rows to " << sim_out << std::endl;
        return 0;
    }

    if (est->parsed()) {
        const peerfx::Dataset data = peerfx::read_dataset_csv_file(est_data);
        peerfx::MomentSpec spec;
        spec.tag = peerfx::estimator_from_name(est_name);
        spec.impose_beta_zero = est_beta_zero;
        spec.nbar = est_nbar;
        spec.use_complete_indicator = est_complete;
        if (est_psi >= 0.0) {
            spec.psi_fixed = est_psi;
            if (spec.tag == peerfx::Estimator::Uncertain) {
                spec.tag = peerfx::Estimator::UncertainKnownPsi;
            }
        }
        const peerfx::EstimationResult result = peerfx::fit(data, spec);
        json echo{{"data", est_data},
                  {"estimator", est_name},
                  {"impose_beta_zero", est_beta_zero},
                  {"nbar", est_nbar},
                  {"psi", est_psi},
                  {"use_complete_indicator", est_complete}};
        json out = result;
        out["provenance"] = provenance("estimate", 0, echo);
        write_json_output(out, est_out);
        return 0;
    }

    if (dec->parsed()) {
        const std::vector<long> counts = peerfx::read_size_counts_csv_file(dec_data);
        double total = 0.0;
        for (long c : counts) total += static_cast<double>(c);
        if (total <= 0.0) throw peerfx::DataError("deconvolve: all counts are zero");
        std::vector<double> pmf(counts.size());
        for (std::size_t i = 0; i < counts.size(); ++i) {
            pmf[i] = static_cast<double>(counts[i]) / total;
        }
        const peerfx::DeconvolutionResult res = peerfx::deconvolve_exact(pmf);
        json echo{{"data", dec_data}};
        json out = res;
        out["groups_total"] = total;
        out["provenance"] = provenance("deconvolve", 0, echo);
        write_json_output(out, dec_out);
        return 0;
    }

    if (idc->parsed()) {
        const peerfx::Dataset data = peerfx::read_dataset_csv_file(idc_data);
        std::string kind = idc_case;
        if (kind == "auto") {
            kind = data.has_group2() ? "uncertain"
                                     : (data.has_true_sizes() ? "known" : "unknown");
        }
        peerfx::IdentificationInput input;
        if (kind == "uncertain") {
            input.kind = peerfx::IdCase::UncertainGroups;
            std::map<long, int> n1, n2;
            std::map<long, long> floor_of;
            for (const auto& r : data.rows) {
                if (!r.group2_id) {
                    throw peerfx::DataError("idcheck: uncertain case needs the group2_id column");
                }
                ++n1[r.group_id];
                ++n2[*r.group2_id];
                floor_of[r.group_id] = *r.group2_id;
            }
            std::map<std::pair<int, int>, long> pair_counts;
            for (const auto& [room, floor] : floor_of) {
                ++pair_counts[{n1.at(room), n2.at(floor)}];
            }
            std::vector<std::tuple<int, int, long>> pairs;
            for (const auto& [p, c] : pair_counts) pairs.emplace_back(p.first, p.second, c);
            input.graph = peerfx::build_support_graph(pairs);
        } else if (kind == "known") {
            input.kind = peerfx::IdCase::KnownSize;
            std::set<int> sizes;
            for (const auto& r : data.rows) {
                if (r.true_group_size) sizes.insert(static_cast<int>(*r.true_group_size));
            }
            if (sizes.empty()) {
                throw peerfx::DataError("idcheck: known case needs the true_group_size column");
            }
            input.support.assign(sizes.begin(), sizes.end());
        } else {
            input.kind = peerfx::IdCase::UnknownSize;
            std::map<long, long> count_by_group;
            for (const auto& r : data.rows) ++count_by_group[r.group_id];
            std::map<int, long> size_counts;
            for (const auto& [g, n] : count_by_group) ++size_counts[static_cast<int>(n)];
            double total = 0.0;
            int max_size = 0;
            for (const auto& [n, c] : size_counts) {
                total += static_cast<double>(c);
                max_size = std::max(max_size, n);
            }
            std::vector<double> pmf(static_cast<std::size_t>(max_size), 0.0);
            for (const auto& [n, c] : size_counts) {
                pmf[static_cast<std::size_t>(n - 1)] = static_cast<double>(c) / total;
            }
            std::set<int> support;
            try {
                const peerfx::DeconvolutionResult res = peerfx::deconvolve_exact(pmf);
                for (int m = 2; m <= res.dist.nbar; ++m) {
                    if (res.dist.at(m) > 1e-6) support.insert(m);
                }
            } catch (const std::exception&) {
                for (const auto& [n, c] : size_counts) {
                    if (n >= 2) support.insert(n);
                }
            }
            input.support.assign(support.begin(), support.end());
        }
        if (tg->count() || td->count() || tb->count()) {
            if (!(tg->count() && td->count() && tb->count())) {
                throw peerfx::DataError("idcheck: provide --gamma, --delta and --beta together");
            }
            peerfx::StructuralParams theta;
            theta.gamma = {idc_gamma};
            theta.delta = {idc_delta};
            theta.beta = idc_beta;
            input.theta = theta;
            idc_have_theta = true;
        }
        const peerfx::IdentificationReport report = peerfx::check_identification(input);
        json echo{{"data", idc_data}, {"case", kind}, {"theta_supplied", idc_have_theta}};
        json out = report;
        out["provenance"] = provenance("idcheck", 0, echo);
        write_json_output(out, idc_out);
        return 0;
    }

    if (mc->parsed()) {
        if (const char* env = std::getenv("PEERFX_OUT_DIR"); env && *env) {
            mc_out = env;
        }
        std::filesystem::create_directories(mc_out);
        json echo{{"table", mc_table}, {"m", mc_m},           {"reps", mc_reps},
                  {"seed", mc_seed},   {"threads", mc_threads}, {"contextual_only", mc_contextual_only}};
        const json prov = provenance("mc", mc_seed, echo);

        const std::string stem =
            mc_out + "/table" + std::to_string(mc_table) + "_m" + std::to_string(mc_m);
        std::ofstream md(stem + ".md");
        if (!md) throw peerfx::DataError("cannot open output file '" + stem + ".md'");
        md << "<!-- " << provenance_comment(prov) << " -->\n\n";

        for (const bool contextual : {true, false}) {
            if (!contextual && mc_contextual_only) continue;
            const peerfx::MCDesign design =
                table_design(mc_table, mc_m, mc_reps, mc_seed, mc_threads, contextual);
            const peerfx::MCReport report =
                peerfx::run_mc(design, peerfx::default_estimators(design.variant));
            const std::string block = contextual ? "contextual" : "endogenous";
            std::ofstream cs(stem + "_" + block + ".csv");
            if (!cs) throw peerfx::DataError("cannot write CSV under '" + mc_out + "'");
            cs << "# " << provenance_comment(prov) << '\n';
            peerfx::write_report_csv(report, cs);
            peerfx::write_report_markdown(report, md);
            std::cout << "wrote " << stem + "_" + block + ".csv" << std::endl;
        }
        std::ofstream cfg_out(stem + ".config.json");
        json cfg_echo = echo;
        cfg_echo["provenance"] = prov;
        cfg_out << cfg_echo.dump(2) << '\n';
        std::cout << "wrote " << stem + ".md" << std::endl;
        return 0;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const peerfx::DataError& e) {
        std::cerr << "data error: " << e.what() << std::endl;
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "data error: " << e.what() << std::endl;
        return 2;
    } catch (const peerfx::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << std::endl;
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 3;
    }
}
