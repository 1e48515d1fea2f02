#pragma once

#include <json.hpp>

#include "peerfx/estimators.hpp"
#include "peerfx/identification.hpp"
#include "peerfx/sampling.hpp"

namespace peerfx {

inline void to_json(nlohmann::json& j, const EstimationResult& r) {
    j = nlohmann::json{{"estimator", r.estimator},
                       {"estimates", r.estimates},
                       {"objective", r.objective},
                       {"converged", r.converged},
                       {"iterations", r.iterations},
                       {"starts_used", r.starts_used},
                       {"diagnostics", r.diagnostics},
                       {"warnings", r.warnings}};
}

inline void from_json(const nlohmann::json& j, EstimationResult& r) {
    j.at("estimator").get_to(r.estimator);
    j.at("estimates").get_to(r.estimates);
    j.at("objective").get_to(r.objective);
    j.at("converged").get_to(r.converged);
    j.at("iterations").get_to(r.iterations);
    j.at("starts_used").get_to(r.starts_used);
    j.at("diagnostics").get_to(r.diagnostics);
    j.at("warnings").get_to(r.warnings);
}

inline void to_json(nlohmann::json& j, const ConditionCheck& c) {
    j = nlohmann::json{{"name", c.name},
                       {"required", c.required},
                       {"passed", c.passed},
                       {"detail", c.detail}};
}

inline void from_json(const nlohmann::json& j, ConditionCheck& c) {
    j.at("name").get_to(c.name);
    j.at("required").get_to(c.required);
    j.at("passed").get_to(c.passed);
    j.at("detail").get_to(c.detail);
}

inline const char* id_case_name(IdCase c) {
    switch (c) {
        case IdCase::KnownSize: return "known-size";
        case IdCase::UnknownSize: return "unknown-size";
        case IdCase::UncertainGroups: return "uncertain-groups";
    }
    return "?";
}

inline void to_json(nlohmann::json& j, const IdentificationReport& r) {
    j = nlohmann::json{{"case", id_case_name(r.kind)},
                       {"passed", r.passed},
                       {"reasons", r.reasons}};
}

inline void to_json(nlohmann::json& j, const DeconvolutionResult& r) {
    j = nlohmann::json{{"rho", r.rho},
                       {"nbar", r.dist.nbar},
                       {"q", r.dist.q},
                       {"roundtrip_error", r.roundtrip_error}};
}

inline void from_json(const nlohmann::json& j, DeconvolutionResult& r) {
    j.at("rho").get_to(r.rho);
    j.at("nbar").get_to(r.dist.nbar);
    j.at("q").get_to(r.dist.q);
    j.at("roundtrip_error").get_to(r.roundtrip_error);
}

}  // namespace peerfx
