#pragma once

#include <filesystem>

#include "json.hpp"
#include "monofuse/pipeline.h"
#include "monofuse/synthetic.h"

namespace monofuse {

/// Every tunable of the library in one document. Sections: volume, fit,
/// failure, pose_graph, optimizer, registration, synthetic, plus
/// default_std_fraction.
struct AppConfig {
    PipelineConfig pipeline;
    /// Sequence generated by the synth command.
    SequenceSpec synthetic;

    void validate() const;
};

/// Complete document with every field.
nlohmann::json to_json(const AppConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
AppConfig config_from_json(const nlohmann::json& document);
AppConfig load_config(const std::filesystem::path& path);

}  // namespace monofuse
