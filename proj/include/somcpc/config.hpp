#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "somcpc/data.hpp"
#include "somcpc/trainer.hpp"

namespace somcpc {

/// Declarative experiment description: dataset source, model/training
/// settings, metric splits, optional sweep axes. Unknown keys are rejected
/// with their JSON path.
struct RunConfig {
    std::optional<std::string> dataset_path;
    std::optional<SyntheticConfig> synthetic;
    TrainConfig model;
    std::vector<Split> metrics_splits{Split::test};
    std::optional<std::string> output_dir;
    std::vector<double> sweep_alpha;
    std::vector<NeighborhoodKernel::Kind> sweep_kernel;

    bool has_sweep() const { return !sweep_alpha.empty() || !sweep_kernel.empty(); }
};

/// Parses and validates a config file. Throws std::runtime_error with
/// field-path (and, for syntax errors, byte-position) diagnostics.
RunConfig parse_run_config(const std::string& path);
RunConfig run_config_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json run_config_to_json(const RunConfig& cfg);

nlohmann::ordered_json synthetic_config_to_json(const SyntheticConfig& cfg);

}  // namespace somcpc
