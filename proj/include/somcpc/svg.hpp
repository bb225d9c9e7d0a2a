#pragma once

#include <string>
#include <vector>

#include "somcpc/metrics.hpp"
#include "somcpc/som.hpp"
#include "somcpc/trainer.hpp"

namespace somcpc {

/// SOM heatmap: one cell per node, colored by its summary label; unassigned
/// nodes stay uncolored. size_by_count shrinks cells with the square root of
/// their relative hit count.
std::string som_heatmap_svg(const SomGrid& grid, const NodeColoring& stats,
                            const std::string& title, bool size_by_count);

/// Task-loss vs topological-loss trajectory, one point per optimizer step.
/// The plot group carries data-xmin/xmax/ymin/ymax attributes equal to the
/// logged extrema. Throws on an empty history.
std::string trajectory_svg(const std::vector<StepRecord>& history, const std::string& title);

nlohmann::ordered_json node_coloring_to_json(const NodeColoring& c);

}  // namespace somcpc
