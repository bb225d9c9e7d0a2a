#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "somcpc/data.hpp"
#include "somcpc/som.hpp"

namespace somcpc {

/// Winner node per window plus the ground truth used by the external
/// metrics. Windows appear in dataset order (series-contiguous), which is
/// what the smoothness metric relies on.
struct NodeAssignment {
    std::int64_t k = 0;
    std::vector<std::int64_t> node_index;
    std::vector<double> label;
    std::vector<std::int64_t> series_id;
    std::vector<std::int64_t> window_index;
    Split split_tag = Split::train;

    std::int64_t num_windows() const { return static_cast<std::int64_t>(node_index.size()); }
    void validate() const;
};

/// Second-best winners, for the topographic error.
struct Top2Assignment {
    std::vector<std::int64_t> best;
    std::vector<std::int64_t> second;
};

/// Per-node label summary fitted on the training split only: categorical
/// mode (lowest label wins ties), regression median, hit count and mean
/// window index (time of occurrence). Unassigned nodes carry NaN labels.
struct NodeColoring {
    std::int64_t k = 0;
    std::vector<double> mode_label;
    std::vector<double> median_label;
    std::vector<std::int64_t> count;
    std::vector<double> mean_window_index;
    double global_median = 0.0;  // fallback for windows landing on unassigned nodes

    static NodeColoring fit(const NodeAssignment& train_assignment);
};

/// Per-node label/count/time summary of an arbitrary split, for exports and
/// plots. Unlike NodeColoring::fit this carries no train-only guarantee and
/// must not be used to predict labels.
NodeColoring node_stats(const NodeAssignment& assignment);

/// Fraction of windows covered by their node's majority label class.
/// Classes are the distinct label values.
double purity(const NodeAssignment& a);

/// Mutual information between node and label class, normalized by the
/// arithmetic mean of the two entropies; 0/0 is defined as 0.
double nmi(const NodeAssignment& a);

/// Agreement between coloring-predicted and true label classes, corrected
/// for chance. Windows on unassigned nodes predict a reserved "unknown"
/// class that never matches the truth.
double cohens_kappa(const NodeAssignment& eval, const NodeColoring& coloring);

/// Mean squared difference between window labels and the train-median label
/// of their node (global train median for unassigned nodes).
double se_target(const NodeAssignment& eval, const NodeColoring& coloring);

/// Fraction of windows whose two best matching nodes are not grid
/// neighbours. Primary convention: 4-connected (unit grid distance);
/// eight_connected switches to the diagonal-inclusive variant. k = 1 yields
/// 0 and sets *degenerate when provided.
double topographic_error(const Top2Assignment& top2, const SomGrid& grid,
                         bool eight_connected = false, bool* degenerate = nullptr);

struct L2SmoothResult {
    double mean = 0.0;
    double stddev = 0.0;
};

/// Mean grid-coordinate distance between consecutive windows' winners,
/// averaged per series; mean and population std across series.
L2SmoothResult l2_smooth(const NodeAssignment& a, const SomGrid& grid);

/// All external/topological metrics for one model on one split.
struct MetricsReport {
    double purity = 0.0;
    double nmi = 0.0;
    double kappa = 0.0;
    double se_target = 0.0;
    double te = 0.0;
    double te_8connected = 0.0;
    double l2_smooth_mean = 0.0;
    double l2_smooth_std = 0.0;
    std::int64_t k = 0;
    std::int64_t collapsed_nodes = 0;  // nodes unused by this split
    bool collapse_warning = false;

    nlohmann::ordered_json to_json() const;
};

MetricsReport compute_metrics(const NodeAssignment& eval, const Top2Assignment& eval_top2,
                              const NodeColoring& coloring, const SomGrid& grid);

}  // namespace somcpc
