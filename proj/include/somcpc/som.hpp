#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <json.hpp>

namespace somcpc {
class Rng;

/// Trainable quantization codebook pinned to a fixed 2D grid. Node i sits at
/// grid coordinate (i mod width, i div width), unit spacing, row-major.
struct SomGrid {
    std::int64_t width = 0;
    std::int64_t height = 0;
    std::int64_t feature_dim = 0;
    std::vector<double> prototypes;   // [k, F]
    std::vector<double> grid_coords;  // [k, 2], immutable after construction

    static SomGrid create(std::int64_t width, std::int64_t height, std::int64_t feature_dim,
                          Rng& init_rng);

    std::int64_t k() const { return width * height; }
    const double* proto(std::int64_t i) const { return prototypes.data() + i * feature_dim; }
    double* proto(std::int64_t i) { return prototypes.data() + i * feature_dim; }
    double coord_x(std::int64_t i) const { return grid_coords[2 * i]; }
    double coord_y(std::int64_t i) const { return grid_coords[2 * i + 1]; }
};

/// Exponentially decaying neighborhood width: sigma(n) = sigma_0 exp(-n/lambda),
/// with lambda fixed so that sigma(n_max) = sigma_end.
struct SigmaSchedule {
    double sigma_0 = 1.0;
    double sigma_end = 1.0;
    std::int64_t n_max = 1;
    double lambda = 1.0;

    static SigmaSchedule make(double sigma_0, double sigma_end, std::int64_t n_max);
};

double sigma_at(const SigmaSchedule& s, std::int64_t n);

struct NeighborhoodKernel {
    enum class Kind { gaussian, plus };
    Kind kind = Kind::gaussian;
    SigmaSchedule schedule;          // gaussian only
    double beta_over_alpha = 0.2;    // plus only: weight of the four direct neighbors

    /// Multiplier applied to the neighbor (SOM) term when the topological
    /// loss is evaluated in split form: beta/alpha for the plus kernel,
    /// 1 for the Gaussian (whose weights already carry the decay).
    double neighbor_multiplier() const {
        return kind == Kind::plus ? beta_over_alpha : 1.0;
    }
};

/// Index of the nearest prototype (Euclidean), ties broken by lowest index.
std::int64_t winner(const SomGrid& grid, const double* z, std::int64_t len);

/// Best and second-best winners, for the topographic error.
std::pair<std::int64_t, std::int64_t> winner_top2(const SomGrid& grid, const double* z,
                                                  std::int64_t len);

/// Euclidean distance between the fixed grid coordinates of nodes j and i.
double grid_distance(const SomGrid& grid, std::int64_t j, std::int64_t i);

/// Neighborhood weight of node i given winner j at schedule step n; 1 at the
/// winner for every kernel kind.
double kernel_weight(const NeighborhoodKernel& kernel, std::int64_t n, const SomGrid& grid,
                     std::int64_t j, std::int64_t i);

struct TopoLossResult {
    double loss = 0.0;
    std::vector<double> dprototypes;     // [k, F]
    std::vector<double> dz;              // [B, F]; empty when z_grad = false
    std::vector<std::int64_t> winners;   // [B]
};

/// Kernel-weighted quantization error, averaged over the batch. Kernel
/// weights are constants of the winner index: no gradient flows through the
/// weights or through winner selection.
TopoLossResult topo_loss(const SomGrid& grid, const NeighborhoodKernel& kernel, std::int64_t n,
                         const double* z, std::int64_t batch, std::int64_t feature_dim,
                         bool z_grad = true);

struct SplitLossResult {
    double commitment = 0.0;
    double som = 0.0;
    std::vector<double> dprototypes;    // gradient of commitment + mult * som
    std::vector<double> dz;             // [B, F]
    std::vector<std::int64_t> winners;  // [B]
};

/// Commitment term (winner only, gradients to z and winning prototype) and
/// SOM term (neighbors only; z detached when stop_grad_som is set).
/// commitment + neighbor_multiplier() * som equals topo_loss.
SplitLossResult commitment_and_som_losses(const SomGrid& grid, const NeighborhoodKernel& kernel,
                                          std::int64_t n, const double* z, std::int64_t batch,
                                          std::int64_t feature_dim, bool stop_grad_som);

/// Classic per-sample Kohonen step; reference oracle for the gradient path.
SomGrid kohonen_update(const SomGrid& grid, const NeighborhoodKernel& kernel, std::int64_t n,
                       double eta, const double* z, std::int64_t feature_dim);

nlohmann::ordered_json som_to_json(const SomGrid& grid);
SomGrid som_from_json(const nlohmann::ordered_json& j);

}  // namespace somcpc
