#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "somcpc/cpc.hpp"
#include "somcpc/data.hpp"
#include "somcpc/metrics.hpp"
#include "somcpc/nn.hpp"
#include "somcpc/som.hpp"

namespace somcpc {

enum class ModelKind { som_cpc, som_vae, desom };
const char* model_kind_name(ModelKind k);
ModelKind model_kind_from_name(const std::string& name);

struct OptimizerConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct SomConfig {
    std::int64_t width = 10;
    std::int64_t height = 10;
    double sigma_0 = 0.0;  // <= 0 selects sqrt(k)/2
    double sigma_end = 2.0;
    NeighborhoodKernel::Kind kernel = NeighborhoodKernel::Kind::gaussian;
    double beta_over_alpha = 0.2;
};

struct TrainConfig {
    ModelKind model = ModelKind::som_cpc;
    double alpha = 1e-2;
    bool stop_grad_som = true;
    CpcConfig cpc;
    OptimizerConfig optimizer;
    std::int64_t batch_size = 128;
    std::int64_t max_epochs = 150;
    std::uint64_t seed = 0;
    SomConfig som;

    void validate() const;
};

/// Per-step scalar losses. total = task + alpha * topo with
/// topo = commitment + neighbor_multiplier * som.
struct LossBundle {
    double task = 0.0;
    double topo = 0.0;
    double commitment = 0.0;
    double som = 0.0;
    double total = 0.0;
    double sigma = 0.0;
};

struct StepRecord {
    std::int64_t step = 0;   // 0-based optimizer step
    std::int64_t epoch = 0;  // 0-based epoch of this step
    LossBundle losses;
};

/// Thrown when a training step produces a non-finite loss or parameter.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(std::int64_t step, const std::string& what)
        : std::runtime_error(what), step_(step) {}
    std::int64_t step() const { return step_; }

private:
    std::int64_t step_;
};

/// Networks + SOM for one configured model.
struct Model {
    ModelKind kind = ModelKind::som_cpc;
    std::int64_t channels = 1;
    std::int64_t window_len = 0;
    std::int64_t feature_dim = 0;
    nn::Sequential encoder;
    std::optional<nn::Sequential> decoder;        // desom + som_vae continuous path
    std::optional<nn::Sequential> decoder_quant;  // som_vae discrete path
    std::optional<nn::Gru> gru;
    std::optional<PredictionHeads> heads;
    SomGrid som;
    std::vector<double> som_grad;

    static Model create(const TrainConfig& cfg, std::int64_t channels, std::int64_t window_len);
    std::vector<nn::ParamRef> params();
    /// Eval-mode embeddings of a window batch, [B, F].
    nn::Mat encode_windows(const Tensor& windows);
    NeighborhoodKernel kernel(std::int64_t total_steps) const;

    TrainConfig cfg;
};

class Adam {
public:
    Adam() = default;
    Adam(OptimizerConfig cfg, std::int64_t param_count);
    void step(const std::vector<nn::ParamRef>& params);

    const std::vector<double>& m() const { return m_; }
    const std::vector<double>& v() const { return v_; }
    std::int64_t t() const { return t_; }
    void restore(std::vector<double> m, std::vector<double> v, std::int64_t t);

private:
    OptimizerConfig cfg_;
    std::vector<double> m_, v_;
    std::int64_t t_ = 0;
};

/// Everything needed to resume training bit-exactly from an epoch boundary.
struct TrainerSnapshot {
    std::int64_t epochs_done = 0;
    std::int64_t steps_done = 0;
    std::vector<double> param_values;  // registry order
    std::vector<double> adam_m, adam_v;
    std::int64_t adam_t = 0;
    std::array<std::uint64_t, 4> rng_state{};
    double val_task = std::numeric_limits<double>::infinity();
    double best_val_task = std::numeric_limits<double>::infinity();
    std::int64_t best_epoch = -1;
};

struct TrainOutput {
    Model model;  // parameters after the last epoch
    TrainerSnapshot last;
    /// Snapshot of the lowest-validation-task epoch; empty when resuming and
    /// no epoch of the resumed segment improved on the checkpointed best.
    std::optional<TrainerSnapshot> best;
    std::vector<StepRecord> history;
    std::int64_t steps_per_epoch = 0;
    std::int64_t total_planned_steps = 0;
};

using StepCallback = std::function<void(const StepRecord&)>;
/// (epoch, val_task_loss, snapshot, is_best) -> keep going? Returning false
/// stops after this epoch, like an interruption; the sigma schedule still
/// spans the configured max_epochs, so a later resume with the same config
/// continues the planned trajectory.
using EpochCallback = std::function<bool(std::int64_t, double, const TrainerSnapshot&, bool)>;

/// Joint one-step training of the configured model. Resumes from a snapshot
/// when given one (the snapshot must come from an identical config/dataset).
TrainOutput train_model(const TrainConfig& cfg, const Dataset& data,
                        const TrainerSnapshot* resume = nullptr,
                        const StepCallback& on_step = nullptr,
                        const EpochCallback& on_epoch = nullptr);

TrainOutput train_som_cpc(const TrainConfig& cfg, const Dataset& data);
TrainOutput train_som_vae(const TrainConfig& cfg, const Dataset& data);
TrainOutput train_desom(const TrainConfig& cfg, const Dataset& data);

/// One SOM-CPC optimizer step's forward/backward: encode contexts,
/// positives and negatives, predict futures through the heads, quantize the
/// context on the SOM, and accumulate gradients of task + alpha * topo.
/// Gradients land in the model's slots; the caller runs the optimizer.
LossBundle somcpc_train_step(Model& model, const ContrastiveBatch& batch,
                             const NeighborhoodKernel& kern, std::int64_t sigma_step,
                             Rng& dropout_rng);

/// One SOM-VAE / DESOM step: reconstruction task loss (two decoders with a
/// straight-through discrete path for som_vae) plus the split topological
/// loss.
LossBundle autoencoder_train_step(Model& model, const Tensor& x, const NeighborhoodKernel& kern,
                                  std::int64_t sigma_step, Rng& dropout_rng);

std::int64_t steps_per_epoch(const TrainConfig& cfg, const Dataset& data);

/// Task loss (InfoNCE or reconstruction) of the current parameters on a
/// split, eval mode, deterministic sampling.
double task_loss_on_split(Model& model, const Dataset& data, Split split);

/// Winner assignment (+ optional top-2) of every window of a split. With an
/// AR module, the first L windows of each series have no context and are
/// skipped.
NodeAssignment assign_nodes(Model& model, const LabeledWindowSet& set,
                            Top2Assignment* top2 = nullptr);

/// All metrics for one split, with the node coloring fitted on train.
MetricsReport evaluate_checkpoint(Model& model, const Dataset& data, Split split);

/// Latent vectors + labels of a split, for external projection tools.
struct LatentExport {
    std::int64_t feature_dim = 0;
    std::vector<double> latents;  // [num, F]
    std::vector<double> labels;
    std::vector<std::int64_t> series_id, window_index;
};
LatentExport export_latents(Model& model, const LabeledWindowSet& set);

// -- persistence --------------------------------------------------------

void write_loss_csv(const std::string& path, const std::vector<StepRecord>& history);
std::vector<StepRecord> read_loss_csv(const std::string& path);

nlohmann::ordered_json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::ordered_json& j);

void save_checkpoint(const std::string& path, const TrainConfig& cfg, std::int64_t channels,
                     std::int64_t window_len, const TrainerSnapshot& snapshot);

struct LoadedCheckpoint {
    TrainConfig cfg;
    std::int64_t channels = 1;
    std::int64_t window_len = 0;
    TrainerSnapshot snapshot;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

/// Rebuilds a model and installs the snapshot parameters.
Model model_from_checkpoint(const LoadedCheckpoint& ckpt);

}  // namespace somcpc
