#pragma once

#include <cstdint>
#include <vector>

#include "somcpc/data.hpp"
#include "somcpc/nn.hpp"
#include "somcpc/tensor.hpp"

namespace somcpc {
class Rng;

struct CpcConfig {
    enum class NegativeScope { whole_train_set, same_series };

    std::int64_t num_predictions = 3;  // P
    std::int64_t num_negatives = 3;    // N per positive
    NegativeScope negative_scope = NegativeScope::whole_train_set;
    bool use_ar = false;
    std::int64_t context_length = 0;  // L past windows aggregated by the AR module

    void validate() const;
};

/// One training batch: anchor context sequences, their P future windows and
/// N negatives per future slot. Logical shapes are [bs, L+1, ch, T],
/// [bs, P, ch, T] and [bs, P, N, ch, T]; storage folds the leading axes.
struct ContrastiveBatch {
    std::int64_t batch = 0, context_steps = 0, num_predictions = 0, num_negatives = 0;
    std::int64_t channels = 0, window_len = 0;

    Tensor context_inputs;   // [bs*(L+1), ch, T]
    Tensor positive_inputs;  // [bs*P, ch, T]
    Tensor negative_inputs;  // [bs*P*N, ch, T]

    // provenance (series id, window index) per slot
    std::vector<std::int64_t> anchor_series, anchor_window;      // [bs]
    std::vector<std::int64_t> positive_series, positive_window;  // [bs*P]
    std::vector<std::int64_t> negative_series, negative_window;  // [bs*P*N]
};

/// Flat admissible anchor positions (window must have L past and P future
/// windows within its series). Throws if any series is too short or the set
/// is empty.
std::vector<std::int64_t> admissible_anchors(const LabeledWindowSet& data, const CpcConfig& cfg);

/// Assembles a batch for the given anchors; negatives drawn from rng per
/// cfg.negative_scope. A negative may collide with the anchor but never with
/// its own positive slot.
ContrastiveBatch assemble_contrastive_batch(const LabeledWindowSet& data, const CpcConfig& cfg,
                                            const std::vector<std::int64_t>& anchors, Rng& rng);

/// Anchors drawn uniformly over all admissible positions.
ContrastiveBatch sample_contrastive_batch(const LabeledWindowSet& data, const CpcConfig& cfg,
                                          Rng& rng, std::int64_t batch_size);

/// Per-horizon bilinear score heads W_p, initialized to identity plus small
/// uniform noise.
class PredictionHeads {
public:
    PredictionHeads() = default;
    PredictionHeads(std::int64_t num_predictions, std::int64_t feature_dim, Rng& init_rng);

    std::int64_t num_predictions() const { return P_; }
    std::int64_t feature_dim() const { return F_; }
    double* head(std::int64_t p) { return w_.data() + p * F_ * F_; }
    const double* head(std::int64_t p) const { return w_.data() + p * F_ * F_; }
    double* head_grad(std::int64_t p) { return gw_.data() + p * F_ * F_; }
    std::vector<nn::ParamRef> params();

private:
    std::int64_t P_ = 0, F_ = 0;
    std::vector<double> w_, gw_;
};

struct InfoNceResult {
    double loss = 0.0;
    nn::Mat dz_pos;    // [bs*P, F]
    nn::Mat dz_neg;    // [bs*P*N, F]
    nn::Mat dcontext;  // [bs, F]
};

/// InfoNCE over bilinear scores z' W_p c: mean over batch and horizons of
/// -log softmax of the positive among {positive} + N negatives. Gradients
/// for W_p accumulate into the heads' slots; set want_grads = false for a
/// pure evaluation. Log-sum-exp is max-shifted, so uniform logit offsets
/// cancel. Throws on non-finite logits.
InfoNceResult infonce_loss(const double* z_pos, const double* z_neg, const double* context,
                           std::int64_t bs, std::int64_t P, std::int64_t N, std::int64_t F,
                           PredictionHeads& heads, bool want_grads = true);

/// Context for a window sequence [bs, L+1, ch, T]: GRU aggregate when
/// use_ar, otherwise the encoding of the last window.
nn::Mat context_vector(nn::Sequential& encoder, nn::Gru* gru, const CpcConfig& cfg,
                       const Tensor& window_sequence, bool train = false,
                       Rng* dropout_rng = nullptr);

}  // namespace somcpc
