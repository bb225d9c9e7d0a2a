#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "somcpc/tensor.hpp"

namespace somcpc {
class Rng;
namespace nn {

enum class Act { none, relu, leaky_relu, tanh };

/// One architecture row: layer kind plus its hyperparameters.
struct LayerSpec {
    enum class Kind {
        conv1d,
        conv_transpose1d,
        maxpool1d,
        dropout,
        fully_connected,
        flatten,
        unflatten,
        activation
    };
    Kind kind = Kind::activation;
    std::int64_t channels = 0;   // conv/conv_transpose/fully_connected output size
    std::int64_t kernel = 0;
    std::int64_t stride = 1;
    std::int64_t dilation = 1;
    std::int64_t padding = 0;    // ignored when same_padding is set
    bool same_padding = false;   // stride-1 length-preserving; even kernels pad left-heavy
    Act act = Act::none;
    double rate = 0.0;           // dropout
    std::int64_t unflatten_channels = 0;

    static LayerSpec conv(std::int64_t channels, std::int64_t kernel, Act act,
                          std::int64_t stride = 1, std::int64_t padding = 0,
                          bool same_padding = true, std::int64_t dilation = 1);
    static LayerSpec conv_transpose(std::int64_t channels, std::int64_t kernel,
                                    std::int64_t stride, Act act);
    static LayerSpec maxpool(std::int64_t kernel, std::int64_t stride);
    static LayerSpec dropout(double rate);
    static LayerSpec fc(std::int64_t out, Act act);
    static LayerSpec flatten();
    static LayerSpec unflatten(std::int64_t channels);
    static LayerSpec activation(Act act);
};

/// Per-sample shape propagation ([C,T] for feature maps, [D] after flatten).
TensorShape infer_shape(const LayerSpec& spec, const TensorShape& in);
std::vector<TensorShape> infer_stack(const std::vector<LayerSpec>& specs, TensorShape in);

// Architecture presets (synthetic encoders/decoder and the audio encoder).
std::vector<LayerSpec> encoder_spec_cpc_synthetic();
std::vector<LayerSpec> encoder_spec_ae_synthetic();
std::vector<LayerSpec> decoder_spec_ae_synthetic();
std::vector<LayerSpec> encoder_spec_cpc_audio();

/// Named view of one parameter tensor and its gradient slot.
struct ParamRef {
    std::string name;
    double* value = nullptr;
    double* grad = nullptr;
    std::int64_t size = 0;
};

std::int64_t param_count(const std::vector<ParamRef>& params);
void zero_grads(const std::vector<ParamRef>& params);
bool all_finite(const std::vector<ParamRef>& params);

/// Row-major 2D batch matrix [rows, cols].
struct Mat {
    std::int64_t rows = 0, cols = 0;
    std::vector<double> v;
    Mat() = default;
    Mat(std::int64_t r, std::int64_t c) : rows(r), cols(c), v(static_cast<std::size_t>(r * c), 0.0) {}
    double* row(std::int64_t r) { return v.data() + r * cols; }
    const double* row(std::int64_t r) const { return v.data() + r * cols; }
};

/// Channel-major feature map [C, B*T]: row c holds batch-major time series.
struct Feat {
    std::int64_t C = 0, B = 0, T = 0;
    std::vector<double> v;
    Feat() = default;
    Feat(std::int64_t c, std::int64_t b, std::int64_t t)
        : C(c), B(b), T(t), v(static_cast<std::size_t>(c * b * t), 0.0) {}
    double* channel(std::int64_t c) { return v.data() + c * B * T; }
    const double* channel(std::int64_t c) const { return v.data() + c * B * T; }
};

/// Value flowing through a Sequential: a feature map or a flat batch matrix.
struct Value {
    bool is_feat = true;
    Feat feat;
    Mat mat;

    static Value from_feat(Feat f) { Value v; v.is_feat = true; v.feat = std::move(f); return v; }
    static Value from_mat(Mat m) { Value v; v.is_feat = false; v.mat = std::move(m); return v; }
    /// [B, ch, T] tensor -> channel-major feature map.
    static Value from_batch_tensor(const Tensor& x);
    Tensor to_batch_tensor() const;
};

class Layer {
public:
    virtual ~Layer() = default;
    virtual Value forward(Value in, bool train, Rng* dropout_rng) = 0;
    virtual Value backward(Value dout, bool input_grad) = 0;
    virtual void collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
        (void)prefix;
        (void)out;
    }
};

/// Stack of layers built from LayerSpecs; owns parameters and saved state.
class Sequential {
public:
    Sequential() = default;
    /// in_shape is the per-sample input shape ([C,T] or [D]); params are
    /// initialized from init_rng (uniform +-1/sqrt(fan_in)).
    Sequential(std::string name, std::vector<LayerSpec> specs, TensorShape in_shape, Rng& init_rng);

    Value forward(Value in, bool train, Rng* dropout_rng = nullptr);
    /// input_grad=false skips the input gradient of the first layer.
    Value backward(Value dout, bool input_grad = true);

    std::vector<ParamRef> params();
    const std::string& name() const { return name_; }
    const std::vector<LayerSpec>& specs() const { return specs_; }
    const TensorShape& in_shape() const { return in_shape_; }
    TensorShape out_shape() const;

private:
    std::string name_;
    std::vector<LayerSpec> specs_;
    TensorShape in_shape_;
    std::vector<std::unique_ptr<Layer>> layers_;
};

/// Gated recurrent unit aggregating a causal sequence of embeddings into a
/// context vector (final hidden state). Gate order follows the r, z, n
/// convention with separate input/hidden biases.
class Gru {
public:
    Gru() = default;
    Gru(std::string name, std::int64_t input_dim, std::int64_t hidden_dim, Rng& init_rng);

    /// zseq: [B, L+1, F] row-major. Returns the hidden state after the last
    /// step, shape [B, hidden].
    Mat forward(const double* zseq, std::int64_t batch, std::int64_t steps);
    /// Backpropagates through all steps; returns d zseq [B, L+1, F].
    std::vector<double> backward(const Mat& dh_last);

    std::vector<ParamRef> params();
    std::int64_t input_dim() const { return input_dim_; }
    std::int64_t hidden_dim() const { return hidden_dim_; }

private:
    std::string name_;
    std::int64_t input_dim_ = 0, hidden_dim_ = 0;
    std::vector<double> wi_, wh_, bi_, bh_;      // wi [3H,F], wh [3H,H]
    std::vector<double> gwi_, gwh_, gbi_, gbh_;
    // saved forward state
    std::int64_t batch_ = 0, steps_ = 0;
    const double* zseq_ = nullptr;
    std::vector<Mat> h_, r_, zg_, ng_, hn_;
};

/// Spec'd gru entry point: context after the final step of z_sequence.
Mat gru_forward(Gru& gru, const double* z_sequence, std::int64_t batch, std::int64_t steps);

/// Compares analytic parameter gradients against central finite differences
/// (step h) on a random subset of at least min_count parameters. loss_grad
/// must populate gradients (from zeroed slots) and return the loss;
/// loss_value must be a pure re-evaluation. Returns the max relative error
/// |ga - gf| / max(1, |ga|, |gf|).
double grad_check(const std::vector<ParamRef>& params,
                  const std::function<double()>& loss_grad,
                  const std::function<double()>& loss_value, Rng& rng,
                  std::size_t min_count = 200, double h = 1e-5);

}  // namespace nn
}  // namespace somcpc
