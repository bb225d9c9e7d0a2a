#include "somcpc/nn.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "somcpc/kernels.hpp"
#include "somcpc/parallel.hpp"
#include "somcpc/rng.hpp"

namespace somcpc::nn {

namespace {

constexpr double kLeakySlope = 0.01;

double act_apply(Act a, double x) {
    switch (a) {
        case Act::none: return x;
        case Act::relu: return x > 0 ? x : 0.0;
        case Act::leaky_relu: return x > 0 ? x : kLeakySlope * x;
        case Act::tanh: return std::tanh(x);
    }
    return x;
}

// Derivative expressed through the saved output value.
double act_deriv(Act a, double y) {
    switch (a) {
        case Act::none: return 1.0;
        case Act::relu: return y > 0 ? 1.0 : 0.0;
        case Act::leaky_relu: return y > 0 ? 1.0 : kLeakySlope;
        case Act::tanh: return 1.0 - y * y;
    }
    return 1.0;
}

void transpose(const double* src, std::int64_t rows, std::int64_t cols, double* dst) {
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

void init_uniform(std::vector<double>& v, double bound, Rng& rng) {
    for (auto& x : v) x = rng.uniform(-bound, bound);
}

[[noreturn]] void shape_error(const std::string& layer, const std::string& msg) {
    throw std::invalid_argument(layer + ": " + msg);
}

}  // namespace

LayerSpec LayerSpec::conv(std::int64_t channels, std::int64_t kernel, Act act, std::int64_t stride,
                          std::int64_t padding, bool same_padding, std::int64_t dilation) {
    LayerSpec s;
    s.kind = Kind::conv1d;
    s.channels = channels;
    s.kernel = kernel;
    s.stride = stride;
    s.padding = padding;
    s.same_padding = same_padding;
    s.dilation = dilation;
    s.act = act;
    return s;
}

LayerSpec LayerSpec::conv_transpose(std::int64_t channels, std::int64_t kernel,
                                    std::int64_t stride, Act act) {
    LayerSpec s;
    s.kind = Kind::conv_transpose1d;
    s.channels = channels;
    s.kernel = kernel;
    s.stride = stride;
    s.act = act;
    return s;
}

LayerSpec LayerSpec::maxpool(std::int64_t kernel, std::int64_t stride) {
    LayerSpec s;
    s.kind = Kind::maxpool1d;
    s.kernel = kernel;
    s.stride = stride;
    return s;
}

LayerSpec LayerSpec::dropout(double rate) {
    LayerSpec s;
    s.kind = Kind::dropout;
    s.rate = rate;
    return s;
}

LayerSpec LayerSpec::fc(std::int64_t out, Act act) {
    LayerSpec s;
    s.kind = Kind::fully_connected;
    s.channels = out;
    s.act = act;
    return s;
}

LayerSpec LayerSpec::flatten() {
    LayerSpec s;
    s.kind = Kind::flatten;
    return s;
}

LayerSpec LayerSpec::unflatten(std::int64_t channels) {
    LayerSpec s;
    s.kind = Kind::unflatten;
    s.unflatten_channels = channels;
    return s;
}

LayerSpec LayerSpec::activation(Act act) {
    LayerSpec s;
    s.kind = Kind::activation;
    s.act = act;
    return s;
}

namespace {
// "same" padding at stride 1: total k-1, split left-heavy for even kernels.
std::pair<std::int64_t, std::int64_t> same_pads(std::int64_t k, std::int64_t dil) {
    const std::int64_t total = dil * (k - 1);
    return {(total + 1) / 2, total / 2};
}

std::int64_t conv_out_len(std::int64_t t, std::int64_t k, std::int64_t stride, std::int64_t dil,
                          std::int64_t padl, std::int64_t padr) {
    return (t + padl + padr - dil * (k - 1) - 1) / stride + 1;
}
}  // namespace

TensorShape infer_shape(const LayerSpec& spec, const TensorShape& in) {
    using Kind = LayerSpec::Kind;
    switch (spec.kind) {
        case Kind::conv1d: {
            if (in.rank() != 2) throw std::invalid_argument("conv1d expects a [C,T] input");
            std::int64_t padl = spec.padding, padr = spec.padding;
            if (spec.same_padding) std::tie(padl, padr) = same_pads(spec.kernel, spec.dilation);
            return TensorShape{spec.channels,
                               conv_out_len(in[1], spec.kernel, spec.stride, spec.dilation, padl, padr)};
        }
        case Kind::conv_transpose1d: {
            if (in.rank() != 2) throw std::invalid_argument("conv_transpose1d expects [C,T]");
            return TensorShape{spec.channels,
                               (in[1] - 1) * spec.stride + spec.kernel - 2 * spec.padding};
        }
        case Kind::maxpool1d: {
            if (in.rank() != 2) throw std::invalid_argument("maxpool1d expects [C,T]");
            return TensorShape{in[0], (in[1] - spec.kernel) / spec.stride + 1};
        }
        case Kind::dropout:
        case Kind::activation:
            return in;
        case Kind::fully_connected: {
            if (in.rank() != 1) throw std::invalid_argument("fully_connected expects a flat input");
            return TensorShape{spec.channels};
        }
        case Kind::flatten: {
            if (in.rank() != 2) throw std::invalid_argument("flatten expects [C,T]");
            return TensorShape{in[0] * in[1]};
        }
        case Kind::unflatten: {
            if (in.rank() != 1) throw std::invalid_argument("unflatten expects a flat input");
            if (in[0] % spec.unflatten_channels != 0)
                throw std::invalid_argument("unflatten channels must divide the flat size");
            return TensorShape{spec.unflatten_channels, in[0] / spec.unflatten_channels};
        }
    }
    throw std::logic_error("unknown layer kind");
}

std::vector<TensorShape> infer_stack(const std::vector<LayerSpec>& specs, TensorShape in) {
    std::vector<TensorShape> out;
    out.push_back(in);
    for (const auto& s : specs) {
        in = infer_shape(s, in);
        out.push_back(in);
    }
    return out;
}

std::vector<LayerSpec> encoder_spec_cpc_synthetic() {
    return {
        LayerSpec::conv(16, 9, Act::leaky_relu),
        LayerSpec::maxpool(4, 4),
        LayerSpec::dropout(0.1),
        LayerSpec::conv(32, 7, Act::leaky_relu),
        LayerSpec::maxpool(4, 4),
        LayerSpec::dropout(0.1),
        LayerSpec::conv(64, 3, Act::leaky_relu),
        LayerSpec::maxpool(4, 4),
        LayerSpec::dropout(0.1),
        LayerSpec::conv(128, 3, Act::leaky_relu),
        LayerSpec::maxpool(2, 2),
        LayerSpec::flatten(),
    };
}

std::vector<LayerSpec> encoder_spec_ae_synthetic() {
    return {
        LayerSpec::conv(16, 9, Act::leaky_relu),
        LayerSpec::maxpool(4, 4),
        LayerSpec::dropout(0.1),
        LayerSpec::conv(32, 7, Act::leaky_relu),
        LayerSpec::maxpool(4, 4),
        LayerSpec::dropout(0.1),
        LayerSpec::conv(64, 3, Act::leaky_relu),
        LayerSpec::flatten(),
        LayerSpec::fc(128, Act::leaky_relu),
    };
}

std::vector<LayerSpec> decoder_spec_ae_synthetic() {
    return {
        LayerSpec::fc(512, Act::leaky_relu),
        LayerSpec::unflatten(64),
        LayerSpec::conv(32, 3, Act::leaky_relu),
        LayerSpec::conv_transpose(32, 4, 4, Act::none),
        LayerSpec::conv(16, 7, Act::leaky_relu),
        LayerSpec::conv_transpose(16, 4, 4, Act::none),
        LayerSpec::conv(1, 9, Act::tanh),
    };
}

std::vector<LayerSpec> encoder_spec_cpc_audio() {
    return {
        LayerSpec::conv(512, 10, Act::relu, 5, 3, false),
        LayerSpec::conv(512, 8, Act::relu, 4, 2, false),
        LayerSpec::conv(512, 4, Act::relu, 2, 1, false),
        LayerSpec::conv(512, 4, Act::relu, 2, 1, false),
        LayerSpec::conv(512, 4, Act::relu, 2, 1, false),
        LayerSpec::flatten(),
    };
}

std::int64_t param_count(const std::vector<ParamRef>& params) {
    std::int64_t n = 0;
    for (const auto& p : params) n += p.size;
    return n;
}

void zero_grads(const std::vector<ParamRef>& params) {
    for (const auto& p : params) std::fill(p.grad, p.grad + p.size, 0.0);
}

bool all_finite(const std::vector<ParamRef>& params) {
    for (const auto& p : params)
        for (std::int64_t i = 0; i < p.size; ++i)
            if (!std::isfinite(p.value[i])) return false;
    return true;
}

Value Value::from_batch_tensor(const Tensor& x) {
    if (x.shape.rank() != 3) throw std::invalid_argument("expected a [B, ch, T] tensor");
    const std::int64_t B = x.shape[0], C = x.shape[1], T = x.shape[2];
    Feat f(C, B, T);
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < C; ++c)
            std::copy_n(x.data() + (b * C + c) * T, T, f.channel(c) + b * T);
    return from_feat(std::move(f));
}

Tensor Value::to_batch_tensor() const {
    if (!is_feat) throw std::logic_error("value is not a feature map");
    Tensor t(TensorShape{feat.B, feat.C, feat.T});
    for (std::int64_t b = 0; b < feat.B; ++b)
        for (std::int64_t c = 0; c < feat.C; ++c)
            std::copy_n(feat.channel(c) + b * feat.T, feat.T, t.data() + (b * feat.C + c) * feat.T);
    return t;
}

// ---------------------------------------------------------------------------
// layers

namespace {

class Conv1dLayer final : public Layer {
public:
    Conv1dLayer(std::string name, const LayerSpec& s, std::int64_t cin, Rng& rng)
        : name_(std::move(name)), cin_(cin), cout_(s.channels), k_(s.kernel), stride_(s.stride),
          dil_(s.dilation), act_(s.act) {
        if (s.same_padding) {
            std::tie(padl_, padr_) = same_pads(k_, dil_);
        } else {
            padl_ = padr_ = s.padding;
        }
        w_.resize(static_cast<std::size_t>(cout_ * cin_ * k_));
        b_.resize(static_cast<std::size_t>(cout_));
        gw_.assign(w_.size(), 0.0);
        gb_.assign(b_.size(), 0.0);
        const double bound = 1.0 / std::sqrt(static_cast<double>(cin_ * k_));
        init_uniform(w_, bound, rng);
        init_uniform(b_, bound, rng);
    }

    Value forward(Value in, bool, Rng*) override {
        if (!in.is_feat) shape_error(name_, "expected a feature map input");
        const Feat& x = in.feat;
        if (x.C != cin_)
            shape_error(name_, "expected " + std::to_string(cin_) + " channels, got " +
                                   std::to_string(x.C));
        B_ = x.B;
        tin_ = x.T;
        tout_ = conv_out_len(x.T, k_, stride_, dil_, padl_, padr_);
        if (tout_ < 1) shape_error(name_, "output length would be empty");
        const std::int64_t nt = B_ * tout_;
        const std::int64_t kk = cin_ * k_;
        cols_.resize(static_cast<std::size_t>(kk * nt));
        // im2col: each (channel, tap) row gathers a strided slice of x. At
        // stride 1 the slice is a shifted contiguous block per window.
        parallel_for(static_cast<std::size_t>(kk), [&](std::size_t rb, std::size_t re) {
            for (std::size_t row = rb; row < re; ++row) {
                const auto ci = static_cast<std::int64_t>(row) / k_;
                const auto u = static_cast<std::int64_t>(row) % k_;
                const double* src = x.channel(ci);
                double* dst = cols_.data() + row * static_cast<std::size_t>(nt);
                const std::int64_t shift = u * dil_ - padl_;
                if (stride_ == 1) {
                    const std::int64_t lo = std::max<std::int64_t>(0, -shift);
                    const std::int64_t hi = std::min<std::int64_t>(tout_, tin_ - shift);
                    for (std::int64_t b = 0; b < B_; ++b) {
                        double* db = dst + b * tout_;
                        std::fill(db, db + std::min(lo, tout_), 0.0);
                        if (hi > lo) std::copy_n(src + b * tin_ + lo + shift, hi - lo, db + lo);
                        if (hi < tout_) std::fill(db + std::max<std::int64_t>(hi, 0), db + tout_, 0.0);
                    }
                } else {
                    for (std::int64_t b = 0; b < B_; ++b) {
                        const double* sb = src + b * tin_;
                        double* db = dst + b * tout_;
                        for (std::int64_t to = 0; to < tout_; ++to) {
                            const std::int64_t t = to * stride_ + shift;
                            db[to] = (t >= 0 && t < tin_) ? sb[t] : 0.0;
                        }
                    }
                }
            }
        });
        Feat out(cout_, B_, tout_);
        kernels::gemm_nn(static_cast<std::size_t>(cout_), static_cast<std::size_t>(nt),
                         static_cast<std::size_t>(kk), w_.data(), static_cast<std::size_t>(kk),
                         cols_.data(), static_cast<std::size_t>(nt), out.v.data(),
                         static_cast<std::size_t>(nt), false);
        const bool save_out = act_ == Act::tanh;
        if (!save_out) mask_.resize(static_cast<std::size_t>(cout_ * nt));
        parallel_for(static_cast<std::size_t>(cout_), [&](std::size_t cb, std::size_t ce) {
            for (std::size_t c = cb; c < ce; ++c) {
                double* row = out.channel(static_cast<std::int64_t>(c));
                std::uint8_t* mrow = save_out ? nullptr : mask_.data() + c * static_cast<std::size_t>(nt);
                const double bias = b_[c];
                for (std::int64_t i = 0; i < nt; ++i) {
                    const double v = row[i] + bias;
                    row[i] = act_apply(act_, v);
                    if (mrow) mrow[i] = v > 0;
                }
            }
        });
        if (save_out) out_ = out;
        return Value::from_feat(std::move(out));
    }

    Value backward(Value dout, bool input_grad) override {
        Feat dy = std::move(dout.feat);
        const std::int64_t nt = B_ * tout_;
        const std::int64_t kk = cin_ * k_;
        // activation backward fused with the bias-gradient row sums
        std::vector<double> gb_partial(static_cast<std::size_t>(cout_), 0.0);
        parallel_for(static_cast<std::size_t>(cout_), [&](std::size_t cb, std::size_t ce) {
            for (std::size_t c = cb; c < ce; ++c) {
                double* d = dy.channel(static_cast<std::int64_t>(c));
                double s = 0.0;
                if (act_ == Act::tanh) {
                    const double* y = out_.channel(static_cast<std::int64_t>(c));
                    for (std::int64_t i = 0; i < nt; ++i) {
                        d[i] *= 1.0 - y[i] * y[i];
                        s += d[i];
                    }
                } else if (act_ == Act::none) {
                    for (std::int64_t i = 0; i < nt; ++i) s += d[i];
                } else {
                    const std::uint8_t* m = mask_.data() + c * static_cast<std::size_t>(nt);
                    const double slope = act_ == Act::relu ? 0.0 : kLeakySlope;
                    for (std::int64_t i = 0; i < nt; ++i) {
                        d[i] *= m[i] ? 1.0 : slope;
                        s += d[i];
                    }
                }
                gb_partial[c] = s;
            }
        });
        for (std::int64_t c = 0; c < cout_; ++c)
            gb_[static_cast<std::size_t>(c)] += gb_partial[static_cast<std::size_t>(c)];
        kernels::gemm_nt(static_cast<std::size_t>(cout_), static_cast<std::size_t>(kk),
                         static_cast<std::size_t>(nt), dy.v.data(), static_cast<std::size_t>(nt),
                         cols_.data(), static_cast<std::size_t>(nt), gw_.data(),
                         static_cast<std::size_t>(kk), true);
        if (!input_grad) return Value::from_feat(Feat{});
        wt_.resize(w_.size());
        transpose(w_.data(), cout_, kk, wt_.data());
        dcols_.resize(static_cast<std::size_t>(kk * nt));
        kernels::gemm_nn(static_cast<std::size_t>(kk), static_cast<std::size_t>(nt),
                         static_cast<std::size_t>(cout_), wt_.data(),
                         static_cast<std::size_t>(cout_), dy.v.data(), static_cast<std::size_t>(nt),
                         dcols_.data(), static_cast<std::size_t>(nt), false);
        Feat dx(cin_, B_, tin_);
        parallel_for(static_cast<std::size_t>(cin_), [&](std::size_t cb, std::size_t ce) {
            for (std::size_t ci = cb; ci < ce; ++ci) {
                double* dst = dx.channel(static_cast<std::int64_t>(ci));
                for (std::int64_t u = 0; u < k_; ++u) {
                    const double* src =
                        dcols_.data() + (static_cast<std::int64_t>(ci) * k_ + u) * nt;
                    const std::int64_t shift = u * dil_ - padl_;
                    if (stride_ == 1) {
                        // dx[t] += dcols[to] where t = to + shift: one
                        // contiguous vector add over the valid overlap
                        const std::int64_t lo = std::max<std::int64_t>(0, -shift);
                        const std::int64_t hi = std::min<std::int64_t>(tout_, tin_ - shift);
                        if (hi <= lo) continue;
                        for (std::int64_t b = 0; b < B_; ++b)
                            kernels::axpy(static_cast<std::size_t>(hi - lo), 1.0,
                                          src + b * tout_ + lo, dst + b * tin_ + lo + shift);
                    } else {
                        for (std::int64_t b = 0; b < B_; ++b) {
                            const double* sb = src + b * tout_;
                            double* db = dst + b * tin_;
                            for (std::int64_t to = 0; to < tout_; ++to) {
                                const std::int64_t t = to * stride_ + shift;
                                if (t >= 0 && t < tin_) db[t] += sb[to];
                            }
                        }
                    }
                }
            }
        });
        return Value::from_feat(std::move(dx));
    }

    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override {
        out.push_back({prefix + ".weight", w_.data(), gw_.data(), static_cast<std::int64_t>(w_.size())});
        out.push_back({prefix + ".bias", b_.data(), gb_.data(), static_cast<std::int64_t>(b_.size())});
    }

private:
    std::string name_;
    std::int64_t cin_, cout_, k_, stride_, dil_, padl_ = 0, padr_ = 0;
    Act act_;
    std::vector<double> w_, b_, gw_, gb_;
    std::vector<double> cols_, dcols_, wt_;
    std::vector<std::uint8_t> mask_;  // sign of the pre-activation (relu family)
    Feat out_;                        // saved output (tanh only)
    std::int64_t B_ = 0, tin_ = 0, tout_ = 0;
};

class ConvT1dLayer final : public Layer {
public:
    ConvT1dLayer(std::string name, const LayerSpec& s, std::int64_t cin, Rng& rng)
        : name_(std::move(name)), cin_(cin), cout_(s.channels), k_(s.kernel), stride_(s.stride),
          act_(s.act) {
        w_.resize(static_cast<std::size_t>(cin_ * cout_ * k_));  // [cin, cout*k]
        b_.resize(static_cast<std::size_t>(cout_));
        gw_.assign(w_.size(), 0.0);
        gb_.assign(b_.size(), 0.0);
        const double bound = 1.0 / std::sqrt(static_cast<double>(cin_ * k_));
        init_uniform(w_, bound, rng);
        init_uniform(b_, bound, rng);
    }

    Value forward(Value in, bool, Rng*) override {
        if (!in.is_feat) shape_error(name_, "expected a feature map input");
        const Feat& x = in.feat;
        if (x.C != cin_)
            shape_error(name_, "expected " + std::to_string(cin_) + " channels, got " +
                                   std::to_string(x.C));
        B_ = x.B;
        tin_ = x.T;
        tout_ = (tin_ - 1) * stride_ + k_;
        const std::int64_t nt = B_ * tin_;
        const std::int64_t kk = cout_ * k_;
        x_ = x;
        wt_.resize(w_.size());
        transpose(w_.data(), cin_, kk, wt_.data());  // -> [cout*k, cin]
        outcols_.resize(static_cast<std::size_t>(kk * nt));
        kernels::gemm_nn(static_cast<std::size_t>(kk), static_cast<std::size_t>(nt),
                         static_cast<std::size_t>(cin_), wt_.data(), static_cast<std::size_t>(cin_),
                         x.v.data(), static_cast<std::size_t>(nt), outcols_.data(),
                         static_cast<std::size_t>(nt), false);
        out_ = Feat(cout_, B_, tout_);
        parallel_for(static_cast<std::size_t>(cout_), [&](std::size_t cb, std::size_t ce) {
            for (std::size_t co = cb; co < ce; ++co) {
                double* dst = out_.channel(static_cast<std::int64_t>(co));
                const double bias = b_[co];
                for (std::int64_t b = 0; b < B_; ++b) {
                    double* db = dst + b * tout_;
                    for (std::int64_t t = 0; t < tout_; ++t) {
                        double acc = bias;
                        for (std::int64_t u = 0; u < k_; ++u) {
                            const std::int64_t num = t - u;
                            if (num < 0 || num % stride_ != 0) continue;
                            const std::int64_t ti = num / stride_;
                            if (ti >= tin_) continue;
                            acc += outcols_[(static_cast<std::size_t>(co) * k_ + u) *
                                                static_cast<std::size_t>(nt) +
                                            static_cast<std::size_t>(b * tin_ + ti)];
                        }
                        db[t] = act_apply(act_, acc);
                    }
                }
            }
        });
        return Value::from_feat(out_);
    }

    Value backward(Value dout, bool input_grad) override {
        Feat dy = std::move(dout.feat);
        const std::int64_t nt = B_ * tin_;
        const std::int64_t kk = cout_ * k_;
        if (act_ != Act::none) {
            for (std::int64_t i = 0; i < cout_ * B_ * tout_; ++i)
                dy.v[static_cast<std::size_t>(i)] *= act_deriv(act_, out_.v[static_cast<std::size_t>(i)]);
        }
        for (std::int64_t co = 0; co < cout_; ++co) {
            const double* d = dy.channel(co);
            double s = 0.0;
            for (std::int64_t i = 0; i < B_ * tout_; ++i) s += d[i];
            gb_[static_cast<std::size_t>(co)] += s;
        }
        // gather dOutcols[(co,u), (b,ti)] = dy[co, b, ti*stride + u]
        doutcols_.resize(static_cast<std::size_t>(kk * nt));
        parallel_for(static_cast<std::size_t>(kk), [&](std::size_t rb, std::size_t re) {
            for (std::size_t row = rb; row < re; ++row) {
                const auto co = static_cast<std::int64_t>(row) / k_;
                const auto u = static_cast<std::int64_t>(row) % k_;
                const double* src = dy.channel(co);
                double* dst = doutcols_.data() + row * static_cast<std::size_t>(nt);
                for (std::int64_t b = 0; b < B_; ++b) {
                    const double* sb = src + b * tout_;
                    double* db = dst + b * tin_;
                    for (std::int64_t ti = 0; ti < tin_; ++ti) db[ti] = sb[ti * stride_ + u];
                }
            }
        });
        kernels::gemm_nt(static_cast<std::size_t>(cin_), static_cast<std::size_t>(kk),
                         static_cast<std::size_t>(nt), x_.v.data(), static_cast<std::size_t>(nt),
                         doutcols_.data(), static_cast<std::size_t>(nt), gw_.data(),
                         static_cast<std::size_t>(kk), true);
        if (!input_grad) return Value::from_feat(Feat{});
        Feat dx(cin_, B_, tin_);
        kernels::gemm_nn(static_cast<std::size_t>(cin_), static_cast<std::size_t>(nt),
                         static_cast<std::size_t>(kk), w_.data(), static_cast<std::size_t>(kk),
                         doutcols_.data(), static_cast<std::size_t>(nt), dx.v.data(),
                         static_cast<std::size_t>(nt), false);
        return Value::from_feat(std::move(dx));
    }

    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override {
        out.push_back({prefix + ".weight", w_.data(), gw_.data(), static_cast<std::int64_t>(w_.size())});
        out.push_back({prefix + ".bias", b_.data(), gb_.data(), static_cast<std::int64_t>(b_.size())});
    }

private:
    std::string name_;
    std::int64_t cin_, cout_, k_, stride_;
    Act act_;
    std::vector<double> w_, b_, gw_, gb_;
    std::vector<double> wt_, outcols_, doutcols_;
    Feat x_, out_;
    std::int64_t B_ = 0, tin_ = 0, tout_ = 0;
};

class MaxPoolLayer final : public Layer {
public:
    MaxPoolLayer(std::string name, const LayerSpec& s)
        : name_(std::move(name)), k_(s.kernel), stride_(s.stride) {}

    Value forward(Value in, bool, Rng*) override {
        if (!in.is_feat) shape_error(name_, "expected a feature map input");
        x_ = std::move(in.feat);
        const std::int64_t tout = (x_.T - k_) / stride_ + 1;
        if (tout < 1) shape_error(name_, "pool window longer than input");
        Feat y(x_.C, x_.B, tout);
        idx_.resize(static_cast<std::size_t>(x_.C * x_.B * tout));
        parallel_for(static_cast<std::size_t>(x_.C), [&](std::size_t cb, std::size_t ce) {
            for (std::size_t c = cb; c < ce; ++c) {
                const double* src = x_.channel(static_cast<std::int64_t>(c));
                double* dst = y.channel(static_cast<std::int64_t>(c));
                std::int32_t* id = idx_.data() + static_cast<std::int64_t>(c) * x_.B * tout;
                for (std::int64_t b = 0; b < x_.B; ++b) {
                    const double* sb = src + b * x_.T;
                    for (std::int64_t to = 0; to < tout; ++to) {
                        const std::int64_t base = to * stride_;
                        double best = sb[base];
                        std::int64_t besti = base;
                        for (std::int64_t u = 1; u < k_; ++u) {
                            if (sb[base + u] > best) {
                                best = sb[base + u];
                                besti = base + u;
                            }
                        }
                        dst[b * tout + to] = best;
                        id[b * tout + to] = static_cast<std::int32_t>(besti);
                    }
                }
            }
        });
        tout_ = tout;
        return Value::from_feat(std::move(y));
    }

    Value backward(Value dout, bool) override {
        const Feat& dy = dout.feat;
        Feat dx(x_.C, x_.B, x_.T);
        parallel_for(static_cast<std::size_t>(x_.C), [&](std::size_t cb, std::size_t ce) {
            for (std::size_t c = cb; c < ce; ++c) {
                const double* d = dy.channel(static_cast<std::int64_t>(c));
                double* dst = dx.channel(static_cast<std::int64_t>(c));
                const std::int32_t* id = idx_.data() + static_cast<std::int64_t>(c) * x_.B * tout_;
                for (std::int64_t b = 0; b < x_.B; ++b)
                    for (std::int64_t to = 0; to < tout_; ++to)
                        dst[b * x_.T + id[b * tout_ + to]] += d[b * tout_ + to];
            }
        });
        return Value::from_feat(std::move(dx));
    }

private:
    std::string name_;
    std::int64_t k_, stride_, tout_ = 0;
    Feat x_;
    std::vector<std::int32_t> idx_;
};

class DropoutLayer final : public Layer {
public:
    DropoutLayer(std::string name, const LayerSpec& s) : name_(std::move(name)), rate_(s.rate) {}

    Value forward(Value in, bool train, Rng* rng) override {
        train_ = train && rate_ > 0.0;
        if (!train_) return in;
        if (!rng) throw std::logic_error(name_ + ": training-mode dropout needs an rng");
        auto& v = in.is_feat ? in.feat.v : in.mat.v;
        mask_.resize(v.size());
        const double scale = 1.0 / (1.0 - rate_);
        for (std::size_t i = 0; i < v.size(); ++i) {
            const bool keep = rng->uniform() >= rate_;
            mask_[i] = keep;
            v[i] = keep ? v[i] * scale : 0.0;
        }
        return in;
    }

    Value backward(Value dout, bool) override {
        if (!train_) return dout;
        auto& v = dout.is_feat ? dout.feat.v : dout.mat.v;
        const double scale = 1.0 / (1.0 - rate_);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = mask_[i] ? v[i] * scale : 0.0;
        return dout;
    }

private:
    std::string name_;
    double rate_;
    bool train_ = false;
    std::vector<std::uint8_t> mask_;
};

class FcLayer final : public Layer {
public:
    FcLayer(std::string name, const LayerSpec& s, std::int64_t in_dim, Rng& rng)
        : name_(std::move(name)), in_(in_dim), out_(s.channels), act_(s.act) {
        w_.resize(static_cast<std::size_t>(out_ * in_));
        b_.resize(static_cast<std::size_t>(out_));
        gw_.assign(w_.size(), 0.0);
        gb_.assign(b_.size(), 0.0);
        const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
        init_uniform(w_, bound, rng);
        init_uniform(b_, bound, rng);
    }

    Value forward(Value in, bool, Rng*) override {
        if (in.is_feat) shape_error(name_, "expected a flat input (missing flatten?)");
        x_ = std::move(in.mat);
        if (x_.cols != in_)
            shape_error(name_, "expected input size " + std::to_string(in_) + ", got " +
                                   std::to_string(x_.cols));
        y_ = Mat(x_.rows, out_);
        kernels::gemm_nt(static_cast<std::size_t>(x_.rows), static_cast<std::size_t>(out_),
                         static_cast<std::size_t>(in_), x_.v.data(), static_cast<std::size_t>(in_),
                         w_.data(), static_cast<std::size_t>(in_), y_.v.data(),
                         static_cast<std::size_t>(out_), false);
        for (std::int64_t r = 0; r < y_.rows; ++r) {
            double* row = y_.row(r);
            for (std::int64_t c = 0; c < out_; ++c)
                row[c] = act_apply(act_, row[c] + b_[static_cast<std::size_t>(c)]);
        }
        return Value::from_mat(y_);
    }

    Value backward(Value dout, bool input_grad) override {
        Mat dy = std::move(dout.mat);
        if (act_ != Act::none) {
            for (std::size_t i = 0; i < dy.v.size(); ++i) dy.v[i] *= act_deriv(act_, y_.v[i]);
        }
        for (std::int64_t r = 0; r < dy.rows; ++r) {
            const double* row = dy.row(r);
            for (std::int64_t c = 0; c < out_; ++c) gb_[static_cast<std::size_t>(c)] += row[c];
        }
        dyt_.resize(static_cast<std::size_t>(dy.rows * out_));
        transpose(dy.v.data(), dy.rows, out_, dyt_.data());
        kernels::gemm_nn(static_cast<std::size_t>(out_), static_cast<std::size_t>(in_),
                         static_cast<std::size_t>(dy.rows), dyt_.data(),
                         static_cast<std::size_t>(dy.rows), x_.v.data(),
                         static_cast<std::size_t>(in_), gw_.data(), static_cast<std::size_t>(in_),
                         true);
        if (!input_grad) return Value::from_mat(Mat{});
        Mat dx(dy.rows, in_);
        kernels::gemm_nn(static_cast<std::size_t>(dy.rows), static_cast<std::size_t>(in_),
                         static_cast<std::size_t>(out_), dy.v.data(), static_cast<std::size_t>(out_),
                         w_.data(), static_cast<std::size_t>(in_), dx.v.data(),
                         static_cast<std::size_t>(in_), false);
        return Value::from_mat(std::move(dx));
    }

    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override {
        out.push_back({prefix + ".weight", w_.data(), gw_.data(), static_cast<std::int64_t>(w_.size())});
        out.push_back({prefix + ".bias", b_.data(), gb_.data(), static_cast<std::int64_t>(b_.size())});
    }

private:
    std::string name_;
    std::int64_t in_, out_;
    Act act_;
    std::vector<double> w_, b_, gw_, gb_, dyt_;
    Mat x_, y_;
};

class FlattenLayer final : public Layer {
public:
    explicit FlattenLayer(std::string name) : name_(std::move(name)) {}

    Value forward(Value in, bool, Rng*) override {
        if (!in.is_feat) shape_error(name_, "expected a feature map input");
        const Feat& x = in.feat;
        C_ = x.C;
        T_ = x.T;
        Mat y(x.B, x.C * x.T);
        for (std::int64_t c = 0; c < x.C; ++c) {
            const double* src = x.channel(c);
            for (std::int64_t b = 0; b < x.B; ++b)
                std::copy_n(src + b * x.T, x.T, y.row(b) + c * x.T);
        }
        return Value::from_mat(std::move(y));
    }

    Value backward(Value dout, bool) override {
        const Mat& dy = dout.mat;
        Feat dx(C_, dy.rows, T_);
        for (std::int64_t c = 0; c < C_; ++c) {
            double* dst = dx.channel(c);
            for (std::int64_t b = 0; b < dy.rows; ++b)
                std::copy_n(dy.row(b) + c * T_, T_, dst + b * T_);
        }
        return Value::from_feat(std::move(dx));
    }

private:
    std::string name_;
    std::int64_t C_ = 0, T_ = 0;
};

class UnflattenLayer final : public Layer {
public:
    UnflattenLayer(std::string name, const LayerSpec& s)
        : name_(std::move(name)), C_(s.unflatten_channels) {}

    Value forward(Value in, bool, Rng*) override {
        if (in.is_feat) shape_error(name_, "expected a flat input");
        const Mat& x = in.mat;
        if (x.cols % C_ != 0) shape_error(name_, "flat size not divisible by channels");
        T_ = x.cols / C_;
        Feat y(C_, x.rows, T_);
        for (std::int64_t c = 0; c < C_; ++c) {
            double* dst = y.channel(c);
            for (std::int64_t b = 0; b < x.rows; ++b)
                std::copy_n(x.row(b) + c * T_, T_, dst + b * T_);
        }
        return Value::from_feat(std::move(y));
    }

    Value backward(Value dout, bool) override {
        const Feat& dy = dout.feat;
        Mat dx(dy.B, C_ * T_);
        for (std::int64_t c = 0; c < C_; ++c) {
            const double* src = dy.channel(c);
            for (std::int64_t b = 0; b < dy.B; ++b)
                std::copy_n(src + b * T_, T_, dx.row(b) + c * T_);
        }
        return Value::from_mat(std::move(dx));
    }

private:
    std::string name_;
    std::int64_t C_, T_ = 0;
};

class ActLayer final : public Layer {
public:
    ActLayer(std::string name, const LayerSpec& s) : name_(std::move(name)), act_(s.act) {}

    Value forward(Value in, bool, Rng*) override {
        auto& v = in.is_feat ? in.feat.v : in.mat.v;
        for (auto& x : v) x = act_apply(act_, x);
        out_ = v;
        return in;
    }

    Value backward(Value dout, bool) override {
        auto& v = dout.is_feat ? dout.feat.v : dout.mat.v;
        for (std::size_t i = 0; i < v.size(); ++i) v[i] *= act_deriv(act_, out_[i]);
        return dout;
    }

private:
    std::string name_;
    Act act_;
    std::vector<double> out_;
};

}  // namespace

Sequential::Sequential(std::string name, std::vector<LayerSpec> specs, TensorShape in_shape,
                       Rng& init_rng)
    : name_(std::move(name)), specs_(std::move(specs)), in_shape_(std::move(in_shape)) {
    TensorShape shape = in_shape_;
    for (std::size_t i = 0; i < specs_.size(); ++i) {
        const LayerSpec& s = specs_[i];
        const std::string lname = name_ + ".layer" + std::to_string(i);
        using Kind = LayerSpec::Kind;
        switch (s.kind) {
            case Kind::conv1d:
                layers_.push_back(std::make_unique<Conv1dLayer>(lname, s, shape[0], init_rng));
                break;
            case Kind::conv_transpose1d:
                layers_.push_back(std::make_unique<ConvT1dLayer>(lname, s, shape[0], init_rng));
                break;
            case Kind::maxpool1d:
                layers_.push_back(std::make_unique<MaxPoolLayer>(lname, s));
                break;
            case Kind::dropout:
                layers_.push_back(std::make_unique<DropoutLayer>(lname, s));
                break;
            case Kind::fully_connected:
                layers_.push_back(std::make_unique<FcLayer>(lname, s, shape[0], init_rng));
                break;
            case Kind::flatten:
                layers_.push_back(std::make_unique<FlattenLayer>(lname));
                break;
            case Kind::unflatten:
                layers_.push_back(std::make_unique<UnflattenLayer>(lname, s));
                break;
            case Kind::activation:
                layers_.push_back(std::make_unique<ActLayer>(lname, s));
                break;
        }
        shape = infer_shape(s, shape);
    }
}

Value Sequential::forward(Value in, bool train, Rng* dropout_rng) {
    for (auto& layer : layers_) in = layer->forward(std::move(in), train, dropout_rng);
    return in;
}

Value Sequential::backward(Value dout, bool input_grad) {
    for (std::size_t i = layers_.size(); i-- > 0;)
        dout = layers_[i]->backward(std::move(dout), input_grad || i > 0);
    return dout;
}

std::vector<ParamRef> Sequential::params() {
    std::vector<ParamRef> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
        layers_[i]->collect_params(name_ + ".layer" + std::to_string(i), out);
    return out;
}

TensorShape Sequential::out_shape() const { return infer_stack(specs_, in_shape_).back(); }

// ---------------------------------------------------------------------------
// GRU

Gru::Gru(std::string name, std::int64_t input_dim, std::int64_t hidden_dim, Rng& init_rng)
    : name_(std::move(name)), input_dim_(input_dim), hidden_dim_(hidden_dim) {
    wi_.resize(static_cast<std::size_t>(3 * hidden_dim_ * input_dim_));
    wh_.resize(static_cast<std::size_t>(3 * hidden_dim_ * hidden_dim_));
    bi_.resize(static_cast<std::size_t>(3 * hidden_dim_));
    bh_.resize(static_cast<std::size_t>(3 * hidden_dim_));
    gwi_.assign(wi_.size(), 0.0);
    gwh_.assign(wh_.size(), 0.0);
    gbi_.assign(bi_.size(), 0.0);
    gbh_.assign(bh_.size(), 0.0);
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_dim_));
    Rng& r = init_rng;
    init_uniform(wi_, bound, r);
    init_uniform(wh_, bound, r);
    init_uniform(bi_, bound, r);
    init_uniform(bh_, bound, r);
}

namespace {
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace

Mat Gru::forward(const double* zseq, std::int64_t batch, std::int64_t steps) {
    if (steps < 1) throw std::invalid_argument("GRU needs at least one step");
    batch_ = batch;
    steps_ = steps;
    zseq_ = zseq;
    const std::int64_t H = hidden_dim_;
    const std::int64_t F = input_dim_;
    h_.assign(static_cast<std::size_t>(steps), Mat(batch, H));
    r_.assign(static_cast<std::size_t>(steps), Mat(batch, H));
    zg_.assign(static_cast<std::size_t>(steps), Mat(batch, H));
    ng_.assign(static_cast<std::size_t>(steps), Mat(batch, H));
    hn_.assign(static_cast<std::size_t>(steps), Mat(batch, H));

    Mat xbuf(batch, F), gi(batch, 3 * H), gh(batch, 3 * H);
    Mat hprev(batch, H);
    for (std::int64_t t = 0; t < steps; ++t) {
        for (std::int64_t b = 0; b < batch; ++b)
            std::copy_n(zseq + (b * steps + t) * F, F, xbuf.row(b));
        kernels::gemm_nt(static_cast<std::size_t>(batch), static_cast<std::size_t>(3 * H),
                         static_cast<std::size_t>(F), xbuf.v.data(), static_cast<std::size_t>(F),
                         wi_.data(), static_cast<std::size_t>(F), gi.v.data(),
                         static_cast<std::size_t>(3 * H), false);
        kernels::gemm_nt(static_cast<std::size_t>(batch), static_cast<std::size_t>(3 * H),
                         static_cast<std::size_t>(H), hprev.v.data(), static_cast<std::size_t>(H),
                         wh_.data(), static_cast<std::size_t>(H), gh.v.data(),
                         static_cast<std::size_t>(3 * H), false);
        auto& rt = r_[static_cast<std::size_t>(t)];
        auto& zt = zg_[static_cast<std::size_t>(t)];
        auto& nt = ng_[static_cast<std::size_t>(t)];
        auto& hnt = hn_[static_cast<std::size_t>(t)];
        auto& ht = h_[static_cast<std::size_t>(t)];
        for (std::int64_t b = 0; b < batch; ++b) {
            const double* gib = gi.row(b);
            const double* ghb = gh.row(b);
            const double* hp = hprev.row(b);
            for (std::int64_t j = 0; j < H; ++j) {
                const double rv = sigmoid(gib[j] + bi_[static_cast<std::size_t>(j)] + ghb[j] +
                                          bh_[static_cast<std::size_t>(j)]);
                const double zv = sigmoid(gib[H + j] + bi_[static_cast<std::size_t>(H + j)] +
                                          ghb[H + j] + bh_[static_cast<std::size_t>(H + j)]);
                const double hnv = ghb[2 * H + j] + bh_[static_cast<std::size_t>(2 * H + j)];
                const double nv =
                    std::tanh(gib[2 * H + j] + bi_[static_cast<std::size_t>(2 * H + j)] + rv * hnv);
                rt.row(b)[j] = rv;
                zt.row(b)[j] = zv;
                hnt.row(b)[j] = hnv;
                nt.row(b)[j] = nv;
                ht.row(b)[j] = (1.0 - zv) * nv + zv * hp[j];
            }
        }
        hprev = ht;
    }
    return h_.back();
}

std::vector<double> Gru::backward(const Mat& dh_last) {
    const std::int64_t H = hidden_dim_;
    const std::int64_t F = input_dim_;
    const std::int64_t B = batch_;
    std::vector<double> dzseq(static_cast<std::size_t>(B * steps_ * F), 0.0);
    Mat dh = dh_last;
    Mat dgi(B, 3 * H), dgh(B, 3 * H), scratch_t(3 * H, B), dx(B, F), dhp(B, H);
    Mat zero_h(B, H);
    for (std::int64_t t = steps_ - 1; t >= 0; --t) {
        const Mat& hprev = t > 0 ? h_[static_cast<std::size_t>(t - 1)] : zero_h;
        const auto& rt = r_[static_cast<std::size_t>(t)];
        const auto& zt = zg_[static_cast<std::size_t>(t)];
        const auto& nt = ng_[static_cast<std::size_t>(t)];
        const auto& hnt = hn_[static_cast<std::size_t>(t)];
        for (std::int64_t b = 0; b < B; ++b) {
            const double* dhb = dh.row(b);
            double* gi = dgi.row(b);
            double* gh = dgh.row(b);
            double* dhpb = dhp.row(b);
            for (std::int64_t j = 0; j < H; ++j) {
                const double zv = zt.row(b)[j], nv = nt.row(b)[j], rv = rt.row(b)[j];
                const double dng = dhb[j] * (1.0 - zv);
                const double dzg = dhb[j] * (hprev.row(b)[j] - nv);
                const double dng_pre = dng * (1.0 - nv * nv);
                const double dr = dng_pre * hnt.row(b)[j];
                const double dhn = dng_pre * rv;
                const double dr_pre = dr * rv * (1.0 - rv);
                const double dzg_pre = dzg * zv * (1.0 - zv);
                gi[j] = dr_pre;
                gi[H + j] = dzg_pre;
                gi[2 * H + j] = dng_pre;
                gh[j] = dr_pre;
                gh[H + j] = dzg_pre;
                gh[2 * H + j] = dhn;
                dhpb[j] = dhb[j] * zv;
            }
        }
        // parameter gradients
        Mat xbuf(B, F);
        for (std::int64_t b = 0; b < B; ++b)
            std::copy_n(zseq_ + (b * steps_ + t) * F, F, xbuf.row(b));
        transpose(dgi.v.data(), B, 3 * H, scratch_t.v.data());
        kernels::gemm_nn(static_cast<std::size_t>(3 * H), static_cast<std::size_t>(F),
                         static_cast<std::size_t>(B), scratch_t.v.data(),
                         static_cast<std::size_t>(B), xbuf.v.data(), static_cast<std::size_t>(F),
                         gwi_.data(), static_cast<std::size_t>(F), true);
        transpose(dgh.v.data(), B, 3 * H, scratch_t.v.data());
        kernels::gemm_nn(static_cast<std::size_t>(3 * H), static_cast<std::size_t>(H),
                         static_cast<std::size_t>(B), scratch_t.v.data(),
                         static_cast<std::size_t>(B), hprev.v.data(), static_cast<std::size_t>(H),
                         gwh_.data(), static_cast<std::size_t>(H), true);
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t j = 0; j < 3 * H; ++j) {
                gbi_[static_cast<std::size_t>(j)] += dgi.row(b)[j];
                gbh_[static_cast<std::size_t>(j)] += dgh.row(b)[j];
            }
        // input and hidden-state gradients
        kernels::gemm_nn(static_cast<std::size_t>(B), static_cast<std::size_t>(F),
                         static_cast<std::size_t>(3 * H), dgi.v.data(),
                         static_cast<std::size_t>(3 * H), wi_.data(), static_cast<std::size_t>(F),
                         dx.v.data(), static_cast<std::size_t>(F), false);
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t f = 0; f < F; ++f)
                dzseq[static_cast<std::size_t>((b * steps_ + t) * F + f)] += dx.row(b)[f];
        kernels::gemm_nn(static_cast<std::size_t>(B), static_cast<std::size_t>(H),
                         static_cast<std::size_t>(3 * H), dgh.v.data(),
                         static_cast<std::size_t>(3 * H), wh_.data(), static_cast<std::size_t>(H),
                         dhp.v.data(), static_cast<std::size_t>(H), true);
        dh = dhp;
    }
    return dzseq;
}

std::vector<ParamRef> Gru::params() {
    return {
        {name_ + ".wi", wi_.data(), gwi_.data(), static_cast<std::int64_t>(wi_.size())},
        {name_ + ".wh", wh_.data(), gwh_.data(), static_cast<std::int64_t>(wh_.size())},
        {name_ + ".bi", bi_.data(), gbi_.data(), static_cast<std::int64_t>(bi_.size())},
        {name_ + ".bh", bh_.data(), gbh_.data(), static_cast<std::int64_t>(bh_.size())},
    };
}

Mat gru_forward(Gru& gru, const double* z_sequence, std::int64_t batch, std::int64_t steps) {
    return gru.forward(z_sequence, batch, steps);
}

double grad_check(const std::vector<ParamRef>& params, const std::function<double()>& loss_grad,
                  const std::function<double()>& loss_value, Rng& rng, std::size_t min_count,
                  double h) {
    zero_grads(params);
    loss_grad();

    struct Slot {
        double* value;
        double analytic;
    };
    std::vector<Slot> picked;
    const std::int64_t total = param_count(params);
    if (static_cast<std::size_t>(total) <= min_count) {
        for (const auto& p : params)
            for (std::int64_t i = 0; i < p.size; ++i) picked.push_back({p.value + i, p.grad[i]});
    } else {
        std::set<std::int64_t> chosen;
        while (chosen.size() < min_count)
            chosen.insert(static_cast<std::int64_t>(rng.uniform_index(static_cast<std::uint64_t>(total))));
        std::int64_t base = 0;
        auto it = chosen.begin();
        for (const auto& p : params) {
            while (it != chosen.end() && *it < base + p.size) {
                const std::int64_t i = *it - base;
                picked.push_back({p.value + i, p.grad[i]});
                ++it;
            }
            base += p.size;
        }
    }

    double max_err = 0.0;
    for (const auto& s : picked) {
        const double orig = *s.value;
        *s.value = orig + h;
        const double lp = loss_value();
        *s.value = orig - h;
        const double lm = loss_value();
        *s.value = orig;
        const double fd = (lp - lm) / (2.0 * h);
        const double denom = std::max({1.0, std::abs(fd), std::abs(s.analytic)});
        max_err = std::max(max_err, std::abs(fd - s.analytic) / denom);
    }
    return max_err;
}

}  // namespace somcpc::nn
