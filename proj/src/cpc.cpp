#include "somcpc/cpc.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "somcpc/kernels.hpp"
#include "somcpc/rng.hpp"

namespace somcpc {

void CpcConfig::validate() const {
    if (num_predictions < 1) throw std::invalid_argument("num_predictions must be >= 1");
    if (num_negatives < 1) throw std::invalid_argument("num_negatives must be >= 1");
    if (context_length < 0) throw std::invalid_argument("context_length must be >= 0");
    if (!use_ar && context_length != 0)
        throw std::invalid_argument("context_length requires use_ar");
}

namespace {

struct SeriesRange {
    std::int64_t begin = 0;  // flat window index of the series start
    std::int64_t count = 0;
};

std::vector<SeriesRange> series_ranges(const LabeledWindowSet& data) {
    std::vector<SeriesRange> out;
    const std::int64_t n = data.num_windows();
    std::int64_t i = 0;
    while (i < n) {
        const std::int64_t id = data.series_id[static_cast<std::size_t>(i)];
        std::int64_t j = i;
        while (j < n && data.series_id[static_cast<std::size_t>(j)] == id) ++j;
        out.push_back({i, j - i});
        i = j;
    }
    return out;
}

void copy_window(const LabeledWindowSet& data, std::int64_t w, double* dst) {
    std::copy_n(data.window(w), data.channels * data.window_len, dst);
}

}  // namespace

std::vector<std::int64_t> admissible_anchors(const LabeledWindowSet& data, const CpcConfig& cfg) {
    cfg.validate();
    if (data.num_windows() == 0) throw std::invalid_argument("empty dataset");
    const std::int64_t L = cfg.context_length;
    const std::int64_t P = cfg.num_predictions;
    std::vector<std::int64_t> anchors;
    for (const auto& s : series_ranges(data)) {
        if (s.count < L + P + 1)
            throw std::invalid_argument("series too short for L=" + std::to_string(L) +
                                        " past and P=" + std::to_string(P) + " future windows");
        for (std::int64_t w = L; w + P < s.count; ++w) anchors.push_back(s.begin + w);
    }
    return anchors;
}

ContrastiveBatch assemble_contrastive_batch(const LabeledWindowSet& data, const CpcConfig& cfg,
                                            const std::vector<std::int64_t>& anchors, Rng& rng) {
    cfg.validate();
    const auto ranges = series_ranges(data);
    // map flat window -> range
    auto range_of = [&](std::int64_t flat) -> const SeriesRange& {
        auto it = std::upper_bound(ranges.begin(), ranges.end(), flat,
                                   [](std::int64_t v, const SeriesRange& r) { return v < r.begin; });
        return *(it - 1);
    };

    const std::int64_t bs = static_cast<std::int64_t>(anchors.size());
    const std::int64_t L1 = cfg.context_length + 1;
    const std::int64_t P = cfg.num_predictions;
    const std::int64_t N = cfg.num_negatives;
    const std::int64_t ch = data.channels;
    const std::int64_t T = data.window_len;
    const std::int64_t wsize = ch * T;

    ContrastiveBatch b;
    b.batch = bs;
    b.context_steps = L1;
    b.num_predictions = P;
    b.num_negatives = N;
    b.channels = ch;
    b.window_len = T;
    b.context_inputs = Tensor(TensorShape{bs * L1, ch, T});
    b.positive_inputs = Tensor(TensorShape{bs * P, ch, T});
    b.negative_inputs = Tensor(TensorShape{bs * P * N, ch, T});
    b.anchor_series.resize(static_cast<std::size_t>(bs));
    b.anchor_window.resize(static_cast<std::size_t>(bs));
    b.positive_series.resize(static_cast<std::size_t>(bs * P));
    b.positive_window.resize(static_cast<std::size_t>(bs * P));
    b.negative_series.resize(static_cast<std::size_t>(bs * P * N));
    b.negative_window.resize(static_cast<std::size_t>(bs * P * N));

    const std::int64_t total_windows = data.num_windows();
    for (std::int64_t i = 0; i < bs; ++i) {
        const std::int64_t flat = anchors[static_cast<std::size_t>(i)];
        const SeriesRange& r = range_of(flat);
        const std::int64_t w = flat - r.begin;
        if (w < cfg.context_length || w + P >= r.count)
            throw std::invalid_argument("anchor position not admissible");
        b.anchor_series[static_cast<std::size_t>(i)] = data.series_id[static_cast<std::size_t>(flat)];
        b.anchor_window[static_cast<std::size_t>(i)] = data.window_index[static_cast<std::size_t>(flat)];
        for (std::int64_t s = 0; s < L1; ++s) {
            const std::int64_t src = flat - cfg.context_length + s;
            copy_window(data, src, b.context_inputs.data() + (i * L1 + s) * wsize);
        }
        for (std::int64_t p = 0; p < P; ++p) {
            const std::int64_t pos = flat + 1 + p;
            const std::int64_t pi = i * P + p;
            copy_window(data, pos, b.positive_inputs.data() + pi * wsize);
            b.positive_series[static_cast<std::size_t>(pi)] =
                data.series_id[static_cast<std::size_t>(pos)];
            b.positive_window[static_cast<std::size_t>(pi)] =
                data.window_index[static_cast<std::size_t>(pos)];
            for (std::int64_t q = 0; q < N; ++q) {
                std::int64_t neg = -1;
                for (int tries = 0; tries < 256; ++tries) {
                    if (cfg.negative_scope == CpcConfig::NegativeScope::same_series) {
                        neg = r.begin + static_cast<std::int64_t>(
                                            rng.uniform_index(static_cast<std::uint64_t>(r.count)));
                    } else {
                        neg = static_cast<std::int64_t>(
                            rng.uniform_index(static_cast<std::uint64_t>(total_windows)));
                    }
                    if (neg != pos) break;
                    neg = -1;
                }
                if (neg < 0)
                    throw std::runtime_error("could not draw a negative distinct from the positive");
                const std::int64_t ni = (i * P + p) * N + q;
                copy_window(data, neg, b.negative_inputs.data() + ni * wsize);
                b.negative_series[static_cast<std::size_t>(ni)] =
                    data.series_id[static_cast<std::size_t>(neg)];
                b.negative_window[static_cast<std::size_t>(ni)] =
                    data.window_index[static_cast<std::size_t>(neg)];
            }
        }
    }
    return b;
}

ContrastiveBatch sample_contrastive_batch(const LabeledWindowSet& data, const CpcConfig& cfg,
                                          Rng& rng, std::int64_t batch_size) {
    const auto anchors = admissible_anchors(data, cfg);
    std::vector<std::int64_t> picked(static_cast<std::size_t>(batch_size));
    for (auto& a : picked)
        a = anchors[rng.uniform_index(static_cast<std::uint64_t>(anchors.size()))];
    return assemble_contrastive_batch(data, cfg, picked, rng);
}

PredictionHeads::PredictionHeads(std::int64_t num_predictions, std::int64_t feature_dim,
                                 Rng& init_rng)
    : P_(num_predictions), F_(feature_dim) {
    w_.assign(static_cast<std::size_t>(P_ * F_ * F_), 0.0);
    gw_.assign(w_.size(), 0.0);
    for (std::int64_t p = 0; p < P_; ++p) {
        double* h = head(p);
        for (std::int64_t r = 0; r < F_; ++r)
            for (std::int64_t c = 0; c < F_; ++c)
                h[r * F_ + c] = (r == c ? 1.0 : 0.0) + init_rng.uniform(-0.01, 0.01);
    }
}

std::vector<nn::ParamRef> PredictionHeads::params() {
    return {{"heads.w", w_.data(), gw_.data(), static_cast<std::int64_t>(w_.size())}};
}

InfoNceResult infonce_loss(const double* z_pos, const double* z_neg, const double* context,
                           std::int64_t bs, std::int64_t P, std::int64_t N, std::int64_t F,
                           PredictionHeads& heads, bool want_grads) {
    if (heads.num_predictions() != P || heads.feature_dim() != F)
        throw std::invalid_argument("prediction heads do not match (P, F)");
    if (bs < 1) throw std::invalid_argument("empty batch");

    InfoNceResult r;
    if (want_grads) {
        r.dz_pos = nn::Mat(bs * P, F);
        r.dz_neg = nn::Mat(bs * P * N, F);
        r.dcontext = nn::Mat(bs, F);
    }

    const double inv = 1.0 / static_cast<double>(bs * P);
    nn::Mat u(bs, F);   // W_p c per row
    nn::Mat du(bs, F);  // dL/du
    nn::Mat ct(F, bs);  // scratch for head gradients
    std::vector<double> logits(static_cast<std::size_t>(N + 1));
    double loss = 0.0;

    for (std::int64_t p = 0; p < P; ++p) {
        // u[b] = W_p c_b for the whole batch
        kernels::gemm_nt(static_cast<std::size_t>(bs), static_cast<std::size_t>(F),
                         static_cast<std::size_t>(F), context, static_cast<std::size_t>(F),
                         heads.head(p), static_cast<std::size_t>(F), u.v.data(),
                         static_cast<std::size_t>(F), false);
        if (want_grads) std::fill(du.v.begin(), du.v.end(), 0.0);

        for (std::int64_t b = 0; b < bs; ++b) {
            const double* ub = u.row(b);
            const double* zp = z_pos + (b * P + p) * F;
            logits[0] = kernels::dot(zp, ub, static_cast<std::size_t>(F));
            for (std::int64_t q = 0; q < N; ++q) {
                const double* zn = z_neg + ((b * P + p) * N + q) * F;
                logits[static_cast<std::size_t>(q + 1)] =
                    kernels::dot(zn, ub, static_cast<std::size_t>(F));
            }
            double m = logits[0];
            for (std::int64_t q = 1; q <= N; ++q) m = std::max(m, logits[static_cast<std::size_t>(q)]);
            if (!std::isfinite(m)) throw std::runtime_error("non-finite InfoNCE logits");
            double sum = 0.0;
            for (std::int64_t q = 0; q <= N; ++q)
                sum += std::exp(logits[static_cast<std::size_t>(q)] - m);
            const double lse = m + std::log(sum);
            loss += (lse - logits[0]) * inv;

            if (!want_grads) continue;
            double* dub = du.row(b);
            for (std::int64_t q = 0; q <= N; ++q) {
                const double soft = std::exp(logits[static_cast<std::size_t>(q)] - lse);
                const double g = (soft - (q == 0 ? 1.0 : 0.0)) * inv;
                const double* z =
                    q == 0 ? z_pos + (b * P + p) * F : z_neg + ((b * P + p) * N + (q - 1)) * F;
                double* dz = q == 0 ? r.dz_pos.row(b * P + p) : r.dz_neg.row((b * P + p) * N + (q - 1));
                kernels::axpy(static_cast<std::size_t>(F), g, ub, dz);
                kernels::axpy(static_cast<std::size_t>(F), g, z, dub);
            }
        }

        if (want_grads) {
            // dC += du W_p ; gW_p += du^T C
            kernels::gemm_nn(static_cast<std::size_t>(bs), static_cast<std::size_t>(F),
                             static_cast<std::size_t>(F), du.v.data(), static_cast<std::size_t>(F),
                             heads.head(p), static_cast<std::size_t>(F), r.dcontext.v.data(),
                             static_cast<std::size_t>(F), true);
            for (std::int64_t b = 0; b < bs; ++b)
                for (std::int64_t f = 0; f < F; ++f) ct.v[static_cast<std::size_t>(f * bs + b)] = du.row(b)[f];
            kernels::gemm_nn(static_cast<std::size_t>(F), static_cast<std::size_t>(F),
                             static_cast<std::size_t>(bs), ct.v.data(), static_cast<std::size_t>(bs),
                             context, static_cast<std::size_t>(F), heads.head_grad(p),
                             static_cast<std::size_t>(F), true);
        }
    }
    r.loss = loss;
    return r;
}

nn::Mat context_vector(nn::Sequential& encoder, nn::Gru* gru, const CpcConfig& cfg,
                       const Tensor& window_sequence, bool train, Rng* dropout_rng) {
    cfg.validate();
    if (window_sequence.shape.rank() != 4)
        throw std::invalid_argument("window_sequence must be [bs, L+1, ch, T]");
    const std::int64_t bs = window_sequence.shape[0];
    const std::int64_t steps = window_sequence.shape[1];
    const std::int64_t ch = window_sequence.shape[2];
    const std::int64_t T = window_sequence.shape[3];
    if (steps != cfg.context_length + 1)
        throw std::invalid_argument("sequence length must be L+1");

    Tensor flat(TensorShape{bs * steps, ch, T}, window_sequence.v);
    nn::Value z = encoder.forward(nn::Value::from_batch_tensor(flat), train, dropout_rng);
    const nn::Mat& zm = z.mat;  // [bs*steps, F]
    if (!cfg.use_ar) {
        nn::Mat out(bs, zm.cols);
        for (std::int64_t b = 0; b < bs; ++b)
            std::copy_n(zm.row((b + 1) * steps - 1), zm.cols, out.row(b));
        return out;
    }
    if (!gru) throw std::invalid_argument("use_ar requires a GRU module");
    return gru->forward(zm.v.data(), bs, steps);
}

}  // namespace somcpc
