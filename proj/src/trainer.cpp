#include "somcpc/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "somcpc/kernels.hpp"
#include "somcpc/rng.hpp"
#include "somcpc/serialize.hpp"

namespace somcpc {

namespace {
constexpr std::uint64_t kInitStream = 0x1717;
constexpr std::uint64_t kTrainStream = 0x2929;
constexpr std::uint64_t kEvalStream = 0x3b3b;

std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}
}  // namespace

const char* model_kind_name(ModelKind k) {
    switch (k) {
        case ModelKind::som_cpc: return "som_cpc";
        case ModelKind::som_vae: return "som_vae";
        case ModelKind::desom: return "desom";
    }
    return "?";
}

ModelKind model_kind_from_name(const std::string& name) {
    if (name == "som_cpc") return ModelKind::som_cpc;
    if (name == "som_vae") return ModelKind::som_vae;
    if (name == "desom") return ModelKind::desom;
    throw std::invalid_argument("unknown model kind '" + name + "'");
}

void TrainConfig::validate() const {
    if (alpha < 0) throw std::invalid_argument("alpha must be non-negative");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
    if (som.width < 1 || som.height < 1) throw std::invalid_argument("SOM grid must be >= 1x1");
    if (som.sigma_end <= 0) throw std::invalid_argument("sigma_end must be positive");
    if (som.beta_over_alpha <= 0 || som.beta_over_alpha > 1)
        throw std::invalid_argument("beta_over_alpha must be in (0, 1]");
    if (optimizer.lr <= 0) throw std::invalid_argument("learning rate must be positive");
    if (model == ModelKind::som_cpc) cpc.validate();
}

// ---------------------------------------------------------------------------
// model

Model Model::create(const TrainConfig& cfg, std::int64_t channels, std::int64_t window_len) {
    cfg.validate();
    Model m;
    m.kind = cfg.model;
    m.cfg = cfg;
    m.channels = channels;
    m.window_len = window_len;
    Rng init_rng(Rng::derive(cfg.seed, kInitStream));

    const TensorShape in_shape{channels, window_len};
    if (cfg.model == ModelKind::som_cpc) {
        m.encoder = nn::Sequential("encoder", nn::encoder_spec_cpc_synthetic(), in_shape, init_rng);
        m.feature_dim = m.encoder.out_shape()[0];
        if (cfg.cpc.use_ar) m.gru.emplace("gru", m.feature_dim, m.feature_dim, init_rng);
        m.heads.emplace(cfg.cpc.num_predictions, m.feature_dim, init_rng);
    } else {
        m.encoder = nn::Sequential("encoder", nn::encoder_spec_ae_synthetic(), in_shape, init_rng);
        m.feature_dim = m.encoder.out_shape()[0];
        m.decoder.emplace("decoder", nn::decoder_spec_ae_synthetic(), TensorShape{m.feature_dim},
                          init_rng);
        if (cfg.model == ModelKind::som_vae)
            m.decoder_quant.emplace("decoder_quant", nn::decoder_spec_ae_synthetic(),
                                    TensorShape{m.feature_dim}, init_rng);
    }
    m.som = SomGrid::create(cfg.som.width, cfg.som.height, m.feature_dim, init_rng);
    m.som_grad.assign(m.som.prototypes.size(), 0.0);
    return m;
}

std::vector<nn::ParamRef> Model::params() {
    std::vector<nn::ParamRef> out = encoder.params();
    if (decoder) {
        auto d = decoder->params();
        out.insert(out.end(), d.begin(), d.end());
    }
    if (decoder_quant) {
        auto d = decoder_quant->params();
        out.insert(out.end(), d.begin(), d.end());
    }
    if (gru) {
        auto g = gru->params();
        out.insert(out.end(), g.begin(), g.end());
    }
    if (heads) {
        auto h = heads->params();
        out.insert(out.end(), h.begin(), h.end());
    }
    out.push_back({"som.prototypes", som.prototypes.data(), som_grad.data(),
                   static_cast<std::int64_t>(som.prototypes.size())});
    return out;
}

nn::Mat Model::encode_windows(const Tensor& windows) {
    nn::Value z = encoder.forward(nn::Value::from_batch_tensor(windows), false, nullptr);
    return std::move(z.mat);
}

NeighborhoodKernel Model::kernel(std::int64_t total_steps) const {
    NeighborhoodKernel k;
    k.kind = cfg.som.kernel;
    k.beta_over_alpha = cfg.som.beta_over_alpha;
    const double sigma0 =
        cfg.som.sigma_0 > 0 ? cfg.som.sigma_0 : 0.5 * std::sqrt(static_cast<double>(som.k()));
    k.schedule =
        SigmaSchedule::make(sigma0, cfg.som.sigma_end, std::max<std::int64_t>(1, total_steps - 1));
    return k;
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(OptimizerConfig cfg, std::int64_t param_count) : cfg_(cfg) {
    m_.assign(static_cast<std::size_t>(param_count), 0.0);
    v_.assign(static_cast<std::size_t>(param_count), 0.0);
}

void Adam::step(const std::vector<nn::ParamRef>& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    std::size_t off = 0;
    for (const auto& p : params) {
        for (std::int64_t i = 0; i < p.size; ++i, ++off) {
            const double g = p.grad[i];
            m_[off] = cfg_.beta1 * m_[off] + (1.0 - cfg_.beta1) * g;
            v_[off] = cfg_.beta2 * v_[off] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = m_[off] / bc1;
            const double vhat = v_[off] / bc2;
            p.value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

void Adam::restore(std::vector<double> m, std::vector<double> v, std::int64_t t) {
    if (m.size() != m_.size() || v.size() != v_.size())
        throw std::runtime_error("optimizer state size mismatch");
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = t;
}

// ---------------------------------------------------------------------------
// step functions

namespace {

// Mean over batch of the per-window sum of squared errors; fills
// d(loss)/d(xhat).
double recon_loss(const nn::Feat& xhat, const nn::Feat& x, nn::Feat& dxhat) {
    const std::size_t n = x.v.size();
    if (xhat.v.size() != n) throw std::invalid_argument("reconstruction shape mismatch");
    const double inv_b = 1.0 / static_cast<double>(x.B);
    double loss = 0.0;
    dxhat = nn::Feat(xhat.C, xhat.B, xhat.T);
    for (std::size_t i = 0; i < n; ++i) {
        const double d = xhat.v[i] - x.v[i];
        loss += d * d;
        dxhat.v[i] = 2.0 * d * inv_b;
    }
    return loss * inv_b;
}

Tensor gather_windows(const LabeledWindowSet& set, const std::vector<std::int64_t>& idx) {
    Tensor t(TensorShape{static_cast<std::int64_t>(idx.size()), set.channels, set.window_len});
    const std::int64_t wsize = set.channels * set.window_len;
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy_n(set.window(idx[i]), wsize, t.data() + static_cast<std::int64_t>(i) * wsize);
    return t;
}

LossBundle make_bundle(double task, const SplitLossResult& split, double mult, double alpha,
                       double sigma) {
    LossBundle lb;
    lb.task = task;
    lb.commitment = split.commitment;
    lb.som = split.som;
    lb.topo = split.commitment + mult * split.som;
    lb.total = lb.task + alpha * lb.topo;
    lb.sigma = sigma;
    return lb;
}

}  // namespace

LossBundle somcpc_train_step(Model& m, const ContrastiveBatch& b, const NeighborhoodKernel& kern,
                             std::int64_t sigma_step, Rng& rng) {
    const TrainConfig& cfg = m.cfg;
    const std::int64_t bs = b.batch, L1 = b.context_steps;
    const std::int64_t P = b.num_predictions, N = b.num_negatives;
    const std::int64_t ch = b.channels, T = b.window_len;
    const std::int64_t n_ctx = bs * L1, n_pos = bs * P, n_neg = bs * P * N;
    const std::int64_t total = n_ctx + n_pos + n_neg;
    const std::int64_t wsize = ch * T;

    // one encoder pass over context windows, positives and negatives
    Tensor all(TensorShape{total, ch, T});
    std::copy_n(b.context_inputs.data(), n_ctx * wsize, all.data());
    std::copy_n(b.positive_inputs.data(), n_pos * wsize, all.data() + n_ctx * wsize);
    std::copy_n(b.negative_inputs.data(), n_neg * wsize, all.data() + (n_ctx + n_pos) * wsize);
    nn::Value zv = m.encoder.forward(nn::Value::from_batch_tensor(all), true, &rng);
    nn::Mat& z = zv.mat;
    const std::int64_t F = z.cols;
    const double* zctx = z.row(0);
    const double* zpos = z.row(n_ctx);
    const double* zneg = z.row(n_ctx + n_pos);

    nn::Mat c(bs, F);
    if (cfg.cpc.use_ar) {
        c = m.gru->forward(zctx, bs, L1);
    } else {
        for (std::int64_t i = 0; i < bs; ++i)
            std::copy_n(zctx + ((i + 1) * L1 - 1) * F, F, c.row(i));
    }

    InfoNceResult nce = infonce_loss(zpos, zneg, c.v.data(), bs, P, N, F, *m.heads, true);
    SplitLossResult split = commitment_and_som_losses(m.som, kern, sigma_step, c.v.data(), bs, F,
                                                      cfg.stop_grad_som);

    nn::Mat dc = std::move(nce.dcontext);
    kernels::axpy(dc.v.size(), cfg.alpha, split.dz.data(), dc.v.data());
    kernels::axpy(m.som_grad.size(), cfg.alpha, split.dprototypes.data(), m.som_grad.data());

    nn::Mat dz(total, F);
    if (cfg.cpc.use_ar) {
        const std::vector<double> dzseq = m.gru->backward(dc);
        std::copy_n(dzseq.data(), n_ctx * F, dz.v.data());
    } else {
        for (std::int64_t i = 0; i < bs; ++i) std::copy_n(dc.row(i), F, dz.row((i + 1) * L1 - 1));
    }
    std::copy_n(nce.dz_pos.v.data(), n_pos * F, dz.row(n_ctx));
    std::copy_n(nce.dz_neg.v.data(), n_neg * F, dz.row(n_ctx + n_pos));
    m.encoder.backward(nn::Value::from_mat(std::move(dz)), false);

    const double sigma = kern.kind == NeighborhoodKernel::Kind::gaussian
                             ? sigma_at(kern.schedule, sigma_step)
                             : 0.0;
    return make_bundle(nce.loss, split, kern.neighbor_multiplier(), cfg.alpha, sigma);
}

LossBundle autoencoder_train_step(Model& m, const Tensor& x, const NeighborhoodKernel& kern,
                                  std::int64_t sigma_step, Rng& rng) {
    const TrainConfig& cfg = m.cfg;
    const std::int64_t bs = x.shape[0];
    const nn::Feat x_cm = nn::Value::from_batch_tensor(x).feat;
    nn::Value zv = m.encoder.forward(nn::Value::from_batch_tensor(x), true, &rng);
    nn::Mat z = std::move(zv.mat);
    const std::int64_t F = z.cols;

    nn::Value xhat_c = m.decoder->forward(nn::Value::from_mat(z), true, &rng);
    nn::Feat dxhat;
    double task = recon_loss(xhat_c.feat, x_cm, dxhat);
    nn::Value dz_v = m.decoder->backward(nn::Value::from_feat(std::move(dxhat)), true);
    nn::Mat dz = std::move(dz_v.mat);

    SplitLossResult split =
        commitment_and_som_losses(m.som, kern, sigma_step, z.v.data(), bs, F, cfg.stop_grad_som);

    if (cfg.model == ModelKind::som_vae) {
        // discrete path: decode the winning prototypes; the input gradient of
        // this decoder reaches the encoder unchanged (straight-through)
        nn::Mat q(bs, F);
        for (std::int64_t i = 0; i < bs; ++i)
            std::copy_n(m.som.proto(split.winners[static_cast<std::size_t>(i)]), F, q.row(i));
        nn::Value xhat_q = m.decoder_quant->forward(nn::Value::from_mat(std::move(q)), true, &rng);
        nn::Feat dxhat_q;
        task += recon_loss(xhat_q.feat, x_cm, dxhat_q);
        nn::Value dq = m.decoder_quant->backward(nn::Value::from_feat(std::move(dxhat_q)), true);
        kernels::axpy(dz.v.size(), 1.0, dq.mat.v.data(), dz.v.data());
    }

    kernels::axpy(dz.v.size(), cfg.alpha, split.dz.data(), dz.v.data());
    kernels::axpy(m.som_grad.size(), cfg.alpha, split.dprototypes.data(), m.som_grad.data());
    m.encoder.backward(nn::Value::from_mat(std::move(dz)), false);

    const double sigma = kern.kind == NeighborhoodKernel::Kind::gaussian
                             ? sigma_at(kern.schedule, sigma_step)
                             : 0.0;
    return make_bundle(task, split, kern.neighbor_multiplier(), cfg.alpha, sigma);
}

namespace {

TrainerSnapshot make_snapshot(Model& model, const Adam& adam, const Rng& rng,
                              std::int64_t epochs_done, std::int64_t steps_done, double val_task,
                              double best_val, std::int64_t best_epoch) {
    TrainerSnapshot s;
    s.epochs_done = epochs_done;
    s.steps_done = steps_done;
    for (const auto& p : model.params())
        s.param_values.insert(s.param_values.end(), p.value, p.value + p.size);
    s.adam_m = adam.m();
    s.adam_v = adam.v();
    s.adam_t = adam.t();
    s.rng_state = rng.state();
    s.val_task = val_task;
    s.best_val_task = best_val;
    s.best_epoch = best_epoch;
    return s;
}

void install_params(Model& model, const std::vector<double>& values) {
    std::size_t off = 0;
    for (const auto& p : model.params()) {
        if (off + static_cast<std::size_t>(p.size) > values.size())
            throw std::runtime_error("snapshot parameter size mismatch");
        std::copy_n(values.data() + off, p.size, p.value);
        off += static_cast<std::size_t>(p.size);
    }
    if (off != values.size()) throw std::runtime_error("snapshot parameter size mismatch");
}

}  // namespace

std::int64_t steps_per_epoch(const TrainConfig& cfg, const Dataset& data) {
    const std::int64_t n =
        cfg.model == ModelKind::som_cpc
            ? static_cast<std::int64_t>(admissible_anchors(data.train, cfg.cpc).size())
            : data.train.num_windows();
    return (n + cfg.batch_size - 1) / cfg.batch_size;
}

double task_loss_on_split(Model& model, const Dataset& data, Split split) {
    const TrainConfig& cfg = model.cfg;
    const LabeledWindowSet& set = data.split(split);
    if (set.num_windows() == 0) throw std::invalid_argument("empty split");

    if (model.kind == ModelKind::som_cpc) {
        const auto anchors = admissible_anchors(set, cfg.cpc);
        Rng rng(Rng::derive(cfg.seed, kEvalStream + static_cast<std::uint64_t>(split)));
        double acc = 0.0;
        std::int64_t count = 0;
        for (std::size_t begin = 0; begin < anchors.size();
             begin += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end =
                std::min(anchors.size(), begin + static_cast<std::size_t>(cfg.batch_size));
            std::vector<std::int64_t> chunk(anchors.begin() + static_cast<std::ptrdiff_t>(begin),
                                            anchors.begin() + static_cast<std::ptrdiff_t>(end));
            ContrastiveBatch b = assemble_contrastive_batch(set, cfg.cpc, chunk, rng);
            const std::int64_t bs = b.batch, L1 = b.context_steps;
            const std::int64_t n_ctx = bs * L1, n_pos = bs * b.num_predictions;
            const std::int64_t n_neg = bs * b.num_predictions * b.num_negatives;
            const std::int64_t wsize = b.channels * b.window_len;
            Tensor all(TensorShape{n_ctx + n_pos + n_neg, b.channels, b.window_len});
            std::copy_n(b.context_inputs.data(), n_ctx * wsize, all.data());
            std::copy_n(b.positive_inputs.data(), n_pos * wsize, all.data() + n_ctx * wsize);
            std::copy_n(b.negative_inputs.data(), n_neg * wsize,
                        all.data() + (n_ctx + n_pos) * wsize);
            nn::Value zv = model.encoder.forward(nn::Value::from_batch_tensor(all), false, nullptr);
            const nn::Mat& z = zv.mat;
            const std::int64_t F = z.cols;
            nn::Mat c(bs, F);
            if (cfg.cpc.use_ar) {
                c = model.gru->forward(z.row(0), bs, L1);
            } else {
                for (std::int64_t i = 0; i < bs; ++i)
                    std::copy_n(z.row((i + 1) * L1 - 1), F, c.row(i));
            }
            InfoNceResult nce =
                infonce_loss(z.row(n_ctx), z.row(n_ctx + n_pos), c.v.data(), bs,
                             b.num_predictions, b.num_negatives, F, *model.heads, false);
            acc += nce.loss * static_cast<double>(bs);
            count += bs;
        }
        return acc / static_cast<double>(count);
    }

    double acc = 0.0;
    std::int64_t count = 0;
    std::vector<std::int64_t> idx;
    for (std::int64_t begin = 0; begin < set.num_windows(); begin += cfg.batch_size) {
        const std::int64_t end = std::min(set.num_windows(), begin + cfg.batch_size);
        idx.resize(static_cast<std::size_t>(end - begin));
        std::iota(idx.begin(), idx.end(), begin);
        Tensor x = gather_windows(set, idx);
        const nn::Feat x_cm = nn::Value::from_batch_tensor(x).feat;
        nn::Value zv = model.encoder.forward(nn::Value::from_batch_tensor(x), false, nullptr);
        nn::Mat z = std::move(zv.mat);
        nn::Value xhat = model.decoder->forward(nn::Value::from_mat(z), false, nullptr);
        nn::Feat scratch;
        double task = recon_loss(xhat.feat, x_cm, scratch);
        if (model.kind == ModelKind::som_vae) {
            nn::Mat q(z.rows, z.cols);
            for (std::int64_t i = 0; i < z.rows; ++i) {
                const std::int64_t j = winner(model.som, z.row(i), z.cols);
                std::copy_n(model.som.proto(j), z.cols, q.row(i));
            }
            nn::Value xq =
                model.decoder_quant->forward(nn::Value::from_mat(std::move(q)), false, nullptr);
            task += recon_loss(xq.feat, x_cm, scratch);
        }
        acc += task * static_cast<double>(end - begin);
        count += end - begin;
    }
    return acc / static_cast<double>(count);
}

TrainOutput train_model(const TrainConfig& cfg, const Dataset& data,
                        const TrainerSnapshot* resume, const StepCallback& on_step,
                        const EpochCallback& on_epoch) {
    cfg.validate();
    if (data.train.num_windows() == 0) throw std::invalid_argument("empty training split");

    TrainOutput out;
    out.model = Model::create(cfg, data.train.channels, data.train.window_len);
    Model& model = out.model;
    auto params = model.params();
    Adam adam(cfg.optimizer, nn::param_count(params));
    Rng train_rng(Rng::derive(cfg.seed, kTrainStream));

    std::int64_t start_epoch = 0;
    std::int64_t step = 0;
    double best_val = std::numeric_limits<double>::infinity();
    std::int64_t best_epoch = -1;
    if (resume) {
        install_params(model, resume->param_values);
        adam.restore(resume->adam_m, resume->adam_v, resume->adam_t);
        train_rng.set_state(resume->rng_state);
        start_epoch = resume->epochs_done;
        step = resume->steps_done;
        best_val = resume->best_val_task;
        best_epoch = resume->best_epoch;
    }

    out.steps_per_epoch = steps_per_epoch(cfg, data);
    out.total_planned_steps = out.steps_per_epoch * cfg.max_epochs;
    const NeighborhoodKernel kern = model.kernel(out.total_planned_steps);

    std::vector<std::int64_t> canonical;
    if (cfg.model == ModelKind::som_cpc) {
        canonical = admissible_anchors(data.train, cfg.cpc);
    } else {
        canonical.resize(static_cast<std::size_t>(data.train.num_windows()));
        std::iota(canonical.begin(), canonical.end(), 0);
    }

    std::vector<std::int64_t> pool;
    for (std::int64_t epoch = start_epoch; epoch < cfg.max_epochs; ++epoch) {
        pool = canonical;
        train_rng.shuffle(pool);
        for (std::size_t begin = 0; begin < pool.size();
             begin += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end =
                std::min(pool.size(), begin + static_cast<std::size_t>(cfg.batch_size));
            std::vector<std::int64_t> chunk(pool.begin() + static_cast<std::ptrdiff_t>(begin),
                                            pool.begin() + static_cast<std::ptrdiff_t>(end));
            nn::zero_grads(params);
            LossBundle lb;
            try {
                if (cfg.model == ModelKind::som_cpc) {
                    ContrastiveBatch b =
                        assemble_contrastive_batch(data.train, cfg.cpc, chunk, train_rng);
                    lb = somcpc_train_step(model, b, kern, step, train_rng);
                } else {
                    Tensor x = gather_windows(data.train, chunk);
                    lb = autoencoder_train_step(model, x, kern, step, train_rng);
                }
            } catch (const std::exception& e) {
                // non-finite activations inside a step are a divergence, not
                // a usage error
                if (std::string(e.what()).find("non-finite") != std::string::npos)
                    throw DivergenceError(step, std::string(e.what()) + " at step " +
                                                    std::to_string(step));
                throw;
            }
            if (!std::isfinite(lb.total))
                throw DivergenceError(step, "non-finite loss at step " + std::to_string(step));
            adam.step(params);
            if (!nn::all_finite(params))
                throw DivergenceError(step,
                                      "non-finite parameter after step " + std::to_string(step));
            StepRecord rec{step, epoch, lb};
            out.history.push_back(rec);
            if (on_step) on_step(rec);
            ++step;
        }

        const double val_task = task_loss_on_split(model, data, Split::val);
        const bool is_best = val_task < best_val;
        if (is_best) {
            best_val = val_task;
            best_epoch = epoch;
        }
        TrainerSnapshot snap =
            make_snapshot(model, adam, train_rng, epoch + 1, step, val_task, best_val, best_epoch);
        if (is_best) out.best = snap;
        out.last = std::move(snap);
        if (on_epoch && !on_epoch(epoch, val_task, out.last, is_best)) break;
    }
    return out;
}

TrainOutput train_som_cpc(const TrainConfig& cfg, const Dataset& data) {
    if (cfg.model != ModelKind::som_cpc) throw std::invalid_argument("config is not som_cpc");
    return train_model(cfg, data);
}

TrainOutput train_som_vae(const TrainConfig& cfg, const Dataset& data) {
    if (cfg.model != ModelKind::som_vae) throw std::invalid_argument("config is not som_vae");
    return train_model(cfg, data);
}

TrainOutput train_desom(const TrainConfig& cfg, const Dataset& data) {
    if (cfg.model != ModelKind::desom) throw std::invalid_argument("config is not desom");
    return train_model(cfg, data);
}

// ---------------------------------------------------------------------------
// evaluation

NodeAssignment assign_nodes(Model& model, const LabeledWindowSet& set, Top2Assignment* top2) {
    NodeAssignment a;
    a.k = model.som.k();
    a.split_tag = set.split_tag;
    const std::int64_t L = model.kind == ModelKind::som_cpc && model.cfg.cpc.use_ar
                               ? model.cfg.cpc.context_length
                               : 0;
    const std::int64_t F = model.feature_dim;

    std::vector<std::int64_t> flat_kept;
    nn::Mat contexts;
    if (L == 0) {
        const std::int64_t chunk = 1024;
        contexts = nn::Mat(set.num_windows(), F);
        std::vector<std::int64_t> idx;
        for (std::int64_t begin = 0; begin < set.num_windows(); begin += chunk) {
            const std::int64_t end = std::min(set.num_windows(), begin + chunk);
            idx.resize(static_cast<std::size_t>(end - begin));
            std::iota(idx.begin(), idx.end(), begin);
            nn::Mat z = model.encode_windows(gather_windows(set, idx));
            std::copy_n(z.v.data(), z.v.size(), contexts.row(begin));
        }
        flat_kept.resize(static_cast<std::size_t>(set.num_windows()));
        std::iota(flat_kept.begin(), flat_kept.end(), 0);
    } else {
        // AR context: the first L windows of each series have no full context
        std::vector<double> collected;
        std::vector<std::int64_t> idx;
        std::vector<double> ctxbuf;
        std::int64_t begin = 0;
        const std::int64_t n = set.num_windows();
        for (std::int64_t i = 1; i <= n; ++i) {
            if (i == n || set.series_id[static_cast<std::size_t>(i)] !=
                              set.series_id[static_cast<std::size_t>(begin)]) {
                const std::int64_t count = i - begin;
                if (count > L) {
                    idx.resize(static_cast<std::size_t>(count));
                    std::iota(idx.begin(), idx.end(), begin);
                    nn::Mat z = model.encode_windows(gather_windows(set, idx));
                    const std::int64_t anchors = count - L;
                    ctxbuf.resize(static_cast<std::size_t>(anchors * (L + 1) * F));
                    for (std::int64_t aidx = 0; aidx < anchors; ++aidx)
                        std::copy_n(z.row(aidx), (L + 1) * F, ctxbuf.data() + aidx * (L + 1) * F);
                    nn::Mat c = model.gru->forward(ctxbuf.data(), anchors, L + 1);
                    collected.insert(collected.end(), c.v.begin(), c.v.end());
                    for (std::int64_t aidx = 0; aidx < anchors; ++aidx)
                        flat_kept.push_back(begin + L + aidx);
                }
                begin = i;
            }
        }
        contexts = nn::Mat(static_cast<std::int64_t>(flat_kept.size()), F);
        contexts.v = std::move(collected);
    }

    const auto kept = static_cast<std::int64_t>(flat_kept.size());
    a.node_index.resize(static_cast<std::size_t>(kept));
    a.label.resize(static_cast<std::size_t>(kept));
    a.series_id.resize(static_cast<std::size_t>(kept));
    a.window_index.resize(static_cast<std::size_t>(kept));
    if (top2) {
        top2->best.resize(static_cast<std::size_t>(kept));
        top2->second.resize(static_cast<std::size_t>(kept));
    }
    for (std::int64_t i = 0; i < kept; ++i) {
        const std::int64_t w = flat_kept[static_cast<std::size_t>(i)];
        const auto [b0, b1] = winner_top2(model.som, contexts.row(i), F);
        a.node_index[static_cast<std::size_t>(i)] = b0;
        a.label[static_cast<std::size_t>(i)] = set.labels[static_cast<std::size_t>(w)];
        a.series_id[static_cast<std::size_t>(i)] = set.series_id[static_cast<std::size_t>(w)];
        a.window_index[static_cast<std::size_t>(i)] =
            set.window_index[static_cast<std::size_t>(w)];
        if (top2) {
            top2->best[static_cast<std::size_t>(i)] = b0;
            top2->second[static_cast<std::size_t>(i)] = b1;
        }
    }
    return a;
}

MetricsReport evaluate_checkpoint(Model& model, const Dataset& data, Split split) {
    NodeAssignment train_assign = assign_nodes(model, data.train, nullptr);
    const NodeColoring coloring = NodeColoring::fit(train_assign);
    Top2Assignment top2;
    NodeAssignment eval = assign_nodes(model, data.split(split), &top2);
    return compute_metrics(eval, top2, coloring, model.som);
}

LatentExport export_latents(Model& model, const LabeledWindowSet& set) {
    if (model.kind == ModelKind::som_cpc && model.cfg.cpc.use_ar)
        throw std::runtime_error("latent export for AR models is not supported");
    LatentExport e;
    e.feature_dim = model.feature_dim;
    const std::int64_t chunk = 1024;
    std::vector<std::int64_t> idx;
    e.latents.reserve(static_cast<std::size_t>(set.num_windows() * model.feature_dim));
    for (std::int64_t begin = 0; begin < set.num_windows(); begin += chunk) {
        const std::int64_t end = std::min(set.num_windows(), begin + chunk);
        idx.resize(static_cast<std::size_t>(end - begin));
        std::iota(idx.begin(), idx.end(), begin);
        nn::Mat z = model.encode_windows(gather_windows(set, idx));
        e.latents.insert(e.latents.end(), z.v.begin(), z.v.end());
    }
    e.labels = set.labels;
    e.series_id = set.series_id;
    e.window_index = set.window_index;
    return e;
}

// ---------------------------------------------------------------------------
// persistence

void write_loss_csv(const std::string& path, const std::vector<StepRecord>& history) {
    std::string out = "step,epoch,task,topo,commitment,som,total,sigma\n";
    for (const auto& r : history) {
        out += std::to_string(r.step) + "," + std::to_string(r.epoch) + "," +
               fmt_g17(r.losses.task) + "," + fmt_g17(r.losses.topo) + "," +
               fmt_g17(r.losses.commitment) + "," + fmt_g17(r.losses.som) + "," +
               fmt_g17(r.losses.total) + "," + fmt_g17(r.losses.sigma) + "\n";
    }
    write_text_file(path, out);
}

std::vector<StepRecord> read_loss_csv(const std::string& path) {
    std::istringstream in(read_text_file(path));
    std::string line;
    if (!std::getline(in, line) || line != "step,epoch,task,topo,commitment,som,total,sigma")
        throw std::runtime_error(path + ": unexpected loss CSV header");
    std::vector<StepRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        StepRecord r;
        double fields[8];
        std::size_t pos = 0;
        for (int f = 0; f < 8; ++f) {
            const std::size_t next = line.find(',', pos);
            if (next == std::string::npos && f != 7)
                throw std::runtime_error(path + ": malformed loss CSV row");
            const std::string tok =
                line.substr(pos, next == std::string::npos ? next : next - pos);
            fields[f] = std::stod(tok);
            pos = next + 1;
        }
        r.step = static_cast<std::int64_t>(fields[0]);
        r.epoch = static_cast<std::int64_t>(fields[1]);
        r.losses.task = fields[2];
        r.losses.topo = fields[3];
        r.losses.commitment = fields[4];
        r.losses.som = fields[5];
        r.losses.total = fields[6];
        r.losses.sigma = fields[7];
        out.push_back(r);
    }
    return out;
}

nlohmann::ordered_json train_config_to_json(const TrainConfig& cfg) {
    nlohmann::ordered_json j;
    j["type"] = model_kind_name(cfg.model);
    j["alpha"] = cfg.alpha;
    j["stop_grad_som"] = cfg.stop_grad_som;
    if (cfg.model == ModelKind::som_cpc) {
        nlohmann::ordered_json c;
        c["num_predictions"] = cfg.cpc.num_predictions;
        c["num_negatives"] = cfg.cpc.num_negatives;
        c["negative_scope"] = cfg.cpc.negative_scope == CpcConfig::NegativeScope::same_series
                                  ? "same_series"
                                  : "whole_train_set";
        c["use_ar"] = cfg.cpc.use_ar;
        c["context_length"] = cfg.cpc.context_length;
        j["cpc"] = std::move(c);
    }
    nlohmann::ordered_json o;
    o["lr"] = cfg.optimizer.lr;
    o["beta1"] = cfg.optimizer.beta1;
    o["beta2"] = cfg.optimizer.beta2;
    o["eps"] = cfg.optimizer.eps;
    j["optimizer"] = std::move(o);
    j["batch_size"] = cfg.batch_size;
    j["max_epochs"] = cfg.max_epochs;
    j["seed"] = cfg.seed;
    nlohmann::ordered_json s;
    s["width"] = cfg.som.width;
    s["height"] = cfg.som.height;
    if (cfg.som.sigma_0 > 0) s["sigma_0"] = cfg.som.sigma_0;
    s["sigma_end"] = cfg.som.sigma_end;
    s["kernel"] = cfg.som.kernel == NeighborhoodKernel::Kind::plus ? "plus" : "gaussian";
    s["beta_over_alpha"] = cfg.som.beta_over_alpha;
    j["som"] = std::move(s);
    return j;
}

TrainConfig train_config_from_json(const nlohmann::ordered_json& j) {
    TrainConfig cfg;
    cfg.model = model_kind_from_name(j.at("type").get<std::string>());
    cfg.alpha = j.at("alpha").get<double>();
    if (j.contains("stop_grad_som")) cfg.stop_grad_som = j.at("stop_grad_som").get<bool>();
    if (j.contains("cpc")) {
        const auto& c = j.at("cpc");
        if (c.contains("num_predictions"))
            cfg.cpc.num_predictions = c.at("num_predictions").get<std::int64_t>();
        if (c.contains("num_negatives"))
            cfg.cpc.num_negatives = c.at("num_negatives").get<std::int64_t>();
        if (c.contains("negative_scope"))
            cfg.cpc.negative_scope = c.at("negative_scope").get<std::string>() == "same_series"
                                         ? CpcConfig::NegativeScope::same_series
                                         : CpcConfig::NegativeScope::whole_train_set;
        if (c.contains("use_ar")) cfg.cpc.use_ar = c.at("use_ar").get<bool>();
        if (c.contains("context_length"))
            cfg.cpc.context_length = c.at("context_length").get<std::int64_t>();
    }
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        if (o.contains("lr")) cfg.optimizer.lr = o.at("lr").get<double>();
        if (o.contains("beta1")) cfg.optimizer.beta1 = o.at("beta1").get<double>();
        if (o.contains("beta2")) cfg.optimizer.beta2 = o.at("beta2").get<double>();
        if (o.contains("eps")) cfg.optimizer.eps = o.at("eps").get<double>();
    }
    if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<std::int64_t>();
    if (j.contains("max_epochs")) cfg.max_epochs = j.at("max_epochs").get<std::int64_t>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("som")) {
        const auto& s = j.at("som");
        if (s.contains("width")) cfg.som.width = s.at("width").get<std::int64_t>();
        if (s.contains("height")) cfg.som.height = s.at("height").get<std::int64_t>();
        if (s.contains("sigma_0")) cfg.som.sigma_0 = s.at("sigma_0").get<double>();
        if (s.contains("sigma_end")) cfg.som.sigma_end = s.at("sigma_end").get<double>();
        if (s.contains("kernel"))
            cfg.som.kernel = s.at("kernel").get<std::string>() == "plus"
                                 ? NeighborhoodKernel::Kind::plus
                                 : NeighborhoodKernel::Kind::gaussian;
        if (s.contains("beta_over_alpha"))
            cfg.som.beta_over_alpha = s.at("beta_over_alpha").get<double>();
    }
    cfg.validate();
    return cfg;
}

namespace {
constexpr char kCheckpointMagic[] = "SCPCKPT1";

nlohmann::ordered_json finite_or_string(double v) {
    if (std::isfinite(v)) return v;
    return v > 0 ? "inf" : "-inf";
}

double finite_from_json(const nlohmann::ordered_json& j) {
    if (j.is_string())
        return j.get<std::string>() == "inf" ? std::numeric_limits<double>::infinity()
                                             : -std::numeric_limits<double>::infinity();
    return j.get<double>();
}
}  // namespace

void save_checkpoint(const std::string& path, const TrainConfig& cfg, std::int64_t channels,
                     std::int64_t window_len, const TrainerSnapshot& snapshot) {
    BinaryContainer c;
    c.magic = kCheckpointMagic;
    c.header["schema"] = 1;
    c.header["config"] = train_config_to_json(cfg);
    c.header["channels"] = channels;
    c.header["window_len"] = window_len;
    c.header["epochs_done"] = snapshot.epochs_done;
    c.header["steps_done"] = snapshot.steps_done;
    c.header["adam_t"] = snapshot.adam_t;
    c.header["rng_state"] = snapshot.rng_state;
    c.header["val_task"] = finite_or_string(snapshot.val_task);
    c.header["best_val_task"] = finite_or_string(snapshot.best_val_task);
    c.header["best_epoch"] = snapshot.best_epoch;
    c.header["arrays"] = nlohmann::ordered_json::array();

    Model proto = Model::create(cfg, channels, window_len);
    auto params = proto.params();
    nlohmann::ordered_json names = nlohmann::ordered_json::array();
    std::size_t off = 0;
    for (const auto& p : params) {
        if (off + static_cast<std::size_t>(p.size) > snapshot.param_values.size())
            throw std::runtime_error("snapshot does not match the configured model");
        c.add_f64(p.name, snapshot.param_values.data() + off, static_cast<std::size_t>(p.size));
        names.push_back(p.name);
        off += static_cast<std::size_t>(p.size);
    }
    if (off != snapshot.param_values.size())
        throw std::runtime_error("snapshot does not match the configured model");
    c.header["param_order"] = names;
    c.add_f64("adam.m", snapshot.adam_m.data(), snapshot.adam_m.size());
    c.add_f64("adam.v", snapshot.adam_v.data(), snapshot.adam_v.size());
    c.write(path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    BinaryContainer c = BinaryContainer::read(path, kCheckpointMagic);
    if (c.header.at("schema").get<int>() != 1)
        throw std::runtime_error(path + ": checkpoint schema version mismatch");
    LoadedCheckpoint out;
    out.cfg = train_config_from_json(c.header.at("config"));
    out.channels = c.header.at("channels").get<std::int64_t>();
    out.window_len = c.header.at("window_len").get<std::int64_t>();
    TrainerSnapshot& s = out.snapshot;
    s.epochs_done = c.header.at("epochs_done").get<std::int64_t>();
    s.steps_done = c.header.at("steps_done").get<std::int64_t>();
    s.adam_t = c.header.at("adam_t").get<std::int64_t>();
    for (std::size_t i = 0; i < 4; ++i)
        s.rng_state[i] = c.header.at("rng_state").at(i).get<std::uint64_t>();
    s.val_task = finite_from_json(c.header.at("val_task"));
    s.best_val_task = finite_from_json(c.header.at("best_val_task"));
    s.best_epoch = c.header.at("best_epoch").get<std::int64_t>();

    Model proto = Model::create(out.cfg, out.channels, out.window_len);
    for (const auto& p : proto.params()) {
        const double* data = c.get_f64(p.name, static_cast<std::size_t>(p.size));
        s.param_values.insert(s.param_values.end(), data, data + p.size);
    }
    const std::size_t total = s.param_values.size();
    const double* m = c.get_f64("adam.m", total);
    const double* v = c.get_f64("adam.v", total);
    s.adam_m.assign(m, m + total);
    s.adam_v.assign(v, v + total);
    return out;
}

Model model_from_checkpoint(const LoadedCheckpoint& ckpt) {
    Model m = Model::create(ckpt.cfg, ckpt.channels, ckpt.window_len);
    install_params(m, ckpt.snapshot.param_values);
    return m;
}

}  // namespace somcpc
