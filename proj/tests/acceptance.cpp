// Acceptance suite: one test case per criterion, each printing a single
// ACCEPTANCE n: PASS/FAIL line. Criteria 5 and 6 share a benchmark grid of
// full training runs driven through the CLI; completed runs are detected by
// their manifests and reused, so a re-run of the suite only retrains what is
// missing.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "metric_oracles.hpp"
#include "somcpc/config.hpp"
#include "somcpc/cpc.hpp"
#include "somcpc/data.hpp"
#include "somcpc/nn.hpp"
#include "somcpc/rng.hpp"
#include "somcpc/serialize.hpp"
#include "somcpc/som.hpp"
#include "somcpc/svg.hpp"
#include "somcpc/trainer.hpp"

using namespace somcpc;
namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

void report(int criterion, bool pass, const std::string& detail) {
    std::printf("ACCEPTANCE %d: %s - %s\n", criterion, pass ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
}

std::string fmt(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

}  // namespace

// ---------------------------------------------------------------------------

TEST_CASE("criterion 1: Kohonen equivalence") {
    // one SGD step on half the topological loss for a single sample must
    // reproduce the classic update rule exactly, both kernels, 100 trials
    double worst = 0.0;
    Rng trial_rng(20240801);
    for (int trial = 0; trial < 100; ++trial) {
        const std::int64_t side = trial % 2 == 0 ? 4 : 7;
        Rng grid_rng(5000 + static_cast<std::uint64_t>(trial));
        SomGrid grid = SomGrid::create(side, side, 6, grid_rng);
        for (auto& p : grid.prototypes) p = grid_rng.uniform(-1.0, 1.0);
        std::vector<double> z(6);
        for (auto& v : z) v = trial_rng.uniform(-1.0, 1.0);
        const double eta = trial_rng.uniform(0.01, 1.0);
        const auto n = static_cast<std::int64_t>(trial_rng.uniform_index(40));

        NeighborhoodKernel kern;
        if (trial % 4 < 2) {
            kern.kind = NeighborhoodKernel::Kind::gaussian;
            kern.schedule = SigmaSchedule::make(3.0, 0.5, 39);
        } else {
            kern.kind = NeighborhoodKernel::Kind::plus;
            kern.beta_over_alpha = 0.2;
            kern.schedule = SigmaSchedule::make(1.0, 1.0, 1);
        }
        const SomGrid classic = kohonen_update(grid, kern, n, eta, z.data(), 6);
        const TopoLossResult grad = topo_loss(grid, kern, n, z.data(), 1, 6, false);
        for (std::size_t i = 0; i < grid.prototypes.size(); ++i) {
            const double sgd = grid.prototypes[i] - eta * 0.5 * grad.dprototypes[i];
            worst = std::max(worst, std::abs(sgd - classic.prototypes[i]));
        }
    }
    const bool pass = worst < 1e-12;
    report(1, pass, "SGD on topological loss vs Kohonen rule, max |diff| " + fmt(worst) +
                        " (tol 1e-12, 100 trials, 4x4 and 7x7, both kernels)");
    CHECK(pass);
}

// ---------------------------------------------------------------------------

namespace {

double ms_head_value(nn::Sequential& net, const Tensor& x) {
    const nn::Value out = net.forward(nn::Value::from_batch_tensor(x), false, nullptr);
    const auto& v = out.is_feat ? out.feat.v : out.mat.v;
    const double b = out.is_feat ? static_cast<double>(out.feat.B)
                                 : static_cast<double>(out.mat.rows);
    double acc = 0.0;
    for (double e : v) acc += e * e;
    return acc / b;
}

double ms_head_grad(nn::Sequential& net, const Tensor& x) {
    nn::Value out = net.forward(nn::Value::from_batch_tensor(x), false, nullptr);
    if (out.is_feat) {
        nn::Feat d(out.feat.C, out.feat.B, out.feat.T);
        const double inv = 1.0 / static_cast<double>(out.feat.B);
        double acc = 0.0;
        for (std::size_t i = 0; i < out.feat.v.size(); ++i) {
            acc += out.feat.v[i] * out.feat.v[i];
            d.v[i] = 2.0 * out.feat.v[i] * inv;
        }
        net.backward(nn::Value::from_feat(std::move(d)), false);
        return acc * inv;
    }
    nn::Mat d(out.mat.rows, out.mat.cols);
    const double inv = 1.0 / static_cast<double>(out.mat.rows);
    double acc = 0.0;
    for (std::size_t i = 0; i < out.mat.v.size(); ++i) {
        acc += out.mat.v[i] * out.mat.v[i];
        d.v[i] = 2.0 * out.mat.v[i] * inv;
    }
    net.backward(nn::Value::from_mat(std::move(d)), false);
    return acc * inv;
}

}  // namespace

TEST_CASE("criterion 2: gradient suite") {
    double worst = 0.0;
    std::string worst_where = "none";
    const auto note = [&](const std::string& where, double err) {
        if (err > worst) {
            worst = err;
            worst_where = where;
        }
    };
    Rng check_rng(77);

    // network presets with a mean-square head
    struct Preset {
        const char* name;
        std::vector<nn::LayerSpec> spec;
        TensorShape in;
        std::int64_t batch;
    };
    const Preset presets[] = {
        {"encoder_cpc_synthetic", nn::encoder_spec_cpc_synthetic(), TensorShape{1, 128}, 3},
        {"encoder_ae_synthetic", nn::encoder_spec_ae_synthetic(), TensorShape{1, 128}, 3},
        {"encoder_cpc_audio", nn::encoder_spec_cpc_audio(), TensorShape{1, 160}, 2},
    };
    for (const auto& p : presets) {
        Rng init(101);
        nn::Sequential net("net", p.spec, p.in, init);
        Tensor x(TensorShape{p.batch, p.in[0], p.in[1]});
        Rng data(5);
        for (auto& v : x.v) v = data.uniform(-1, 1);
        auto params = net.params();
        note(p.name, nn::grad_check(
                         params, [&] { return ms_head_grad(net, x); },
                         [&] { return ms_head_value(net, x); }, check_rng, 200, 1e-5));
    }
    {
        Rng init(102);
        nn::Sequential dec("dec", nn::decoder_spec_ae_synthetic(), TensorShape{128}, init);
        nn::Mat z(2, 128);
        Rng data(6);
        for (auto& v : z.v) v = data.uniform(-1, 1);
        auto value = [&] {
            const nn::Value out = dec.forward(nn::Value::from_mat(z), false, nullptr);
            double acc = 0.0;
            for (double e : out.feat.v) acc += e * e;
            return acc / 2.0;
        };
        auto grad = [&] {
            nn::Value out = dec.forward(nn::Value::from_mat(z), false, nullptr);
            nn::Feat d(out.feat.C, out.feat.B, out.feat.T);
            double acc = 0.0;
            for (std::size_t i = 0; i < out.feat.v.size(); ++i) {
                acc += out.feat.v[i] * out.feat.v[i];
                d.v[i] = out.feat.v[i];
            }
            dec.backward(nn::Value::from_feat(std::move(d)), false);
            return acc / 2.0;
        };
        auto params = dec.params();
        note("decoder_ae_synthetic", nn::grad_check(params, grad, value, check_rng, 200, 1e-5));
    }
    {
        Rng init(103);
        nn::Gru gru("gru", 8, 8, init);
        std::vector<double> zseq(3 * 4 * 8);
        Rng data(7);
        for (auto& v : zseq) v = data.uniform(-1, 1);
        auto value = [&] {
            const nn::Mat h = gru.forward(zseq.data(), 3, 4);
            double acc = 0.0;
            for (double e : h.v) acc += e * e;
            return acc / 3.0;
        };
        auto grad = [&] {
            const nn::Mat h = gru.forward(zseq.data(), 3, 4);
            nn::Mat d(3, 8);
            double acc = 0.0;
            for (std::size_t i = 0; i < h.v.size(); ++i) {
                acc += h.v[i] * h.v[i];
                d.v[i] = 2.0 * h.v[i] / 3.0;
            }
            gru.backward(d);
            return acc / 3.0;
        };
        auto params = gru.params();
        note("gru", nn::grad_check(params, grad, value, check_rng, 200, 1e-5));
    }
    {
        // InfoNCE gradients for the heads via the shared checker
        const std::int64_t B = 3, P = 2, N = 3, F = 6;
        Rng init(104);
        PredictionHeads heads(P, F, init);
        std::vector<double> zpos(static_cast<std::size_t>(B * P * F));
        std::vector<double> zneg(static_cast<std::size_t>(B * P * N * F));
        std::vector<double> c(static_cast<std::size_t>(B * F));
        Rng data(8);
        for (auto& v : zpos) v = data.uniform(-1, 1);
        for (auto& v : zneg) v = data.uniform(-1, 1);
        for (auto& v : c) v = data.uniform(-1, 1);
        auto params = heads.params();
        auto value = [&] {
            return infonce_loss(zpos.data(), zneg.data(), c.data(), B, P, N, F, heads, false).loss;
        };
        auto grad = [&] {
            return infonce_loss(zpos.data(), zneg.data(), c.data(), B, P, N, F, heads, true).loss;
        };
        note("infonce_heads", nn::grad_check(params, grad, value, check_rng, 200, 1e-5));

        // and for the embedding/context inputs, via direct central differences
        const InfoNceResult r =
            infonce_loss(zpos.data(), zneg.data(), c.data(), B, P, N, F, heads, true);
        const double h = 1e-5;
        double err = 0.0;
        auto fd_input = [&](std::vector<double>& buf, const std::vector<double>& analytic) {
            for (std::size_t i = 0; i < buf.size(); i += 5) {
                const double orig = buf[i];
                buf[i] = orig + h;
                const double lp = value();
                buf[i] = orig - h;
                const double lm = value();
                buf[i] = orig;
                const double fd = (lp - lm) / (2 * h);
                err = std::max(err, std::abs(fd - analytic[i]) /
                                        std::max({1.0, std::abs(fd), std::abs(analytic[i])}));
            }
        };
        fd_input(zpos, r.dz_pos.v);
        fd_input(zneg, r.dz_neg.v);
        fd_input(c, r.dcontext.v);
        note("infonce_inputs", err);
    }
    {
        // topological / commitment / SOM losses, both stop-grad settings
        Rng grid_rng(105);
        SomGrid grid = SomGrid::create(4, 4, 5, grid_rng);
        for (auto& p : grid.prototypes) p = grid_rng.uniform(-0.5, 0.5);
        std::vector<double> z(6 * 5);
        for (auto& v : z) v = grid_rng.uniform(-0.5, 0.5);
        NeighborhoodKernel kern;
        kern.schedule = SigmaSchedule::make(1.5, 1.5, 10);
        const double h = 1e-5;

        const TopoLossResult topo = topo_loss(grid, kern, 0, z.data(), 6, 5, true);
        double err_topo = 0.0;
        for (std::size_t i = 0; i < grid.prototypes.size(); i += 3) {
            SomGrid gp = grid;
            gp.prototypes[i] += h;
            const double lp = topo_loss(gp, kern, 0, z.data(), 6, 5, false).loss;
            gp.prototypes[i] -= 2 * h;
            const double lm = topo_loss(gp, kern, 0, z.data(), 6, 5, false).loss;
            const double fd = (lp - lm) / (2 * h);
            err_topo = std::max(err_topo, std::abs(fd - topo.dprototypes[i]) /
                                              std::max({1.0, std::abs(fd),
                                                        std::abs(topo.dprototypes[i])}));
        }
        for (std::size_t i = 0; i < z.size(); i += 4) {
            auto zp = z;
            zp[i] += h;
            const double lp = topo_loss(grid, kern, 0, zp.data(), 6, 5, false).loss;
            zp[i] -= 2 * h;
            const double lm = topo_loss(grid, kern, 0, zp.data(), 6, 5, false).loss;
            const double fd = (lp - lm) / (2 * h);
            err_topo = std::max(err_topo, std::abs(fd - topo.dz[i]) /
                                              std::max({1.0, std::abs(fd), std::abs(topo.dz[i])}));
        }
        note("topo_loss", err_topo);

        for (bool stop_grad : {false, true}) {
            const SplitLossResult split =
                commitment_and_som_losses(grid, kern, 0, z.data(), 6, 5, stop_grad);
            const double mult = kern.neighbor_multiplier();
            double err = 0.0;
            // prototypes against FD of commitment + mult * som
            for (std::size_t i = 0; i < grid.prototypes.size(); i += 3) {
                SomGrid gp = grid;
                gp.prototypes[i] += h;
                auto sp = commitment_and_som_losses(gp, kern, 0, z.data(), 6, 5, stop_grad);
                const double lp = sp.commitment + mult * sp.som;
                gp.prototypes[i] -= 2 * h;
                auto sm = commitment_and_som_losses(gp, kern, 0, z.data(), 6, 5, stop_grad);
                const double lm = sm.commitment + mult * sm.som;
                const double fd = (lp - lm) / (2 * h);
                err = std::max(err, std::abs(fd - split.dprototypes[i]) /
                                        std::max({1.0, std::abs(fd),
                                                  std::abs(split.dprototypes[i])}));
            }
            // z gradients: with stop-grad the SOM term is detached, so the FD
            // target is the commitment term alone; without it, the full sum
            for (std::size_t i = 0; i < z.size(); i += 4) {
                auto zp = z;
                zp[i] += h;
                auto sp = commitment_and_som_losses(grid, kern, 0, zp.data(), 6, 5, stop_grad);
                const double lp = sp.commitment + (stop_grad ? 0.0 : mult * sp.som);
                zp[i] -= 2 * h;
                auto sm = commitment_and_som_losses(grid, kern, 0, zp.data(), 6, 5, stop_grad);
                const double lm = sm.commitment + (stop_grad ? 0.0 : mult * sm.som);
                const double fd = (lp - lm) / (2 * h);
                err = std::max(err, std::abs(fd - split.dz[i]) /
                                        std::max({1.0, std::abs(fd), std::abs(split.dz[i])}));
            }
            note(stop_grad ? "split_losses_sg" : "split_losses", err);
        }
    }

    const bool pass = worst < 1e-5;
    report(2, pass, "max FD relative error " + fmt(worst) + " at " + worst_where +
                        " (tol 1e-5; presets, InfoNCE, topo/commitment/SOM both sg settings)");
    CHECK(pass);
}

// ---------------------------------------------------------------------------

TEST_CASE("criterion 3: metric oracles") {
    Rng rng(31337);
    double worst = 0.0;
    for (int instance = 0; instance < 200; ++instance) {
        const std::int64_t w = 1 + static_cast<std::int64_t>(rng.uniform_index(3));
        const std::int64_t h = 1 + static_cast<std::int64_t>(rng.uniform_index(3));
        Rng grid_rng(static_cast<std::uint64_t>(instance));
        const SomGrid grid = SomGrid::create(w, h, 2, grid_rng);
        const std::int64_t k = grid.k();
        const std::int64_t n = 5 + static_cast<std::int64_t>(rng.uniform_index(46));

        NodeAssignment train;
        train.k = k;
        train.split_tag = Split::train;
        NodeAssignment eval;
        eval.k = k;
        eval.split_tag = Split::test;
        Top2Assignment top2;
        for (std::int64_t i = 0; i < n; ++i) {
            train.node_index.push_back(
                static_cast<std::int64_t>(rng.uniform_index(static_cast<std::uint64_t>(k))));
            train.label.push_back(static_cast<double>(rng.uniform_index(5)));
            train.series_id.push_back(i * 4 / n);
            train.window_index.push_back(i);
            eval.node_index.push_back(
                static_cast<std::int64_t>(rng.uniform_index(static_cast<std::uint64_t>(k))));
            eval.label.push_back(static_cast<double>(rng.uniform_index(5)));
            eval.series_id.push_back(i * 4 / n);
            eval.window_index.push_back(i);
            top2.best.push_back(eval.node_index.back());
            top2.second.push_back(
                static_cast<std::int64_t>(rng.uniform_index(static_cast<std::uint64_t>(k))));
        }
        const NodeColoring coloring = NodeColoring::fit(train);

        using namespace test_oracles;
        worst = std::max(worst, std::abs(purity(eval) - brute_purity(eval)));
        worst = std::max(worst, std::abs(nmi(eval) - brute_nmi(eval)));
        worst = std::max(worst, std::abs(cohens_kappa(eval, coloring) - brute_kappa(eval, coloring)));
        worst = std::max(worst, std::abs(se_target(eval, coloring) - brute_se(eval, coloring)));
        if (k > 1)
            worst = std::max(worst,
                             std::abs(topographic_error(top2, grid) - brute_te(top2, grid)));
        const auto a = l2_smooth(eval, grid);
        const auto b = brute_l2(eval, grid);
        worst = std::max({worst, std::abs(a.mean - b.mean), std::abs(a.stddev - b.stddev)});
    }
    const bool pass = worst < 1e-12;
    report(3, pass, "purity/NMI/kappa/SE_target/TE/l2_smooth vs brute force on 200 random "
                    "instances, max |diff| " + fmt(worst) + " (tol 1e-12)");
    CHECK(pass);
}

// ---------------------------------------------------------------------------

TEST_CASE("criterion 4: InfoNCE calibration") {
    // zero heads: every logit is identical, loss must be ln(N+1)
    Rng rng(9001);
    const std::int64_t F = 16, N = 3;
    PredictionHeads zero_heads(1, F, rng);
    {
        auto params = zero_heads.params();
        for (std::int64_t i = 0; i < params[0].size; ++i) params[0].value[i] = 0.0;
    }
    std::vector<double> zpos(static_cast<std::size_t>(F));
    std::vector<double> zneg(static_cast<std::size_t>(N * F));
    std::vector<double> c(static_cast<std::size_t>(F));
    for (auto& v : zpos) v = rng.uniform(-1, 1);
    for (auto& v : zneg) v = rng.uniform(-1, 1);
    for (auto& v : c) v = rng.uniform(-1, 1);
    const double zero_loss =
        infonce_loss(zpos.data(), zneg.data(), c.data(), 1, 1, N, F, zero_heads, false).loss;
    const double dev_zero = std::abs(zero_loss - std::log(4.0));

    // random-init encoder over 100 synthetic batches: mean within ln 4 +- 15%
    SyntheticConfig dcfg;
    dcfg.num_series[0] = 6;
    dcfg.num_series[1] = 1;
    dcfg.num_series[2] = 1;
    dcfg.duration_s = 60.0;
    dcfg.rng_seed = 4;
    const Dataset data = build_dataset(dcfg);
    TrainConfig cfg;
    cfg.model = ModelKind::som_cpc;
    cfg.alpha = 1e-2;
    cfg.seed = 13;
    Model model = Model::create(cfg, 1, 128);
    Rng batch_rng(555);
    double mean_loss = 0.0;
    for (int b = 0; b < 100; ++b) {
        const ContrastiveBatch batch = sample_contrastive_batch(data.train, cfg.cpc, batch_rng, 16);
        const std::int64_t bs = batch.batch, L1 = batch.context_steps;
        const std::int64_t n_ctx = bs * L1, n_pos = bs * batch.num_predictions;
        const std::int64_t n_neg = n_pos * batch.num_negatives;
        const std::int64_t wsize = batch.channels * batch.window_len;
        Tensor all(TensorShape{n_ctx + n_pos + n_neg, batch.channels, batch.window_len});
        std::copy_n(batch.context_inputs.data(), n_ctx * wsize, all.data());
        std::copy_n(batch.positive_inputs.data(), n_pos * wsize, all.data() + n_ctx * wsize);
        std::copy_n(batch.negative_inputs.data(), n_neg * wsize,
                    all.data() + (n_ctx + n_pos) * wsize);
        nn::Mat z = model.encode_windows(all);
        nn::Mat ctx(bs, z.cols);
        for (std::int64_t i = 0; i < bs; ++i) std::copy_n(z.row((i + 1) * L1 - 1), z.cols, ctx.row(i));
        mean_loss += infonce_loss(z.row(n_ctx), z.row(n_ctx + n_pos), ctx.v.data(), bs,
                                  batch.num_predictions, batch.num_negatives, z.cols,
                                  *model.heads, false)
                         .loss;
    }
    mean_loss /= 100.0;
    const double ln4 = std::log(4.0);
    const bool pass = dev_zero < 1e-9 && std::abs(mean_loss - ln4) <= 0.15 * ln4;
    report(4, pass, "W_p=0 loss deviates " + fmt(dev_zero) + " from ln4 (tol 1e-9); random-init "
                    "mean over 100 batches " + fmt(mean_loss) + " in ln4 +- 15% [" +
                    fmt(0.85 * ln4) + ", " + fmt(1.15 * ln4) + "]");
    CHECK(pass);
}

// ---------------------------------------------------------------------------
// criteria 5 and 6: the desk-scale synthetic benchmark

namespace {

#ifndef SOMCPC_CLI_PATH
#error "SOMCPC_CLI_PATH must be defined"
#endif

struct BenchRun {
    std::string name;
    ModelKind model;
    double alpha;
    NeighborhoodKernel::Kind kernel;
    bool stop_grad;
};

struct BenchResults {
    bool ok = false;
    std::map<std::string, MetricsReport> metrics;
    std::string error;
};

RunConfig bench_config(const BenchRun& r, const std::string& dataset_path) {
    RunConfig cfg;
    cfg.dataset_path = dataset_path;
    cfg.model.model = r.model;
    cfg.model.alpha = r.alpha;
    cfg.model.stop_grad_som = r.stop_grad;
    cfg.model.batch_size = 128;
    cfg.model.max_epochs = 150;
    cfg.model.seed = 0;
    cfg.model.som.width = 10;
    cfg.model.som.height = 10;
    cfg.model.som.kernel = r.kernel;
    cfg.model.som.sigma_end = 2.0;
    return cfg;
}

MetricsReport metrics_from_json(const ordered_json& j) {
    MetricsReport m;
    m.purity = j.at("purity").get<double>();
    m.nmi = j.at("nmi").get<double>();
    m.kappa = j.at("kappa").get<double>();
    m.se_target = j.at("se_target").get<double>();
    m.te = j.at("te").get<double>();
    m.te_8connected = j.at("te_8connected").get<double>();
    m.l2_smooth_mean = j.at("l2_smooth_mean").get<double>();
    m.l2_smooth_std = j.at("l2_smooth_std").get<double>();
    m.k = j.at("k").get<std::int64_t>();
    m.collapsed_nodes = j.at("collapsed_nodes").get<std::int64_t>();
    m.collapse_warning = j.at("collapse_warning").get<bool>();
    return m;
}

const BenchResults& benchmark() {
    static BenchResults results = [] {
        BenchResults out;
        const fs::path root = fs::absolute("somcpc_acceptance");
        fs::create_directories(root);
        const fs::path dataset = root / "dataset.bin";

        // desk-scale dataset: 40/20/20 series, defaults otherwise
        if (!fs::exists(dataset)) {
            SyntheticConfig dcfg;
            dcfg.num_series[0] = 40;
            dcfg.num_series[1] = 20;
            dcfg.num_series[2] = 20;
            dcfg.rng_seed = 0;
            save_dataset(build_dataset(dcfg), dataset.string());
        }

        const std::vector<BenchRun> runs = {
            {"cpc_g_1e-4", ModelKind::som_cpc, 1e-4, NeighborhoodKernel::Kind::gaussian, true},
            {"cpc_g_1e-3", ModelKind::som_cpc, 1e-3, NeighborhoodKernel::Kind::gaussian, true},
            {"cpc_g_1e-2", ModelKind::som_cpc, 1e-2, NeighborhoodKernel::Kind::gaussian, true},
            {"cpc_p_1e-3", ModelKind::som_cpc, 1e-3, NeighborhoodKernel::Kind::plus, true},
            {"cpc_p_1e-2", ModelKind::som_cpc, 1e-2, NeighborhoodKernel::Kind::plus, true},
            {"vae_1e-4", ModelKind::som_vae, 1e-4, NeighborhoodKernel::Kind::plus, true},
            {"vae_1e-3", ModelKind::som_vae, 1e-3, NeighborhoodKernel::Kind::plus, true},
            {"vae_1e-2", ModelKind::som_vae, 1e-2, NeighborhoodKernel::Kind::plus, true},
            {"desom_1e-4", ModelKind::desom, 1e-4, NeighborhoodKernel::Kind::gaussian, false},
            {"desom_1e-3", ModelKind::desom, 1e-3, NeighborhoodKernel::Kind::gaussian, false},
            {"desom_1e-2", ModelKind::desom, 1e-2, NeighborhoodKernel::Kind::gaussian, false},
        };

        // queue of jobs still to train; completed runs are reused
        std::vector<const BenchRun*> todo;
        for (const auto& r : runs) {
            const fs::path dir = root / r.name;
            const RunConfig cfg = bench_config(r, dataset.string());
            bool done = false;
            if (fs::exists(dir / "manifest.json") && fs::exists(dir / "metrics_test.json")) {
                try {
                    const auto manifest =
                        ordered_json::parse(read_text_file((dir / "manifest.json").string()));
                    done = manifest.at("status") == "completed" &&
                           manifest.at("config").dump() == run_config_to_json(cfg).dump();
                } catch (...) {
                    done = false;
                }
            }
            if (!done) {
                const RunConfig fresh = cfg;
                write_text_file((dir / "config.json").string(),
                                run_config_to_json(fresh).dump(2) + "\n");
                todo.push_back(&r);
            }
        }

        // two single-threaded training processes at a time
        std::atomic<std::size_t> next{0};
        std::atomic<bool> failed{false};
        std::mutex err_mu;
        auto worker = [&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= todo.size() || failed.load()) return;
                const BenchRun& r = *todo[i];
                const fs::path dir = root / r.name;
                std::string cmd = std::string("SOMCPC_THREADS=1 ") + SOMCPC_CLI_PATH +
                                  " train --config " + (dir / "config.json").string() + " --out " +
                                  dir.string() + " >> " + (dir / "train.log").string() + " 2>&1";
                std::printf("  [benchmark] training %s ...\n", r.name.c_str());
                std::fflush(stdout);
                if (std::system(cmd.c_str()) != 0) {
                    failed.store(true);
                    std::lock_guard lk(err_mu);
                    out.error = "training failed for " + r.name;
                    return;
                }
                cmd = std::string("SOMCPC_THREADS=1 ") + SOMCPC_CLI_PATH + " evaluate --run " +
                      dir.string() + " --split test >> " + (dir / "train.log").string() + " 2>&1";
                if (std::system(cmd.c_str()) != 0) {
                    failed.store(true);
                    std::lock_guard lk(err_mu);
                    out.error = "evaluation failed for " + r.name;
                    return;
                }
            }
        };
        {
            std::thread t1(worker), t2(worker);
            t1.join();
            t2.join();
        }
        if (failed.load()) return out;

        for (const auto& r : runs) {
            const fs::path metrics_file = root / r.name / "metrics_test.json";
            if (!fs::exists(metrics_file)) {
                // evaluate cached runs that were trained earlier
                const std::string cmd = std::string("SOMCPC_THREADS=1 ") + SOMCPC_CLI_PATH +
                                        " evaluate --run " + (root / r.name).string() +
                                        " --split test > /dev/null 2>&1";
                if (std::system(cmd.c_str()) != 0) {
                    out.error = "evaluation failed for " + r.name;
                    return out;
                }
            }
            out.metrics[r.name] =
                metrics_from_json(ordered_json::parse(read_text_file(metrics_file.string())));
        }
        out.ok = true;
        return out;
    }();
    return results;
}

}  // namespace

TEST_CASE("criterion 5: synthetic benchmark ordering") {
    const BenchResults& b = benchmark();
    if (!b.ok) {
        report(5, false, "benchmark did not complete: " + b.error);
        FAIL(b.error);
    }
    std::printf("  %-12s %10s %8s %8s %8s\n", "run", "SE_target", "TE", "l2", "purity");
    for (const auto& [name, m] : b.metrics)
        std::printf("  %-12s %10.3f %8.4f %8.3f %8.3f\n", name.c_str(), m.se_target, m.te,
                    m.l2_smooth_mean, m.purity);

    const auto min_over = [&](std::initializer_list<const char*> names, auto field) {
        double best = std::numeric_limits<double>::infinity();
        for (const char* n : names) best = std::min(best, field(b.metrics.at(n)));
        return best;
    };
    const double se_cpc = min_over({"cpc_g_1e-4", "cpc_g_1e-3", "cpc_g_1e-2"},
                                   [](const MetricsReport& m) { return m.se_target; });
    const double se_desom = min_over({"desom_1e-4", "desom_1e-3", "desom_1e-2"},
                                     [](const MetricsReport& m) { return m.se_target; });
    const double se_vae = min_over({"vae_1e-4", "vae_1e-3", "vae_1e-2"},
                                   [](const MetricsReport& m) { return m.se_target; });
    const double te_cpc = min_over({"cpc_g_1e-4", "cpc_g_1e-3", "cpc_g_1e-2"},
                                   [](const MetricsReport& m) { return m.te; });
    const double te_vae = min_over({"vae_1e-4", "vae_1e-3", "vae_1e-2"},
                                   [](const MetricsReport& m) { return m.te; });

    const bool pass = se_cpc < 0.5 * se_desom && se_cpc < 0.5 * se_vae && te_cpc < te_vae;
    report(5, pass, "best SOM-CPC SE " + fmt(se_cpc) + " vs 0.5*DESOM " + fmt(0.5 * se_desom) +
                        " and 0.5*SOM-VAE " + fmt(0.5 * se_vae) + "; best SOM-CPC TE " +
                        fmt(te_cpc) + " < best SOM-VAE(plus) TE " + fmt(te_vae));
    CHECK(pass);
}

TEST_CASE("criterion 6: gaussian-vs-plus kernel ablation") {
    const BenchResults& b = benchmark();
    if (!b.ok) {
        report(6, false, "benchmark did not complete: " + b.error);
        FAIL(b.error);
    }
    const double te_g3 = b.metrics.at("cpc_g_1e-3").te;
    const double te_g2 = b.metrics.at("cpc_g_1e-2").te;
    const double te_p3 = b.metrics.at("cpc_p_1e-3").te;
    const double te_p2 = b.metrics.at("cpc_p_1e-2").te;
    const bool pass = te_p3 > te_g3 && te_p2 > te_g2;
    report(6, pass, "SOM-CPC TE plus vs gaussian at matched alpha: 1e-3: " + fmt(te_p3) + " > " +
                        fmt(te_g3) + "; 1e-2: " + fmt(te_p2) + " > " + fmt(te_g2));
    CHECK(pass);
}

// ---------------------------------------------------------------------------

TEST_CASE("criterion 7: trajectory export") {
    SyntheticConfig dcfg;
    dcfg.num_series[0] = 4;
    dcfg.num_series[1] = 2;
    dcfg.num_series[2] = 2;
    dcfg.duration_s = 20.0;
    dcfg.rng_seed = 6;
    const Dataset data = build_dataset(dcfg);

    bool pass = true;
    std::string detail;
    for (ModelKind kind : {ModelKind::som_vae, ModelKind::som_cpc}) {
        TrainConfig cfg;
        cfg.model = kind;
        cfg.alpha = 1e-3;
        cfg.stop_grad_som = kind == ModelKind::som_vae;
        cfg.batch_size = 16;
        cfg.max_epochs = 3;
        cfg.seed = 2;
        cfg.som.width = 4;
        cfg.som.height = 4;
        cfg.som.kernel = NeighborhoodKernel::Kind::gaussian;  // SOM-VAE gaussian variant
        const TrainOutput out = train_model(cfg, data);

        const fs::path csv = fs::temp_directory_path() /
                             (std::string("somcpc_accept_traj_") + model_kind_name(kind) + ".csv");
        write_loss_csv(csv.string(), out.history);
        const auto rows = read_loss_csv(csv.string());
        const bool rows_match = static_cast<std::int64_t>(rows.size()) == out.last.steps_done;
        const std::string svg = trajectory_svg(rows, "acceptance");
        const bool plottable = svg.find("<polyline") != std::string::npos;
        pass = pass && rows_match && plottable;
        detail += std::string(model_kind_name(kind)) + ": " + std::to_string(rows.size()) +
                  " rows for " + std::to_string(out.last.steps_done) + " steps; ";
        fs::remove(csv);
    }
    report(7, pass, detail + "task/topo pairs per step exported and plottable");
    CHECK(pass);
}

// ---------------------------------------------------------------------------

TEST_CASE("criterion 8: determinism") {
    const fs::path root = fs::temp_directory_path() / "somcpc_accept_determinism";
    fs::remove_all(root);
    fs::create_directories(root);
    ordered_json cfg;
    cfg["dataset"]["synthetic"] = {{"duration_s", 20.0}, {"num_series", {4, 2, 2}}, {"rng_seed", 9}};
    cfg["model"]["type"] = "som_cpc";
    cfg["model"]["alpha"] = 1e-3;
    cfg["model"]["batch_size"] = 16;
    cfg["model"]["max_epochs"] = 2;
    cfg["model"]["seed"] = 21;
    cfg["model"]["som"] = {{"width", 4}, {"height", 4}};
    write_text_file((root / "cfg.json").string(), cfg.dump(2));

    bool pass = true;
    std::string detail;
    for (const char* run : {"a", "b"}) {
        const std::string cmd = std::string(SOMCPC_CLI_PATH) + " train --config " +
                                (root / "cfg.json").string() + " --out " + (root / run).string() +
                                " > /dev/null 2>&1";
        if (std::system(cmd.c_str()) != 0) pass = false;
        const std::string ev = std::string(SOMCPC_CLI_PATH) + " evaluate --run " +
                               (root / run).string() + " --split test > /dev/null 2>&1";
        if (std::system(ev.c_str()) != 0) pass = false;
    }
    if (pass) {
        const bool csv_equal = read_text_file((root / "a" / "loss_history.csv").string()) ==
                               read_text_file((root / "b" / "loss_history.csv").string());
        const bool metrics_equal = read_text_file((root / "a" / "metrics_test.json").string()) ==
                                   read_text_file((root / "b" / "metrics_test.json").string());
        pass = csv_equal && metrics_equal;
        detail = std::string("loss CSVs ") + (csv_equal ? "bit-identical" : "DIFFER") +
                 ", metrics JSON " + (metrics_equal ? "bit-identical" : "DIFFER");
    } else {
        detail = "training or evaluation failed";
    }
    fs::remove_all(root);
    report(8, pass, detail);
    CHECK(pass);
}
