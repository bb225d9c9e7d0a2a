// Command-line front end: dataset generation, training, evaluation, sweeps
// and SVG/CSV artifact export. Every command validates its config before
// writing anything and exits non-zero unless all requested artifacts were
// written.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "somcpc/config.hpp"
#include "somcpc/data.hpp"
#include "somcpc/kernels.hpp"
#include "somcpc/metrics.hpp"
#include "somcpc/serialize.hpp"
#include "somcpc/svg.hpp"
#include "somcpc/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace somcpc;

namespace {

std::string resolve_out(const std::string& out) {
    fs::path p(out);
    if (p.is_absolute()) return p.string();
    if (const char* root = std::getenv("SOMCPC_OUT_ROOT"); root && *root)
        return (fs::path(root) / p).string();
    return p.string();
}

std::string timestamp_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_json(const std::string& path, const ordered_json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

Dataset obtain_dataset(const RunConfig& cfg, const fs::path& run_dir, std::string& dataset_ref) {
    if (cfg.dataset_path) {
        dataset_ref = *cfg.dataset_path;
        return load_dataset(*cfg.dataset_path);
    }
    const fs::path file = run_dir / "dataset.bin";
    Dataset ds = build_dataset(*cfg.synthetic);
    fs::create_directories(run_dir);
    save_dataset(ds, file.string());
    dataset_ref = fs::absolute(file).string();
    return ds;
}

int cmd_generate(const std::string& config_path, const std::string& out,
                 std::optional<std::uint64_t> seed_override) {
    RunConfig cfg = parse_run_config(config_path);
    if (!cfg.synthetic)
        throw std::runtime_error("generate requires a dataset.synthetic section");
    if (seed_override) cfg.synthetic->rng_seed = *seed_override;
    const std::string out_path = resolve_out(out);
    Dataset ds = build_dataset(*cfg.synthetic);
    save_dataset(ds, out_path);

    ordered_json manifest;
    manifest["config"] = synthetic_config_to_json(*cfg.synthetic);
    manifest["seed"] = cfg.synthetic->rng_seed;
    manifest["windows"] = {{"train", ds.train.num_windows()},
                           {"val", ds.val.num_windows()},
                           {"test", ds.test.num_windows()}};
    manifest["created_at"] = timestamp_now();
    write_json(out_path + ".manifest.json", manifest);
    std::printf("wrote %s (%lld/%lld/%lld windows)\n", out_path.c_str(),
                static_cast<long long>(ds.train.num_windows()),
                static_cast<long long>(ds.val.num_windows()),
                static_cast<long long>(ds.test.num_windows()));
    return 0;
}

// Runs one training job into run_dir: loss CSV, checkpoints, best marker,
// manifest. Shared by `train` and `sweep`. stop_after > 0 stops early after
// that many epochs of this invocation (resumable later with --resume).
int train_into(const fs::path& run_dir, RunConfig cfg, bool resume, std::int64_t stop_after = 0) {
    fs::create_directories(run_dir);
    std::string dataset_ref;
    Dataset data = obtain_dataset(cfg, run_dir, dataset_ref);

    const fs::path ckpt_dir = run_dir / "checkpoints";
    fs::create_directories(ckpt_dir);
    const fs::path loss_path = run_dir / "loss_history.csv";
    const fs::path manifest_path = run_dir / "manifest.json";

    ordered_json manifest;
    manifest["config"] = run_config_to_json(cfg);
    manifest["dataset"] = dataset_ref;
    manifest["status"] = "running";
    manifest["started_at"] = timestamp_now();
    manifest["kernels_isa"] = kernels::isa_name(kernels::active_isa());

    std::vector<StepRecord> history;
    std::optional<TrainerSnapshot> resume_from;
    if (resume) {
        const fs::path last = ckpt_dir / "last.ckpt";
        if (!fs::exists(last))
            throw std::runtime_error("cannot resume: " + last.string() + " is missing");
        LoadedCheckpoint ckpt = load_checkpoint(last.string());
        if (train_config_to_json(ckpt.cfg).dump() != train_config_to_json(cfg.model).dump())
            throw std::runtime_error("cannot resume: checkpoint was trained with a different config");
        resume_from = std::move(ckpt.snapshot);
        if (fs::exists(loss_path)) {
            for (const auto& r : read_loss_csv(loss_path.string()))
                if (r.step < resume_from->steps_done) history.push_back(r);
        }
        manifest["resumed_at_step"] = resume_from->steps_done;
    }
    write_json(manifest_path.string(), manifest);

    std::int64_t epochs_this_invocation = 0;
    const auto on_step = [&](const StepRecord& r) { history.push_back(r); };
    const auto on_epoch = [&](std::int64_t, double, const TrainerSnapshot& snap, bool is_best) {
        write_loss_csv(loss_path.string(), history);
        save_checkpoint((ckpt_dir / "last.ckpt").string(), cfg.model, data.train.channels,
                        data.train.window_len, snap);
        if (is_best) {
            save_checkpoint((ckpt_dir / "best.ckpt").string(), cfg.model, data.train.channels,
                            data.train.window_len, snap);
            ordered_json best;
            best["checkpoint"] = "checkpoints/best.ckpt";
            best["epoch"] = snap.epochs_done - 1;
            best["step"] = snap.steps_done;
            best["val_task_loss"] = snap.val_task;
            write_json((run_dir / "best.json").string(), best);
        }
        ++epochs_this_invocation;
        return stop_after <= 0 || epochs_this_invocation < stop_after;
    };

    try {
        TrainOutput out = train_model(cfg.model, data, resume_from ? &*resume_from : nullptr,
                                      on_step, on_epoch);
        write_json((run_dir / "som.json").string(), som_to_json(out.model.som));
        manifest["status"] =
            out.last.epochs_done < cfg.model.max_epochs ? "stopped" : "completed";
        manifest["steps_per_epoch"] = out.steps_per_epoch;
        manifest["total_steps"] = out.last.steps_done;
        manifest["best_epoch"] = out.last.best_epoch;
        manifest["best_val_task_loss"] = out.last.best_val_task;
        manifest["finished_at"] = timestamp_now();
        write_json(manifest_path.string(), manifest);
        std::printf("run %s: %lld steps, best epoch %lld (val task loss %s)\n",
                    run_dir.string().c_str(), static_cast<long long>(out.last.steps_done),
                    static_cast<long long>(out.last.best_epoch),
                    fmt_g17(out.last.best_val_task).c_str());
        return 0;
    } catch (const DivergenceError& e) {
        write_loss_csv(loss_path.string(), history);
        manifest["status"] = "diverged";
        manifest["diverged_step"] = e.step();
        manifest["error"] = e.what();
        manifest["finished_at"] = timestamp_now();
        write_json(manifest_path.string(), manifest);
        std::fprintf(stderr, "training diverged at step %lld\n", static_cast<long long>(e.step()));
        return 3;
    }
}

int cmd_train(const std::string& config_path, const std::string& out,
              std::optional<std::uint64_t> seed_override, bool resume, std::int64_t stop_after) {
    RunConfig cfg = parse_run_config(config_path);
    if (seed_override) cfg.model.seed = *seed_override;
    if (cfg.has_sweep())
        throw std::runtime_error("config has a sweep section; use the sweep command");
    return train_into(resolve_out(out), std::move(cfg), resume, stop_after);
}

Dataset dataset_for_run(const fs::path& run_dir, ordered_json& manifest) {
    manifest = ordered_json::parse(read_text_file((run_dir / "manifest.json").string()));
    return load_dataset(manifest.at("dataset").get<std::string>());
}

Model best_model_for_run(const fs::path& run_dir) {
    const fs::path marker = run_dir / "best.json";
    if (!fs::exists(marker))
        throw std::runtime_error(run_dir.string() + ": missing best-model marker (best.json)");
    const ordered_json best = ordered_json::parse(read_text_file(marker.string()));
    const fs::path ckpt = run_dir / best.at("checkpoint").get<std::string>();
    return model_from_checkpoint(load_checkpoint(ckpt.string()));
}

MetricsReport evaluate_split_into(const fs::path& run_dir, Model& model, const Dataset& data,
                                  Split split) {
    const MetricsReport report = evaluate_checkpoint(model, data, split);
    const std::string split_str = split_name(split);
    write_json((run_dir / ("metrics_" + split_str + ".json")).string(), report.to_json());

    NodeAssignment train_assign = assign_nodes(model, data.train, nullptr);
    const NodeColoring coloring = NodeColoring::fit(train_assign);
    NodeAssignment eval_assign = assign_nodes(model, data.split(split), nullptr);
    ordered_json som = som_to_json(model.som);
    som["split"] = split_str;
    som["node_colorings"] = node_coloring_to_json(coloring);
    som["split_stats"] = node_coloring_to_json(node_stats(eval_assign));
    write_json((run_dir / ("som_" + split_str + ".json")).string(), som);
    return report;
}

bool is_sweep_dir(const fs::path& run_dir) { return fs::exists(run_dir / "sweep.json"); }

int cmd_evaluate(const std::string& run, const std::string& split_flag) {
    const fs::path run_dir = resolve_out(run);
    if (is_sweep_dir(run_dir)) {
        const ordered_json sweep = ordered_json::parse(read_text_file((run_dir / "sweep.json").string()));
        const Split split = split_from_name(split_flag.empty() ? "test" : split_flag);
        std::string csv =
            "run,model,alpha,kernel,stop_grad_som,se_target,te,te_8connected,l2_smooth_mean,"
            "l2_smooth_std,purity,nmi,kappa,collapsed_nodes\n";
        for (const auto& child : sweep.at("children")) {
            const fs::path child_dir = run_dir / child.get<std::string>();
            ordered_json manifest;
            Dataset data = dataset_for_run(child_dir, manifest);
            Model model = best_model_for_run(child_dir);
            const MetricsReport r = evaluate_split_into(child_dir, model, data, split);
            const auto& mc = manifest.at("config").at("model");
            csv += child.get<std::string>() + "," + mc.at("type").get<std::string>() + "," +
                   fmt_g17(mc.at("alpha").get<double>()) + "," +
                   mc.at("som").at("kernel").get<std::string>() + "," +
                   (mc.at("stop_grad_som").get<bool>() ? "true" : "false") + "," +
                   fmt_g17(r.se_target) + "," + fmt_g17(r.te) + "," + fmt_g17(r.te_8connected) +
                   "," + fmt_g17(r.l2_smooth_mean) + "," + fmt_g17(r.l2_smooth_std) + "," +
                   fmt_g17(r.purity) + "," + fmt_g17(r.nmi) + "," + fmt_g17(r.kappa) + "," +
                   std::to_string(r.collapsed_nodes) + "\n";
        }
        write_text_file((run_dir / "summary.csv").string(), csv);
        std::printf("wrote %s\n", (run_dir / "summary.csv").string().c_str());
        return 0;
    }

    ordered_json manifest;
    Dataset data = dataset_for_run(run_dir, manifest);
    Model model = best_model_for_run(run_dir);
    std::vector<Split> splits;
    if (!split_flag.empty()) {
        splits.push_back(split_from_name(split_flag));
    } else {
        for (const auto& s : manifest.at("config").at("metrics").at("splits"))
            splits.push_back(split_from_name(s.get<std::string>()));
    }
    for (Split s : splits) {
        const MetricsReport r = evaluate_split_into(run_dir, model, data, s);
        std::printf("%s %s: se_target=%s te=%s purity=%s nmi=%s kappa=%s l2=%s+-%s%s\n",
                    run_dir.string().c_str(), split_name(s), fmt_g17(r.se_target).c_str(),
                    fmt_g17(r.te).c_str(), fmt_g17(r.purity).c_str(), fmt_g17(r.nmi).c_str(),
                    fmt_g17(r.kappa).c_str(), fmt_g17(r.l2_smooth_mean).c_str(),
                    fmt_g17(r.l2_smooth_std).c_str(), r.collapse_warning ? " [collapse warning]" : "");
    }
    return 0;
}

int cmd_plot(const std::string& run, const std::string& split_flag, const std::string& size_by) {
    const fs::path run_dir = resolve_out(run);
    const fs::path loss_path = run_dir / "loss_history.csv";
    if (!fs::exists(loss_path))
        throw std::runtime_error(run_dir.string() + ": missing loss_history.csv");
    const auto history = read_loss_csv(loss_path.string());
    if (history.empty()) throw std::runtime_error(loss_path.string() + ": empty loss history");

    const fs::path plots = run_dir / "plots";
    fs::create_directories(plots);
    write_text_file((plots / "trajectory.svg").string(),
                    trajectory_svg(history, "task vs topological loss"));

    ordered_json manifest;
    Dataset data = dataset_for_run(run_dir, manifest);
    Model model = best_model_for_run(run_dir);
    const Split split = split_from_name(split_flag.empty() ? "test" : split_flag);
    const std::string split_str = split_name(split);

    NodeAssignment assign = assign_nodes(model, data.split(split), nullptr);
    const NodeColoring stats = node_stats(assign);
    write_text_file((plots / ("som_" + split_str + ".svg")).string(),
                    som_heatmap_svg(model.som, stats,
                                    std::string("SOM, ") + split_str + " median label",
                                    size_by == "count"));

    const LatentExport lat = export_latents(model, data.split(split));
    std::string csv = "series_id,window_index,label";
    for (std::int64_t f = 0; f < lat.feature_dim; ++f) csv += ",z" + std::to_string(f);
    csv += "\n";
    const std::size_t n = lat.labels.size();
    for (std::size_t i = 0; i < n; ++i) {
        csv += std::to_string(lat.series_id[i]) + "," + std::to_string(lat.window_index[i]) + "," +
               fmt_g17(lat.labels[i]);
        for (std::int64_t f = 0; f < lat.feature_dim; ++f)
            csv += "," + fmt_g17(lat.latents[i * static_cast<std::size_t>(lat.feature_dim) +
                                             static_cast<std::size_t>(f)]);
        csv += "\n";
    }
    write_text_file((plots / ("latents_" + split_str + ".csv")).string(), csv);
    std::printf("wrote %s/{trajectory.svg, som_%s.svg, latents_%s.csv}\n", plots.string().c_str(),
                split_str.c_str(), split_str.c_str());
    return 0;
}

std::string alpha_tag(double alpha) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", alpha);
    return buf;
}

int cmd_sweep(const std::string& config_path, const std::string& out,
              std::optional<std::uint64_t> seed_override) {
    RunConfig cfg = parse_run_config(config_path);
    if (seed_override) cfg.model.seed = *seed_override;
    if (!cfg.has_sweep()) throw std::runtime_error("config has no sweep section");
    const fs::path parent = resolve_out(out);
    fs::create_directories(parent);

    // shared dataset at the parent level
    std::string dataset_ref;
    if (cfg.synthetic) {
        Dataset ds = build_dataset(*cfg.synthetic);
        const fs::path file = parent / "dataset.bin";
        save_dataset(ds, file.string());
        dataset_ref = fs::absolute(file).string();
    } else {
        dataset_ref = *cfg.dataset_path;
    }

    std::vector<double> alphas = cfg.sweep_alpha;
    if (alphas.empty()) alphas.push_back(cfg.model.alpha);
    std::vector<NeighborhoodKernel::Kind> kernels_axis = cfg.sweep_kernel;
    if (kernels_axis.empty()) kernels_axis.push_back(cfg.model.som.kernel);
    const bool kernel_in_name = cfg.sweep_kernel.size() > 1;

    ordered_json children = ordered_json::array();
    int rc = 0;
    for (auto kern : kernels_axis) {
        for (double alpha : alphas) {
            RunConfig child = cfg;
            child.sweep_alpha.clear();
            child.sweep_kernel.clear();
            child.synthetic.reset();
            child.dataset_path = dataset_ref;
            child.model.alpha = alpha;
            child.model.som.kernel = kern;
            std::string name = "alpha" + alpha_tag(alpha);
            if (kernel_in_name)
                name += kern == NeighborhoodKernel::Kind::plus ? "_plus" : "_gaussian";
            children.push_back(name);
            const int child_rc = train_into(parent / name, std::move(child), false);
            rc = rc == 0 ? child_rc : rc;
        }
    }
    ordered_json sweep;
    sweep["children"] = children;
    write_json((parent / "sweep.json").string(), sweep);
    return rc;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"structured 2D representation learning for time series (SOM-CPC and baselines)"};
    app.require_subcommand(1);

    std::string config_path, out, run, split, size_by = "none";
    std::uint64_t seed_value = 0;
    std::int64_t stop_after = 0;
    bool resume = false;

    auto* gen = app.add_subcommand("generate", "generate a synthetic dataset file");
    gen->add_option("--config", config_path, "run config (dataset.synthetic section)")->required();
    gen->add_option("--out", out, "output dataset path")->required();
    auto* gen_seed = gen->add_option("--seed-override", seed_value, "override the dataset seed");

    auto* tr = app.add_subcommand("train", "train a configured model");
    tr->add_option("--config", config_path, "run config")->required();
    tr->add_option("--out", out, "run directory")->required();
    auto* tr_seed = tr->add_option("--seed-override", seed_value, "override the training seed");
    tr->add_flag("--resume", resume, "resume from checkpoints/last.ckpt");
    tr->add_option("--stop-after", stop_after,
                   "stop after this many epochs of this invocation (resume later)");

    auto* ev = app.add_subcommand("evaluate", "metrics + colored SOM export for a run or sweep");
    ev->add_option("--run", run, "run (or sweep) directory")->required();
    ev->add_option("--split", split, "split to evaluate (train|val|test)");

    auto* pl = app.add_subcommand("plot", "emit SOM heatmap / trajectory SVGs and latent CSV");
    pl->add_option("--run", run, "run directory")->required();
    pl->add_option("--split", split, "split for the heatmap/latents (default test)");
    pl->add_option("--size-by", size_by, "cell size statistic: none|count")
        ->check(CLI::IsMember({"none", "count"}));

    auto* sw = app.add_subcommand("sweep", "train one run per sweep combination");
    sw->add_option("--config", config_path, "run config with a sweep section")->required();
    sw->add_option("--out", out, "parent directory for the sweep")->required();
    auto* sw_seed = sw->add_option("--seed-override", seed_value, "override the training seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed())
            return cmd_generate(config_path, out,
                                gen_seed->count() ? std::optional(seed_value) : std::nullopt);
        if (tr->parsed())
            return cmd_train(config_path, out,
                             tr_seed->count() ? std::optional(seed_value) : std::nullopt, resume,
                             stop_after);
        if (ev->parsed()) return cmd_evaluate(run, split);
        if (pl->parsed()) return cmd_plot(run, split, size_by);
        if (sw->parsed())
            return cmd_sweep(config_path, out,
                             sw_seed->count() ? std::optional(seed_value) : std::nullopt);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
