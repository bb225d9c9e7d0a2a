#include "somcpc/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace somcpc {

namespace {

using json = nlohmann::ordered_json;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& path) {
    if (!j.is_object()) throw std::runtime_error(path + ": expected an object");
    for (const auto& [key, value] : j.items()) {
        if (!allowed.count(key))
            throw std::runtime_error(path + ": unknown key '" + key + "'");
    }
}

SyntheticConfig parse_synthetic(const json& j) {
    check_keys(j, {"sample_rate_hz", "duration_s", "num_series", "f_init_range_hz", "step_hz",
                   "p_up", "p_const", "p_down", "f_bounds_hz", "noise_sigma", "rng_seed",
                   "phase_mode", "window_seconds"},
               "dataset.synthetic");
    SyntheticConfig c;
    if (j.contains("sample_rate_hz")) c.sample_rate_hz = j.at("sample_rate_hz").get<double>();
    if (j.contains("duration_s")) c.duration_s = j.at("duration_s").get<double>();
    if (j.contains("num_series")) {
        if (!j.at("num_series").is_array() || j.at("num_series").size() != 3)
            throw std::runtime_error("dataset.synthetic.num_series: expected [train, val, test]");
        for (int i = 0; i < 3; ++i) c.num_series[i] = j.at("num_series").at(i).get<std::int64_t>();
    }
    if (j.contains("f_init_range_hz")) {
        c.f_init_lo_hz = j.at("f_init_range_hz").at(0).get<double>();
        c.f_init_hi_hz = j.at("f_init_range_hz").at(1).get<double>();
    }
    if (j.contains("step_hz")) c.step_hz = j.at("step_hz").get<double>();
    if (j.contains("p_up")) c.p_up = j.at("p_up").get<double>();
    if (j.contains("p_const")) c.p_const = j.at("p_const").get<double>();
    if (j.contains("p_down")) c.p_down = j.at("p_down").get<double>();
    if (j.contains("f_bounds_hz")) {
        c.f_min_hz = j.at("f_bounds_hz").at(0).get<double>();
        c.f_max_hz = j.at("f_bounds_hz").at(1).get<double>();
    }
    if (j.contains("noise_sigma")) c.noise_sigma = j.at("noise_sigma").get<double>();
    if (j.contains("rng_seed")) c.rng_seed = j.at("rng_seed").get<std::uint64_t>();
    if (j.contains("phase_mode")) {
        const std::string m = j.at("phase_mode").get<std::string>();
        if (m != "cumulative" && m != "literal")
            throw std::runtime_error("dataset.synthetic.phase_mode: expected cumulative|literal");
        c.phase_mode = m == "literal" ? PhaseMode::literal : PhaseMode::cumulative;
    }
    if (j.contains("window_seconds")) c.window_seconds = j.at("window_seconds").get<double>();
    try {
        c.validate();
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("dataset.synthetic: ") + e.what());
    }
    return c;
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
    check_keys(j, {"dataset", "model", "metrics", "output_dir", "sweep"}, "(root)");
    RunConfig cfg;

    if (!j.contains("dataset")) throw std::runtime_error("(root): missing 'dataset' section");
    const json& d = j.at("dataset");
    check_keys(d, {"path", "synthetic"}, "dataset");
    if (d.contains("path") == d.contains("synthetic"))
        throw std::runtime_error("dataset: exactly one of 'path' or 'synthetic' is required");
    if (d.contains("path")) cfg.dataset_path = d.at("path").get<std::string>();
    if (d.contains("synthetic")) cfg.synthetic = parse_synthetic(d.at("synthetic"));

    if (!j.contains("model")) throw std::runtime_error("(root): missing 'model' section");
    const json& m = j.at("model");
    check_keys(m, {"type", "alpha", "stop_grad_som", "cpc", "optimizer", "batch_size",
                   "max_epochs", "seed", "som"},
               "model");
    if (m.contains("cpc"))
        check_keys(m.at("cpc"),
                   {"num_predictions", "num_negatives", "negative_scope", "use_ar",
                    "context_length"},
                   "model.cpc");
    if (m.contains("optimizer"))
        check_keys(m.at("optimizer"), {"lr", "beta1", "beta2", "eps"}, "model.optimizer");
    if (m.contains("som"))
        check_keys(m.at("som"),
                   {"width", "height", "sigma_0", "sigma_end", "kernel", "beta_over_alpha"},
                   "model.som");
    if (!m.contains("type")) throw std::runtime_error("model: missing 'type'");
    if (!m.contains("alpha")) throw std::runtime_error("model: missing 'alpha'");
    if (m.contains("negative_scope"))
        throw std::runtime_error("model: unknown key 'negative_scope' (belongs under model.cpc)");
    if (m.contains("som") && m.at("som").contains("kernel")) {
        const std::string k = m.at("som").at("kernel").get<std::string>();
        if (k != "gaussian" && k != "plus")
            throw std::runtime_error("model.som.kernel: expected gaussian|plus");
    }
    try {
        cfg.model = train_config_from_json(m);
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("model: ") + e.what());
    }

    if (j.contains("metrics")) {
        const json& mt = j.at("metrics");
        check_keys(mt, {"splits"}, "metrics");
        if (mt.contains("splits")) {
            cfg.metrics_splits.clear();
            for (const auto& s : mt.at("splits"))
                cfg.metrics_splits.push_back(split_from_name(s.get<std::string>()));
            if (cfg.metrics_splits.empty())
                throw std::runtime_error("metrics.splits: must not be empty");
        }
    }
    if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir").get<std::string>();

    if (j.contains("sweep")) {
        const json& s = j.at("sweep");
        check_keys(s, {"alpha", "kernel"}, "sweep");
        if (s.contains("alpha"))
            for (const auto& a : s.at("alpha")) cfg.sweep_alpha.push_back(a.get<double>());
        if (s.contains("kernel"))
            for (const auto& k : s.at("kernel")) {
                const std::string name = k.get<std::string>();
                if (name != "gaussian" && name != "plus")
                    throw std::runtime_error("sweep.kernel: expected gaussian|plus");
                cfg.sweep_kernel.push_back(name == "plus" ? NeighborhoodKernel::Kind::plus
                                                          : NeighborhoodKernel::Kind::gaussian);
            }
        if (cfg.sweep_alpha.empty() && cfg.sweep_kernel.empty())
            throw std::runtime_error("sweep: at least one axis (alpha, kernel) is required");
    }
    return cfg;
}

RunConfig parse_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config file " + path);
    json j;
    try {
        j = json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
    try {
        return run_config_from_json(j);
    } catch (const std::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

nlohmann::ordered_json synthetic_config_to_json(const SyntheticConfig& c) {
    json j;
    j["sample_rate_hz"] = c.sample_rate_hz;
    j["duration_s"] = c.duration_s;
    j["num_series"] = {c.num_series[0], c.num_series[1], c.num_series[2]};
    j["f_init_range_hz"] = {c.f_init_lo_hz, c.f_init_hi_hz};
    j["step_hz"] = c.step_hz;
    j["p_up"] = c.p_up;
    j["p_const"] = c.p_const;
    j["p_down"] = c.p_down;
    j["f_bounds_hz"] = {c.f_min_hz, c.f_max_hz};
    j["noise_sigma"] = c.noise_sigma;
    j["rng_seed"] = c.rng_seed;
    j["phase_mode"] = c.phase_mode == PhaseMode::cumulative ? "cumulative" : "literal";
    j["window_seconds"] = c.window_seconds;
    return j;
}

nlohmann::ordered_json run_config_to_json(const RunConfig& cfg) {
    json j;
    if (cfg.dataset_path) {
        j["dataset"]["path"] = *cfg.dataset_path;
    } else if (cfg.synthetic) {
        j["dataset"]["synthetic"] = synthetic_config_to_json(*cfg.synthetic);
    }
    j["model"] = train_config_to_json(cfg.model);
    json splits = json::array();
    for (auto s : cfg.metrics_splits) splits.push_back(split_name(s));
    j["metrics"]["splits"] = std::move(splits);
    if (cfg.output_dir) j["output_dir"] = *cfg.output_dir;
    if (!cfg.sweep_alpha.empty() || !cfg.sweep_kernel.empty()) {
        if (!cfg.sweep_alpha.empty()) j["sweep"]["alpha"] = cfg.sweep_alpha;
        if (!cfg.sweep_kernel.empty()) {
            json ks = json::array();
            for (auto k : cfg.sweep_kernel)
                ks.push_back(k == NeighborhoodKernel::Kind::plus ? "plus" : "gaussian");
            j["sweep"]["kernel"] = std::move(ks);
        }
    }
    return j;
}

}  // namespace somcpc
