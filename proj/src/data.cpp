#include "somcpc/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "somcpc/rng.hpp"
#include "somcpc/serialize.hpp"

namespace somcpc {

const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    throw std::invalid_argument("unknown split '" + name + "'");
}

void SyntheticConfig::validate() const {
    if (!(sample_rate_hz > 0)) throw std::invalid_argument("sample_rate_hz must be positive");
    if (!(duration_s > 0)) throw std::invalid_argument("duration_s must be positive");
    for (auto n : num_series)
        if (n < 0) throw std::invalid_argument("num_series must be non-negative");
    if (!(step_hz > 0)) throw std::invalid_argument("step_hz must be positive");
    if (std::abs(p_up + p_const + p_down - 1.0) > 1e-12)
        throw std::invalid_argument("p_up + p_const + p_down must equal 1");
    if (p_up < 0 || p_const < 0 || p_down < 0)
        throw std::invalid_argument("step probabilities must be non-negative");
    if (!(f_min_hz < f_max_hz)) throw std::invalid_argument("f_bounds must be a proper interval");
    if (f_init_lo_hz > f_init_hi_hz)
        throw std::invalid_argument("f_init_range must be a valid interval");
    if (f_init_lo_hz < f_min_hz || f_init_hi_hz > f_max_hz)
        throw std::invalid_argument("f_init_range must lie inside f_bounds");
    if (noise_sigma < 0) throw std::invalid_argument("noise_sigma must be non-negative");
    if (samples_per_series() <= 0) throw std::invalid_argument("duration yields zero samples");
    const double spw = sample_rate_hz * window_seconds;
    if (!(window_seconds > 0) || std::abs(spw - std::round(spw)) > 1e-9 || std::round(spw) < 1)
        throw std::invalid_argument("window length in samples must be a positive integer");
}

std::int64_t SyntheticConfig::samples_per_series() const {
    return static_cast<std::int64_t>(std::llround(sample_rate_hz * duration_s));
}

std::int64_t SyntheticConfig::samples_per_window() const {
    return static_cast<std::int64_t>(std::llround(sample_rate_hz * window_seconds));
}

std::int64_t LabeledWindowSet::num_series() const {
    std::int64_t n = 0;
    std::int64_t prev = -1;
    for (auto id : series_id) {
        if (id != prev) {
            ++n;
            prev = id;
        }
    }
    return n;
}

const LabeledWindowSet& Dataset::split(Split s) const {
    switch (s) {
        case Split::train: return train;
        case Split::val: return val;
        case Split::test: return test;
    }
    throw std::logic_error("bad split");
}

SeriesResult generate_series(const SyntheticConfig& cfg, std::uint64_t series_seed) {
    cfg.validate();
    const std::int64_t n = cfg.samples_per_series();
    Rng rng(series_seed);

    SeriesResult out;
    out.samples.resize(static_cast<std::size_t>(n));
    out.inst_freq.resize(static_cast<std::size_t>(n));

    double f = rng.uniform(cfg.f_init_lo_hz, cfg.f_init_hi_hz);
    if (cfg.f_init_lo_hz == cfg.f_init_hi_hz) f = cfg.f_init_lo_hz;
    double phase_turns = 0.0;  // phase / 2pi, wrapped to [0, 1): wrap is exact in fp

    for (std::int64_t i = 0; i < n; ++i) {
        if (i > 0) {
            // Reflecting boundaries: when the next step would cross a bound,
            // the step distribution is altered before drawing.
            double p[3] = {cfg.p_up, cfg.p_const, cfg.p_down};
            const bool hi = f + cfg.step_hz > cfg.f_max_hz;
            const bool lo = f - cfg.step_hz < cfg.f_min_hz;
            if (hi && lo) {
                p[0] = 0.0; p[1] = 1.0; p[2] = 0.0;
            } else if (hi) {
                p[0] = 0.0; p[1] = 0.5; p[2] = 0.5;
            } else if (lo) {
                p[0] = 0.5; p[1] = 0.5; p[2] = 0.0;
            }
            switch (rng.categorical(p, 3)) {
                case 0: f += cfg.step_hz; break;
                case 2: f -= cfg.step_hz; break;
                default: break;
            }
        }
        out.inst_freq[static_cast<std::size_t>(i)] = f;

        double x;
        if (cfg.phase_mode == PhaseMode::cumulative) {
            if (i > 0) {
                phase_turns += f / cfg.sample_rate_hz;
                if (phase_turns >= 1.0) phase_turns -= std::floor(phase_turns);
            }
            x = std::sin(2.0 * std::numbers::pi * phase_turns);
        } else {
            x = std::sin(2.0 * std::numbers::pi * f / cfg.sample_rate_hz *
                         static_cast<double>(i));
        }
        if (cfg.noise_sigma > 0) x += rng.normal(0.0, cfg.noise_sigma);
        out.samples[static_cast<std::size_t>(i)] = x;
    }
    return out;
}

namespace {
double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}
}  // namespace

LabeledWindowSet window_and_label(const std::vector<double>& samples,
                                  const std::vector<double>& inst_freq,
                                  double sample_rate_hz, double window_seconds) {
    if (samples.size() != inst_freq.size())
        throw std::invalid_argument("samples and inst_freq must have equal length");
    const double spw_real = sample_rate_hz * window_seconds;
    if (std::abs(spw_real - std::round(spw_real)) > 1e-9 || std::round(spw_real) < 1)
        throw std::invalid_argument("window length in samples must be a positive integer");
    const auto spw = static_cast<std::size_t>(std::llround(spw_real));
    if (samples.size() % spw != 0)
        throw std::invalid_argument("window length must divide series length");

    LabeledWindowSet out;
    out.channels = 1;
    out.window_len = static_cast<std::int64_t>(spw);
    const std::size_t nw = samples.size() / spw;
    out.windows.assign(samples.begin(), samples.end());
    out.labels.resize(nw);
    out.series_id.assign(nw, 0);
    out.window_index.resize(nw);
    for (std::size_t w = 0; w < nw; ++w) {
        std::vector<double> seg(inst_freq.begin() + static_cast<std::ptrdiff_t>(w * spw),
                                inst_freq.begin() + static_cast<std::ptrdiff_t>((w + 1) * spw));
        out.labels[w] = median_of(std::move(seg));
        out.window_index[w] = static_cast<std::int64_t>(w);
    }
    return out;
}

Dataset build_dataset(const SyntheticConfig& cfg) {
    cfg.validate();
    Dataset ds;
    ds.config = cfg;

    std::int64_t global_series = 0;
    LabeledWindowSet* splits[3] = {&ds.train, &ds.val, &ds.test};
    const Split tags[3] = {Split::train, Split::val, Split::test};
    for (int s = 0; s < 3; ++s) {
        LabeledWindowSet& set = *splits[s];
        set.split_tag = tags[s];
        set.channels = 1;
        set.window_len = cfg.samples_per_window();
        for (std::int64_t i = 0; i < cfg.num_series[s]; ++i, ++global_series) {
            const std::uint64_t seed = Rng::derive(cfg.rng_seed, static_cast<std::uint64_t>(global_series));
            SeriesResult series = generate_series(cfg, seed);
            LabeledWindowSet frag =
                window_and_label(series.samples, series.inst_freq, cfg.sample_rate_hz, cfg.window_seconds);
            set.windows.insert(set.windows.end(), frag.windows.begin(), frag.windows.end());
            set.labels.insert(set.labels.end(), frag.labels.begin(), frag.labels.end());
            for (std::int64_t w = 0; w < frag.num_windows(); ++w) {
                set.series_id.push_back(global_series);
                set.window_index.push_back(w);
            }
        }
    }
    return ds;
}

namespace {

constexpr char kDatasetMagic[] = "SCPCDS01";
constexpr int kDatasetSchema = 1;

nlohmann::ordered_json config_to_json(const SyntheticConfig& c) {
    nlohmann::ordered_json j;
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

SyntheticConfig config_from_json(const nlohmann::ordered_json& j) {
    SyntheticConfig c;
    c.sample_rate_hz = j.at("sample_rate_hz").get<double>();
    c.duration_s = j.at("duration_s").get<double>();
    for (int i = 0; i < 3; ++i) c.num_series[i] = j.at("num_series").at(i).get<std::int64_t>();
    c.f_init_lo_hz = j.at("f_init_range_hz").at(0).get<double>();
    c.f_init_hi_hz = j.at("f_init_range_hz").at(1).get<double>();
    c.step_hz = j.at("step_hz").get<double>();
    c.p_up = j.at("p_up").get<double>();
    c.p_const = j.at("p_const").get<double>();
    c.p_down = j.at("p_down").get<double>();
    c.f_min_hz = j.at("f_bounds_hz").at(0).get<double>();
    c.f_max_hz = j.at("f_bounds_hz").at(1).get<double>();
    c.noise_sigma = j.at("noise_sigma").get<double>();
    c.rng_seed = j.at("rng_seed").get<std::uint64_t>();
    c.phase_mode = j.at("phase_mode").get<std::string>() == "literal" ? PhaseMode::literal
                                                                      : PhaseMode::cumulative;
    c.window_seconds = j.at("window_seconds").get<double>();
    return c;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
    BinaryContainer c;
    c.magic = kDatasetMagic;
    c.header["schema"] = kDatasetSchema;
    c.header["config"] = config_to_json(ds.config);
    c.header["arrays"] = nlohmann::ordered_json::array();
    const LabeledWindowSet* splits[3] = {&ds.train, &ds.val, &ds.test};
    for (const auto* set : splits) {
        const std::string p = split_name(set->split_tag);
        c.header[p]["num_windows"] = set->num_windows();
        c.header[p]["channels"] = set->channels;
        c.header[p]["window_len"] = set->window_len;
        c.add_f64(p + ".windows", set->windows.data(), set->windows.size());
        c.add_f64(p + ".labels", set->labels.data(), set->labels.size());
        c.add_i64(p + ".series_id", set->series_id.data(), set->series_id.size());
        c.add_i64(p + ".window_index", set->window_index.data(), set->window_index.size());
    }
    c.write(path);
}

Dataset load_dataset(const std::string& path) {
    BinaryContainer c = BinaryContainer::read(path, kDatasetMagic);
    if (!c.header.contains("schema") || c.header.at("schema").get<int>() != kDatasetSchema)
        throw std::runtime_error(path + ": dataset schema version mismatch");
    Dataset ds;
    try {
        ds.config = config_from_json(c.header.at("config"));
        LabeledWindowSet* splits[3] = {&ds.train, &ds.val, &ds.test};
        const Split tags[3] = {Split::train, Split::val, Split::test};
        for (int s = 0; s < 3; ++s) {
            LabeledWindowSet& set = *splits[s];
            const std::string p = split_name(tags[s]);
            set.split_tag = tags[s];
            const auto nw = c.header.at(p).at("num_windows").get<std::size_t>();
            set.channels = c.header.at(p).at("channels").get<std::int64_t>();
            set.window_len = c.header.at(p).at("window_len").get<std::int64_t>();
            const std::size_t wlen = nw * static_cast<std::size_t>(set.channels * set.window_len);
            const double* w = c.get_f64(p + ".windows", wlen);
            set.windows.assign(w, w + wlen);
            const double* l = c.get_f64(p + ".labels", nw);
            set.labels.assign(l, l + nw);
            const std::int64_t* sid = c.get_i64(p + ".series_id", nw);
            set.series_id.assign(sid, sid + nw);
            const std::int64_t* wi = c.get_i64(p + ".window_index", nw);
            set.window_index.assign(wi, wi + nw);
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path + ": corrupted header: " + e.what());
    }
    return ds;
}

}  // namespace somcpc
