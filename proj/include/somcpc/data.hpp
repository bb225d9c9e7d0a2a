#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace somcpc {

enum class PhaseMode { cumulative, literal };
enum class Split { train, val, test };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

/// Parameters of the synthetic random-walk-frequency sinusoid generator.
struct SyntheticConfig {
    double sample_rate_hz = 128.0;
    double duration_s = 300.0;
    std::int64_t num_series[3] = {100, 50, 50};  // train, val, test
    double f_init_lo_hz = 20.0;
    double f_init_hi_hz = 40.0;
    double step_hz = 0.1;
    double p_up = 0.1;
    double p_const = 0.8;
    double p_down = 0.1;
    double f_min_hz = 1.0;
    double f_max_hz = 60.0;
    double noise_sigma = 0.1;
    std::uint64_t rng_seed = 0;
    PhaseMode phase_mode = PhaseMode::cumulative;
    double window_seconds = 1.0;

    /// Throws std::invalid_argument when any invariant is broken.
    void validate() const;
    std::int64_t samples_per_series() const;
    std::int64_t samples_per_window() const;
};

/// Windowed multichannel series with per-window labels; one split.
struct LabeledWindowSet {
    std::int64_t channels = 1;
    std::int64_t window_len = 0;             // samples per window
    std::vector<double> windows;             // [num_windows, channels, window_len]
    std::vector<double> labels;              // [num_windows]
    std::vector<std::int64_t> series_id;     // [num_windows]
    std::vector<std::int64_t> window_index;  // index within its series
    Split split_tag = Split::train;

    std::int64_t num_windows() const { return static_cast<std::int64_t>(labels.size()); }
    const double* window(std::int64_t w) const {
        return windows.data() + w * channels * window_len;
    }
    /// Number of distinct series (ids are contiguous per series).
    std::int64_t num_series() const;
};

struct Dataset {
    SyntheticConfig config;
    LabeledWindowSet train;
    LabeledWindowSet val;
    LabeledWindowSet test;

    const LabeledWindowSet& split(Split s) const;
};

/// One synthetic series: amplitude-1 sinusoid whose frequency follows a
/// reflected random walk, plus white Gaussian noise. Returns the signal and
/// the ground-truth instantaneous frequency per sample.
struct SeriesResult {
    std::vector<double> samples;
    std::vector<double> inst_freq;
};
SeriesResult generate_series(const SyntheticConfig& cfg, std::uint64_t series_seed);

/// Cuts a series into consecutive non-overlapping windows labelled with the
/// median instantaneous frequency. window length must divide series length.
LabeledWindowSet window_and_label(const std::vector<double>& samples,
                                  const std::vector<double>& inst_freq,
                                  double sample_rate_hz, double window_seconds);

/// Generates all three splits. Deterministic given cfg.rng_seed; series are
/// assigned to splits up front (ids 0..n-1 in train/val/test order).
Dataset build_dataset(const SyntheticConfig& cfg);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace somcpc
