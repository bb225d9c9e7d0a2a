#include "somcpc/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace somcpc {

namespace {

std::string fmt(double v, const char* spec = "%.6g") {
    char buf[48];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

std::string fmt17(double v) { return fmt(v, "%.17g"); }

// compact viridis-like ramp
std::string colormap(double t) {
    static constexpr double stops[5][3] = {{68, 1, 84},     {59, 82, 139},  {33, 145, 140},
                                           {94, 201, 98},   {253, 231, 37}};
    t = std::clamp(t, 0.0, 1.0);
    const double x = t * 4.0;
    const int i = std::min(3, static_cast<int>(x));
    const double f = x - i;
    char buf[16];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x",
                  static_cast<int>(std::lround(stops[i][0] + f * (stops[i + 1][0] - stops[i][0]))),
                  static_cast<int>(std::lround(stops[i][1] + f * (stops[i + 1][1] - stops[i][1]))),
                  static_cast<int>(std::lround(stops[i][2] + f * (stops[i + 1][2] - stops[i][2]))));
    return buf;
}

}  // namespace

std::string som_heatmap_svg(const SomGrid& grid, const NodeColoring& stats,
                            const std::string& title, bool size_by_count) {
    const double cell = 44.0;
    const double margin = 28.0;
    const double legend_w = 56.0;
    const double w = margin * 2 + static_cast<double>(grid.width) * cell + legend_w;
    const double h = margin * 2 + static_cast<double>(grid.height) * cell + 18.0;

    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    std::int64_t max_count = 1;
    for (std::int64_t i = 0; i < grid.k(); ++i) {
        if (stats.count[static_cast<std::size_t>(i)] > 0) {
            lo = std::min(lo, stats.median_label[static_cast<std::size_t>(i)]);
            hi = std::max(hi, stats.median_label[static_cast<std::size_t>(i)]);
            max_count = std::max(max_count, stats.count[static_cast<std::size_t>(i)]);
        }
    }
    const bool any = std::isfinite(lo);
    const double span = any && hi > lo ? hi - lo : 1.0;

    std::string s;
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(w) + "\" height=\"" + fmt(h) +
         "\" viewBox=\"0 0 " + fmt(w) + " " + fmt(h) + "\">\n";
    s += "<text x=\"" + fmt(margin) + "\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\">" +
         title + "</text>\n";
    s += "<g class=\"som-cells\">\n";
    for (std::int64_t i = 0; i < grid.k(); ++i) {
        const double cx = margin + grid.coord_x(i) * cell;
        const double cy = margin + grid.coord_y(i) * cell;
        const std::int64_t cnt = stats.count[static_cast<std::size_t>(i)];
        double side = cell - 3.0;
        if (size_by_count && cnt > 0)
            side *= std::sqrt(static_cast<double>(cnt) / static_cast<double>(max_count));
        const double off = (cell - 3.0 - side) / 2.0;
        if (cnt > 0) {
            const double t = (stats.median_label[static_cast<std::size_t>(i)] - lo) / span;
            s += "<rect x=\"" + fmt(cx + 1.5 + off) + "\" y=\"" + fmt(cy + 1.5 + off) +
                 "\" width=\"" + fmt(side) + "\" height=\"" + fmt(side) + "\" fill=\"" +
                 colormap(t) + "\" data-count=\"" + std::to_string(cnt) + "\" data-label=\"" +
                 fmt(stats.median_label[static_cast<std::size_t>(i)]) + "\"/>\n";
        } else {
            s += "<rect x=\"" + fmt(cx + 1.5) + "\" y=\"" + fmt(cy + 1.5) + "\" width=\"" +
                 fmt(cell - 3.0) + "\" height=\"" + fmt(cell - 3.0) +
                 "\" fill=\"none\" stroke=\"#bbbbbb\" stroke-width=\"1\" data-count=\"0\"/>\n";
        }
    }
    s += "</g>\n";
    // legend
    if (any) {
        const double lx = margin + static_cast<double>(grid.width) * cell + 16.0;
        const double ly = margin;
        const double lh = static_cast<double>(grid.height) * cell;
        const int steps = 24;
        for (int i = 0; i < steps; ++i) {
            const double t = 1.0 - static_cast<double>(i) / (steps - 1);
            s += "<rect x=\"" + fmt(lx) + "\" y=\"" + fmt(ly + lh * i / steps) + "\" width=\"14\" height=\"" +
                 fmt(lh / steps + 0.5) + "\" fill=\"" + colormap(t) + "\"/>\n";
        }
        s += "<text x=\"" + fmt(lx + 18) + "\" y=\"" + fmt(ly + 10) +
             "\" font-family=\"sans-serif\" font-size=\"11\">" + fmt(hi) + "</text>\n";
        s += "<text x=\"" + fmt(lx + 18) + "\" y=\"" + fmt(ly + lh) +
             "\" font-family=\"sans-serif\" font-size=\"11\">" + fmt(lo) + "</text>\n";
    }
    s += "</svg>\n";
    return s;
}

std::string trajectory_svg(const std::vector<StepRecord>& history, const std::string& title) {
    if (history.empty()) throw std::runtime_error("empty loss history");
    double xmin = history.front().losses.task, xmax = xmin;
    double ymin = history.front().losses.topo, ymax = ymin;
    for (const auto& r : history) {
        xmin = std::min(xmin, r.losses.task);
        xmax = std::max(xmax, r.losses.task);
        ymin = std::min(ymin, r.losses.topo);
        ymax = std::max(ymax, r.losses.topo);
    }
    const double W = 640, H = 480, ml = 70, mr = 20, mt = 34, mb = 46;
    const double pw = W - ml - mr, ph = H - mt - mb;
    const double xspan = xmax > xmin ? xmax - xmin : 1.0;
    const double yspan = ymax > ymin ? ymax - ymin : 1.0;

    std::string s;
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(W) + "\" height=\"" + fmt(H) +
         "\" viewBox=\"0 0 " + fmt(W) + " " + fmt(H) + "\">\n";
    s += "<text x=\"" + fmt(ml) + "\" y=\"20\" font-family=\"sans-serif\" font-size=\"13\">" +
         title + "</text>\n";
    s += "<rect x=\"" + fmt(ml) + "\" y=\"" + fmt(mt) + "\" width=\"" + fmt(pw) + "\" height=\"" +
         fmt(ph) + "\" fill=\"none\" stroke=\"#444444\"/>\n";
    s += "<g class=\"trajectory\" data-xmin=\"" + fmt17(xmin) + "\" data-xmax=\"" + fmt17(xmax) +
         "\" data-ymin=\"" + fmt17(ymin) + "\" data-ymax=\"" + fmt17(ymax) + "\">\n";
    s += "<polyline fill=\"none\" stroke=\"#2166ac\" stroke-width=\"1\" points=\"";
    for (std::size_t i = 0; i < history.size(); ++i) {
        const double px = ml + (history[i].losses.task - xmin) / xspan * pw;
        const double py = mt + ph - (history[i].losses.topo - ymin) / yspan * ph;
        if (i) s += " ";
        s += fmt(px, "%.3f") + "," + fmt(py, "%.3f");
    }
    s += "\"/>\n</g>\n";
    s += "<text x=\"" + fmt(ml + pw / 2 - 30) + "\" y=\"" + fmt(H - 12) +
         "\" font-family=\"sans-serif\" font-size=\"12\">task loss</text>\n";
    s += "<text x=\"16\" y=\"" + fmt(mt + ph / 2) +
         "\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 " +
         fmt(mt + ph / 2) + ")\">topological loss</text>\n";
    s += "<text x=\"" + fmt(ml) + "\" y=\"" + fmt(H - 28) +
         "\" font-family=\"sans-serif\" font-size=\"10\">" + fmt(xmin) + "</text>\n";
    s += "<text x=\"" + fmt(ml + pw - 40) + "\" y=\"" + fmt(H - 28) +
         "\" font-family=\"sans-serif\" font-size=\"10\">" + fmt(xmax) + "</text>\n";
    s += "<text x=\"" + fmt(ml - 60) + "\" y=\"" + fmt(mt + ph) +
         "\" font-family=\"sans-serif\" font-size=\"10\">" + fmt(ymin) + "</text>\n";
    s += "<text x=\"" + fmt(ml - 60) + "\" y=\"" + fmt(mt + 10) +
         "\" font-family=\"sans-serif\" font-size=\"10\">" + fmt(ymax) + "</text>\n";
    s += "</svg>\n";
    return s;
}

nlohmann::ordered_json node_coloring_to_json(const NodeColoring& c) {
    nlohmann::ordered_json j;
    j["k"] = c.k;
    j["mode_label"] = c.mode_label;
    j["median_label"] = c.median_label;
    j["count"] = c.count;
    j["mean_window_index"] = c.mean_window_index;
    return j;
}

}  // namespace somcpc
