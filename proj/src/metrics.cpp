#include "somcpc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

namespace somcpc {

void NodeAssignment::validate() const {
    const std::size_t n = node_index.size();
    if (label.size() != n || series_id.size() != n || window_index.size() != n)
        throw std::invalid_argument("node assignment arrays must have equal lengths");
    for (auto v : node_index)
        if (v < 0 || v >= k) throw std::invalid_argument("node index out of range");
}

namespace {

std::map<double, std::int64_t> label_classes(const NodeAssignment& a) {
    std::map<double, std::int64_t> classes;
    for (double l : a.label) classes.emplace(l, 0);
    std::int64_t id = 0;
    for (auto& [label, cid] : classes) cid = id++;
    return classes;
}

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

NodeColoring NodeColoring::fit(const NodeAssignment& train_assignment) {
    if (train_assignment.split_tag != Split::train)
        throw std::invalid_argument("node coloring must be fitted on the train split");
    return node_stats(train_assignment);
}

NodeColoring node_stats(const NodeAssignment& train_assignment) {
    train_assignment.validate();
    const std::int64_t k = train_assignment.k;
    NodeColoring c;
    c.k = k;
    c.mode_label.assign(static_cast<std::size_t>(k), std::numeric_limits<double>::quiet_NaN());
    c.median_label.assign(static_cast<std::size_t>(k), std::numeric_limits<double>::quiet_NaN());
    c.count.assign(static_cast<std::size_t>(k), 0);
    c.mean_window_index.assign(static_cast<std::size_t>(k), 0.0);

    std::vector<std::vector<double>> labels_per_node(static_cast<std::size_t>(k));
    std::vector<double> index_sum(static_cast<std::size_t>(k), 0.0);
    for (std::int64_t w = 0; w < train_assignment.num_windows(); ++w) {
        const auto node = static_cast<std::size_t>(train_assignment.node_index[static_cast<std::size_t>(w)]);
        labels_per_node[node].push_back(train_assignment.label[static_cast<std::size_t>(w)]);
        index_sum[node] += static_cast<double>(train_assignment.window_index[static_cast<std::size_t>(w)]);
        ++c.count[node];
    }
    for (std::int64_t i = 0; i < k; ++i) {
        const auto& ls = labels_per_node[static_cast<std::size_t>(i)];
        if (ls.empty()) continue;
        c.median_label[static_cast<std::size_t>(i)] = median_of(ls);
        c.mean_window_index[static_cast<std::size_t>(i)] =
            index_sum[static_cast<std::size_t>(i)] / static_cast<double>(ls.size());
        // mode with lowest-label tie-break
        std::map<double, std::int64_t> counts;
        for (double l : ls) ++counts[l];
        std::int64_t best = 0;
        double best_label = 0.0;
        for (const auto& [label, n] : counts) {
            if (n > best) {
                best = n;
                best_label = label;
            }
        }
        c.mode_label[static_cast<std::size_t>(i)] = best_label;
    }
    c.global_median = median_of(train_assignment.label);
    return c;
}

double purity(const NodeAssignment& a) {
    a.validate();
    if (a.num_windows() == 0) throw std::invalid_argument("empty assignment");
    const auto classes = label_classes(a);
    const auto nc = static_cast<std::int64_t>(classes.size());
    std::vector<std::int64_t> counts(static_cast<std::size_t>(a.k * nc), 0);
    for (std::int64_t w = 0; w < a.num_windows(); ++w) {
        const std::int64_t cid = classes.at(a.label[static_cast<std::size_t>(w)]);
        ++counts[static_cast<std::size_t>(a.node_index[static_cast<std::size_t>(w)] * nc + cid)];
    }
    std::int64_t sum = 0;
    for (std::int64_t node = 0; node < a.k; ++node) {
        std::int64_t best = 0;
        for (std::int64_t c = 0; c < nc; ++c)
            best = std::max(best, counts[static_cast<std::size_t>(node * nc + c)]);
        sum += best;
    }
    return static_cast<double>(sum) / static_cast<double>(a.num_windows());
}

double nmi(const NodeAssignment& a) {
    a.validate();
    const std::int64_t n = a.num_windows();
    if (n == 0) throw std::invalid_argument("empty assignment");
    const auto classes = label_classes(a);
    const auto nc = static_cast<std::int64_t>(classes.size());
    std::vector<std::int64_t> joint(static_cast<std::size_t>(a.k * nc), 0);
    std::vector<std::int64_t> node_marg(static_cast<std::size_t>(a.k), 0);
    std::vector<std::int64_t> class_marg(static_cast<std::size_t>(nc), 0);
    for (std::int64_t w = 0; w < n; ++w) {
        const std::int64_t node = a.node_index[static_cast<std::size_t>(w)];
        const std::int64_t cid = classes.at(a.label[static_cast<std::size_t>(w)]);
        ++joint[static_cast<std::size_t>(node * nc + cid)];
        ++node_marg[static_cast<std::size_t>(node)];
        ++class_marg[static_cast<std::size_t>(cid)];
    }
    const double dn = static_cast<double>(n);
    double mi = 0.0, h_node = 0.0, h_class = 0.0;
    for (std::int64_t i = 0; i < a.k; ++i) {
        if (node_marg[static_cast<std::size_t>(i)] == 0) continue;
        const double p = node_marg[static_cast<std::size_t>(i)] / dn;
        h_node -= p * std::log(p);
        for (std::int64_t c = 0; c < nc; ++c) {
            const std::int64_t jc = joint[static_cast<std::size_t>(i * nc + c)];
            if (jc == 0) continue;
            const double pj = jc / dn;
            const double pc = class_marg[static_cast<std::size_t>(c)] / dn;
            mi += pj * std::log(pj / (p * pc));
        }
    }
    for (std::int64_t c = 0; c < nc; ++c) {
        if (class_marg[static_cast<std::size_t>(c)] == 0) continue;
        const double p = class_marg[static_cast<std::size_t>(c)] / dn;
        h_class -= p * std::log(p);
    }
    const double denom = 0.5 * (h_node + h_class);
    if (denom <= 0.0) return 0.0;
    return mi / denom;
}

double cohens_kappa(const NodeAssignment& eval, const NodeColoring& coloring) {
    eval.validate();
    if (eval.k != coloring.k) throw std::invalid_argument("coloring grid size mismatch");
    const std::int64_t n = eval.num_windows();
    if (n == 0) throw std::invalid_argument("empty assignment");

    std::map<double, std::int64_t> classes;
    for (double l : eval.label) classes.emplace(l, 0);
    for (std::int64_t i = 0; i < coloring.k; ++i)
        if (coloring.count[static_cast<std::size_t>(i)] > 0)
            classes.emplace(coloring.mode_label[static_cast<std::size_t>(i)], 0);
    std::int64_t id = 0;
    for (auto& [label, cid] : classes) cid = id++;
    const std::int64_t nc = id;
    const std::int64_t unknown = nc;  // predictions from unassigned nodes

    std::vector<std::int64_t> pred_marg(static_cast<std::size_t>(nc + 1), 0);
    std::vector<std::int64_t> true_marg(static_cast<std::size_t>(nc + 1), 0);
    std::int64_t agree = 0;
    for (std::int64_t w = 0; w < n; ++w) {
        const std::int64_t node = eval.node_index[static_cast<std::size_t>(w)];
        const std::int64_t pred = coloring.count[static_cast<std::size_t>(node)] > 0
                                      ? classes.at(coloring.mode_label[static_cast<std::size_t>(node)])
                                      : unknown;
        const std::int64_t truth = classes.at(eval.label[static_cast<std::size_t>(w)]);
        if (pred == truth) ++agree;
        ++pred_marg[static_cast<std::size_t>(pred)];
        ++true_marg[static_cast<std::size_t>(truth)];
    }
    const double dn = static_cast<double>(n);
    const double po = agree / dn;
    double pe = 0.0;
    for (std::int64_t c = 0; c <= nc; ++c)
        pe += (pred_marg[static_cast<std::size_t>(c)] / dn) * (true_marg[static_cast<std::size_t>(c)] / dn);
    if (pe >= 1.0) return 1.0;  // degenerate single-class case
    return (po - pe) / (1.0 - pe);
}

double se_target(const NodeAssignment& eval, const NodeColoring& coloring) {
    eval.validate();
    if (eval.k != coloring.k) throw std::invalid_argument("coloring grid size mismatch");
    const std::int64_t n = eval.num_windows();
    if (n == 0) throw std::invalid_argument("empty assignment");
    double sum = 0.0;
    for (std::int64_t w = 0; w < n; ++w) {
        const std::int64_t node = eval.node_index[static_cast<std::size_t>(w)];
        const double pred = coloring.count[static_cast<std::size_t>(node)] > 0
                                ? coloring.median_label[static_cast<std::size_t>(node)]
                                : coloring.global_median;
        const double d = eval.label[static_cast<std::size_t>(w)] - pred;
        sum += d * d;
    }
    return sum / static_cast<double>(n);
}

double topographic_error(const Top2Assignment& top2, const SomGrid& grid, bool eight_connected,
                         bool* degenerate) {
    if (degenerate) *degenerate = false;
    if (top2.best.size() != top2.second.size() || top2.best.empty())
        throw std::invalid_argument("top-2 assignment must be non-empty and aligned");
    if (grid.k() == 1) {
        if (degenerate) *degenerate = true;
        return 0.0;
    }
    std::int64_t errors = 0;
    for (std::size_t w = 0; w < top2.best.size(); ++w) {
        const std::int64_t a = top2.best[w];
        const std::int64_t b = top2.second[w];
        const double dx = std::abs(grid.coord_x(a) - grid.coord_x(b));
        const double dy = std::abs(grid.coord_y(a) - grid.coord_y(b));
        const bool neighbor = eight_connected ? (std::max(dx, dy) == 1.0)
                                              : (dx + dy == 1.0);
        if (!neighbor) ++errors;
    }
    return static_cast<double>(errors) / static_cast<double>(top2.best.size());
}

L2SmoothResult l2_smooth(const NodeAssignment& a, const SomGrid& grid) {
    a.validate();
    if (a.num_windows() == 0) throw std::invalid_argument("empty assignment");
    std::vector<double> per_series;
    std::int64_t begin = 0;
    const std::int64_t n = a.num_windows();
    for (std::int64_t i = 1; i <= n; ++i) {
        if (i == n || a.series_id[static_cast<std::size_t>(i)] !=
                          a.series_id[static_cast<std::size_t>(begin)]) {
            if (i - begin >= 2) {
                double sum = 0.0;
                for (std::int64_t w = begin + 1; w < i; ++w)
                    sum += grid_distance(grid, a.node_index[static_cast<std::size_t>(w - 1)],
                                         a.node_index[static_cast<std::size_t>(w)]);
                per_series.push_back(sum / static_cast<double>(i - begin - 1));
            }
            begin = i;
        }
    }
    L2SmoothResult r;
    if (per_series.empty()) return r;
    for (double v : per_series) r.mean += v;
    r.mean /= static_cast<double>(per_series.size());
    double var = 0.0;
    for (double v : per_series) var += (v - r.mean) * (v - r.mean);
    r.stddev = std::sqrt(var / static_cast<double>(per_series.size()));
    return r;
}

nlohmann::ordered_json MetricsReport::to_json() const {
    nlohmann::ordered_json j;
    j["purity"] = purity;
    j["nmi"] = nmi;
    j["kappa"] = kappa;
    j["se_target"] = se_target;
    j["te"] = te;
    j["te_8connected"] = te_8connected;
    j["l2_smooth_mean"] = l2_smooth_mean;
    j["l2_smooth_std"] = l2_smooth_std;
    j["k"] = k;
    j["collapsed_nodes"] = collapsed_nodes;
    j["collapse_warning"] = collapse_warning;
    return j;
}

MetricsReport compute_metrics(const NodeAssignment& eval, const Top2Assignment& eval_top2,
                              const NodeColoring& coloring, const SomGrid& grid) {
    MetricsReport r;
    r.k = grid.k();
    r.purity = purity(eval);
    r.nmi = nmi(eval);
    r.kappa = cohens_kappa(eval, coloring);
    r.se_target = se_target(eval, coloring);
    bool degenerate = false;
    r.te = topographic_error(eval_top2, grid, false, &degenerate);
    r.te_8connected = topographic_error(eval_top2, grid, true);
    const L2SmoothResult l2 = l2_smooth(eval, grid);
    r.l2_smooth_mean = l2.mean;
    r.l2_smooth_std = l2.stddev;
    std::vector<bool> used(static_cast<std::size_t>(grid.k()), false);
    for (auto node : eval.node_index) used[static_cast<std::size_t>(node)] = true;
    std::int64_t distinct = 0;
    for (bool u : used) distinct += u;
    r.collapsed_nodes = grid.k() - distinct;
    r.collapse_warning = degenerate || distinct <= 1;
    return r;
}

}  // namespace somcpc
