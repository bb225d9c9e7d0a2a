#include "somcpc/som.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "somcpc/kernels.hpp"
#include "somcpc/rng.hpp"

namespace somcpc {

SomGrid SomGrid::create(std::int64_t width, std::int64_t height, std::int64_t feature_dim,
                        Rng& init_rng) {
    if (width < 1 || height < 1) throw std::invalid_argument("SOM grid must have k >= 1 nodes");
    if (feature_dim < 1) throw std::invalid_argument("SOM feature dim must be >= 1");
    SomGrid g;
    g.width = width;
    g.height = height;
    g.feature_dim = feature_dim;
    const std::int64_t k = width * height;
    g.prototypes.resize(static_cast<std::size_t>(k * feature_dim));
    for (auto& p : g.prototypes) p = init_rng.uniform(-0.05, 0.05);
    g.grid_coords.resize(static_cast<std::size_t>(2 * k));
    for (std::int64_t i = 0; i < k; ++i) {
        g.grid_coords[2 * i] = static_cast<double>(i % width);
        g.grid_coords[2 * i + 1] = static_cast<double>(i / width);
    }
    return g;
}

SigmaSchedule SigmaSchedule::make(double sigma_0, double sigma_end, std::int64_t n_max) {
    if (!(sigma_0 > 0) || !(sigma_end > 0))
        throw std::invalid_argument("sigma endpoints must be positive");
    if (n_max < 1) throw std::invalid_argument("n_max must be positive");
    SigmaSchedule s;
    s.sigma_0 = sigma_0;
    s.sigma_end = sigma_end;
    s.n_max = n_max;
    s.lambda = -static_cast<double>(n_max) / std::log(sigma_end / sigma_0);
    return s;
}

double sigma_at(const SigmaSchedule& s, std::int64_t n) {
    return s.sigma_0 * std::exp(-static_cast<double>(n) / s.lambda);
}

namespace {
void check_z(const SomGrid& grid, const double* z, std::int64_t len) {
    if (len != grid.feature_dim)
        throw std::invalid_argument("dimension mismatch: z has length " + std::to_string(len) +
                                    ", prototypes have " + std::to_string(grid.feature_dim));
    for (std::int64_t i = 0; i < len; ++i)
        if (!std::isfinite(z[i])) throw std::invalid_argument("non-finite value in z");
}
}  // namespace

std::int64_t winner(const SomGrid& grid, const double* z, std::int64_t len) {
    check_z(grid, z, len);
    std::int64_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::int64_t i = 0; i < grid.k(); ++i) {
        const double d = kernels::sqdist(z, grid.proto(i), static_cast<std::size_t>(len));
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

std::pair<std::int64_t, std::int64_t> winner_top2(const SomGrid& grid, const double* z,
                                                  std::int64_t len) {
    check_z(grid, z, len);
    if (grid.k() < 2) return {0, 0};
    std::int64_t b0 = -1, b1 = -1;
    double d0 = std::numeric_limits<double>::infinity();
    double d1 = std::numeric_limits<double>::infinity();
    for (std::int64_t i = 0; i < grid.k(); ++i) {
        const double d = kernels::sqdist(z, grid.proto(i), static_cast<std::size_t>(len));
        if (d < d0) {
            d1 = d0;
            b1 = b0;
            d0 = d;
            b0 = i;
        } else if (d < d1) {
            d1 = d;
            b1 = i;
        }
    }
    return {b0, b1};
}

double grid_distance(const SomGrid& grid, std::int64_t j, std::int64_t i) {
    if (j < 0 || j >= grid.k() || i < 0 || i >= grid.k())
        throw std::out_of_range("grid node index out of range");
    const double dx = grid.coord_x(j) - grid.coord_x(i);
    const double dy = grid.coord_y(j) - grid.coord_y(i);
    return std::sqrt(dx * dx + dy * dy);
}

double kernel_weight(const NeighborhoodKernel& kernel, std::int64_t n, const SomGrid& grid,
                     std::int64_t j, std::int64_t i) {
    if (i == j) return 1.0;
    const double d = grid_distance(grid, j, i);
    if (kernel.kind == NeighborhoodKernel::Kind::plus) {
        // four direct grid neighbours: unit distance on the integer lattice
        return d == 1.0 ? kernel.beta_over_alpha : 0.0;
    }
    const double sigma = sigma_at(kernel.schedule, n);
    if (sigma <= 0.0) return 0.0;
    return std::exp(-(d * d) / (2.0 * sigma * sigma));
}

namespace {

// Base neighbor weight for the split form: the plus kernel contributes its
// beta/alpha scaling through the outer multiplier instead.
double neighbor_base_weight(const NeighborhoodKernel& kernel, std::int64_t n, const SomGrid& grid,
                            std::int64_t j, std::int64_t i) {
    if (kernel.kind == NeighborhoodKernel::Kind::plus)
        return grid_distance(grid, j, i) == 1.0 ? 1.0 : 0.0;
    return kernel_weight(kernel, n, grid, j, i);
}

void check_batch(const SomGrid& grid, const double* z, std::int64_t batch,
                 std::int64_t feature_dim) {
    if (batch < 1) throw std::invalid_argument("empty batch");
    for (std::int64_t b = 0; b < batch; ++b) check_z(grid, z + b * feature_dim, feature_dim);
}

}  // namespace

TopoLossResult topo_loss(const SomGrid& grid, const NeighborhoodKernel& kernel, std::int64_t n,
                         const double* z, std::int64_t batch, std::int64_t feature_dim,
                         bool z_grad) {
    check_batch(grid, z, batch, feature_dim);
    const std::int64_t k = grid.k();
    const std::int64_t F = feature_dim;
    TopoLossResult r;
    r.dprototypes.assign(static_cast<std::size_t>(k * F), 0.0);
    if (z_grad) r.dz.assign(static_cast<std::size_t>(batch * F), 0.0);
    r.winners.resize(static_cast<std::size_t>(batch));

    const double inv_b = 1.0 / static_cast<double>(batch);
    double loss = 0.0;
    for (std::int64_t b = 0; b < batch; ++b) {
        const double* zb = z + b * F;
        const std::int64_t j = winner(grid, zb, F);
        r.winners[static_cast<std::size_t>(b)] = j;
        for (std::int64_t i = 0; i < k; ++i) {
            const double w = kernel_weight(kernel, n, grid, j, i);
            if (w == 0.0) continue;
            const double* pi = grid.proto(i);
            loss += w * kernels::sqdist(zb, pi, static_cast<std::size_t>(F));
            const double scale = 2.0 * w * inv_b;
            double* dp = r.dprototypes.data() + i * F;
            for (std::int64_t f = 0; f < F; ++f) dp[f] += scale * (pi[f] - zb[f]);
            if (z_grad) {
                double* dzb = r.dz.data() + b * F;
                for (std::int64_t f = 0; f < F; ++f) dzb[f] += scale * (zb[f] - pi[f]);
            }
        }
    }
    r.loss = loss * inv_b;
    return r;
}

SplitLossResult commitment_and_som_losses(const SomGrid& grid, const NeighborhoodKernel& kernel,
                                          std::int64_t n, const double* z, std::int64_t batch,
                                          std::int64_t feature_dim, bool stop_grad_som) {
    check_batch(grid, z, batch, feature_dim);
    const std::int64_t k = grid.k();
    const std::int64_t F = feature_dim;
    const double mult = kernel.neighbor_multiplier();
    SplitLossResult r;
    r.dprototypes.assign(static_cast<std::size_t>(k * F), 0.0);
    r.dz.assign(static_cast<std::size_t>(batch * F), 0.0);
    r.winners.resize(static_cast<std::size_t>(batch));

    const double inv_b = 1.0 / static_cast<double>(batch);
    double commitment = 0.0;
    double som = 0.0;
    for (std::int64_t b = 0; b < batch; ++b) {
        const double* zb = z + b * F;
        const std::int64_t j = winner(grid, zb, F);
        r.winners[static_cast<std::size_t>(b)] = j;
        double* dzb = r.dz.data() + b * F;

        const double* pj = grid.proto(j);
        commitment += kernels::sqdist(zb, pj, static_cast<std::size_t>(F));
        double* dpj = r.dprototypes.data() + j * F;
        for (std::int64_t f = 0; f < F; ++f) {
            dpj[f] += 2.0 * inv_b * (pj[f] - zb[f]);
            dzb[f] += 2.0 * inv_b * (zb[f] - pj[f]);
        }

        for (std::int64_t i = 0; i < k; ++i) {
            if (i == j) continue;
            const double w = neighbor_base_weight(kernel, n, grid, j, i);
            if (w == 0.0) continue;
            const double* pi = grid.proto(i);
            som += w * kernels::sqdist(zb, pi, static_cast<std::size_t>(F));
            const double scale = 2.0 * w * mult * inv_b;
            double* dpi = r.dprototypes.data() + i * F;
            for (std::int64_t f = 0; f < F; ++f) dpi[f] += scale * (pi[f] - zb[f]);
            if (!stop_grad_som)
                for (std::int64_t f = 0; f < F; ++f) dzb[f] += scale * (zb[f] - pi[f]);
        }
    }
    r.commitment = commitment * inv_b;
    r.som = som * inv_b;
    return r;
}

SomGrid kohonen_update(const SomGrid& grid, const NeighborhoodKernel& kernel, std::int64_t n,
                       double eta, const double* z, std::int64_t feature_dim) {
    check_z(grid, z, feature_dim);
    SomGrid out = grid;
    const std::int64_t j = winner(grid, z, feature_dim);
    for (std::int64_t i = 0; i < grid.k(); ++i) {
        const double w = kernel_weight(kernel, n, grid, j, i);
        if (w == 0.0) continue;
        const double* src = grid.proto(i);
        double* dst = out.proto(i);
        for (std::int64_t f = 0; f < feature_dim; ++f)
            dst[f] = src[f] + eta * w * (z[f] - src[f]);
    }
    return out;
}

nlohmann::ordered_json som_to_json(const SomGrid& grid) {
    nlohmann::ordered_json j;
    j["width"] = grid.width;
    j["height"] = grid.height;
    auto coords = nlohmann::ordered_json::array();
    auto protos = nlohmann::ordered_json::array();
    for (std::int64_t i = 0; i < grid.k(); ++i) {
        coords.push_back({grid.coord_x(i), grid.coord_y(i)});
        auto p = nlohmann::ordered_json::array();
        for (std::int64_t f = 0; f < grid.feature_dim; ++f) p.push_back(grid.proto(i)[f]);
        protos.push_back(std::move(p));
    }
    j["grid_coords"] = std::move(coords);
    j["prototypes"] = std::move(protos);
    return j;
}

SomGrid som_from_json(const nlohmann::ordered_json& j) {
    SomGrid g;
    g.width = j.at("width").get<std::int64_t>();
    g.height = j.at("height").get<std::int64_t>();
    const auto& protos = j.at("prototypes");
    if (protos.empty()) throw std::runtime_error("SOM export has no prototypes");
    g.feature_dim = static_cast<std::int64_t>(protos.at(0).size());
    for (const auto& p : protos)
        for (const auto& v : p) g.prototypes.push_back(v.get<double>());
    for (const auto& c : j.at("grid_coords")) {
        g.grid_coords.push_back(c.at(0).get<double>());
        g.grid_coords.push_back(c.at(1).get<double>());
    }
    if (static_cast<std::int64_t>(g.prototypes.size()) != g.k() * g.feature_dim ||
        static_cast<std::int64_t>(g.grid_coords.size()) != 2 * g.k())
        throw std::runtime_error("SOM export has inconsistent shapes");
    return g;
}

}  // namespace somcpc
