#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "somcpc/rng.hpp"
#include "somcpc/som.hpp"

using namespace somcpc;

namespace {

SomGrid random_grid(std::int64_t w, std::int64_t h, std::int64_t f, std::uint64_t seed,
                    double scale = 1.0) {
    Rng rng(seed);
    SomGrid g = SomGrid::create(w, h, f, rng);
    if (scale != 1.0)
        for (auto& p : g.prototypes) p *= scale;
    return g;
}

std::vector<double> random_batch(std::int64_t b, std::int64_t f, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> z(static_cast<std::size_t>(b * f));
    for (auto& x : z) x = rng.uniform(-1.0, 1.0);
    return z;
}

NeighborhoodKernel gaussian_kernel(double sigma0, double sigma_end, std::int64_t n_max) {
    NeighborhoodKernel k;
    k.kind = NeighborhoodKernel::Kind::gaussian;
    k.schedule = SigmaSchedule::make(sigma0, sigma_end, n_max);
    return k;
}

NeighborhoodKernel plus_kernel(double beta_over_alpha) {
    NeighborhoodKernel k;
    k.kind = NeighborhoodKernel::Kind::plus;
    k.beta_over_alpha = beta_over_alpha;
    k.schedule = SigmaSchedule::make(1.0, 1.0, 1);
    return k;
}

// direct double-loop evaluation of the kernel-weighted quantization error
double brute_topo(const SomGrid& g, const NeighborhoodKernel& kern, std::int64_t n,
                  const double* z, std::int64_t batch) {
    double acc = 0.0;
    for (std::int64_t b = 0; b < batch; ++b) {
        const double* zb = z + b * g.feature_dim;
        std::int64_t j = 0;
        double best = 1e300;
        for (std::int64_t i = 0; i < g.k(); ++i) {
            double d = 0.0;
            for (std::int64_t f = 0; f < g.feature_dim; ++f) {
                const double e = zb[f] - g.proto(i)[f];
                d += e * e;
            }
            if (d < best) {
                best = d;
                j = i;
            }
        }
        for (std::int64_t i = 0; i < g.k(); ++i) {
            double d = 0.0;
            for (std::int64_t f = 0; f < g.feature_dim; ++f) {
                const double e = zb[f] - g.proto(i)[f];
                d += e * e;
            }
            acc += kernel_weight(kern, n, g, j, i) * d;
        }
    }
    return acc / static_cast<double>(batch);
}

}  // namespace

TEST_CASE("winner selection") {
    Rng rng(1);
    SomGrid g = SomGrid::create(2, 1, 2, rng);
    g.prototypes = {0.0, 0.0, 1.0, 1.0};
    SUBCASE("nearest prototype wins") {
        const double z[2] = {0.1, 0.1};
        CHECK(winner(g, z, 2) == 0);
    }
    SUBCASE("ties break to the lowest index") {
        const double z[2] = {0.5, 0.5};
        CHECK(winner(g, z, 2) == 0);
    }
    SUBCASE("dimension mismatch throws") {
        const double z[3] = {0.0, 0.0, 0.0};
        CHECK_THROWS_AS(winner(g, z, 3), std::invalid_argument);
    }
    SUBCASE("non-finite input throws") {
        const double z[2] = {std::nan(""), 0.0};
        CHECK_THROWS_AS(winner(g, z, 2), std::invalid_argument);
    }
}

TEST_CASE("winner matches an exhaustive scan on random grids") {
    SomGrid g = random_grid(8, 8, 6, 5);
    const auto zs = random_batch(100, 6, 6);
    for (int i = 0; i < 100; ++i) {
        const double* z = zs.data() + i * 6;
        std::int64_t best = 0;
        double bestd = 1e300;
        for (std::int64_t n = 0; n < g.k(); ++n) {
            double d = 0.0;
            for (int f = 0; f < 6; ++f) {
                const double e = z[f] - g.proto(n)[f];
                d += e * e;
            }
            if (d < bestd) {
                bestd = d;
                best = n;
            }
        }
        REQUIRE(winner(g, z, 6) == best);
    }
}

TEST_CASE("winner of each distinct prototype is itself") {
    SomGrid g = random_grid(5, 4, 7, 9);
    for (std::int64_t i = 0; i < g.k(); ++i) REQUIRE(winner(g, g.proto(i), 7) == i);
}

TEST_CASE("grid distances") {
    Rng rng(2);
    SomGrid g = SomGrid::create(3, 3, 2, rng);
    CHECK(grid_distance(g, 0, 0) == 0.0);
    CHECK(grid_distance(g, 0, 4) == doctest::Approx(std::sqrt(2.0)));
    SomGrid g5 = SomGrid::create(5, 5, 2, rng);
    for (std::int64_t a = 0; a < 25; ++a)
        for (std::int64_t b = 0; b < 25; ++b) REQUIRE(grid_distance(g5, a, b) == grid_distance(g5, b, a));
    CHECK_THROWS_AS(grid_distance(g, 0, 9), std::out_of_range);
}

TEST_CASE("sigma schedule") {
    const SigmaSchedule s = SigmaSchedule::make(5.0, 2.0, 1000);
    CHECK(sigma_at(s, 0) == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(sigma_at(s, 1000) == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(sigma_at(s, 500) == doctest::Approx(std::sqrt(10.0)).epsilon(1e-9));
    for (std::int64_t n = 1; n <= 1000; ++n) REQUIRE(sigma_at(s, n) < sigma_at(s, n - 1));
}

TEST_CASE("kernel weights") {
    Rng rng(3);
    SomGrid g = SomGrid::create(3, 3, 2, rng);
    SUBCASE("winner weight is exactly one for both kinds") {
        const auto gk = gaussian_kernel(2.0, 0.5, 10);
        const auto pk = plus_kernel(0.2);
        for (std::int64_t i = 0; i < g.k(); ++i) {
            CHECK(kernel_weight(gk, 3, g, i, i) == 1.0);
            CHECK(kernel_weight(pk, 3, g, i, i) == 1.0);
        }
    }
    SUBCASE("gaussian closed form at d=2, sigma=2") {
        const auto gk = gaussian_kernel(2.0, 2.0, 10);
        // nodes 0 and 2 on the top row are two apart
        CHECK(kernel_weight(gk, 0, g, 0, 2) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
    }
    SUBCASE("plus kernel weights the four direct neighbours only") {
        const auto pk = plus_kernel(0.2);
        CHECK(kernel_weight(pk, 0, g, 4, 1) == 0.2);   // up
        CHECK(kernel_weight(pk, 0, g, 4, 3) == 0.2);   // left
        CHECK(kernel_weight(pk, 0, g, 4, 5) == 0.2);   // right
        CHECK(kernel_weight(pk, 0, g, 4, 7) == 0.2);   // down
        CHECK(kernel_weight(pk, 0, g, 4, 0) == 0.0);   // diagonal
        CHECK(kernel_weight(pk, 0, g, 4, 2) == 0.0);
    }
    SUBCASE("weights lie in [0,1] for random schedules and grids") {
        const auto gk = gaussian_kernel(4.0, 0.1, 50);
        for (std::int64_t n : {0, 10, 50}) {
            for (std::int64_t j = 0; j < g.k(); ++j)
                for (std::int64_t i = 0; i < g.k(); ++i) {
                    const double w = kernel_weight(gk, n, g, j, i);
                    REQUIRE(w >= 0.0);
                    REQUIRE(w <= 1.0);
                }
        }
    }
}

TEST_CASE("topological loss") {
    SUBCASE("single node reduces to the mean squared quantization error") {
        Rng rng(4);
        SomGrid g = SomGrid::create(1, 1, 3, rng);
        const auto z = random_batch(5, 3, 11);
        const auto r = topo_loss(g, gaussian_kernel(1.0, 1.0, 1), 0, z.data(), 5, 3);
        double expect = 0.0;
        for (int b = 0; b < 5; ++b)
            for (int f = 0; f < 3; ++f) {
                const double d = z[b * 3 + f] - g.proto(0)[f];
                expect += d * d;
            }
        CHECK(r.loss == doctest::Approx(expect / 5.0).epsilon(1e-12));
    }
    SUBCASE("vanishing sigma and exact hit gives zero loss") {
        Rng rng(5);
        SomGrid g = SomGrid::create(2, 2, 2, rng);
        const auto kern = gaussian_kernel(1e-6, 1e-7, 1);
        std::vector<double> z(g.proto(2), g.proto(2) + 2);
        const auto r = topo_loss(g, kern, 1, z.data(), 1, 2);
        CHECK(r.loss < 1e-12);
    }
    SUBCASE("matches the brute-force double loop on a random 4x4 grid") {
        SomGrid g = random_grid(4, 4, 5, 21);
        const auto z = random_batch(16, 5, 22);
        const auto kern = gaussian_kernel(1.5, 1.5, 10);
        const auto r = topo_loss(g, kern, 0, z.data(), 16, 5);
        CHECK(r.loss == doctest::Approx(brute_topo(g, kern, 0, z.data(), 16)).epsilon(1e-12));
    }
    SUBCASE("batch permutation leaves the loss unchanged") {
        SomGrid g = random_grid(3, 3, 4, 31);
        auto z = random_batch(8, 4, 32);
        const auto kern = gaussian_kernel(1.2, 1.2, 4);
        const double before = topo_loss(g, kern, 2, z.data(), 8, 4).loss;
        // rotate the batch
        std::vector<double> rotated(z.end() - 4, z.end());
        rotated.insert(rotated.end(), z.begin(), z.end() - 4);
        const double after = topo_loss(g, kern, 2, rotated.data(), 8, 4).loss;
        CHECK(before == doctest::Approx(after).epsilon(1e-12));
    }
    SUBCASE("empty batch and NaN input are rejected") {
        SomGrid g = random_grid(2, 2, 2, 41);
        const auto kern = gaussian_kernel(1.0, 1.0, 1);
        std::vector<double> z = {0.1, 0.2};
        CHECK_THROWS_AS(topo_loss(g, kern, 0, z.data(), 0, 2), std::invalid_argument);
        z[1] = std::nan("");
        CHECK_THROWS_AS(topo_loss(g, kern, 0, z.data(), 1, 2), std::invalid_argument);
    }
    SUBCASE("analytic gradients match central finite differences") {
        SomGrid g = random_grid(3, 3, 4, 51);
        const auto z0 = random_batch(6, 4, 52);
        const auto kern = gaussian_kernel(1.3, 1.3, 7);
        const auto r = topo_loss(g, kern, 0, z0.data(), 6, 4, true);
        const double h = 1e-5;
        // prototype gradients; winner assignments must stay fixed, which
        // holds for small h because winners are strict at random data
        for (std::size_t p = 0; p < g.prototypes.size(); p += 3) {
            SomGrid gp = g;
            gp.prototypes[p] += h;
            const double lp = topo_loss(gp, kern, 0, z0.data(), 6, 4, false).loss;
            gp.prototypes[p] -= 2 * h;
            const double lm = topo_loss(gp, kern, 0, z0.data(), 6, 4, false).loss;
            const double fd = (lp - lm) / (2 * h);
            REQUIRE(std::abs(fd - r.dprototypes[p]) /
                        std::max({1.0, std::abs(fd), std::abs(r.dprototypes[p])}) < 1e-6);
        }
        for (std::size_t i = 0; i < z0.size(); i += 5) {
            auto zp = z0;
            zp[i] += h;
            const double lp = topo_loss(g, kern, 0, zp.data(), 6, 4, false).loss;
            zp[i] -= 2 * h;
            const double lm = topo_loss(g, kern, 0, zp.data(), 6, 4, false).loss;
            const double fd = (lp - lm) / (2 * h);
            REQUIRE(std::abs(fd - r.dz[i]) / std::max({1.0, std::abs(fd), std::abs(r.dz[i])}) <
                    1e-6);
        }
    }
}

TEST_CASE("commitment and SOM loss split") {
    SUBCASE("identity: commitment + mult * som equals the topological loss") {
        for (auto kind : {NeighborhoodKernel::Kind::gaussian, NeighborhoodKernel::Kind::plus}) {
            SomGrid g = random_grid(3, 3, 4, 61);
            const auto z = random_batch(7, 4, 62);
            const NeighborhoodKernel kern =
                kind == NeighborhoodKernel::Kind::gaussian ? gaussian_kernel(1.4, 1.4, 3)
                                                           : plus_kernel(0.2);
            const auto split = commitment_and_som_losses(g, kern, 1, z.data(), 7, 4, false);
            const auto full = topo_loss(g, kern, 1, z.data(), 7, 4);
            CHECK(split.commitment + kern.neighbor_multiplier() * split.som ==
                  doctest::Approx(full.loss).epsilon(1e-12));
            // gradients agree too when nothing is detached
            for (std::size_t i = 0; i < full.dprototypes.size(); ++i)
                REQUIRE(split.dprototypes[i] == doctest::Approx(full.dprototypes[i]).epsilon(1e-12));
            for (std::size_t i = 0; i < full.dz.size(); ++i)
                REQUIRE(split.dz[i] == doctest::Approx(full.dz[i]).epsilon(1e-12));
        }
    }
    SUBCASE("stop gradient zeroes the neighbour contribution to dz") {
        SomGrid g = random_grid(3, 3, 4, 71);
        const auto z = random_batch(5, 4, 72);
        const auto kern = gaussian_kernel(1.5, 1.5, 3);
        const auto sg = commitment_and_som_losses(g, kern, 0, z.data(), 5, 4, true);
        // with stop-grad, dz must equal the commitment-only gradient
        for (std::int64_t b = 0; b < 5; ++b) {
            const std::int64_t j = sg.winners[static_cast<std::size_t>(b)];
            for (std::int64_t f = 0; f < 4; ++f) {
                const double expect = 2.0 / 5.0 * (z[b * 4 + f] - g.proto(j)[f]);
                REQUIRE(sg.dz[static_cast<std::size_t>(b * 4 + f)] ==
                        doctest::Approx(expect).epsilon(1e-12));
            }
        }
    }
    SUBCASE("k=1 has an empty neighbour sum") {
        Rng rng(8);
        SomGrid g = SomGrid::create(1, 1, 3, rng);
        const auto z = random_batch(4, 3, 81);
        const auto split =
            commitment_and_som_losses(g, gaussian_kernel(1.0, 1.0, 1), 0, z.data(), 4, 3, false);
        CHECK(split.som == 0.0);
    }
}

TEST_CASE("kohonen update") {
    SUBCASE("zero learning rate leaves the grid unchanged") {
        SomGrid g = random_grid(3, 3, 4, 91);
        const auto z = random_batch(1, 4, 92);
        const SomGrid g2 = kohonen_update(g, gaussian_kernel(1.0, 1.0, 1), 0, 0.0, z.data(), 4);
        CHECK(g2.prototypes == g.prototypes);
    }
    SUBCASE("full step with a point kernel moves only the winner onto z") {
        SomGrid g = random_grid(3, 3, 4, 101);
        const auto z = random_batch(1, 4, 102);
        const SomGrid g2 = kohonen_update(g, gaussian_kernel(1e-9, 1e-10, 1), 1, 1.0, z.data(), 4);
        const std::int64_t j = winner(g, z.data(), 4);
        for (std::int64_t i = 0; i < g.k(); ++i)
            for (std::int64_t f = 0; f < 4; ++f) {
                if (i == j)
                    REQUIRE(g2.proto(i)[f] == doctest::Approx(z[static_cast<std::size_t>(f)]));
                else
                    REQUIRE(g2.proto(i)[f] == g.proto(i)[f]);
            }
    }
    SUBCASE("one SGD step on half the topological loss reproduces the rule exactly") {
        // 100 randomized trials on 4x4 and 7x7 grids, both kernel kinds
        Rng trial_rng(111);
        for (int trial = 0; trial < 100; ++trial) {
            const bool big = trial % 2 == 0;
            const std::int64_t side = big ? 7 : 4;
            SomGrid g = random_grid(side, side, 5, 1000 + static_cast<std::uint64_t>(trial));
            const auto z = random_batch(1, 5, 2000 + static_cast<std::uint64_t>(trial));
            const double eta = trial_rng.uniform(0.01, 1.0);
            const std::int64_t n = static_cast<std::int64_t>(trial_rng.uniform_index(50));
            const NeighborhoodKernel kern = trial % 4 < 2
                                                ? gaussian_kernel(2.5, 0.4, 49)
                                                : plus_kernel(0.2);
            const SomGrid classic = kohonen_update(g, kern, n, eta, z.data(), 5);
            const auto grad = topo_loss(g, kern, n, z.data(), 1, 5, false);
            double max_diff = 0.0;
            for (std::size_t i = 0; i < g.prototypes.size(); ++i) {
                const double sgd = g.prototypes[i] - eta * 0.5 * grad.dprototypes[i];
                max_diff = std::max(max_diff, std::abs(sgd - classic.prototypes[i]));
            }
            REQUIRE(max_diff < 1e-12);
        }
    }
}

TEST_CASE("SOM JSON export round trip") {
    SomGrid g = random_grid(4, 3, 6, 77);
    const auto j = som_to_json(g);
    const SomGrid back = som_from_json(j);
    CHECK(back.width == 4);
    CHECK(back.height == 3);
    CHECK(back.feature_dim == 6);
    CHECK(back.prototypes == g.prototypes);
    CHECK(back.grid_coords == g.grid_coords);
}
