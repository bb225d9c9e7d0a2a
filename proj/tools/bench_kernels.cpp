// Micro-benchmark for the dispatched kernels: prints GMAC/s per ISA for the
// GEMM shapes the training loops actually use.

#include <chrono>
#include <cstdio>
#include <vector>

#include "somcpc/kernels.hpp"
#include "somcpc/rng.hpp"

using namespace somcpc;

namespace {

double bench_nn(std::size_t m, std::size_t n, std::size_t k, int reps) {
    Rng rng(1);
    std::vector<double> a(m * k), b(k * n), c(m * n);
    for (auto& x : a) x = rng.uniform(-1, 1);
    for (auto& x : b) x = rng.uniform(-1, 1);
    kernels::gemm_nn(m, n, k, a.data(), k, b.data(), n, c.data(), n, false);  // warm up
    const auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r)
        kernels::gemm_nn(m, n, k, a.data(), k, b.data(), n, c.data(), n, false);
    const auto t1 = std::chrono::steady_clock::now();
    const double sec = std::chrono::duration<double>(t1 - t0).count();
    return static_cast<double>(m * n * k) * reps / sec * 1e-9;
}

double bench_nt(std::size_t m, std::size_t n, std::size_t k, int reps) {
    Rng rng(1);
    std::vector<double> a(m * k), b(n * k), c(m * n);
    for (auto& x : a) x = rng.uniform(-1, 1);
    for (auto& x : b) x = rng.uniform(-1, 1);
    kernels::gemm_nt(m, n, k, a.data(), k, b.data(), k, c.data(), n, false);
    const auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r)
        kernels::gemm_nt(m, n, k, a.data(), k, b.data(), k, c.data(), n, false);
    const auto t1 = std::chrono::steady_clock::now();
    const double sec = std::chrono::duration<double>(t1 - t0).count();
    return static_cast<double>(m * n * k) * reps / sec * 1e-9;
}

}  // namespace

int main() {
    const kernels::Isa isas[] = {kernels::Isa::scalar, kernels::Isa::avx2, kernels::Isa::avx512};
    // conv2 fwd, conv3 fwd, conv4 fwd, conv2 dW, fc fwd
    struct Shape {
        const char* name;
        std::size_t m, n, k;
        bool nt;
        int reps;
    } shapes[] = {
        {"conv2.fwd  nn", 32, 53248, 112, false, 20},
        {"conv3.fwd  nn", 64, 13312, 96, false, 60},
        {"conv4.fwd  nn", 128, 3328, 192, false, 60},
        {"conv2.dW   nt", 32, 112, 53248, true, 20},
        {"conv2.dX   nn", 112, 53248, 32, false, 20},
        {"fc.fwd     nt", 128, 512, 128, true, 200},
    };
    for (auto isa : isas) {
        if (!kernels::isa_supported(isa)) {
            std::printf("%-8s unsupported\n", kernels::isa_name(isa));
            continue;
        }
        kernels::set_isa(isa);
        std::printf("%s:\n", kernels::isa_name(isa));
        for (const auto& s : shapes) {
            const double g = s.nt ? bench_nt(s.m, s.n, s.k, s.reps) : bench_nn(s.m, s.n, s.k, s.reps);
            std::printf("  %-14s M=%-4zu N=%-6zu K=%-6zu  %7.2f GMAC/s\n", s.name, s.m, s.n, s.k, g);
        }
    }
    return 0;
}
