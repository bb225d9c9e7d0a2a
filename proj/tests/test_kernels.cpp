#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "somcpc/kernels.hpp"
#include "somcpc/rng.hpp"

using namespace somcpc;

namespace {

// plain triple loop, the baseline every variant must match
void naive_gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                   double* c) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
            c[i * n + j] = acc;
        }
}

void naive_gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                   double* c) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
            c[i * n + j] = acc;
        }
}

std::vector<double> random_vec(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

std::vector<kernels::Isa> supported_isas() {
    std::vector<kernels::Isa> out{kernels::Isa::scalar};
    if (kernels::isa_supported(kernels::Isa::avx2)) out.push_back(kernels::Isa::avx2);
    if (kernels::isa_supported(kernels::Isa::avx512)) out.push_back(kernels::Isa::avx512);
    return out;
}

struct IsaGuard {
    kernels::Isa saved = kernels::active_isa();
    ~IsaGuard() { kernels::set_isa(saved); }
};

}  // namespace

TEST_CASE("scalar gemm matches the naive triple loop bit-for-bit") {
    Rng rng(7);
    IsaGuard guard;
    kernels::set_isa(kernels::Isa::scalar);
    for (const auto [m, n, k] : {std::array<std::size_t, 3>{5, 17, 9},
                                 std::array<std::size_t, 3>{16, 64, 112},
                                 std::array<std::size_t, 3>{3, 130, 33}}) {
        const auto a = random_vec(m * k, rng);
        const auto b = random_vec(k * n, rng);
        std::vector<double> c1(m * n), c2(m * n);
        naive_gemm_nn(m, n, k, a.data(), b.data(), c1.data());
        kernels::gemm_nn(m, n, k, a.data(), k, b.data(), n, c2.data(), n, false);
        CHECK(max_abs_diff(c1, c2) == 0.0);

        const auto bt = random_vec(n * k, rng);
        naive_gemm_nt(m, n, k, a.data(), bt.data(), c1.data());
        kernels::gemm_nt(m, n, k, a.data(), k, bt.data(), k, c2.data(), n, false);
        CHECK(max_abs_diff(c1, c2) == 0.0);
    }
}

TEST_CASE("SIMD variants agree with the scalar reference") {
    Rng rng(11);
    IsaGuard guard;
    // sizes exercise remainders in rows, columns and the k tail
    const std::array<std::size_t, 3> shapes[] = {
        {1, 1, 1},    {6, 16, 8},    {7, 33, 13},   {32, 257, 112},
        {13, 96, 53}, {128, 40, 192}, {2, 2049, 31}, {65, 130, 7},
    };
    for (const auto& sh : shapes) {
        const auto [m, n, k] = sh;
        const auto a = random_vec(m * k, rng);
        const auto b = random_vec(k * n, rng);
        const auto bt = random_vec(n * k, rng);
        kernels::set_isa(kernels::Isa::scalar);
        std::vector<double> ref_nn(m * n), ref_nt(m * n);
        kernels::gemm_nn(m, n, k, a.data(), k, b.data(), n, ref_nn.data(), n, false);
        kernels::gemm_nt(m, n, k, a.data(), k, bt.data(), k, ref_nt.data(), n, false);

        for (auto isa : supported_isas()) {
            if (isa == kernels::Isa::scalar) continue;
            REQUIRE(kernels::set_isa(isa));
            std::vector<double> got(m * n, -1.0);
            kernels::gemm_nn(m, n, k, a.data(), k, b.data(), n, got.data(), n, false);
            const double tol = 1e-13 * static_cast<double>(k);
            CHECK_MESSAGE(max_abs_diff(ref_nn, got) < tol, "nn isa=", kernels::isa_name(isa),
                          " m=", m, " n=", n, " k=", k);
            kernels::gemm_nt(m, n, k, a.data(), k, bt.data(), k, got.data(), n, false);
            CHECK_MESSAGE(max_abs_diff(ref_nt, got) < tol, "nt isa=", kernels::isa_name(isa),
                          " m=", m, " n=", n, " k=", k);
        }
    }
}

TEST_CASE("accumulate mode adds on top of C") {
    Rng rng(3);
    IsaGuard guard;
    const std::size_t m = 9, n = 37, k = 21;
    const auto a = random_vec(m * k, rng);
    const auto b = random_vec(k * n, rng);
    for (auto isa : supported_isas()) {
        REQUIRE(kernels::set_isa(isa));
        std::vector<double> once(m * n, 0.0), twice(m * n, 0.0);
        kernels::gemm_nn(m, n, k, a.data(), k, b.data(), n, once.data(), n, false);
        kernels::gemm_nn(m, n, k, a.data(), k, b.data(), n, twice.data(), n, false);
        kernels::gemm_nn(m, n, k, a.data(), k, b.data(), n, twice.data(), n, true);
        for (std::size_t i = 0; i < once.size(); ++i)
            CHECK(twice[i] == doctest::Approx(2.0 * once[i]).epsilon(1e-12));
    }
}

TEST_CASE("dot / axpy / sqdist agree across ISAs") {
    Rng rng(5);
    IsaGuard guard;
    for (std::size_t n : {1u, 7u, 8u, 127u, 1024u, 4097u}) {
        const auto x = random_vec(n, rng);
        const auto y = random_vec(n, rng);
        kernels::set_isa(kernels::Isa::scalar);
        const double dref = kernels::dot(x.data(), y.data(), n);
        const double sref = kernels::sqdist(x.data(), y.data(), n);
        auto yref = y;
        kernels::axpy(n, 0.37, x.data(), yref.data());
        for (auto isa : supported_isas()) {
            REQUIRE(kernels::set_isa(isa));
            CHECK(kernels::dot(x.data(), y.data(), n) ==
                  doctest::Approx(dref).epsilon(1e-12));
            CHECK(kernels::sqdist(x.data(), y.data(), n) ==
                  doctest::Approx(sref).epsilon(1e-12));
            auto ygot = y;
            kernels::axpy(n, 0.37, x.data(), ygot.data());
            CHECK(max_abs_diff(yref, ygot) < 1e-14);
        }
    }
}

TEST_CASE("strided leading dimensions are honored") {
    Rng rng(13);
    IsaGuard guard;
    const std::size_t m = 5, n = 11, k = 7, lda = 10, ldb = 20, ldc = 15;
    const auto a = random_vec(m * lda, rng);
    const auto b = random_vec(k * ldb, rng);
    std::vector<double> ref(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += a[i * lda + p] * b[p * ldb + j];
            ref[i * n + j] = acc;
        }
    for (auto isa : supported_isas()) {
        REQUIRE(kernels::set_isa(isa));
        std::vector<double> c(m * ldc, 0.0);
        kernels::gemm_nn(m, n, k, a.data(), lda, b.data(), ldb, c.data(), ldc, false);
        double maxd = 0.0;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
                maxd = std::max(maxd, std::abs(c[i * ldc + j] - ref[i * n + j]));
        CHECK(maxd < 1e-12);
    }
}
