#include "somcpc/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace somcpc::kernels {

namespace detail {
double dot_avx2(const double*, const double*, std::size_t);
void axpy_avx2(std::size_t, double, const double*, double*);
double sqdist_avx2(const double*, const double*, std::size_t);
void gemm_nn_avx2(std::size_t, std::size_t, std::size_t, const double*, std::size_t,
                  const double*, std::size_t, double*, std::size_t, bool);
void gemm_nt_avx2(std::size_t, std::size_t, std::size_t, const double*, std::size_t,
                  const double*, std::size_t, double*, std::size_t, bool);
double dot_avx512(const double*, const double*, std::size_t);
void axpy_avx512(std::size_t, double, const double*, double*);
double sqdist_avx512(const double*, const double*, std::size_t);
void gemm_nn_avx512(std::size_t, std::size_t, std::size_t, const double*, std::size_t,
                    const double*, std::size_t, double*, std::size_t, bool);
void gemm_nt_avx512(std::size_t, std::size_t, std::size_t, const double*, std::size_t,
                    const double*, std::size_t, double*, std::size_t, bool);
}  // namespace detail

namespace {

struct Table {
    double (*dot)(const double*, const double*, std::size_t);
    void (*axpy)(std::size_t, double, const double*, double*);
    double (*sqdist)(const double*, const double*, std::size_t);
    void (*gemm_nn)(std::size_t, std::size_t, std::size_t, const double*, std::size_t,
                    const double*, std::size_t, double*, std::size_t, bool);
    void (*gemm_nt)(std::size_t, std::size_t, std::size_t, const double*, std::size_t,
                    const double*, std::size_t, double*, std::size_t, bool);
};

constexpr Table kScalar{scalar::dot, scalar::axpy, scalar::sqdist, scalar::gemm_nn,
                        scalar::gemm_nt};
constexpr Table kAvx2{detail::dot_avx2, detail::axpy_avx2, detail::sqdist_avx2,
                      detail::gemm_nn_avx2, detail::gemm_nt_avx2};
constexpr Table kAvx512{detail::dot_avx512, detail::axpy_avx512, detail::sqdist_avx512,
                        detail::gemm_nn_avx512, detail::gemm_nt_avx512};

const Table& table_for(Isa isa) {
    switch (isa) {
        case Isa::avx2: return kAvx2;
        case Isa::avx512: return kAvx512;
        default: return kScalar;
    }
}

struct State {
    Isa isa;
    const Table* table;

    State() {
        isa = Isa::scalar;
        if (isa_supported(Isa::avx2)) isa = Isa::avx2;
        if (isa_supported(Isa::avx512)) isa = Isa::avx512;
        if (const char* env = std::getenv("SOMCPC_ISA")) {
            if (std::strcmp(env, "scalar") == 0) isa = Isa::scalar;
            else if (std::strcmp(env, "avx2") == 0 && isa_supported(Isa::avx2)) isa = Isa::avx2;
            else if (std::strcmp(env, "avx512") == 0 && isa_supported(Isa::avx512)) isa = Isa::avx512;
        }
        table = &table_for(isa);
    }
};

State& state() {
    static State s;
    return s;
}

}  // namespace

bool isa_supported(Isa isa) {
    switch (isa) {
        case Isa::scalar: return true;
        case Isa::avx2: return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
        case Isa::avx512: return __builtin_cpu_supports("avx512f");
    }
    return false;
}

Isa active_isa() { return state().isa; }

const char* isa_name(Isa isa) {
    switch (isa) {
        case Isa::scalar: return "scalar";
        case Isa::avx2: return "avx2";
        case Isa::avx512: return "avx512";
    }
    return "?";
}

bool set_isa(Isa isa) {
    if (!isa_supported(isa)) return false;
    state().isa = isa;
    state().table = &table_for(isa);
    return true;
}

double dot(const double* x, const double* y, std::size_t n) { return state().table->dot(x, y, n); }

void axpy(std::size_t n, double a, const double* x, double* y) { state().table->axpy(n, a, x, y); }

double sqdist(const double* x, const double* y, std::size_t n) {
    return state().table->sqdist(x, y, n);
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
    state().table->gemm_nn(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
    state().table->gemm_nt(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

}  // namespace somcpc::kernels
