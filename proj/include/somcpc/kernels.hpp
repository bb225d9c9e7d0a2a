#pragma once

#include <cstddef>

namespace somcpc::kernels {

/// Instruction sets the arithmetic kernels are built for. The best supported
/// one is picked at process start; SOMCPC_ISA=scalar|avx2|avx512 overrides.
enum class Isa { scalar, avx2, avx512 };

Isa active_isa();
const char* isa_name(Isa isa);
bool isa_supported(Isa isa);

/// Switches the dispatch table. Returns false (and keeps the current ISA)
/// if the requested one is not supported on this CPU.
bool set_isa(Isa isa);

/// sum_i x[i] * y[i]
double dot(const double* x, const double* y, std::size_t n);

/// y[i] += a * x[i]
void axpy(std::size_t n, double a, const double* x, double* y);

/// sum_i (x[i] - y[i])^2
double sqdist(const double* x, const double* y, std::size_t n);

/// C[M,N] (+)= A[M,K] * B[K,N]; row-major, explicit leading dimensions.
/// Each C element accumulates its k-sum in ascending order, so results do
/// not depend on the thread count.
void gemm_nn(std::size_t m, std::size_t n, std::size_t k,
             const double* a, std::size_t lda,
             const double* b, std::size_t ldb,
             double* c, std::size_t ldc, bool accumulate);

/// C[M,N] (+)= A[M,K] * B[N,K]^T; both operands contiguous along k.
void gemm_nt(std::size_t m, std::size_t n, std::size_t k,
             const double* a, std::size_t lda,
             const double* b, std::size_t ldb,
             double* c, std::size_t ldc, bool accumulate);

/// Reference implementations (plain loops, no dispatch). These back the
/// scalar ISA and serve as the baseline for the equivalence tests.
namespace scalar {
double dot(const double* x, const double* y, std::size_t n);
void axpy(std::size_t n, double a, const double* x, double* y);
double sqdist(const double* x, const double* y, std::size_t n);
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate);
}  // namespace scalar

}  // namespace somcpc::kernels
