#pragma once

// Dense vector kernels used by the MLP inner loops.
//
// Every kernel has a scalar reference implementation and, when the build and
// the running CPU allow it, an AVX2/FMA variant. The variant is chosen once at
// first use (override with NATLAS_SIMD=scalar|avx2 or set_isa()). Results of
// the two variants agree to rounding; they are not bit-identical because the
// vector code reassociates sums.

#include <cstddef>
#include <span>
#include <string_view>

namespace natlas::simd {

enum class Isa { scalar, avx2 };

struct KernelTable {
    Isa isa;
    double (*dot)(const double* a, const double* b, std::size_t n);
    // y += alpha * x
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    // y = W x + b, W row-major rows x cols
    void (*affine)(const double* w, const double* x, const double* b, double* y, std::size_t rows,
                   std::size_t cols);
    // out += W^T g
    void (*affine_transposed_acc)(const double* w, const double* g, double* out, std::size_t rows,
                                  std::size_t cols);
    // G += g x^T
    void (*outer_acc)(const double* g, const double* x, double* grad_w, std::size_t rows,
                      std::size_t cols);
};

const KernelTable& scalar_kernels();
/// Null when the AVX2 variant was not compiled in.
const KernelTable* avx2_kernels();

bool cpu_has_avx2();

/// The active table. Thread-safe after first call.
const KernelTable& kernels();
Isa active_isa();
/// Throws std::runtime_error if the requested ISA is unavailable.
void set_isa(Isa isa);
std::string_view isa_name(Isa isa);

inline double dot(std::span<const double> a, std::span<const double> b) {
    return kernels().dot(a.data(), b.data(), a.size());
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    kernels().axpy(alpha, x.data(), y.data(), x.size());
}

}  // namespace natlas::simd
