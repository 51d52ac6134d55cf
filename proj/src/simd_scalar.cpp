#include "natlas/simd.hpp"

namespace natlas::simd {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void affine_scalar(const double* w, const double* x, const double* b, double* y, std::size_t rows,
                   std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) y[r] = b[r] + dot_scalar(w + r * cols, x, cols);
}

void affine_transposed_acc_scalar(const double* w, const double* g, double* out, std::size_t rows,
                                  std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        if (g[r] != 0.0) axpy_scalar(g[r], w + r * cols, out, cols);
    }
}

void outer_acc_scalar(const double* g, const double* x, double* grad_w, std::size_t rows,
                      std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        if (g[r] != 0.0) axpy_scalar(g[r], x, grad_w + r * cols, cols);
    }
}

}  // namespace

const KernelTable& scalar_kernels() {
    static const KernelTable table{Isa::scalar, dot_scalar, axpy_scalar, affine_scalar,
                                   affine_transposed_acc_scalar, outer_acc_scalar};
    return table;
}

}  // namespace natlas::simd
