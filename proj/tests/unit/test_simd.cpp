#include <doctest.h>

#include <vector>

#include "helpers.hpp"
#include "natlas/simd.hpp"

using namespace natlas;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-1, 1);
    return v;
}

void check_close(const std::vector<double>& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-12 * (1.0 + std::abs(a[i])));
}

}  // namespace

TEST_SUITE("simd") {

TEST_CASE("scalar kernels match naive loops") {
    const auto& k = simd::scalar_kernels();
    Rng rng(1);
    const std::size_t rows = 5, cols = 7;
    const auto w = random_vec(rng, rows * cols), x = random_vec(rng, cols), b = random_vec(rng, rows), g = random_vec(rng, rows);
    std::vector<double> y(rows);
    k.affine(w.data(), x.data(), b.data(), y.data(), rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = b[r];
        for (std::size_t c = 0; c < cols; ++c) s += w[r * cols + c] * x[c];
        CHECK(y[r] == doctest::Approx(s).epsilon(1e-14));
    }
    std::vector<double> out(cols, 0.5);
    k.affine_transposed_acc(w.data(), g.data(), out.data(), rows, cols);
    for (std::size_t c = 0; c < cols; ++c) {
        double s = 0.5;
        for (std::size_t r = 0; r < rows; ++r) s += w[r * cols + c] * g[r];
        CHECK(out[c] == doctest::Approx(s).epsilon(1e-14));
    }
    std::vector<double> gw(rows * cols, 0.25);
    k.outer_acc(g.data(), x.data(), gw.data(), rows, cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) CHECK(gw[r * cols + c] == doctest::Approx(0.25 + g[r] * x[c]).epsilon(1e-14));
}

TEST_CASE("avx2 kernels agree with the scalar reference") {
    const auto* avx = simd::avx2_kernels();
    if (!avx || !simd::cpu_has_avx2()) {
        MESSAGE("AVX2 variant unavailable; skipped");
        return;
    }
    const auto& ref = simd::scalar_kernels();
    Rng rng(2);
    for (std::size_t rows : {1u, 3u, 4u, 9u, 64u}) {
        for (std::size_t cols : {1u, 2u, 4u, 7u, 16u, 33u, 64u}) {
            const auto w = random_vec(rng, rows * cols), x = random_vec(rng, cols), b = random_vec(rng, rows);
            const auto g = random_vec(rng, rows);
            CHECK(avx->dot(x.data(), x.data(), cols) == doctest::Approx(ref.dot(x.data(), x.data(), cols)).epsilon(1e-13));

            std::vector<double> y1(rows), y2(rows);
            ref.affine(w.data(), x.data(), b.data(), y1.data(), rows, cols);
            avx->affine(w.data(), x.data(), b.data(), y2.data(), rows, cols);
            check_close(y1, y2);

            std::vector<double> o1(cols, 0.1), o2(cols, 0.1);
            ref.affine_transposed_acc(w.data(), g.data(), o1.data(), rows, cols);
            avx->affine_transposed_acc(w.data(), g.data(), o2.data(), rows, cols);
            check_close(o1, o2);

            std::vector<double> g1(rows * cols, 0.2), g2(rows * cols, 0.2);
            ref.outer_acc(g.data(), x.data(), g1.data(), rows, cols);
            avx->outer_acc(g.data(), x.data(), g2.data(), rows, cols);
            check_close(g1, g2);

            std::vector<double> a1(x), a2(x);
            ref.axpy(0.3, b.data(), a1.data(), std::min(rows, cols));
            avx->axpy(0.3, b.data(), a2.data(), std::min(rows, cols));
            check_close(a1, a2);
        }
    }
}

TEST_CASE("isa selection") {
    const auto before = simd::active_isa();
    simd::set_isa(simd::Isa::scalar);
    CHECK(simd::active_isa() == simd::Isa::scalar);
    CHECK(simd::isa_name(simd::Isa::scalar) == "scalar");
    if (simd::avx2_kernels() && simd::cpu_has_avx2()) {
        simd::set_isa(simd::Isa::avx2);
        CHECK(simd::active_isa() == simd::Isa::avx2);
    } else {
        CHECK_THROWS(simd::set_isa(simd::Isa::avx2));
    }
    simd::set_isa(before);
}

}
