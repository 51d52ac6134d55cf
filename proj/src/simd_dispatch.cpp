#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "natlas/simd.hpp"

namespace natlas::simd {

#ifndef NATLAS_HAVE_AVX2
const KernelTable* avx2_kernels() { return nullptr; }
#endif

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

namespace {

const KernelTable* select_default() {
    const KernelTable* avx2 = avx2_kernels();
    if (const char* env = std::getenv("NATLAS_SIMD")) {
        const std::string want(env);
        if (want == "scalar") return &scalar_kernels();
        if (want == "avx2" && avx2 && cpu_has_avx2()) return avx2;
    }
    if (avx2 && cpu_has_avx2()) return avx2;
    return &scalar_kernels();
}

std::atomic<const KernelTable*>& active() {
    static std::atomic<const KernelTable*> table{select_default()};
    return table;
}

}  // namespace

const KernelTable& kernels() { return *active().load(std::memory_order_acquire); }

Isa active_isa() { return kernels().isa; }

void set_isa(Isa isa) {
    if (isa == Isa::scalar) {
        active().store(&scalar_kernels(), std::memory_order_release);
        return;
    }
    const KernelTable* avx2 = avx2_kernels();
    if (!avx2 || !cpu_has_avx2()) throw std::runtime_error("AVX2 kernels unavailable on this build or CPU");
    active().store(avx2, std::memory_order_release);
}

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

}  // namespace natlas::simd
