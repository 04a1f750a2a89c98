#include <atomic>
#include <cstdlib>
#include <string_view>

#include "tsg/common/error.hpp"
#include "tsg/simd/kernels.hpp"

namespace tsg::simd {
namespace {

bool cpu_has_avx2_fma() noexcept {
#if defined(__x86_64__) || defined(__i386__)
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const KernelTable* initial_table() noexcept {
    Isa isa = best_isa();
    if (const char* env = std::getenv("TSG_SIMD")) {
        const std::string_view v(env);
        if (v == "scalar") isa = Isa::scalar;
        else if (v == "avx2" && is_available(Isa::avx2)) isa = Isa::avx2;
    }
#if defined(TSG_HAVE_AVX2)
    if (isa == Isa::avx2) return &detail::avx2_table;
#endif
    return &detail::scalar_table;
}

std::atomic<const KernelTable*>& active_slot() noexcept {
    static std::atomic<const KernelTable*> slot{initial_table()};
    return slot;
}

}  // namespace

const char* to_string(Isa isa) noexcept {
    switch (isa) {
        case Isa::scalar: return "scalar";
        case Isa::avx2: return "avx2";
    }
    return "unknown";
}

bool is_available(Isa isa) noexcept {
    switch (isa) {
        case Isa::scalar: return true;
        case Isa::avx2:
#if defined(TSG_HAVE_AVX2)
            return cpu_has_avx2_fma();
#else
            return false;
#endif
    }
    return false;
}

Isa best_isa() noexcept { return is_available(Isa::avx2) ? Isa::avx2 : Isa::scalar; }

const KernelTable& kernels(Isa isa) {
    if (!is_available(isa)) throw UsageError(std::string("SIMD variant not available: ") + to_string(isa));
#if defined(TSG_HAVE_AVX2)
    if (isa == Isa::avx2) return detail::avx2_table;
#endif
    return detail::scalar_table;
}

const KernelTable& active_kernels() noexcept { return *active_slot().load(std::memory_order_relaxed); }

Isa active_isa() noexcept { return active_kernels().isa; }

void set_active_isa(Isa isa) { active_slot().store(&kernels(isa), std::memory_order_relaxed); }

}  // namespace tsg::simd
