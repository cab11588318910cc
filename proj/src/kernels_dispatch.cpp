#include <cstdlib>
#include <string_view>

#include "gfra/kernels.hpp"

namespace gfra::kernels {

const KernelTable* avx2_table_impl();

namespace {

bool cpu_has_avx2_fma() {
#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const KernelTable& select() {
    if (const char* env = std::getenv("GFRA_KERNELS"); env && std::string_view(env) == "scalar") {
        return scalar_table();
    }
    if (const KernelTable* t = avx2_table()) return *t;
    return scalar_table();
}

}  // namespace

const KernelTable* avx2_table() {
    static const KernelTable* t = cpu_has_avx2_fma() ? avx2_table_impl() : nullptr;
    return t;
}

const KernelTable& active() {
    static const KernelTable& t = select();
    return t;
}

}  // namespace gfra::kernels
