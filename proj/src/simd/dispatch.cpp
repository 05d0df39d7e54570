#include <atomic>
#include <cstdlib>
#include <string>

#include "segattack/error.hpp"
#include "segattack/simd/kernels.hpp"

namespace segattack::simd {

#if defined(SEGATTACK_HAVE_AVX2)
const KernelTable& avx2_table();
#endif
#if defined(SEGATTACK_HAVE_NEON)
const KernelTable& neon_table();
#endif

const KernelTable* avx2_kernels() {
#if defined(SEGATTACK_HAVE_AVX2)
  static const bool supported = [] {
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  }();
  return supported ? &avx2_table() : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable* neon_kernels() {
#if defined(SEGATTACK_HAVE_NEON)
  return &neon_table();
#else
  return nullptr;
#endif
}

std::vector<const KernelTable*> available_kernels() {
  std::vector<const KernelTable*> out{&scalar_kernels()};
  if (const auto* t = avx2_kernels()) out.push_back(t);
  if (const auto* t = neon_kernels()) out.push_back(t);
  return out;
}

namespace {

const KernelTable* find_table(std::string_view name) {
  for (const auto* t : available_kernels()) {
    if (t->name == name) return t;
  }
  return nullptr;
}

const KernelTable* initial_table() {
  if (const char* env = std::getenv("SEGATTACK_SIMD"); env != nullptr && *env != '\0') {
    if (const auto* t = find_table(env)) return t;
    fail(ErrorKind::config, std::string("SEGATTACK_SIMD names an unavailable kernel set: ") + env);
  }
  return available_kernels().back();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{initial_table()};
  return table;
}

}  // namespace

const KernelTable& active() { return *current().load(std::memory_order_acquire); }

void select_kernels(std::string_view name) {
  const auto* t = find_table(name);
  if (t == nullptr) fail(ErrorKind::config, "unavailable kernel set: " + std::string(name));
  current().store(t, std::memory_order_release);
}

}  // namespace segattack::simd
