#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "fraclens/kernels.hpp"

namespace fraclens::kernels {

namespace {

using DotFn = double (*)(const double*, const double*, std::size_t);
using AxpyFn = void (*)(double, const double*, double*, std::size_t);

struct Table {
  Backend backend;
  DotFn dot;
  AxpyFn axpy;
};

constexpr Table kScalar{Backend::scalar, &scalar::dot, &scalar::axpy};
#if defined(FRACLENS_HAVE_AVX2)
constexpr Table kAvx2{Backend::avx2, &avx2::dot, &avx2::axpy};
#endif
#if defined(FRACLENS_HAVE_NEON)
constexpr Table kNeon{Backend::neon, &neon::dot, &neon::axpy};
#endif

const Table* table_for(Backend b) {
  switch (b) {
    case Backend::scalar:
      return &kScalar;
    case Backend::avx2:
#if defined(FRACLENS_HAVE_AVX2)
      return &kAvx2;
#else
      return nullptr;
#endif
    case Backend::neon:
#if defined(FRACLENS_HAVE_NEON)
      return &kNeon;
#else
      return nullptr;
#endif
  }
  return nullptr;
}

const Table* detect() {
  // FRACLENS_KERNELS=scalar forces the reference path, e.g. for bisecting.
  if (const char* env = std::getenv("FRACLENS_KERNELS")) {
    if (auto b = parse_backend(env); b && backend_available(*b)) return table_for(*b);
  }
  if (backend_available(Backend::avx2)) return table_for(Backend::avx2);
  if (backend_available(Backend::neon)) return table_for(Backend::neon);
  return &kScalar;
}

std::atomic<const Table*>& current() {
  static std::atomic<const Table*> t{detect()};
  return t;
}

}  // namespace

std::string_view backend_name(Backend b) {
  switch (b) {
    case Backend::scalar: return "scalar";
    case Backend::avx2: return "avx2";
    case Backend::neon: return "neon";
  }
  return "unknown";
}

std::optional<Backend> parse_backend(std::string_view name) {
  if (name == "scalar") return Backend::scalar;
  if (name == "avx2") return Backend::avx2;
  if (name == "neon") return Backend::neon;
  return std::nullopt;
}

bool backend_available(Backend b) {
  switch (b) {
    case Backend::scalar:
      return true;
    case Backend::avx2:
#if defined(FRACLENS_HAVE_AVX2)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Backend::neon:
#if defined(FRACLENS_HAVE_NEON)
      return true;
#else
      return false;
#endif
  }
  return false;
}

Backend active_backend() { return current().load(std::memory_order_relaxed)->backend; }

void set_backend(Backend b) {
  if (!backend_available(b))
    throw std::invalid_argument("kernel backend not available: " + std::string(backend_name(b)));
  current().store(table_for(b), std::memory_order_relaxed);
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
  return current().load(std::memory_order_relaxed)->dot(a.data(), b.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("axpy: length mismatch");
  current().load(std::memory_order_relaxed)->axpy(alpha, x.data(), y.data(), x.size());
}

}  // namespace fraclens::kernels
