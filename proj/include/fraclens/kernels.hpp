#pragma once

// Inner-loop arithmetic used by the conv and dense layers. Each primitive has
// a portable scalar reference and, where the CPU allows it, a vectorized
// variant. The variant is picked once at startup; tests pin either side.

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>

namespace fraclens::kernels {

enum class Backend { scalar, avx2, neon };

std::string_view backend_name(Backend b);
std::optional<Backend> parse_backend(std::string_view name);

/// True when the variant was compiled in and the running CPU supports it.
bool backend_available(Backend b);

Backend active_backend();

/// Switches the process-wide variant. Throws std::invalid_argument when unavailable.
void set_backend(Backend b);

/// sum_i a[i] * b[i]
double dot(std::span<const double> a, std::span<const double> b);

/// y[i] += alpha * x[i]
void axpy(double alpha, std::span<const double> x, std::span<double> y);

// Raw-pointer entry points for every compiled variant, used by the
// equivalence tests and by the dispatcher.
namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
}  // namespace scalar

#if defined(FRACLENS_HAVE_AVX2)
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
}  // namespace avx2
#endif

#if defined(FRACLENS_HAVE_NEON)
namespace neon {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
}  // namespace neon
#endif

}  // namespace fraclens::kernels
