#pragma once

// Elementwise erfc/exp over contiguous arrays. With glibc's libmvec the
// work goes through its 4-lane AVX2 kernels; every element, including a
// short tail, is evaluated by the same kernel so a value never depends on its
// neighbours in the array.

#include <cmath>
#include <cstddef>

#if defined(LTM_HAVE_LIBMVEC)
#include <immintrin.h>
extern "C" __m256d _ZGVdN4v_erfc(__m256d);
extern "C" __m256d _ZGVdN4v_exp(__m256d);
#endif

namespace ltm::detail {

#if defined(LTM_HAVE_LIBMVEC)

template <__m256d (*Kernel)(__m256d)>
inline void apply4(double* v, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(v + i, Kernel(_mm256_loadu_pd(v + i)));
  if (i < n) {
    alignas(32) double pad[4] = {0.0, 0.0, 0.0, 0.0};
    for (std::size_t j = i; j < n; ++j) pad[j - i] = v[j];
    _mm256_store_pd(pad, Kernel(_mm256_load_pd(pad)));
    for (std::size_t j = i; j < n; ++j) v[j] = pad[j - i];
  }
}

inline void erfc_inplace(double* v, std::size_t n) { apply4<_ZGVdN4v_erfc>(v, n); }
inline void exp_inplace(double* v, std::size_t n) { apply4<_ZGVdN4v_exp>(v, n); }

#else

inline void erfc_inplace(double* v, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) v[i] = std::erfc(v[i]);
}
inline void exp_inplace(double* v, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) v[i] = std::exp(v[i]);
}

#endif

}  // namespace ltm::detail
