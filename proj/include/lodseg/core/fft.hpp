#ifndef LODSEG_CORE_FFT_HPP
#define LODSEG_CORE_FFT_HPP

// Thin RAII wrapper over FFTW (double precision) for 3D complex transforms on
// grids stored x-fastest. Planning is serialized; execution is thread-safe.

#include <fftw3.h>

#include <complex>
#include <mutex>
#include <vector>

#include "lodseg/core/error.hpp"
#include "lodseg/core/tensor.hpp"

namespace lodseg::fft {

using Complex = std::complex<double>;

namespace detail {
inline std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

// In-place 3D DFT. `sign` is FFTW_FORWARD or FFTW_BACKWARD; the backward
// transform is normalized by 1/N so forward followed by backward is identity.
inline void transform(std::vector<Complex>& data, Shape3 s, int sign) {
  if (data.size() != s.voxels()) throw ContractError("fft: buffer size does not match shape");
  auto* buf = reinterpret_cast<fftw_complex*>(data.data());
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(detail::planner_mutex());
    // Row-major dims (z, y, x) match the x-fastest linear layout.
    plan = fftw_plan_dft_3d(s.z, s.y, s.x, buf, buf, sign, FFTW_ESTIMATE);
  }
  if (!plan) throw NumericError("fft: planning failed");
  fftw_execute(plan);
  {
    std::lock_guard<std::mutex> lock(detail::planner_mutex());
    fftw_destroy_plan(plan);
  }
  if (sign == FFTW_BACKWARD) {
    const double inv = 1.0 / static_cast<double>(s.voxels());
    for (auto& c : data) c *= inv;
  }
}

template <typename T>
std::vector<Complex> forward(const std::vector<T>& real, Shape3 s) {
  std::vector<Complex> out(real.begin(), real.end());
  transform(out, s, FFTW_FORWARD);
  return out;
}

inline std::vector<Complex> inverse(std::vector<Complex> spectrum, Shape3 s) {
  transform(spectrum, s, FFTW_BACKWARD);
  return spectrum;
}

// Position of frequency index `f` (0..n-1, FFT order) in centered order, where
// centered position 0 is the most negative frequency.
inline int centered_position(int f, int n) { return (f + n / 2) % n; }

}  // namespace lodseg::fft

#endif  // LODSEG_CORE_FFT_HPP
