#include "homsurro/descriptors/twopoint.hpp"

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <mutex>
#include <stdexcept>

namespace homsurro::descriptors {

namespace {

// FFTW's planner is not thread-safe; execution of a private plan is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwBuffer {
  double* real = nullptr;
  fftw_complex* spec = nullptr;
  std::size_t n = 0, nc = 0;

  FftwBuffer(std::size_t res) : n(res * res), nc(res * (res / 2 + 1)) {
    real = fftw_alloc_real(n);
    spec = fftw_alloc_complex(nc);
  }
  ~FftwBuffer() {
    fftw_free(real);
    fftw_free(spec);
  }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;
};

}  // namespace

CorrelationMap two_point(const micro::PhaseGrid& grid, Phase head, Phase tail) {
  const std::size_t res = grid.resolution;
  if (res == 0) throw std::invalid_argument("two_point: empty grid");
  const std::size_t n = res * res;

  FftwBuffer a(res), b(res);
  for (std::size_t i = 0; i < n; ++i) {
    const bool fiber = grid.cells[i] != 0;
    a.real[i] = (head == Phase::fiber) == fiber ? 1.0 : 0.0;
    b.real[i] = (tail == Phase::fiber) == fiber ? 1.0 : 0.0;
  }

  fftw_plan fwd_a, fwd_b, inv;
  {
    std::lock_guard<std::mutex> lock(planner_mutex());
    const int r = static_cast<int>(res);
    fwd_a = fftw_plan_dft_r2c_2d(r, r, a.real, a.spec, FFTW_ESTIMATE);
    fwd_b = fftw_plan_dft_r2c_2d(r, r, b.real, b.spec, FFTW_ESTIMATE);
    inv = fftw_plan_dft_c2r_2d(r, r, a.spec, a.real, FFTW_ESTIMATE);
  }
  fftw_execute(fwd_a);
  fftw_execute(fwd_b);
  // conj(A) . B: inverse transform yields sum_s a[s] b[s+r] (times n)
  for (std::size_t i = 0; i < a.nc; ++i) {
    const std::complex<double> av(a.spec[i][0], a.spec[i][1]);
    const std::complex<double> bv(b.spec[i][0], b.spec[i][1]);
    const std::complex<double> c = std::conj(av) * bv;
    a.spec[i][0] = c.real();
    a.spec[i][1] = c.imag();
  }
  fftw_execute(inv);
  {
    std::lock_guard<std::mutex> lock(planner_mutex());
    fftw_destroy_plan(fwd_a);
    fftw_destroy_plan(fwd_b);
    fftw_destroy_plan(inv);
  }

  CorrelationMap map;
  map.resolution = res;
  map.head = head;
  map.tail = tail;
  map.values.resize(n);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    // binary indicators make the raw correlation an integer count
    const double count = std::round(a.real[i] * inv_n);
    map.values[i] = count * inv_n;
  }
  return map;
}

std::vector<double> matrix_autocorrelation(const micro::PhaseGrid& grid) {
  return two_point(grid, Phase::matrix, Phase::matrix).values;
}

}  // namespace homsurro::descriptors
