#include "acl/kernels.hpp"

#include <algorithm>

namespace acl::kernels {

namespace {
// Below this many multiply-adds the thread fork costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;
}  // namespace

namespace serial {

void matmul(std::span<const double> a, std::span<const double> b,
            std::span<double> c, std::size_t m, std::size_t k, std::size_t n) {
  std::fill(c.begin(), c.begin() + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += aip * b[p * n + j];
    }
}

void matmul_at_b_acc(std::span<const double> a, std::span<const double> b,
                     std::span<double> c, std::size_t m, std::size_t k,
                     std::size_t n) {
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t i = 0; i < k; ++i) {
      const double ari = a[r * k + i];
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += ari * b[r * n + j];
    }
}

void matmul_a_bt_acc(std::span<const double> a, std::span<const double> b,
                     std::span<double> c, std::size_t m, std::size_t k,
                     std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += a[i * n + j] * b[p * n + j];
      c[i * k + p] += s;
    }
}

void im2col(std::span<const double> image, std::span<double> cols,
            const ConvGeometry& g) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const std::size_t ps = g.patch_size();
  for (std::size_t oy = 0; oy < oh; ++oy)
    for (std::size_t ox = 0; ox < ow; ++ox) {
      double* row = cols.data() + (oy * ow + ox) * ps;
      for (std::size_t ch = 0; ch < g.channels; ++ch)
        for (std::size_t ky = 0; ky < g.kernel; ++ky)
          for (std::size_t kx = 0; kx < g.kernel; ++kx) {
            const long y = static_cast<long>(oy + ky) - static_cast<long>(g.padding);
            const long x = static_cast<long>(ox + kx) - static_cast<long>(g.padding);
            const bool inside = y >= 0 && x >= 0 && y < static_cast<long>(g.height) &&
                                x < static_cast<long>(g.width);
            *row++ = inside ? image[(ch * g.height + y) * g.width + x] : 0.0;
          }
    }
}

void col2im_acc(std::span<const double> cols, std::span<double> image,
                const ConvGeometry& g) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const std::size_t ps = g.patch_size();
  const std::size_t kk = g.kernel * g.kernel;
  for (std::size_t ch = 0; ch < g.channels; ++ch)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const double* row = cols.data() + (oy * ow + ox) * ps + ch * kk;
        for (std::size_t ky = 0; ky < g.kernel; ++ky)
          for (std::size_t kx = 0; kx < g.kernel; ++kx, ++row) {
            const long y = static_cast<long>(oy + ky) - static_cast<long>(g.padding);
            const long x = static_cast<long>(ox + kx) - static_cast<long>(g.padding);
            if (y < 0 || x < 0 || y >= static_cast<long>(g.height) ||
                x >= static_cast<long>(g.width))
              continue;
            image[(ch * g.height + y) * g.width + x] += *row;
          }
      }
}

}  // namespace serial

namespace parallel {

void matmul(std::span<const double> a, std::span<const double> b,
            std::span<double> c, std::size_t m, std::size_t k, std::size_t n) {
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelWork)
  for (long i = 0; i < rows; ++i) {
    double* ci = c.data() + i * n;
    std::fill(ci, ci + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const double* bp = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

void matmul_at_b_acc(std::span<const double> a, std::span<const double> b,
                     std::span<double> c, std::size_t m, std::size_t k,
                     std::size_t n) {
  const long out_rows = static_cast<long>(k);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelWork)
  for (long i = 0; i < out_rows; ++i) {
    double* ci = c.data() + i * n;
    for (std::size_t r = 0; r < m; ++r) {
      const double ari = a[r * k + i];
      const double* br = b.data() + r * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += ari * br[j];
    }
  }
}

void matmul_a_bt_acc(std::span<const double> a, std::span<const double> b,
                     std::span<double> c, std::size_t m, std::size_t k,
                     std::size_t n) {
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelWork)
  for (long i = 0; i < rows; ++i) {
    const double* ai = a.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b.data() + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += ai[j] * bp[j];
      c[i * k + p] += s;
    }
  }
}

void im2col(std::span<const double> image, std::span<double> cols,
            const ConvGeometry& g) {
  const long oh = static_cast<long>(g.out_height());
  const std::size_t ow = g.out_width();
  const std::size_t ps = g.patch_size();
#pragma omp parallel for schedule(static) if (cols.size() >= kParallelWork)
  for (long oy = 0; oy < oh; ++oy)
    for (std::size_t ox = 0; ox < ow; ++ox) {
      double* row = cols.data() + (oy * ow + ox) * ps;
      for (std::size_t ch = 0; ch < g.channels; ++ch)
        for (std::size_t ky = 0; ky < g.kernel; ++ky)
          for (std::size_t kx = 0; kx < g.kernel; ++kx) {
            const long y = oy + static_cast<long>(ky) - static_cast<long>(g.padding);
            const long x = static_cast<long>(ox + kx) - static_cast<long>(g.padding);
            const bool inside = y >= 0 && x >= 0 && y < static_cast<long>(g.height) &&
                                x < static_cast<long>(g.width);
            *row++ = inside ? image[(ch * g.height + y) * g.width + x] : 0.0;
          }
    }
}

void col2im_acc(std::span<const double> cols, std::span<double> image,
                const ConvGeometry& g) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const std::size_t ps = g.patch_size();
  const std::size_t kk = g.kernel * g.kernel;
  const long channels = static_cast<long>(g.channels);
  // Each channel plane is written by exactly one thread.
#pragma omp parallel for schedule(static) if (cols.size() >= kParallelWork)
  for (long ch = 0; ch < channels; ++ch)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const double* row = cols.data() + (oy * ow + ox) * ps + ch * kk;
        for (std::size_t ky = 0; ky < g.kernel; ++ky)
          for (std::size_t kx = 0; kx < g.kernel; ++kx, ++row) {
            const long y = static_cast<long>(oy + ky) - static_cast<long>(g.padding);
            const long x = static_cast<long>(ox + kx) - static_cast<long>(g.padding);
            if (y < 0 || x < 0 || y >= static_cast<long>(g.height) ||
                x >= static_cast<long>(g.width))
              continue;
            image[(ch * g.height + y) * g.width + x] += *row;
          }
      }
}

}  // namespace parallel

}  // namespace acl::kernels
