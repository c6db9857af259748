#pragma once

#include <cstddef>
#include <span>

// Dense kernels behind the tensor ops. Every kernel exists twice: a plain
// serial loop nest kept as the reference, and an OpenMP version that splits
// the outermost output dimension across threads. Both accumulate each output
// element in the same order, so their results are bit-identical.
namespace acl::kernels {

// Geometry of a 3x3-style convolution lowered to a matrix product.
struct ConvGeometry {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t kernel = 3;
  std::size_t padding = 1;

  std::size_t out_height() const { return height + 2 * padding - kernel + 1; }
  std::size_t out_width() const { return width + 2 * padding - kernel + 1; }
  std::size_t patch_size() const { return channels * kernel * kernel; }
};

namespace serial {
// c[m x n] = a[m x k] * b[k x n]
void matmul(std::span<const double> a, std::span<const double> b,
            std::span<double> c, std::size_t m, std::size_t k, std::size_t n);
// c[k x n] += a[m x k]^T * b[m x n]
void matmul_at_b_acc(std::span<const double> a, std::span<const double> b,
                     std::span<double> c, std::size_t m, std::size_t k,
                     std::size_t n);
// c[m x k] += a[m x n] * b[k x n]^T
void matmul_a_bt_acc(std::span<const double> a, std::span<const double> b,
                     std::span<double> c, std::size_t m, std::size_t k,
                     std::size_t n);
// One (C,H,W) image -> [out_h*out_w x patch_size] patch rows.
void im2col(std::span<const double> image, std::span<double> cols,
            const ConvGeometry& g);
// Adjoint of im2col: scatter-add patch rows back into the image.
void col2im_acc(std::span<const double> cols, std::span<double> image,
                const ConvGeometry& g);
}  // namespace serial

namespace parallel {
// c[m x n] = a[m x k] * b[k x n]
void matmul(std::span<const double> a, std::span<const double> b,
            std::span<double> c, std::size_t m, std::size_t k, std::size_t n);
// c[k x n] += a[m x k]^T * b[m x n]
void matmul_at_b_acc(std::span<const double> a, std::span<const double> b,
                     std::span<double> c, std::size_t m, std::size_t k,
                     std::size_t n);
// c[m x k] += a[m x n] * b[k x n]^T
void matmul_a_bt_acc(std::span<const double> a, std::span<const double> b,
                     std::span<double> c, std::size_t m, std::size_t k,
                     std::size_t n);
// One (C,H,W) image -> [out_h*out_w x patch_size] patch rows.
void im2col(std::span<const double> image, std::span<double> cols,
            const ConvGeometry& g);
// Adjoint of im2col: scatter-add patch rows back into the image.
void col2im_acc(std::span<const double> cols, std::span<double> image,
                const ConvGeometry& g);
}  // namespace parallel

}  // namespace acl::kernels
