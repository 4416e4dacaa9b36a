#include "patch.hpp"

#include <Eigen/Core>
#include <cstring>

namespace abm::detail {
namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

// Upper bound on im2col scratch, in elements.
constexpr std::size_t kScratchElements = std::size_t{1} << 21;

std::ptrdiff_t floor_div(std::ptrdiff_t a, std::ptrdiff_t b) {
  std::ptrdiff_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

std::ptrdiff_t ceil_div(std::ptrdiff_t a, std::ptrdiff_t b) { return -floor_div(-a, b); }

struct Axis {
  std::ptrdiff_t extent_in;
  std::ptrdiff_t extent_out;
  std::ptrdiff_t window;
  std::ptrdiff_t stride;
  std::ptrdiff_t before;
};

Axis make_axis(std::size_t in, std::size_t window, std::size_t stride) {
  const SamePadding pad = same_padding(in, window, stride);
  return {static_cast<std::ptrdiff_t>(in), static_cast<std::ptrdiff_t>(pad.out),
          static_cast<std::ptrdiff_t>(window), static_cast<std::ptrdiff_t>(stride),
          static_cast<std::ptrdiff_t>(pad.before)};
}

// Output positions whose window touches input range [lo, hi).
std::pair<std::ptrdiff_t, std::ptrdiff_t> forward_range(const Axis& a, std::ptrdiff_t lo,
                                                        std::ptrdiff_t hi) {
  std::ptrdiff_t first = ceil_div(lo + a.before - a.window + 1, a.stride);
  std::ptrdiff_t last = floor_div(hi - 1 + a.before, a.stride) + 1;
  first = std::max<std::ptrdiff_t>(first, 0);
  last = std::min(last, a.extent_out);
  return {first, std::max(first, last)};
}

// Input positions read by output range [lo, hi).
std::pair<std::ptrdiff_t, std::ptrdiff_t> backward_range(const Axis& a, std::ptrdiff_t lo,
                                                         std::ptrdiff_t hi) {
  std::ptrdiff_t first = lo * a.stride - a.before;
  std::ptrdiff_t last = (hi - 1) * a.stride - a.before + a.window;
  first = std::max<std::ptrdiff_t>(first, 0);
  last = std::min(last, a.extent_in);
  return {first, std::max(first, last)};
}

Box forward_box(const Box& in, const Axis& ay, const Axis& ax) {
  if (in.empty()) return {};
  auto [y0, y1] = forward_range(ay, in.y0, in.y1);
  auto [x0, x1] = forward_range(ax, in.x0, in.x1);
  Box out{y0, y1, x0, x1};
  return out.empty() ? Box{} : out;
}

Box backward_box(const Box& out, const Axis& ay, const Axis& ax) {
  if (out.empty()) return {};
  auto [y0, y1] = backward_range(ay, out.y0, out.y1);
  auto [x0, x1] = backward_range(ax, out.x0, out.x1);
  Box in{y0, y1, x0, x1};
  return in.empty() ? Box{} : in;
}

// Fills `cols` (rows x kh*kw*cin) with receptive fields of output rows
// [row0, row0 + rows) of the output box, enumerated (b, y, x).
template <typename T>
void im2col(const Patch<T>& in, const Box& out_box, const Axis& ay, const Axis& ax,
            std::size_t row0, std::size_t rows, T* cols) {
  const std::size_t cin = in.channels;
  const std::ptrdiff_t kh = ay.window;
  const std::ptrdiff_t kw = ax.window;
  const std::size_t k = static_cast<std::size_t>(kh * kw) * cin;
  const std::size_t out_w = static_cast<std::size_t>(out_box.width());
  const std::size_t out_area = out_box.area();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t row = row0 + r;
    const std::size_t b = row / out_area;
    const std::size_t rem = row % out_area;
    const std::ptrdiff_t y = out_box.y0 + static_cast<std::ptrdiff_t>(rem / out_w);
    const std::ptrdiff_t x = out_box.x0 + static_cast<std::ptrdiff_t>(rem % out_w);
    T* dst = cols + r * k;
    for (std::ptrdiff_t dy = 0; dy < kh; ++dy) {
      const std::ptrdiff_t iy = y * ay.stride - ay.before + dy;
      for (std::ptrdiff_t dx = 0; dx < kw; ++dx) {
        const std::ptrdiff_t ix = x * ax.stride - ax.before + dx;
        if (in.box.contains(iy, ix)) {
          std::memcpy(dst, in.at(b, iy, ix), cin * sizeof(T));
        } else {
          std::fill(dst, dst + cin, T(0));
        }
        dst += cin;
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const Box& out_box, const Axis& ay, const Axis& ax,
                std::size_t row0, std::size_t rows, Patch<T>& grad_in) {
  const std::size_t cin = grad_in.channels;
  const std::ptrdiff_t kh = ay.window;
  const std::ptrdiff_t kw = ax.window;
  const std::size_t k = static_cast<std::size_t>(kh * kw) * cin;
  const std::size_t out_w = static_cast<std::size_t>(out_box.width());
  const std::size_t out_area = out_box.area();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t row = row0 + r;
    const std::size_t b = row / out_area;
    const std::size_t rem = row % out_area;
    const std::ptrdiff_t y = out_box.y0 + static_cast<std::ptrdiff_t>(rem / out_w);
    const std::ptrdiff_t x = out_box.x0 + static_cast<std::ptrdiff_t>(rem % out_w);
    const T* src = cols + r * k;
    for (std::ptrdiff_t dy = 0; dy < kh; ++dy) {
      const std::ptrdiff_t iy = y * ay.stride - ay.before + dy;
      for (std::ptrdiff_t dx = 0; dx < kw; ++dx) {
        const std::ptrdiff_t ix = x * ax.stride - ax.before + dx;
        if (grad_in.box.contains(iy, ix)) {
          T* dst = grad_in.at(b, iy, ix);
          for (std::size_t c = 0; c < cin; ++c) dst[c] += src[c];
        }
        src += cin;
      }
    }
  }
}

void check_kernel(const Shape& ks, std::size_t cin, const char* op) {
  if (ks.size() != 4 || ks[2] != cin) {
    throw ShapeError(std::string(op) + ": kernel " + to_string(ks) +
                     " does not match input channels " + std::to_string(cin));
  }
}

}  // namespace

Grid conv_output_grid(const Grid& in, std::size_t kh, std::size_t kw, std::size_t cout,
                      std::size_t stride) {
  return {same_padding(in.h, kh, stride).out, same_padding(in.w, kw, stride).out, cout};
}

template <typename T>
Patch<T> to_patch(const Tensor<T>& t, const Grid& grid) {
  if (t.size() != grid.h * grid.w * grid.c) {
    throw ShapeError("tensor " + to_string(t.shape()) + " does not match grid " +
                     std::to_string(grid.h) + "x" + std::to_string(grid.w) + "x" +
                     std::to_string(grid.c));
  }
  Patch<T> p(1, grid.c, Box::full(grid));
  std::copy(t.data().begin(), t.data().end(), p.data.begin());
  return p;
}

template <typename T>
Tensor<T> to_tensor(const Patch<T>& p, const Grid& grid, std::size_t b) {
  Tensor<T> out(Shape{grid.h, grid.w, grid.c});
  if (p.box.empty()) return out;
  for (std::ptrdiff_t y = p.box.y0; y < p.box.y1; ++y) {
    for (std::ptrdiff_t x = p.box.x0; x < p.box.x1; ++x) {
      const T* src = p.at(b, y, x);
      std::copy(src, src + grid.c, &out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), 0));
    }
  }
  return out;
}

template <typename T>
Box support(const Tensor<T>& t, const Grid& grid) {
  Box box{};
  bool any = false;
  for (std::size_t y = 0; y < grid.h; ++y) {
    for (std::size_t x = 0; x < grid.w; ++x) {
      const T* px = t.raw() + (y * grid.w + x) * grid.c;
      bool nz = false;
      for (std::size_t c = 0; c < grid.c && !nz; ++c) nz = px[c] != T(0);
      if (!nz) continue;
      const auto yy = static_cast<std::ptrdiff_t>(y);
      const auto xx = static_cast<std::ptrdiff_t>(x);
      if (!any) {
        box = {yy, yy + 1, xx, xx + 1};
        any = true;
      } else {
        box = box.unite({yy, yy + 1, xx, xx + 1});
      }
    }
  }
  return box;
}

template <typename T>
Patch<T> conv_forward(const Patch<T>& in, const Grid& in_grid, const Tensor<T>& kernel,
                      std::size_t stride) {
  check_kernel(kernel.shape(), in.channels, "conv2d");
  const std::size_t kh = kernel.dim(0), kw = kernel.dim(1), cout = kernel.dim(3);
  const Axis ay = make_axis(in_grid.h, kh, stride);
  const Axis ax = make_axis(in_grid.w, kw, stride);
  Patch<T> out(in.batch, cout, forward_box(in.box, ay, ax));
  if (out.box.empty() || in.batch == 0) return out;

  const std::size_t k = kh * kw * in.channels;
  const std::size_t total_rows = in.batch * out.box.area();
  const std::size_t chunk = std::max<std::size_t>(1, kScratchElements / k);
  std::vector<T> cols(std::min(chunk, total_rows) * k);
  ConstMatrixMap<T> weights(kernel.raw(), static_cast<Eigen::Index>(k),
                            static_cast<Eigen::Index>(cout));
  for (std::size_t row0 = 0; row0 < total_rows; row0 += chunk) {
    const std::size_t rows = std::min(chunk, total_rows - row0);
    im2col(in, out.box, ay, ax, row0, rows, cols.data());
    ConstMatrixMap<T> a(cols.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(k));
    MatrixMap<T> c(out.data.data() + row0 * cout, static_cast<Eigen::Index>(rows),
                   static_cast<Eigen::Index>(cout));
    c.noalias() = a * weights;
  }
  return out;
}

template <typename T>
Patch<T> conv_forward_gated(const Patch<T>& in, const Grid& in_grid, const Tensor<T>& kernel,
                            std::size_t stride, const Tensor<T>& open) {
  check_kernel(kernel.shape(), in.channels, "conv2d");
  if (open.size() != in_grid.h * in_grid.w * in_grid.c) {
    throw ShapeError("gated conv2d: gate map does not cover the input grid");
  }
  const std::size_t kh = kernel.dim(0), kw = kernel.dim(1), cin = in.channels, cout = kernel.dim(3);
  const Axis ay = make_axis(in_grid.h, kh, stride);
  const Axis ax = make_axis(in_grid.w, kw, stride);
  Patch<T> out(in.batch, cout, forward_box(in.box, ay, ax));
  if (out.box.empty() || in.batch == 0) return out;

  const std::size_t k = kh * kw * cin;
  std::vector<std::size_t> rows_of_kernel, offsets;
  rows_of_kernel.reserve(k);
  offsets.reserve(k);
  RowMatrix<T> a(static_cast<Eigen::Index>(in.batch), static_cast<Eigen::Index>(k));
  RowMatrix<T> w(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(cout));
  RowMatrix<T> c(static_cast<Eigen::Index>(in.batch), static_cast<Eigen::Index>(cout));
  for (std::ptrdiff_t y = out.box.y0; y < out.box.y1; ++y) {
    for (std::ptrdiff_t x = out.box.x0; x < out.box.x1; ++x) {
      rows_of_kernel.clear();
      offsets.clear();
      for (std::ptrdiff_t dy = 0; dy < static_cast<std::ptrdiff_t>(kh); ++dy) {
        const std::ptrdiff_t iy = y * ay.stride - ay.before + dy;
        for (std::ptrdiff_t dx = 0; dx < static_cast<std::ptrdiff_t>(kw); ++dx) {
          const std::ptrdiff_t ix = x * ax.stride - ax.before + dx;
          if (!in.box.contains(iy, ix)) continue;
          const T* gate = open.raw() + (static_cast<std::size_t>(iy) * in_grid.w + static_cast<std::size_t>(ix)) * cin;
          const std::size_t base = static_cast<std::size_t>((iy - in.box.y0) * in.box.width() + (ix - in.box.x0)) * cin;
          const std::size_t tap = static_cast<std::size_t>(dy) * kw + static_cast<std::size_t>(dx);
          for (std::size_t ch = 0; ch < cin; ++ch) {
            if (gate[ch] == T(0)) continue;
            rows_of_kernel.push_back(tap * cin + ch);
            offsets.push_back(base + ch);
          }
        }
      }
      const auto active = static_cast<Eigen::Index>(offsets.size());
      if (active == 0) continue;
      for (Eigen::Index r = 0; r < active; ++r) {
        std::memcpy(w.row(r).data(), kernel.raw() + rows_of_kernel[static_cast<std::size_t>(r)] * cout, cout * sizeof(T));
      }
      for (std::size_t b = 0; b < in.batch; ++b) {
        const T* src = in.sample(b);
        T* dst = a.row(static_cast<Eigen::Index>(b)).data();
        for (Eigen::Index r = 0; r < active; ++r) dst[r] = src[offsets[static_cast<std::size_t>(r)]];
      }
      c.noalias() = a.leftCols(active) * w.topRows(active);
      for (std::size_t b = 0; b < in.batch; ++b) {
        std::memcpy(out.at(b, y, x), c.row(static_cast<Eigen::Index>(b)).data(), cout * sizeof(T));
      }
    }
  }
  return out;
}

template <typename T>
Patch<T> conv_backward_input(const Patch<T>& grad_out, const Grid& in_grid,
                             const Tensor<T>& kernel, std::size_t stride) {
  check_kernel(kernel.shape(), in_grid.c, "conv2d adjoint");
  const std::size_t kh = kernel.dim(0), kw = kernel.dim(1), cin = kernel.dim(2),
                    cout = kernel.dim(3);
  if (grad_out.channels != cout) {
    throw ShapeError("conv2d adjoint: cotangent has " + std::to_string(grad_out.channels) +
                     " channels, kernel " + to_string(kernel.shape()));
  }
  const Axis ay = make_axis(in_grid.h, kh, stride);
  const Axis ax = make_axis(in_grid.w, kw, stride);
  Patch<T> grad_in(grad_out.batch, cin, backward_box(grad_out.box, ay, ax));
  if (grad_out.box.empty() || grad_in.box.empty() || grad_out.batch == 0) return grad_in;

  const std::size_t k = kh * kw * cin;
  const std::size_t total_rows = grad_out.batch * grad_out.box.area();
  const std::size_t chunk = std::max<std::size_t>(1, kScratchElements / k);
  std::vector<T> cols(std::min(chunk, total_rows) * k);
  ConstMatrixMap<T> weights(kernel.raw(), static_cast<Eigen::Index>(k),
                            static_cast<Eigen::Index>(cout));
  for (std::size_t row0 = 0; row0 < total_rows; row0 += chunk) {
    const std::size_t rows = std::min(chunk, total_rows - row0);
    ConstMatrixMap<T> g(grad_out.data.data() + row0 * cout, static_cast<Eigen::Index>(rows),
                        static_cast<Eigen::Index>(cout));
    MatrixMap<T> c(cols.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(k));
    c.noalias() = g * weights.transpose();
    col2im_add(cols.data(), grad_out.box, ay, ax, row0, rows, grad_in);
  }
  return grad_in;
}

template <typename T>
void conv_backward_kernel(const Patch<T>& in, const Grid& in_grid, const Patch<T>& grad_out,
                          std::size_t stride, Tensor<T>& grad_kernel) {
  check_kernel(grad_kernel.shape(), in.channels, "conv2d kernel gradient");
  const std::size_t kh = grad_kernel.dim(0), kw = grad_kernel.dim(1),
                    cout = grad_kernel.dim(3);
  if (grad_out.box.empty() || in.box.empty()) return;
  const Axis ay = make_axis(in_grid.h, kh, stride);
  const Axis ax = make_axis(in_grid.w, kw, stride);
  const std::size_t k = kh * kw * in.channels;
  const std::size_t total_rows = grad_out.batch * grad_out.box.area();
  const std::size_t chunk = std::max<std::size_t>(1, kScratchElements / k);
  std::vector<T> cols(std::min(chunk, total_rows) * k);
  MatrixMap<T> dk(grad_kernel.raw(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(cout));
  for (std::size_t row0 = 0; row0 < total_rows; row0 += chunk) {
    const std::size_t rows = std::min(chunk, total_rows - row0);
    im2col(in, grad_out.box, ay, ax, row0, rows, cols.data());
    ConstMatrixMap<T> a(cols.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(k));
    ConstMatrixMap<T> g(grad_out.data.data() + row0 * cout, static_cast<Eigen::Index>(rows),
                        static_cast<Eigen::Index>(cout));
    dk.noalias() += a.transpose() * g;
  }
}

template <typename T>
Patch<T> pool_forward(const Patch<T>& in, const Grid& in_grid, std::size_t window,
                      std::size_t stride) {
  const Axis ay = make_axis(in_grid.h, window, stride);
  const Axis ax = make_axis(in_grid.w, window, stride);
  Patch<T> out(in.batch, in.channels, forward_box(in.box, ay, ax));
  if (out.box.empty()) return out;
  const T inv = T(1) / static_cast<T>(window * window);
  const std::size_t ch = in.channels;
  for (std::size_t b = 0; b < in.batch; ++b) {
    for (std::ptrdiff_t y = out.box.y0; y < out.box.y1; ++y) {
      for (std::ptrdiff_t x = out.box.x0; x < out.box.x1; ++x) {
        T* dst = out.at(b, y, x);
        for (std::ptrdiff_t dy = 0; dy < ay.window; ++dy) {
          const std::ptrdiff_t iy = y * ay.stride - ay.before + dy;
          for (std::ptrdiff_t dx = 0; dx < ax.window; ++dx) {
            const std::ptrdiff_t ix = x * ax.stride - ax.before + dx;
            if (!in.box.contains(iy, ix)) continue;
            const T* src = in.at(b, iy, ix);
            for (std::size_t c = 0; c < ch; ++c) dst[c] += src[c];
          }
        }
        for (std::size_t c = 0; c < ch; ++c) dst[c] *= inv;
      }
    }
  }
  return out;
}

template <typename T>
Patch<T> pool_backward(const Patch<T>& grad_out, const Grid& in_grid, std::size_t window,
                       std::size_t stride) {
  const Axis ay = make_axis(in_grid.h, window, stride);
  const Axis ax = make_axis(in_grid.w, window, stride);
  Patch<T> grad_in(grad_out.batch, grad_out.channels, backward_box(grad_out.box, ay, ax));
  if (grad_in.box.empty()) return grad_in;
  const T inv = T(1) / static_cast<T>(window * window);
  const std::size_t ch = grad_out.channels;
  for (std::size_t b = 0; b < grad_out.batch; ++b) {
    for (std::ptrdiff_t y = grad_out.box.y0; y < grad_out.box.y1; ++y) {
      for (std::ptrdiff_t x = grad_out.box.x0; x < grad_out.box.x1; ++x) {
        const T* src = grad_out.at(b, y, x);
        for (std::ptrdiff_t dy = 0; dy < ay.window; ++dy) {
          const std::ptrdiff_t iy = y * ay.stride - ay.before + dy;
          for (std::ptrdiff_t dx = 0; dx < ax.window; ++dx) {
            const std::ptrdiff_t ix = x * ax.stride - ax.before + dx;
            if (!grad_in.box.contains(iy, ix)) continue;
            T* dst = grad_in.at(b, iy, ix);
            for (std::size_t c = 0; c < ch; ++c) dst[c] += src[c] * inv;
          }
        }
      }
    }
  }
  return grad_in;
}

template <typename T>
Patch<T> global_pool_forward(const Patch<T>& in, const Grid& in_grid) {
  Patch<T> out(in.batch, in.channels, Box{0, 1, 0, 1});
  if (in.box.empty()) return out;
  const T inv = T(1) / static_cast<T>(in_grid.h * in_grid.w);
  const std::size_t ch = in.channels;
  for (std::size_t b = 0; b < in.batch; ++b) {
    T* dst = out.sample(b);
    const T* src = in.sample(b);
    for (std::size_t i = 0; i < in.box.area(); ++i) {
      for (std::size_t c = 0; c < ch; ++c) dst[c] += src[i * ch + c];
    }
    for (std::size_t c = 0; c < ch; ++c) dst[c] *= inv;
  }
  return out;
}

template <typename T>
Patch<T> global_pool_backward(const Patch<T>& grad_out, const Grid& in_grid) {
  Patch<T> grad_in(grad_out.batch, grad_out.channels, Box::full(in_grid));
  if (grad_out.box.empty()) return Patch<T>(grad_out.batch, grad_out.channels, Box{});
  const T inv = T(1) / static_cast<T>(in_grid.h * in_grid.w);
  const std::size_t ch = grad_out.channels;
  for (std::size_t b = 0; b < grad_out.batch; ++b) {
    const T* src = grad_out.sample(b);
    T* dst = grad_in.sample(b);
    for (std::size_t i = 0; i < grad_in.box.area(); ++i) {
      for (std::size_t c = 0; c < ch; ++c) dst[i * ch + c] = src[c] * inv;
    }
  }
  return grad_in;
}

template <typename T>
Patch<T> dense_forward(const Patch<T>& in, const Tensor<T>& weight) {
  if (weight.rank() != 2 || weight.dim(0) != in.channels) {
    throw ShapeError("dense: weight " + to_string(weight.shape()) + " does not match input width " +
                     std::to_string(in.channels));
  }
  const std::size_t n_out = weight.dim(1);
  Patch<T> out(in.batch, n_out, Box{0, 1, 0, 1});
  if (in.box.empty() || in.batch == 0) return out;
  ConstMatrixMap<T> x(in.data.data(), static_cast<Eigen::Index>(in.batch),
                      static_cast<Eigen::Index>(in.channels));
  ConstMatrixMap<T> w(weight.raw(), static_cast<Eigen::Index>(in.channels),
                      static_cast<Eigen::Index>(n_out));
  MatrixMap<T> y(out.data.data(), static_cast<Eigen::Index>(in.batch),
                 static_cast<Eigen::Index>(n_out));
  y.noalias() = x * w;
  return out;
}

template <typename T>
Patch<T> dense_backward_input(const Patch<T>& grad_out, const Tensor<T>& weight) {
  if (weight.rank() != 2 || weight.dim(1) != grad_out.channels) {
    throw ShapeError("dense adjoint: weight " + to_string(weight.shape()) +
                     " does not match cotangent width " + std::to_string(grad_out.channels));
  }
  const std::size_t n_in = weight.dim(0);
  if (grad_out.box.empty()) return Patch<T>(grad_out.batch, n_in, Box{});
  Patch<T> grad_in(grad_out.batch, n_in, Box{0, 1, 0, 1});
  ConstMatrixMap<T> g(grad_out.data.data(), static_cast<Eigen::Index>(grad_out.batch),
                      static_cast<Eigen::Index>(grad_out.channels));
  ConstMatrixMap<T> w(weight.raw(), static_cast<Eigen::Index>(n_in),
                      static_cast<Eigen::Index>(grad_out.channels));
  MatrixMap<T> x(grad_in.data.data(), static_cast<Eigen::Index>(grad_out.batch),
                 static_cast<Eigen::Index>(n_in));
  x.noalias() = g * w.transpose();
  return grad_in;
}

template <typename T>
void dense_backward_weight(const Patch<T>& in, const Patch<T>& grad_out, Tensor<T>& grad_weight) {
  if (in.box.empty() || grad_out.box.empty()) return;
  ConstMatrixMap<T> x(in.data.data(), static_cast<Eigen::Index>(in.batch),
                      static_cast<Eigen::Index>(in.channels));
  ConstMatrixMap<T> g(grad_out.data.data(), static_cast<Eigen::Index>(grad_out.batch),
                      static_cast<Eigen::Index>(grad_out.channels));
  MatrixMap<T> dw(grad_weight.raw(), static_cast<Eigen::Index>(in.channels),
                  static_cast<Eigen::Index>(grad_out.channels));
  dw.noalias() += x.transpose() * g;
}

template <typename T>
Patch<T> pad_channels(const Patch<T>& in, std::size_t channels) {
  Patch<T> out(in.batch, channels, in.box);
  const std::size_t pixels = in.batch * in.box.area();
  for (std::size_t i = 0; i < pixels; ++i) {
    std::copy_n(in.data.data() + i * in.channels, in.channels, out.data.data() + i * channels);
  }
  return out;
}

template <typename T>
Patch<T> crop_channels(const Patch<T>& in, std::size_t channels) {
  Patch<T> out(in.batch, channels, in.box);
  const std::size_t pixels = in.batch * in.box.area();
  for (std::size_t i = 0; i < pixels; ++i) {
    std::copy_n(in.data.data() + i * in.channels, channels, out.data.data() + i * channels);
  }
  return out;
}

template <typename T>
void multiply_mask(Patch<T>& p, const Tensor<T>& mask, const Grid& grid) {
  if (p.box.empty()) return;
  const std::size_t ch = p.channels;
  for (std::size_t b = 0; b < p.batch; ++b) {
    for (std::ptrdiff_t y = p.box.y0; y < p.box.y1; ++y) {
      const T* m = mask.raw() + (static_cast<std::size_t>(y) * grid.w +
                                 static_cast<std::size_t>(p.box.x0)) * ch;
      T* v = p.at(b, y, p.box.x0);
      const std::size_t n = static_cast<std::size_t>(p.box.width()) * ch;
      for (std::size_t i = 0; i < n; ++i) v[i] *= m[i];
    }
  }
}

template <typename T>
void scale(Patch<T>& p, T factor) {
  for (T& v : p.data) v *= factor;
}

template <typename T>
Patch<T> expand_to(const Patch<T>& p, const Box& box) {
  if (p.box == box) return p;
  Patch<T> out(p.batch, p.channels, box);
  if (p.box.empty()) return out;
  const std::size_t row = static_cast<std::size_t>(p.box.width()) * p.channels;
  for (std::size_t b = 0; b < p.batch; ++b) {
    for (std::ptrdiff_t y = p.box.y0; y < p.box.y1; ++y) {
      std::copy_n(p.at(b, y, p.box.x0), row, out.at(b, y, p.box.x0));
    }
  }
  return out;
}

template <typename T>
Patch<T> add(const Patch<T>& a, const Patch<T>& b) {
  if (a.batch != b.batch || a.channels != b.channels) {
    throw ShapeError("add: operands differ in batch or channel count");
  }
  const Box box = a.box.unite(b.box);
  Patch<T> out = expand_to(a, box);
  if (b.box.empty()) return out;
  const std::size_t row = static_cast<std::size_t>(b.box.width()) * b.channels;
  for (std::size_t s = 0; s < b.batch; ++s) {
    for (std::ptrdiff_t y = b.box.y0; y < b.box.y1; ++y) {
      const T* src = b.at(s, y, b.box.x0);
      T* dst = out.at(s, y, b.box.x0);
      for (std::size_t i = 0; i < row; ++i) dst[i] += src[i];
    }
  }
  return out;
}

#define ABM_INSTANTIATE_PATCH(T)                                                              \
  template Patch<T> to_patch(const Tensor<T>&, const Grid&);                                  \
  template Tensor<T> to_tensor(const Patch<T>&, const Grid&, std::size_t);                    \
  template Box support(const Tensor<T>&, const Grid&);                                        \
  template Patch<T> conv_forward(const Patch<T>&, const Grid&, const Tensor<T>&, std::size_t); \
  template Patch<T> conv_forward_gated(const Patch<T>&, const Grid&, const Tensor<T>&,        \
                                       std::size_t, const Tensor<T>&);                        \
  template Patch<T> conv_backward_input(const Patch<T>&, const Grid&, const Tensor<T>&,       \
                                        std::size_t);                                         \
  template void conv_backward_kernel(const Patch<T>&, const Grid&, const Patch<T>&,           \
                                     std::size_t, Tensor<T>&);                                \
  template Patch<T> pool_forward(const Patch<T>&, const Grid&, std::size_t, std::size_t);     \
  template Patch<T> pool_backward(const Patch<T>&, const Grid&, std::size_t, std::size_t);    \
  template Patch<T> global_pool_forward(const Patch<T>&, const Grid&);                        \
  template Patch<T> global_pool_backward(const Patch<T>&, const Grid&);                       \
  template Patch<T> dense_forward(const Patch<T>&, const Tensor<T>&);                         \
  template Patch<T> dense_backward_input(const Patch<T>&, const Tensor<T>&);                  \
  template void dense_backward_weight(const Patch<T>&, const Patch<T>&, Tensor<T>&);          \
  template Patch<T> pad_channels(const Patch<T>&, std::size_t);                               \
  template Patch<T> crop_channels(const Patch<T>&, std::size_t);                              \
  template void multiply_mask(Patch<T>&, const Tensor<T>&, const Grid&);                      \
  template void scale(Patch<T>&, T);                                                          \
  template Patch<T> add(const Patch<T>&, const Patch<T>&);                                    \
  template Patch<T> expand_to(const Patch<T>&, const Box&);

ABM_INSTANTIATE_PATCH(float)
ABM_INSTANTIATE_PATCH(double)

#undef ABM_INSTANTIATE_PATCH

}  // namespace abm::detail
