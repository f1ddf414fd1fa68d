#pragma once

// Raw loops behind the tensor primitives. Every output element is reduced in a
// fixed sequential order, so results do not depend on the thread count.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <span>
#include <thread>
#include <vector>

namespace snnssl::kernels {

namespace detail {
inline std::atomic<unsigned> thread_count{1};
}

inline void set_num_threads(unsigned n) { detail::thread_count = std::max(1u, n); }
inline unsigned num_threads() { return detail::thread_count; }

/// Runs fn(i) for i in [0, n), split into contiguous chunks across threads
/// when `work` (rough flop estimate) is large enough to pay for the spawn.
template <class Fn>
void parallel_for(std::size_t n, std::size_t work, Fn&& fn) {
  unsigned threads = std::min<std::size_t>(num_threads(), n);
  if (threads <= 1 || work < (1u << 16)) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  std::size_t chunk = (n + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    std::size_t lo = t * chunk, hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
}

// out[m,n] = a[m,k] * b[k,n]
template <class T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> out, std::size_t m, std::size_t k,
            std::size_t n) {
  parallel_for(m, m * k * n, [&](std::size_t i) {
    T* row = out.data() + i * n;
    std::fill(row, row + n, T(0));
    for (std::size_t p = 0; p < k; ++p) {
      T av = a[i * k + p];
      if (av == T(0)) continue;
      const T* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  });
}

// out[k,n] = a[m,k]^T * g[m,n]
template <class T>
void matmul_at_b(std::span<const T> a, std::span<const T> g, std::span<T> out, std::size_t m, std::size_t k,
                 std::size_t n) {
  parallel_for(k, m * k * n, [&](std::size_t p) {
    T* row = out.data() + p * n;
    std::fill(row, row + n, T(0));
    for (std::size_t i = 0; i < m; ++i) {
      T av = a[i * k + p];
      if (av == T(0)) continue;
      const T* grow = g.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * grow[j];
    }
  });
}

// out[m,k] = g[m,n] * b[k,n]^T
template <class T>
void matmul_a_bt(std::span<const T> g, std::span<const T> b, std::span<T> out, std::size_t m, std::size_t k,
                 std::size_t n) {
  parallel_for(m, m * k * n, [&](std::size_t i) {
    const T* grow = g.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T* brow = b.data() + p * n;
      T acc = 0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      out[i * k + p] = acc;
    }
  });
}

struct ConvGeometry {
  std::size_t batch, in_channels, height, width;
  std::size_t out_channels, kernel, stride, pad;

  std::size_t out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
};

template <class T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> w, std::span<T> out) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  parallel_for(g.batch * g.out_channels, g.batch * g.out_channels * oh * ow * g.in_channels * g.kernel * g.kernel,
               [&](std::size_t job) {
                 std::size_t n = job / g.out_channels, co = job % g.out_channels;
                 T* dst = out.data() + job * oh * ow;
                 for (std::size_t oy = 0; oy < oh; ++oy) {
                   for (std::size_t ox = 0; ox < ow; ++ox) {
                     T acc = 0;
                     for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
                       const T* src = in.data() + (n * g.in_channels + ci) * g.height * g.width;
                       const T* ker = w.data() + (co * g.in_channels + ci) * g.kernel * g.kernel;
                       for (std::size_t ky = 0; ky < g.kernel; ++ky) {
                         auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                         if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
                         for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                           auto ix =
                               static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                           if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
                           acc += src[iy * g.width + ix] * ker[ky * g.kernel + kx];
                         }
                       }
                     }
                     dst[oy * ow + ox] = acc;
                   }
                 }
               });
}

template <class T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> grad_out, std::span<const T> w,
                           std::span<T> grad_in) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  std::fill(grad_in.begin(), grad_in.end(), T(0));
  parallel_for(g.batch, g.batch * g.out_channels * oh * ow * g.in_channels * g.kernel * g.kernel,
               [&](std::size_t n) {
                 for (std::size_t co = 0; co < g.out_channels; ++co) {
                   const T* go = grad_out.data() + (n * g.out_channels + co) * oh * ow;
                   for (std::size_t oy = 0; oy < oh; ++oy) {
                     for (std::size_t ox = 0; ox < ow; ++ox) {
                       T gv = go[oy * ow + ox];
                       if (gv == T(0)) continue;
                       for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
                         T* dst = grad_in.data() + (n * g.in_channels + ci) * g.height * g.width;
                         const T* ker = w.data() + (co * g.in_channels + ci) * g.kernel * g.kernel;
                         for (std::size_t ky = 0; ky < g.kernel; ++ky) {
                           auto iy =
                               static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                           if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
                           for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                             auto ix =
                                 static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                             if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
                             dst[iy * g.width + ix] += gv * ker[ky * g.kernel + kx];
                           }
                         }
                       }
                     }
                   }
                 }
               });
}

template <class T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> grad_out, std::span<const T> in,
                            std::span<T> grad_w) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  std::fill(grad_w.begin(), grad_w.end(), T(0));
  parallel_for(g.out_channels, g.batch * g.out_channels * oh * ow * g.in_channels * g.kernel * g.kernel,
               [&](std::size_t co) {
                 for (std::size_t n = 0; n < g.batch; ++n) {
                   const T* go = grad_out.data() + (n * g.out_channels + co) * oh * ow;
                   for (std::size_t oy = 0; oy < oh; ++oy) {
                     for (std::size_t ox = 0; ox < ow; ++ox) {
                       T gv = go[oy * ow + ox];
                       if (gv == T(0)) continue;
                       for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
                         const T* src = in.data() + (n * g.in_channels + ci) * g.height * g.width;
                         T* dst = grad_w.data() + (co * g.in_channels + ci) * g.kernel * g.kernel;
                         for (std::size_t ky = 0; ky < g.kernel; ++ky) {
                           auto iy =
                               static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                           if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
                           for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                             auto ix =
                                 static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                             if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
                             dst[ky * g.kernel + kx] += gv * src[iy * g.width + ix];
                           }
                         }
                       }
                     }
                   }
                 }
               });
}

}  // namespace snnssl::kernels
