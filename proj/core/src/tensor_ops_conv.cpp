#include <algorithm>
#include <string>
#include <vector>

#include "ctcycle/tensor_ops.hpp"

#include "parallel.hpp"

namespace ctcycle {

namespace {

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if (a % b != 0 && a < 0) --q;
  return q;
}

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return floor_div(a + b - 1, b); }

std::int64_t conv_out_extent(std::int64_t in, std::int64_t k, std::int64_t stride,
                             std::int64_t padding, const char* op) {
  const std::int64_t out = floor_div(in + 2 * padding - k, stride) + 1;
  if (out < 1) {
    throw ShapeError(std::string(op) + ": kernel " + std::to_string(k) +
                     " does not fit input extent " + std::to_string(in) + " with padding " +
                     std::to_string(padding));
  }
  return out;
}

template <typename T>
void check_bias(const Tensor<T>& bias, std::int64_t c_out, const char* op) {
  if (!bias.defined()) return;
  if (bias.rank() != 1 || bias.extent(0) != c_out) {
    throw ShapeError(std::string(op) + ": bias shape " + shape_str(bias.shape()) +
                     " does not match " + std::to_string(c_out) + " output channels");
  }
}


// Even/odd split of every row of a [rows x width] plane; tail zero-padded.
// Turns stride-2 gathers into contiguous copies.
template <typename T>
void build_parity_rows(const T* src, std::int64_t rows, std::int64_t width, std::vector<T>& out) {
  const std::int64_t half = (width + 1) / 2;
  out.assign(static_cast<std::size_t>(rows * 2 * half), T(0));
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* s = src + r * width;
    T* even = out.data() + r * 2 * half;
    T* odd = even + half;
    for (std::int64_t t = 0; 2 * t < width; ++t) even[t] = s[2 * t];
    for (std::int64_t t = 0; 2 * t + 1 < width; ++t) odd[t] = s[2 * t + 1];
  }
}

/// col[k][o] with k = (ci, ky, kx) and o = (oy, ox): the input patch element
/// feeding output o through kernel tap k, zero where the tap falls into
/// padding. plane points at [c_in, h, w]; parity is the stride-2 split of the
/// same plane (unused when stride == 1).
template <typename T>
void im2col(const T* plane, const std::vector<T>& parity, std::int64_t c_in, std::int64_t h,
            std::int64_t w, std::int64_t kh, std::int64_t kw, std::int64_t s, std::int64_t p,
            std::int64_t oh, std::int64_t ow, std::vector<T>& col) {
  const std::int64_t out_n = oh * ow;
  const std::int64_t half = (w + 1) / 2;
  col.assign(static_cast<std::size_t>(c_in * kh * kw * out_n), T(0));
  T* dst_base = col.data();
  std::int64_t k = 0;
  for (std::int64_t ci = 0; ci < c_in; ++ci) {
    for (std::int64_t ky = 0; ky < kh; ++ky) {
      for (std::int64_t kx = 0; kx < kw; ++kx, ++k) {
        const std::int64_t shift = kx - p;
        const std::int64_t ox_lo = std::max<std::int64_t>(0, ceil_div(p - kx, s));
        const std::int64_t ox_hi = std::min(ow - 1, floor_div(w - 1 - kx + p, s));
        for (std::int64_t oy = 0; oy < oh; ++oy) {
          const std::int64_t iy = oy * s + ky - p;
          T* dst = dst_base + k * out_n + oy * ow;
          if (iy < 0 || iy >= h) continue;  // already zero
          if (s == 1) {
            const T* srow = plane + (ci * h + iy) * w + shift;
            for (std::int64_t ox = ox_lo; ox <= ox_hi; ++ox) dst[ox] = srow[ox];
          } else if (s == 2) {
            const std::int64_t base = floor_div(shift, 2);
            const std::int64_t q = shift - 2 * base;
            const T* srow = parity.data() + ((ci * h + iy) * 2 + q) * half + base;
            for (std::int64_t ox = ox_lo; ox <= ox_hi; ++ox) dst[ox] = srow[ox];
          } else {
            const T* srow = plane + (ci * h + iy) * w + shift;
            for (std::int64_t ox = ox_lo; ox <= ox_hi; ++ox) dst[ox] = srow[ox * s];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 const Conv2dSpec& spec, Tape<T>* tape) {
  const bool batched = input.rank() == 4;
  if (!batched && input.rank() != 3) {
    throw ShapeError("conv2d: input must be [C,H,W] or [N,C,H,W], got " + shape_str(input.shape()));
  }
  if (weight.rank() != 4) throw ShapeError("conv2d: weight must be [C_out,C_in/groups,kh,kw]");
  if (spec.stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (spec.groups < 1) throw ShapeError("conv2d: groups must be >= 1");

  const std::int64_t n_batch = batched ? input.extent(0) : 1;
  const std::int64_t c_in = input.extent(batched ? 1 : 0);
  const std::int64_t h = input.extent(batched ? 2 : 1);
  const std::int64_t w = input.extent(batched ? 3 : 2);
  const std::int64_t c_out = weight.extent(0);
  const std::int64_t kh = weight.extent(2);
  const std::int64_t kw = weight.extent(3);
  const std::int64_t g = spec.groups;

  if (c_in % g != 0 || c_out % g != 0) {
    throw ShapeError("conv2d: channels (" + std::to_string(c_in) + "->" + std::to_string(c_out) +
                     ") not divisible by groups " + std::to_string(g));
  }
  if (weight.extent(1) != c_in / g) {
    throw ShapeError("conv2d: weight expects " + std::to_string(weight.extent(1)) +
                     " input channels per group, input has " + std::to_string(c_in / g));
  }
  check_bias(bias, c_out, "conv2d");
  require_finite(input, "conv2d input");
  require_finite(weight, "conv2d weight");

  const std::int64_t oh = conv_out_extent(h, kh, spec.stride, spec.padding, "conv2d");
  const std::int64_t ow = conv_out_extent(w, kw, spec.stride, spec.padding, "conv2d");
  const std::int64_t gc_in = c_in / g;
  const std::int64_t gc_out = c_out / g;
  const std::int64_t s = spec.stride;
  const std::int64_t p = spec.padding;
  const std::int64_t out_n = oh * ow;
  const bool pointwise = kh == 1 && kw == 1 && s == 1 && p == 0 && g == 1;
  const bool gemm = g == 1 && !pointwise;

  Shape out_shape = batched ? Shape{n_batch, c_out, oh, ow} : Shape{c_out, oh, ow};
  auto out = Tensor<T>::zeros(out_shape);

  const T* in_p = input.data();
  const T* w_p = weight.data();
  const T* b_p = bias.defined() ? bias.data() : nullptr;
  T* out_p = out.data();

  if (pointwise) {
    const std::int64_t hw = h * w;
    for (std::int64_t n = 0; n < n_batch; ++n) {
      const T* in_n = in_p + n * c_in * hw;
      T* out_n = out_p + n * c_out * hw;
      detail::split_range(c_out, 8, [&](std::int64_t co_lo, std::int64_t co_hi) {
        for (std::int64_t co = co_lo; co < co_hi; ++co) {
          T* plane = out_n + co * hw;
          const T bv = b_p ? b_p[co] : T(0);
          for (std::int64_t i = 0; i < hw; ++i) plane[i] = bv;
          for (std::int64_t ci = 0; ci < c_in; ++ci) {
            const T wv = w_p[co * c_in + ci];
            const T* in_c = in_n + ci * hw;
            for (std::int64_t i = 0; i < hw; ++i) plane[i] += wv * in_c[i];
          }
        }
      });
    }
  } else if (gemm) {
    // im2col + GEMM: each output element accumulates over k = (ci, ky, kx)
    // in ascending order, identical to the direct formulation.
    const std::int64_t kdim = c_in * kh * kw;
    std::vector<T> parity, col;
    for (std::int64_t n = 0; n < n_batch; ++n) {
      const T* in_n = in_p + n * c_in * h * w;
      if (s == 2) build_parity_rows(in_n, c_in * h, w, parity);
      im2col(in_n, parity, c_in, h, w, kh, kw, s, p, oh, ow, col);
      T* out_nplane = out_p + n * c_out * out_n;
      detail::split_range(c_out, 4, [&](std::int64_t co_lo, std::int64_t co_hi) {
        for (std::int64_t co = co_lo; co < co_hi; ++co) {
          T* plane = out_nplane + co * out_n;
          const T bv = b_p ? b_p[co] : T(0);
          for (std::int64_t i = 0; i < out_n; ++i) plane[i] = bv;
          const T* wrow = w_p + co * kdim;
          for (std::int64_t k = 0; k < kdim; ++k) {
            const T wv = wrow[k];
            const T* crow = col.data() + k * out_n;
            for (std::int64_t i = 0; i < out_n; ++i) plane[i] += wv * crow[i];
          }
        }
      });
    }
  } else {
    // Grouped / depthwise: direct row-centric loops.
    for (std::int64_t n = 0; n < n_batch; ++n) {
      const T* in_n = in_p + n * c_in * h * w;
      T* out_nplane = out_p + n * c_out * out_n;
      for (std::int64_t co = 0; co < c_out; ++co) {
        T* plane = out_nplane + co * out_n;
        const T bv = b_p ? b_p[co] : T(0);
        for (std::int64_t i = 0; i < out_n; ++i) plane[i] = bv;
        const std::int64_t group = co / gc_out;
        for (std::int64_t oy = 0; oy < oh; ++oy) {
          T* row = plane + oy * ow;
          for (std::int64_t cl = 0; cl < gc_in; ++cl) {
            const std::int64_t ci = group * gc_in + cl;
            const T* in_c = in_n + ci * h * w;
            const T* wbase = w_p + (co * gc_in + cl) * kh * kw;
            for (std::int64_t ky = 0; ky < kh; ++ky) {
              const std::int64_t iy = oy * s + ky - p;
              if (iy < 0 || iy >= h) continue;
              const T* in_row = in_c + iy * w;
              for (std::int64_t kx = 0; kx < kw; ++kx) {
                const T wv = wbase[ky * kw + kx];
                const std::int64_t ox_lo = std::max<std::int64_t>(0, ceil_div(p - kx, s));
                const std::int64_t ox_hi = std::min(ow - 1, floor_div(w - 1 - kx + p, s));
                const T* src = in_row + (kx - p);
                if (s == 1) {
                  for (std::int64_t ox = ox_lo; ox <= ox_hi; ++ox) row[ox] += wv * src[ox];
                } else {
                  for (std::int64_t ox = ox_lo; ox <= ox_hi; ++ox) row[ox] += wv * src[ox * s];
                }
              }
            }
          }
        }
      }
    }
  }

  const bool needs = tape && (input.requires_grad() || weight.requires_grad() ||
                              (bias.defined() && bias.requires_grad()));
  if (needs) {
    out.set_requires_grad(true);
    const Conv2dSpec cspec = spec;
    tape->record(out, [input, weight, bias, out, cspec, n_batch, c_in, c_out, h, w, kh, kw, oh,
                       ow, gc_in, gc_out, pointwise, gemm]() {
      const std::int64_t s = cspec.stride, p = cspec.padding;
      const std::int64_t out_n = oh * ow;
      auto og = out.grad();
      const T* w_p2 = weight.data();
      const T* in_p2 = input.data();

      if (bias.defined() && bias.requires_grad()) {
        for (std::int64_t co = 0; co < c_out; ++co) {
          T acc = T(0);
          for (std::int64_t b = 0; b < n_batch; ++b) {
            const T* plane = og.data() + (b * c_out + co) * out_n;
            for (std::int64_t i = 0; i < out_n; ++i) acc += plane[i];
          }
          bias.grad()[static_cast<std::size_t>(co)] += acc;
        }
      }

      if (pointwise) {
        const std::int64_t hw = h * w;
        for (std::int64_t n = 0; n < n_batch; ++n) {
          const T* og_n = og.data() + n * c_out * hw;
          const T* in_n = in_p2 + n * c_in * hw;
          for (std::int64_t co = 0; co < c_out; ++co) {
            const T* og_plane = og_n + co * hw;
            for (std::int64_t ci = 0; ci < c_in; ++ci) {
              const T* in_c = in_n + ci * hw;
              if (weight.requires_grad()) {
                T acc = T(0);
                for (std::int64_t i = 0; i < hw; ++i) acc += og_plane[i] * in_c[i];
                weight.grad()[static_cast<std::size_t>(co * c_in + ci)] += acc;
              }
              if (input.requires_grad()) {
                const T wv = w_p2[co * c_in + ci];
                T* gin_c = input.grad().data() + (n * c_in + ci) * hw;
                for (std::int64_t i = 0; i < hw; ++i) gin_c[i] += wv * og_plane[i];
              }
            }
          }
        }
        return;
      }

      if (gemm) {
        const std::int64_t kdim = c_in * kh * kw;
        std::vector<T> parity, col, dcol;
        for (std::int64_t n = 0; n < n_batch; ++n) {
          const T* in_n = in_p2 + n * c_in * h * w;
          const T* og_n = og.data() + n * c_out * out_n;
          if (s == 2) build_parity_rows(in_n, c_in * h, w, parity);
          im2col(in_n, parity, c_in, h, w, kh, kw, s, p, oh, ow, col);
          if (weight.requires_grad()) {
            auto gw = weight.grad();
            detail::split_range(c_out, 4, [&](std::int64_t co_lo, std::int64_t co_hi) {
              for (std::int64_t co = co_lo; co < co_hi; ++co) {
                const T* og_plane = og_n + co * out_n;
                for (std::int64_t k = 0; k < kdim; ++k) {
                  const T* crow = col.data() + k * out_n;
                  T acc = T(0);
                  for (std::int64_t i = 0; i < out_n; ++i) acc += og_plane[i] * crow[i];
                  gw[static_cast<std::size_t>(co * kdim + k)] += acc;
                }
              }
            });
          }
          if (input.requires_grad()) {
            dcol.assign(static_cast<std::size_t>(kdim * out_n), T(0));
            detail::split_range(kdim, 8, [&](std::int64_t k_lo, std::int64_t k_hi) {
              for (std::int64_t k = k_lo; k < k_hi; ++k) {
                T* drow = dcol.data() + k * out_n;
                for (std::int64_t co = 0; co < c_out; ++co) {
                  const T wv = w_p2[co * kdim + k];
                  const T* og_plane = og_n + co * out_n;
                  for (std::int64_t i = 0; i < out_n; ++i) drow[i] += wv * og_plane[i];
                }
              }
            });
            // col2im scatter-add, sequential and deterministic.
            T* gin_n = input.grad().data() + n * c_in * h * w;
            std::int64_t k = 0;
            for (std::int64_t ci = 0; ci < c_in; ++ci) {
              for (std::int64_t ky = 0; ky < kh; ++ky) {
                for (std::int64_t kx = 0; kx < kw; ++kx, ++k) {
                  const std::int64_t shift = kx - p;
                  const std::int64_t ox_lo = std::max<std::int64_t>(0, ceil_div(p - kx, s));
                  const std::int64_t ox_hi = std::min(ow - 1, floor_div(w - 1 - kx + p, s));
                  const T* drow_base = dcol.data() + k * out_n;
                  for (std::int64_t oy = 0; oy < oh; ++oy) {
                    const std::int64_t iy = oy * s + ky - p;
                    if (iy < 0 || iy >= h) continue;
                    T* gin_row = gin_n + (ci * h + iy) * w + shift;
                    const T* drow = drow_base + oy * ow;
                    if (s == 1) {
                      for (std::int64_t ox = ox_lo; ox <= ox_hi; ++ox) gin_row[ox] += drow[ox];
                    } else {
                      for (std::int64_t ox = ox_lo; ox <= ox_hi; ++ox) {
                        gin_row[ox * s] += drow[ox];
                      }
                    }
                  }
                }
              }
            }
          }
        }
        return;
      }

      // Grouped / depthwise backward, direct loops.
      std::vector<T> dw_local(static_cast<std::size_t>(gc_in * kh * kw));
      const std::int64_t wh = (w + 1) / 2;
      std::vector<T> row_scratch(static_cast<std::size_t>(2 * wh));
      for (std::int64_t n = 0; n < n_batch; ++n) {
        const T* og_n = og.data() + n * c_out * out_n;
        const T* in_n = in_p2 + n * c_in * h * w;
        if (weight.requires_grad()) {
          for (std::int64_t co = 0; co < c_out; ++co) {
            const T* og_plane = og_n + co * out_n;
            const std::int64_t group = co / gc_out;
            std::fill(dw_local.begin(), dw_local.end(), T(0));
            for (std::int64_t oy = 0; oy < oh; ++oy) {
              const T* og_row = og_plane + oy * ow;
              for (std::int64_t cl = 0; cl < gc_in; ++cl) {
                const std::int64_t ci = group * gc_in + cl;
                const T* in_c = in_n + ci * h * w;
                T* dwbase = dw_local.data() + cl * kh * kw;
                for (std::int64_t ky = 0; ky < kh; ++ky) {
                  const std::int64_t iy = oy * s + ky - p;
                  if (iy < 0 || iy >= h) continue;
                  const T* in_row = in_c + iy * w;
                  for (std::int64_t kx = 0; kx < kw; ++kx) {
                    const std::int64_t ox_lo = std::max<std::int64_t>(0, ceil_div(p - kx, s));
                    const std::int64_t ox_hi = std::min(ow - 1, floor_div(w - 1 - kx + p, s));
                    const T* src = in_row + (kx - p);
                    T acc = T(0);
                    if (s == 1) {
                      for (std::int64_t ox = ox_lo; ox <= ox_hi; ++ox) acc += og_row[ox] * src[ox];
                    } else {
                      for (std::int64_t ox = ox_lo; ox <= ox_hi; ++ox) {
                        acc += og_row[ox] * src[ox * s];
                      }
                    }
                    dwbase[ky * kw + kx] += acc;
                  }
                }
              }
            }
            auto gw = weight.grad();
            for (std::int64_t i = 0; i < gc_in * kh * kw; ++i) {
              gw[static_cast<std::size_t>(co * gc_in * kh * kw + i)] +=
                  dw_local[static_cast<std::size_t>(i)];
            }
          }
        }
        if (!input.requires_grad()) continue;
        for (std::int64_t ci = 0; ci < c_in; ++ci) {
          const std::int64_t group = ci / gc_in;
          const std::int64_t cl = ci - group * gc_in;
          T* gin_row_base = input.grad().data() + (n * c_in + ci) * h * w;
          for (std::int64_t iy = 0; iy < h; ++iy) {
            T* gin_row = gin_row_base + iy * w;
            if (s == 2) std::fill(row_scratch.begin(), row_scratch.end(), T(0));
            for (std::int64_t cog = 0; cog < gc_out; ++cog) {
              const std::int64_t co = group * gc_out + cog;
              const T* og_plane = og_n + co * out_n;
              const T* wbase = w_p2 + (co * gc_in + cl) * kh * kw;
              for (std::int64_t ky = 0; ky < kh; ++ky) {
                const std::int64_t num = iy + p - ky;
                if (num < 0 || num % s != 0) continue;
                const std::int64_t oy = num / s;
                if (oy >= oh) continue;
                const T* og_row = og_plane + oy * ow;
                for (std::int64_t kx = 0; kx < kw; ++kx) {
                  const T wv = wbase[ky * kw + kx];
                  const std::int64_t ox_lo = std::max<std::int64_t>(0, ceil_div(p - kx, s));
                  const std::int64_t ox_hi = std::min(ow - 1, floor_div(w - 1 - kx + p, s));
                  const std::int64_t shift = kx - p;
                  if (s == 1) {
                    T* dst = gin_row + shift;
                    for (std::int64_t ox = ox_lo; ox <= ox_hi; ++ox) dst[ox] += wv * og_row[ox];
                  } else if (s == 2) {
                    const std::int64_t base = floor_div(shift, 2);
                    const std::int64_t q = shift - 2 * base;
                    T* dst = row_scratch.data() + q * wh + base;
                    for (std::int64_t ox = ox_lo; ox <= ox_hi; ++ox) dst[ox] += wv * og_row[ox];
                  } else {
                    T* dst = gin_row + shift;
                    for (std::int64_t ox = ox_lo; ox <= ox_hi; ++ox) {
                      dst[ox * s] += wv * og_row[ox];
                    }
                  }
                }
              }
            }
            if (s == 2) {
              const T* even = row_scratch.data();
              const T* odd = even + wh;
              for (std::int64_t t = 0; 2 * t < w; ++t) gin_row[2 * t] += even[t];
              for (std::int64_t t = 0; 2 * t + 1 < w; ++t) gin_row[2 * t + 1] += odd[t];
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& weight,
                           const Tensor<T>& bias, const ConvTranspose2dSpec& spec,
                           Tape<T>* tape) {
  const bool batched = input.rank() == 4;
  if (!batched && input.rank() != 3) {
    throw ShapeError("conv_transpose2d: input must be [C,H,W] or [N,C,H,W]");
  }
  if (weight.rank() != 4) throw ShapeError("conv_transpose2d: weight must be [C_in,C_out,kh,kw]");
  if (spec.stride < 1) throw ShapeError("conv_transpose2d: stride must be >= 1");
  if (spec.output_padding >= spec.stride) {
    throw ShapeError("conv_transpose2d: output_padding must be smaller than stride");
  }

  const std::int64_t n_batch = batched ? input.extent(0) : 1;
  const std::int64_t c_in = input.extent(batched ? 1 : 0);
  const std::int64_t h = input.extent(batched ? 2 : 1);
  const std::int64_t w = input.extent(batched ? 3 : 2);
  if (weight.extent(0) != c_in) {
    throw ShapeError("conv_transpose2d: weight expects " + std::to_string(weight.extent(0)) +
                     " input channels, input has " + std::to_string(c_in));
  }
  const std::int64_t c_out = weight.extent(1);
  const std::int64_t kh = weight.extent(2);
  const std::int64_t kw = weight.extent(3);
  check_bias(bias, c_out, "conv_transpose2d");
  require_finite(input, "conv_transpose2d input");
  require_finite(weight, "conv_transpose2d weight");

  const std::int64_t s = spec.stride, p = spec.padding;
  const std::int64_t oh = (h - 1) * s - 2 * p + kh + spec.output_padding;
  const std::int64_t ow = (w - 1) * s - 2 * p + kw + spec.output_padding;
  if (oh < 1 || ow < 1) throw ShapeError("conv_transpose2d: empty output");

  Shape out_shape = batched ? Shape{n_batch, c_out, oh, ow} : Shape{c_out, oh, ow};
  auto out = Tensor<T>::zeros(out_shape);

  const T* in_p = input.data();
  const T* w_p = weight.data();
  const T* b_p = bias.defined() ? bias.data() : nullptr;
  T* out_p = out.data();

  // GEMM formulation: taps[m][o] = sum_ci W[ci][m] * X[ci][o] with
  // m = (co, ky, kx) and o = (iy, ix), then a scatter of every tap onto
  // output position (iy*s + ky - p, ix*s + kx - p).
  const std::int64_t mdim = c_out * kh * kw;
  const std::int64_t in_n_sz = h * w;
  std::vector<T> taps;
  for (std::int64_t n = 0; n < n_batch; ++n) {
    const T* in_n = in_p + n * c_in * in_n_sz;
    taps.assign(static_cast<std::size_t>(mdim * in_n_sz), T(0));
    detail::split_range(mdim, 8, [&](std::int64_t m_lo, std::int64_t m_hi) {
      for (std::int64_t m = m_lo; m < m_hi; ++m) {
        T* trow = taps.data() + m * in_n_sz;
        for (std::int64_t ci = 0; ci < c_in; ++ci) {
          const T wv = w_p[ci * mdim + m];
          const T* x_row = in_n + ci * in_n_sz;
          for (std::int64_t i = 0; i < in_n_sz; ++i) trow[i] += wv * x_row[i];
        }
      }
    });
    T* out_nplane = out_p + n * c_out * oh * ow;
    for (std::int64_t co = 0; co < c_out; ++co) {
      T* plane = out_nplane + co * oh * ow;
      const T bv = b_p ? b_p[co] : T(0);
      for (std::int64_t i = 0; i < oh * ow; ++i) plane[i] = bv;
      for (std::int64_t ky = 0; ky < kh; ++ky) {
        for (std::int64_t kx = 0; kx < kw; ++kx) {
          const std::int64_t m = (co * kh + ky) * kw + kx;
          const T* trow_base = taps.data() + m * in_n_sz;
          const std::int64_t shift = kx - p;
          const std::int64_t ix_lo = std::max<std::int64_t>(0, ceil_div(p - kx, s));
          const std::int64_t ix_hi = std::min(w - 1, floor_div(ow - 1 - kx + p, s));
          for (std::int64_t iy = 0; iy < h; ++iy) {
            const std::int64_t oy = iy * s + ky - p;
            if (oy < 0 || oy >= oh) continue;
            T* orow = plane + oy * ow + shift;
            const T* trow = trow_base + iy * w;
            if (s == 1) {
              for (std::int64_t ix = ix_lo; ix <= ix_hi; ++ix) orow[ix] += trow[ix];
            } else {
              for (std::int64_t ix = ix_lo; ix <= ix_hi; ++ix) orow[ix * s] += trow[ix];
            }
          }
        }
      }
    }
  }

  const bool needs = tape && (input.requires_grad() || weight.requires_grad() ||
                              (bias.defined() && bias.requires_grad()));
  if (needs) {
    out.set_requires_grad(true);
    const ConvTranspose2dSpec cspec = spec;
    tape->record(out, [input, weight, bias, out, cspec, n_batch, c_in, c_out, h, w, kh, kw, oh,
                       ow]() {
      const std::int64_t s = cspec.stride, p = cspec.padding;
      auto og = out.grad();
      const T* w_p2 = weight.data();
      const T* in_p2 = input.data();
      const std::int64_t mdim = c_out * kh * kw;
      const std::int64_t in_n_sz = h * w;

      if (bias.defined() && bias.requires_grad()) {
        for (std::int64_t co = 0; co < c_out; ++co) {
          T acc = T(0);
          for (std::int64_t b = 0; b < n_batch; ++b) {
            const T* plane = og.data() + (b * c_out + co) * oh * ow;
            for (std::int64_t i = 0; i < oh * ow; ++i) acc += plane[i];
          }
          bias.grad()[static_cast<std::size_t>(co)] += acc;
        }
      }

      // colY[m][o] = dY[co][iy*s + ky - p][ix*s + kx - p] (0 in padding):
      // dIn is then a plain GEMM with the weights, dW a row dot product.
      std::vector<T> parity, coly;
      for (std::int64_t n = 0; n < n_batch; ++n) {
        const T* og_n = og.data() + n * c_out * oh * ow;
        const T* in_n = in_p2 + n * c_in * in_n_sz;
        if (s == 2) build_parity_rows(og_n, c_out * oh, ow, parity);
        im2col(og_n, parity, c_out, oh, ow, kh, kw, s, p, h, w, coly);

        if (input.requires_grad()) {
          T* gin_n = input.grad().data() + n * c_in * in_n_sz;
          detail::split_range(c_in, 4, [&](std::int64_t ci_lo, std::int64_t ci_hi) {
            for (std::int64_t ci = ci_lo; ci < ci_hi; ++ci) {
              T* gin_row = gin_n + ci * in_n_sz;
              const T* wrow = w_p2 + ci * mdim;
              for (std::int64_t m = 0; m < mdim; ++m) {
                const T wv = wrow[m];
                const T* crow = coly.data() + m * in_n_sz;
                for (std::int64_t i = 0; i < in_n_sz; ++i) gin_row[i] += wv * crow[i];
              }
            }
          });
        }
        if (weight.requires_grad()) {
          auto gw = weight.grad();
          detail::split_range(c_in, 4, [&](std::int64_t ci_lo, std::int64_t ci_hi) {
            for (std::int64_t ci = ci_lo; ci < ci_hi; ++ci) {
              const T* x_row = in_n + ci * in_n_sz;
              for (std::int64_t m = 0; m < mdim; ++m) {
                const T* crow = coly.data() + m * in_n_sz;
                T acc = T(0);
                for (std::int64_t i = 0; i < in_n_sz; ++i) acc += x_row[i] * crow[i];
                gw[static_cast<std::size_t>(ci * mdim + m)] += acc;
              }
            }
          });
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 const Conv3dSpec& spec, Tape<T>* tape) {
  if (input.rank() != 4) throw ShapeError("conv3d: input must be [C,D,H,W]");
  if (weight.rank() != 5) throw ShapeError("conv3d: weight must be [C_out,C_in,kd,kh,kw]");
  const std::int64_t c_in = input.extent(0), d = input.extent(1), h = input.extent(2),
                     w = input.extent(3);
  if (weight.extent(1) != c_in) throw ShapeError("conv3d: channel mismatch");
  const std::int64_t c_out = weight.extent(0), kd = weight.extent(2), kh = weight.extent(3),
                     kw = weight.extent(4);
  check_bias(bias, c_out, "conv3d");
  require_finite(input, "conv3d input");
  require_finite(weight, "conv3d weight");

  const std::int64_t s = spec.stride, p = spec.padding;
  const std::int64_t od = conv_out_extent(d, kd, s, p, "conv3d");
  const std::int64_t oh = conv_out_extent(h, kh, s, p, "conv3d");
  const std::int64_t ow = conv_out_extent(w, kw, s, p, "conv3d");

  auto out = Tensor<T>::zeros({c_out, od, oh, ow});
  const T* in_p = input.data();
  const T* w_p = weight.data();
  const T* b_p = bias.defined() ? bias.data() : nullptr;
  T* out_p = out.data();

  for (std::int64_t co = 0; co < c_out; ++co) {
    T* vol = out_p + co * od * oh * ow;
    const T bv = b_p ? b_p[co] : T(0);
    for (std::int64_t i = 0; i < od * oh * ow; ++i) vol[i] = bv;
    for (std::int64_t ci = 0; ci < c_in; ++ci) {
      const T* in_c = in_p + ci * d * h * w;
      for (std::int64_t kz = 0; kz < kd; ++kz) {
        const std::int64_t oz_lo = std::max<std::int64_t>(0, ceil_div(p - kz, s));
        const std::int64_t oz_hi = std::min(od - 1, floor_div(d - 1 - kz + p, s));
        for (std::int64_t ky = 0; ky < kh; ++ky) {
          const std::int64_t oy_lo = std::max<std::int64_t>(0, ceil_div(p - ky, s));
          const std::int64_t oy_hi = std::min(oh - 1, floor_div(h - 1 - ky + p, s));
          for (std::int64_t kx = 0; kx < kw; ++kx) {
            const T wv = w_p[(((co * c_in + ci) * kd + kz) * kh + ky) * kw + kx];
            const std::int64_t ox_lo = std::max<std::int64_t>(0, ceil_div(p - kx, s));
            const std::int64_t ox_hi = std::min(ow - 1, floor_div(w - 1 - kx + p, s));
            for (std::int64_t oz = oz_lo; oz <= oz_hi; ++oz) {
              const T* in_z = in_c + (oz * s + kz - p) * h * w;
              T* out_z = vol + oz * oh * ow;
              for (std::int64_t oy = oy_lo; oy <= oy_hi; ++oy) {
                const T* in_row = in_z + (oy * s + ky - p) * w + (kx - p);
                T* out_row = out_z + oy * ow;
                for (std::int64_t ox = ox_lo; ox <= ox_hi; ++ox) {
                  out_row[ox] += wv * in_row[ox * s];
                }
              }
            }
          }
        }
      }
    }
  }

  const bool needs = tape && (input.requires_grad() || weight.requires_grad() ||
                              (bias.defined() && bias.requires_grad()));
  if (needs) {
    out.set_requires_grad(true);
    const Conv3dSpec cspec = spec;
    tape->record(out, [input, weight, bias, out, cspec, c_in, c_out, d, h, w, kd, kh, kw]() {
      const std::int64_t s = cspec.stride, p = cspec.padding;
      const std::int64_t od = out.extent(1), oh = out.extent(2), ow = out.extent(3);
      auto og = out.grad();
      const T* in_p2 = input.data();
      const T* w_p2 = weight.data();
      for (std::int64_t co = 0; co < c_out; ++co) {
        const T* og_vol = og.data() + co * od * oh * ow;
        if (bias.defined() && bias.requires_grad()) {
          T acc = T(0);
          for (std::int64_t i = 0; i < od * oh * ow; ++i) acc += og_vol[i];
          bias.grad()[static_cast<std::size_t>(co)] += acc;
        }
        for (std::int64_t ci = 0; ci < c_in; ++ci) {
          const T* in_c = in_p2 + ci * d * h * w;
          T* gin_c = input.requires_grad() ? input.grad().data() + ci * d * h * w : nullptr;
          for (std::int64_t kz = 0; kz < kd; ++kz) {
            const std::int64_t oz_lo = std::max<std::int64_t>(0, ceil_div(p - kz, s));
            const std::int64_t oz_hi = std::min(od - 1, floor_div(d - 1 - kz + p, s));
            for (std::int64_t ky = 0; ky < kh; ++ky) {
              const std::int64_t oy_lo = std::max<std::int64_t>(0, ceil_div(p - ky, s));
              const std::int64_t oy_hi = std::min(oh - 1, floor_div(h - 1 - ky + p, s));
              for (std::int64_t kx = 0; kx < kw; ++kx) {
                const std::int64_t widx = (((co * c_in + ci) * kd + kz) * kh + ky) * kw + kx;
                const T wv = w_p2[widx];
                const std::int64_t ox_lo = std::max<std::int64_t>(0, ceil_div(p - kx, s));
                const std::int64_t ox_hi = std::min(ow - 1, floor_div(w - 1 - kx + p, s));
                T wacc = T(0);
                for (std::int64_t oz = oz_lo; oz <= oz_hi; ++oz) {
                  const std::int64_t izb = (oz * s + kz - p) * h * w;
                  const T* og_z = og_vol + oz * oh * ow;
                  for (std::int64_t oy = oy_lo; oy <= oy_hi; ++oy) {
                    const std::int64_t irow = izb + (oy * s + ky - p) * w + (kx - p);
                    const T* og_row = og_z + oy * ow;
                    if (weight.requires_grad()) {
                      for (std::int64_t ox = ox_lo; ox <= ox_hi; ++ox) {
                        wacc += og_row[ox] * in_c[irow + ox * s];
                      }
                    }
                    if (gin_c) {
                      for (std::int64_t ox = ox_lo; ox <= ox_hi; ++ox) {
                        gin_c[irow + ox * s] += wv * og_row[ox];
                      }
                    }
                  }
                }
                if (weight.requires_grad()) {
                  weight.grad()[static_cast<std::size_t>(widx)] += wacc;
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> conv_transpose3d(const Tensor<T>& input, const Tensor<T>& weight,
                           const Tensor<T>& bias, const ConvTranspose3dSpec& spec,
                           Tape<T>* tape) {
  if (input.rank() != 4) throw ShapeError("conv_transpose3d: input must be [C,D,H,W]");
  if (weight.rank() != 5) throw ShapeError("conv_transpose3d: weight must be [C_in,C_out,kd,kh,kw]");
  if (spec.output_padding >= spec.stride) {
    throw ShapeError("conv_transpose3d: output_padding must be smaller than stride");
  }
  const std::int64_t c_in = input.extent(0), d = input.extent(1), h = input.extent(2),
                     w = input.extent(3);
  if (weight.extent(0) != c_in) throw ShapeError("conv_transpose3d: channel mismatch");
  const std::int64_t c_out = weight.extent(1), kd = weight.extent(2), kh = weight.extent(3),
                     kw = weight.extent(4);
  check_bias(bias, c_out, "conv_transpose3d");
  require_finite(input, "conv_transpose3d input");
  require_finite(weight, "conv_transpose3d weight");

  const std::int64_t s = spec.stride, p = spec.padding;
  const std::int64_t od = (d - 1) * s - 2 * p + kd + spec.output_padding;
  const std::int64_t oh = (h - 1) * s - 2 * p + kh + spec.output_padding;
  const std::int64_t ow = (w - 1) * s - 2 * p + kw + spec.output_padding;
  if (od < 1 || oh < 1 || ow < 1) throw ShapeError("conv_transpose3d: empty output");

  auto out = Tensor<T>::zeros({c_out, od, oh, ow});
  const T* in_p = input.data();
  const T* w_p = weight.data();
  const T* b_p = bias.defined() ? bias.data() : nullptr;
  T* out_p = out.data();

  for (std::int64_t co = 0; co < c_out; ++co) {
    T* vol = out_p + co * od * oh * ow;
    const T bv = b_p ? b_p[co] : T(0);
    for (std::int64_t i = 0; i < od * oh * ow; ++i) vol[i] = bv;
    for (std::int64_t ci = 0; ci < c_in; ++ci) {
      const T* in_c = in_p + ci * d * h * w;
      for (std::int64_t kz = 0; kz < kd; ++kz) {
        const std::int64_t iz_lo = std::max<std::int64_t>(0, ceil_div(p - kz, s));
        const std::int64_t iz_hi = std::min(d - 1, floor_div(od - 1 - kz + p, s));
        for (std::int64_t ky = 0; ky < kh; ++ky) {
          const std::int64_t iy_lo = std::max<std::int64_t>(0, ceil_div(p - ky, s));
          const std::int64_t iy_hi = std::min(h - 1, floor_div(oh - 1 - ky + p, s));
          for (std::int64_t kx = 0; kx < kw; ++kx) {
            const T wv = w_p[(((ci * c_out + co) * kd + kz) * kh + ky) * kw + kx];
            const std::int64_t ix_lo = std::max<std::int64_t>(0, ceil_div(p - kx, s));
            const std::int64_t ix_hi = std::min(w - 1, floor_div(ow - 1 - kx + p, s));
            for (std::int64_t iz = iz_lo; iz <= iz_hi; ++iz) {
              const T* in_z = in_c + iz * h * w;
              T* out_z = vol + (iz * s + kz - p) * oh * ow;
              for (std::int64_t iy = iy_lo; iy <= iy_hi; ++iy) {
                const T* in_row = in_z + iy * w;
                T* out_row = out_z + (iy * s + ky - p) * ow + (kx - p);
                for (std::int64_t ix = ix_lo; ix <= ix_hi; ++ix) {
                  out_row[ix * s] += wv * in_row[ix];
                }
              }
            }
          }
        }
      }
    }
  }

  const bool needs = tape && (input.requires_grad() || weight.requires_grad() ||
                              (bias.defined() && bias.requires_grad()));
  if (needs) {
    out.set_requires_grad(true);
    const ConvTranspose3dSpec cspec = spec;
    tape->record(out, [input, weight, bias, out, cspec, c_in, c_out, d, h, w, kd, kh, kw]() {
      const std::int64_t s = cspec.stride, p = cspec.padding;
      const std::int64_t od = out.extent(1), oh = out.extent(2), ow = out.extent(3);
      auto og = out.grad();
      const T* in_p2 = input.data();
      const T* w_p2 = weight.data();
      for (std::int64_t co = 0; co < c_out; ++co) {
        const T* og_vol = og.data() + co * od * oh * ow;
        if (bias.defined() && bias.requires_grad()) {
          T acc = T(0);
          for (std::int64_t i = 0; i < od * oh * ow; ++i) acc += og_vol[i];
          bias.grad()[static_cast<std::size_t>(co)] += acc;
        }
        for (std::int64_t ci = 0; ci < c_in; ++ci) {
          const T* in_c = in_p2 + ci * d * h * w;
          T* gin_c = input.requires_grad() ? input.grad().data() + ci * d * h * w : nullptr;
          for (std::int64_t kz = 0; kz < kd; ++kz) {
            const std::int64_t iz_lo = std::max<std::int64_t>(0, ceil_div(p - kz, s));
            const std::int64_t iz_hi = std::min(d - 1, floor_div(od - 1 - kz + p, s));
            for (std::int64_t ky = 0; ky < kh; ++ky) {
              const std::int64_t iy_lo = std::max<std::int64_t>(0, ceil_div(p - ky, s));
              const std::int64_t iy_hi = std::min(h - 1, floor_div(oh - 1 - ky + p, s));
              for (std::int64_t kx = 0; kx < kw; ++kx) {
                const std::int64_t widx = (((ci * c_out + co) * kd + kz) * kh + ky) * kw + kx;
                const T wv = w_p2[widx];
                const std::int64_t ix_lo = std::max<std::int64_t>(0, ceil_div(p - kx, s));
                const std::int64_t ix_hi = std::min(w - 1, floor_div(ow - 1 - kx + p, s));
                T wacc = T(0);
                for (std::int64_t iz = iz_lo; iz <= iz_hi; ++iz) {
                  const T* in_z = in_c + iz * h * w;
                  T* gin_z = gin_c ? gin_c + iz * h * w : nullptr;
                  const T* og_z = og_vol + (iz * s + kz - p) * oh * ow;
                  for (std::int64_t iy = iy_lo; iy <= iy_hi; ++iy) {
                    const T* in_row = in_z + iy * w;
                    T* gin_row = gin_z ? gin_z + iy * w : nullptr;
                    const T* og_row = og_z + (iy * s + ky - p) * ow + (kx - p);
                    for (std::int64_t ix = ix_lo; ix <= ix_hi; ++ix) {
                      const T ogv = og_row[ix * s];
                      if (weight.requires_grad()) wacc += ogv * in_row[ix];
                      if (gin_row) gin_row[ix] += wv * ogv;
                    }
                  }
                }
                if (weight.requires_grad()) {
                  weight.grad()[static_cast<std::size_t>(widx)] += wacc;
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

#define CTCYCLE_INSTANTIATE_CONV(T)                                                          \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,         \
                               const Conv2dSpec&, Tape<T>*);                                 \
  template Tensor<T> conv_transpose2d<T>(const Tensor<T>&, const Tensor<T>&,                 \
                                         const Tensor<T>&, const ConvTranspose2dSpec&,       \
                                         Tape<T>*);                                          \
  template Tensor<T> conv3d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,         \
                               const Conv3dSpec&, Tape<T>*);                                 \
  template Tensor<T> conv_transpose3d<T>(const Tensor<T>&, const Tensor<T>&,                 \
                                         const Tensor<T>&, const ConvTranspose3dSpec&,       \
                                         Tape<T>*);

CTCYCLE_INSTANTIATE_CONV(float)
CTCYCLE_INSTANTIATE_CONV(double)

#undef CTCYCLE_INSTANTIATE_CONV

}  // namespace ctcycle
