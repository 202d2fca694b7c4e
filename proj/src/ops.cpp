#include "kilnnet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "kilnnet/error.hpp"
#include "kilnnet/parallel.hpp"

namespace kiln {

namespace {

thread_local DecisionTrace* t_trace = nullptr;

}  // namespace

DecisionTrace::DecisionTrace() : previous_(t_trace) { t_trace = this; }

DecisionTrace::~DecisionTrace() { t_trace = previous_; }

void DecisionTrace::record(std::uint64_t value) {
  for (int i = 0; i < 8; ++i) {
    hash_ ^= (value >> (8 * i)) & 0xffU;
    hash_ *= 0x100000001b3ULL;
  }
}

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

struct Dims4 {
  std::size_t n, c, h, w;
};

Dims4 dims4(const Tensor& t, const char* op) {
  if (t.rank() != 4) {
    fail(ErrorKind::shape, std::string(op) + " expects [N,C,H,W], got " + to_string(t.shape()));
  }
  return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::shape, std::string(op) + ": " + to_string(a.shape()) + " vs " +
                               to_string(b.shape()));
  }
}

struct ConvGeometry {
  std::size_t c, h, w, kh, kw, stride, ph, pw, oh, ow;
  std::size_t rows() const { return c * kh * kw; }
  std::size_t cols() const { return oh * ow; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && ph == 0 && pw == 0; }
};

// Unfolds one image into columns [col_offset, col_offset + oh*ow) of a
// (c*kh*kw) x ld row-major matrix.
void im2col(const double* x, const ConvGeometry& g, double* col, std::size_t ld,
            std::size_t col_offset) {
  for (std::size_t c = 0; c < g.c; ++c) {
    const double* xc = x + c * g.h * g.w;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = col + ((c * g.kh + i) * g.kw + j) * ld + col_offset;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.ph);
          double* dst = row + oy * g.ow;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.ow, 0.0);
            continue;
          }
          const double* src = xc + static_cast<std::size_t>(iy) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.pw);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im(const double* col, const ConvGeometry& g, std::size_t ld, std::size_t col_offset,
            double* dx) {
  for (std::size_t c = 0; c < g.c; ++c) {
    double* dxc = dx + c * g.h * g.w;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = col + ((c * g.kh + i) * g.kw + j) * ld + col_offset;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.ph);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          const double* src = row + oy * g.ow;
          double* dst = dxc + static_cast<std::size_t>(iy) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.pw);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// Builds the (c*kh*kw) x (n*oh*ow) column matrix for the whole batch.
std::vector<double> batch_columns(std::span<const double> x, std::size_t n, const ConvGeometry& g) {
  const std::size_t ld = n * g.cols();
  std::vector<double> col(g.rows() * ld);
  const std::size_t in_stride = g.c * g.h * g.w;
  parallel_for(n, [&](std::size_t b) {
    if (g.pointwise()) {
      for (std::size_t c = 0; c < g.c; ++c) {
        const double* src = x.data() + b * in_stride + c * g.h * g.w;
        std::copy(src, src + g.cols(), col.data() + c * ld + b * g.cols());
      }
    } else {
      im2col(x.data() + b * in_stride, g, col.data(), ld, b * g.cols());
    }
  });
  return col;
}

}  // namespace

ConvSpec ConvSpec::same(std::size_t in, std::size_t out, std::size_t kh, std::size_t kw,
                        std::size_t stride, bool bias) {
  return ConvSpec{in, out, kh, kw, stride, kh / 2, kw / 2, bias};
}

ConvSpec ConvSpec::valid(std::size_t in, std::size_t out, std::size_t kh, std::size_t kw,
                         std::size_t stride, bool bias) {
  return ConvSpec{in, out, kh, kw, stride, 0, 0, bias};
}

std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride,
                             std::size_t pad) {
  if (stride == 0) fail(ErrorKind::config, "stride must be positive");
  const long span = static_cast<long>(in + 2 * pad) - static_cast<long>(kernel);
  if (span < 0) {
    fail(ErrorKind::config, "kernel " + std::to_string(kernel) + " does not fit input " +
                                std::to_string(in) + " with padding " + std::to_string(pad));
  }
  return static_cast<std::size_t>(span) / stride + 1;
}

Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias,
              const ConvSpec& spec) {
  const auto [n, c, h, w] = dims4(input, "conv2d");
  if (c != spec.in_channels) {
    fail(ErrorKind::shape, "conv2d input has " + std::to_string(c) + " channels, spec expects " +
                               std::to_string(spec.in_channels));
  }
  if (weights.shape() != spec.weight_shape()) {
    fail(ErrorKind::shape, "conv2d weights " + to_string(weights.shape()) + " do not match spec " +
                               to_string(spec.weight_shape()));
  }
  if (spec.has_bias != bias.defined()) {
    fail(ErrorKind::shape, "conv2d bias presence does not match spec");
  }
  if (bias.defined() && bias.shape() != Shape{spec.out_channels}) {
    fail(ErrorKind::shape, "conv2d bias " + to_string(bias.shape()) + ", expected [" +
                               std::to_string(spec.out_channels) + "]");
  }
  if (spec.kernel_h == 0 || spec.kernel_w == 0 || spec.out_channels == 0) {
    fail(ErrorKind::config, "conv2d kernel and channel counts must be positive");
  }
  const ConvGeometry g{c, h, w, spec.kernel_h, spec.kernel_w, spec.stride, spec.pad_h, spec.pad_w,
                       conv_output_size(h, spec.kernel_h, spec.stride, spec.pad_h),
                       conv_output_size(w, spec.kernel_w, spec.stride, spec.pad_w)};
  const std::size_t cout = spec.out_channels;
  const std::size_t cols = g.cols();
  const std::size_t ld = n * cols;

  std::vector<double> out_values(n * cout * cols);
  {
    const std::vector<double> col = batch_columns(input.values(), n, g);
    RowMatrix product(cout, ld);
    product.noalias() = ConstMatrixMap(weights.values().data(), cout, g.rows()) *
                        ConstMatrixMap(col.data(), g.rows(), ld);
    const auto b = bias.defined() ? bias.values() : std::span<const double>{};
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t o = 0; o < cout; ++o) {
        const double* src = product.data() + o * ld + s * cols;
        double* dst = out_values.data() + (s * cout + o) * cols;
        const double shift = b.empty() ? 0.0 : b[o];
        for (std::size_t p = 0; p < cols; ++p) dst[p] = src[p] + shift;
      }
    }
  }

  return Tensor::from_op(
      {n, cout, g.oh, g.ow}, std::move(out_values), {input, weights, bias},
      [input, weights, bias, g, n, cout](std::span<const double> gy) mutable {
        const std::size_t cols = g.cols();
        const std::size_t ld = n * cols;
        RowMatrix dy(cout, ld);
        for (std::size_t s = 0; s < n; ++s) {
          for (std::size_t o = 0; o < cout; ++o) {
            std::copy_n(gy.data() + (s * cout + o) * cols, cols, dy.data() + o * ld + s * cols);
          }
        }
        if (bias.defined() && bias.requires_grad()) {
          auto db = bias.mutable_grad();
          for (std::size_t o = 0; o < cout; ++o) {
            double acc = 0.0;
            const double* row = dy.data() + o * ld;
            for (std::size_t p = 0; p < ld; ++p) acc += row[p];
            db[o] += acc;
          }
        }
        if (weights.requires_grad()) {
          const std::vector<double> col = batch_columns(input.values(), n, g);
          MatrixMap dw(weights.mutable_grad().data(), cout, g.rows());
          dw.noalias() += dy * ConstMatrixMap(col.data(), g.rows(), ld).transpose();
        }
        if (input.requires_grad()) {
          RowMatrix dcol(g.rows(), ld);
          dcol.noalias() = ConstMatrixMap(weights.values().data(), cout, g.rows()).transpose() * dy;
          auto dx = input.mutable_grad();
          const std::size_t in_stride = g.c * g.h * g.w;
          parallel_for(n, [&](std::size_t s) {
            if (g.pointwise()) {
              for (std::size_t c = 0; c < g.c; ++c) {
                const double* src = dcol.data() + c * ld + s * cols;
                double* dst = dx.data() + s * in_stride + c * cols;
                for (std::size_t p = 0; p < cols; ++p) dst[p] += src[p];
              }
            } else {
              col2im(dcol.data(), g, ld, s * cols, dx.data() + s * in_stride);
            }
          });
        }
      });
}

Tensor maxpool2d(const Tensor& input, std::size_t window, std::size_t stride) {
  const auto [n, c, h, w] = dims4(input, "maxpool2d");
  if (window == 0 || window > h || window > w) {
    fail(ErrorKind::config, "maxpool window " + std::to_string(window) + " larger than input " +
                                std::to_string(h) + "x" + std::to_string(w));
  }
  const std::size_t oh = conv_output_size(h, window, stride, 0);
  const std::size_t ow = conv_output_size(w, window, stride, 0);
  std::vector<double> out(n * c * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  const auto x = input.values();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = base + oy * stride * w + ox * stride;
        for (std::size_t i = 0; i < window; ++i) {
          for (std::size_t j = 0; j < window; ++j) {
            const std::size_t idx = base + (oy * stride + i) * w + ox * stride + j;
            if (x[idx] > x[best]) best = idx;
          }
        }
        const std::size_t o = (plane * oh + oy) * ow + ox;
        out[o] = x[best];
        argmax[o] = best;
      }
    }
  }
  if (t_trace) {
    for (std::size_t a : argmax) t_trace->record(a);
  }
  return Tensor::from_op({n, c, oh, ow}, std::move(out), {input},
                         [input, argmax = std::move(argmax)](std::span<const double> gy) mutable {
                           auto dx = input.mutable_grad();
                           for (std::size_t o = 0; o < gy.size(); ++o) dx[argmax[o]] += gy[o];
                         });
}

Tensor avgpool2d_same(const Tensor& input, std::size_t window) {
  const auto [n, c, h, w] = dims4(input, "avgpool2d");
  if (window == 0 || window % 2 == 0) fail(ErrorKind::config, "avgpool window must be odd");
  const long r = static_cast<long>(window / 2);
  const auto x = input.values();
  std::vector<double> out(x.size());
  auto count = [=](long y, long xx) {
    const long y0 = std::max(0L, y - r), y1 = std::min<long>(static_cast<long>(h) - 1, y + r);
    const long x0 = std::max(0L, xx - r), x1 = std::min<long>(static_cast<long>(w) - 1, xx + r);
    return static_cast<double>((y1 - y0 + 1) * (x1 - x0 + 1));
  };
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* src = x.data() + plane * h * w;
    double* dst = out.data() + plane * h * w;
    for (long y = 0; y < static_cast<long>(h); ++y) {
      for (long xx = 0; xx < static_cast<long>(w); ++xx) {
        double acc = 0.0;
        for (long yy = std::max(0L, y - r); yy <= std::min<long>(static_cast<long>(h) - 1, y + r); ++yy) {
          for (long xi = std::max(0L, xx - r); xi <= std::min<long>(static_cast<long>(w) - 1, xx + r); ++xi) {
            acc += src[yy * static_cast<long>(w) + xi];
          }
        }
        dst[y * static_cast<long>(w) + xx] = acc / count(y, xx);
      }
    }
  }
  return Tensor::from_op(
      input.shape(), std::move(out), {input},
      [input, n, c, h, w, r, count](std::span<const double> gy) mutable {
        auto dx = input.mutable_grad();
        for (std::size_t plane = 0; plane < n * c; ++plane) {
          const double* g = gy.data() + plane * h * w;
          double* d = dx.data() + plane * h * w;
          for (long y = 0; y < static_cast<long>(h); ++y) {
            for (long xx = 0; xx < static_cast<long>(w); ++xx) {
              const double share = g[y * static_cast<long>(w) + xx] / count(y, xx);
              for (long yy = std::max(0L, y - r); yy <= std::min<long>(static_cast<long>(h) - 1, y + r); ++yy) {
                for (long xi = std::max(0L, xx - r); xi <= std::min<long>(static_cast<long>(w) - 1, xx + r); ++xi) {
                  d[yy * static_cast<long>(w) + xi] += share;
                }
              }
            }
          }
        }
      });
}

Tensor global_avgpool(const Tensor& input) {
  const auto [n, c, h, w] = dims4(input, "global_avgpool");
  const std::size_t area = h * w;
  const auto x = input.values();
  std::vector<double> out(n * c);
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    double acc = 0.0;
    for (std::size_t p = 0; p < area; ++p) acc += x[plane * area + p];
    out[plane] = acc / static_cast<double>(area);
  }
  return Tensor::from_op({n, c}, std::move(out), {input},
                         [input, area](std::span<const double> gy) mutable {
                           auto dx = input.mutable_grad();
                           const double inv = 1.0 / static_cast<double>(area);
                           for (std::size_t plane = 0; plane < gy.size(); ++plane) {
                             for (std::size_t p = 0; p < area; ++p) {
                               dx[plane * area + p] += gy[plane] * inv;
                             }
                           }
                         });
}

Tensor relu(const Tensor& input) {
  const auto x = input.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  if (t_trace) {
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      word = (word << 1) | (x[i] > 0.0 ? 1U : 0U);
      if (i % 64 == 63 || i + 1 == x.size()) {
        t_trace->record(word);
        word = 0;
      }
    }
  }
  return Tensor::from_op(input.shape(), std::move(out), {input},
                         [input](std::span<const double> gy) mutable {
                           auto dx = input.mutable_grad();
                           const auto xv = input.values();
                           for (std::size_t i = 0; i < gy.size(); ++i) {
                             if (xv[i] > 0.0) dx[i] += gy[i];
                           }
                         });
}

Tensor batchnorm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                 BatchNormState& state, Mode mode) {
  const auto [n, c, h, w] = dims4(input, "batchnorm");
  if (beta.shape() != Shape{c} || (gamma.defined() && gamma.shape() != Shape{c})) {
    fail(ErrorKind::shape, "batchnorm affine parameters must be [" + std::to_string(c) + "]");
  }
  if (state.running_mean.size() != c || state.running_var.size() != c) {
    fail(ErrorKind::shape, "batchnorm running statistics sized for a different channel count");
  }
  const std::size_t area = h * w;
  const std::size_t m = n * area;
  if (mode == Mode::train && m < 2) {
    fail(ErrorKind::degenerate_batch,
         "batchnorm in train mode needs at least 2 values per channel, got " + std::to_string(m));
  }
  const auto x = input.values();
  const auto b = beta.values();
  const auto gm = gamma.defined() ? gamma.values() : std::span<const double>{};
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(c);
  std::vector<double> out(x.size());

  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean = 0.0, var = 0.0;
    if (mode == Mode::train) {
      for (std::size_t s = 0; s < n; ++s) {
        const double* p = x.data() + (s * c + ch) * area;
        for (std::size_t i = 0; i < area; ++i) mean += p[i];
      }
      mean /= static_cast<double>(m);
      for (std::size_t s = 0; s < n; ++s) {
        const double* p = x.data() + (s * c + ch) * area;
        for (std::size_t i = 0; i < area; ++i) var += (p[i] - mean) * (p[i] - mean);
      }
      var /= static_cast<double>(m);
      const double unbiased = var * static_cast<double>(m) / static_cast<double>(m - 1);
      state.running_mean[ch] = state.momentum * state.running_mean[ch] + (1.0 - state.momentum) * mean;
      state.running_var[ch] = state.momentum * state.running_var[ch] + (1.0 - state.momentum) * unbiased;
    } else {
      mean = state.running_mean[ch];
      var = state.running_var[ch];
    }
    inv_std[ch] = 1.0 / std::sqrt(var + state.eps);
    const double scale = gm.empty() ? 1.0 : gm[ch];
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t off = (s * c + ch) * area;
      for (std::size_t i = 0; i < area; ++i) {
        xhat[off + i] = (x[off + i] - mean) * inv_std[ch];
        out[off + i] = scale * xhat[off + i] + b[ch];
      }
    }
  }

  return Tensor::from_op(
      input.shape(), std::move(out), {input, gamma, beta},
      [input, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), mode, n, c,
       area](std::span<const double> gy) mutable {
        const double m = static_cast<double>(n * area);
        const auto gm = gamma.defined() ? gamma.values() : std::span<const double>{};
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t s = 0; s < n; ++s) {
            const std::size_t off = (s * c + ch) * area;
            for (std::size_t i = 0; i < area; ++i) {
              sum_dy += gy[off + i];
              sum_dy_xhat += gy[off + i] * xhat[off + i];
            }
          }
          if (beta.requires_grad()) beta.mutable_grad()[ch] += sum_dy;
          if (gamma.defined() && gamma.requires_grad()) gamma.mutable_grad()[ch] += sum_dy_xhat;
          if (!input.requires_grad()) continue;
          auto dx = input.mutable_grad();
          const double scale = (gm.empty() ? 1.0 : gm[ch]) * inv_std[ch];
          for (std::size_t s = 0; s < n; ++s) {
            const std::size_t off = (s * c + ch) * area;
            for (std::size_t i = 0; i < area; ++i) {
              if (mode == Mode::train) {
                dx[off + i] += scale * (gy[off + i] - sum_dy / m - xhat[off + i] * sum_dy_xhat / m);
              } else {
                dx[off + i] += scale * gy[off + i];
              }
            }
          }
        }
      });
}

Tensor concat_channels(std::span<const Tensor> inputs) {
  if (inputs.empty()) fail(ErrorKind::shape, "concat_channels needs at least one input");
  const auto first = dims4(inputs[0], "concat_channels");
  std::size_t total = 0;
  for (const auto& t : inputs) {
    const auto d = dims4(t, "concat_channels");
    if (d.n != first.n || d.h != first.h || d.w != first.w) {
      fail(ErrorKind::shape, "concat_channels: " + to_string(t.shape()) + " vs " +
                                 to_string(inputs[0].shape()));
    }
    total += d.c;
  }
  const std::size_t area = first.h * first.w;
  std::vector<double> out(first.n * total * area);
  std::size_t offset = 0;
  for (const auto& t : inputs) {
    const std::size_t ci = t.dim(1);
    const auto v = t.values();
    for (std::size_t s = 0; s < first.n; ++s) {
      std::copy_n(v.data() + s * ci * area, ci * area, out.data() + (s * total + offset) * area);
    }
    offset += ci;
  }
  std::vector<Tensor> parents(inputs.begin(), inputs.end());
  return Tensor::from_op({first.n, total, first.h, first.w}, std::move(out), parents,
                         [parents, n = first.n, total, area](std::span<const double> gy) mutable {
                           std::size_t offset = 0;
                           for (auto& t : parents) {
                             const std::size_t ci = t.dim(1);
                             if (t.requires_grad()) {
                               auto dx = t.mutable_grad();
                               for (std::size_t s = 0; s < n; ++s) {
                                 const double* src = gy.data() + (s * total + offset) * area;
                                 double* dst = dx.data() + s * ci * area;
                                 for (std::size_t i = 0; i < ci * area; ++i) dst[i] += src[i];
                               }
                             }
                             offset += ci;
                           }
                         });
}

Tensor slice_channels(const Tensor& input, std::size_t begin, std::size_t end) {
  const auto [n, c, h, w] = dims4(input, "slice_channels");
  if (begin >= end || end > c) {
    fail(ErrorKind::shape, "slice_channels [" + std::to_string(begin) + "," + std::to_string(end) +
                               ") out of range for " + std::to_string(c) + " channels");
  }
  const std::size_t area = h * w;
  const std::size_t k = end - begin;
  const auto v = input.values();
  std::vector<double> out(n * k * area);
  for (std::size_t s = 0; s < n; ++s) {
    std::copy_n(v.data() + (s * c + begin) * area, k * area, out.data() + s * k * area);
  }
  return Tensor::from_op({n, k, h, w}, std::move(out), {input},
                         [input, n, c, begin, k, area](std::span<const double> gy) mutable {
                           auto dx = input.mutable_grad();
                           for (std::size_t s = 0; s < n; ++s) {
                             const double* src = gy.data() + s * k * area;
                             double* dst = dx.data() + (s * c + begin) * area;
                             for (std::size_t i = 0; i < k * area; ++i) dst[i] += src[i];
                           }
                         });
}

Tensor residual_add_scaled(const Tensor& trunk, const Tensor& branch, double scale) {
  require_same_shape(trunk, branch, "residual_add_scaled");
  const auto a = trunk.values();
  const auto b = branch.values();
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + scale * b[i];
  return Tensor::from_op(trunk.shape(), std::move(out), {trunk, branch},
                         [trunk, branch, scale](std::span<const double> gy) mutable {
                           if (trunk.requires_grad()) {
                             auto d = trunk.mutable_grad();
                             for (std::size_t i = 0; i < gy.size(); ++i) d[i] += gy[i];
                           }
                           if (branch.requires_grad()) {
                             auto d = branch.mutable_grad();
                             for (std::size_t i = 0; i < gy.size(); ++i) d[i] += scale * gy[i];
                           }
                         });
}

Tensor linear(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  if (input.rank() != 2 || weights.rank() != 2 || weights.dim(1) != input.dim(1)) {
    fail(ErrorKind::shape, "linear: input " + to_string(input.shape()) + " vs weights " +
                               to_string(weights.shape()));
  }
  const std::size_t n = input.dim(0), f = input.dim(1), k = weights.dim(0);
  if (bias.shape() != Shape{k}) {
    fail(ErrorKind::shape, "linear bias " + to_string(bias.shape()) + ", expected [" +
                               std::to_string(k) + "]");
  }
  std::vector<double> out(n * k);
  MatrixMap y(out.data(), n, k);
  y.noalias() = ConstMatrixMap(input.values().data(), n, f) *
                ConstMatrixMap(weights.values().data(), k, f).transpose();
  const auto b = bias.values();
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t j = 0; j < k; ++j) y(s, j) += b[j];
  }
  return Tensor::from_op(
      {n, k}, std::move(out), {input, weights, bias},
      [input, weights, bias, n, f, k](std::span<const double> gy) mutable {
        ConstMatrixMap dy(gy.data(), n, k);
        if (input.requires_grad()) {
          MatrixMap dx(input.mutable_grad().data(), n, f);
          dx.noalias() += dy * ConstMatrixMap(weights.values().data(), k, f);
        }
        if (weights.requires_grad()) {
          MatrixMap dw(weights.mutable_grad().data(), k, f);
          dw.noalias() += dy.transpose() * ConstMatrixMap(input.values().data(), n, f);
        }
        if (bias.requires_grad()) {
          auto db = bias.mutable_grad();
          for (std::size_t s = 0; s < n; ++s) {
            for (std::size_t j = 0; j < k; ++j) db[j] += dy(s, j);
          }
        }
      });
}

namespace {

std::vector<double> softmax_rows(std::span<const double> z, std::size_t n, std::size_t k) {
  std::vector<double> p(z.size());
  for (std::size_t s = 0; s < n; ++s) {
    const double* row = z.data() + s * k;
    const double mx = *std::max_element(row, row + k);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      p[s * k + j] = std::exp(row[j] - mx);
      total += p[s * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) p[s * k + j] /= total;
  }
  return p;
}

}  // namespace

Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 2) fail(ErrorKind::shape, "softmax expects [N,K]");
  return Tensor(logits.shape(), softmax_rows(logits.values(), logits.dim(0), logits.dim(1)));
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) fail(ErrorKind::shape, "softmax_cross_entropy expects [N,K] logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) {
    fail(ErrorKind::shape, "softmax_cross_entropy: " + std::to_string(labels.size()) +
                               " labels for " + std::to_string(n) + " rows");
  }
  for (std::size_t s = 0; s < n; ++s) {
    if (labels[s] < 0 || static_cast<std::size_t>(labels[s]) >= k) {
      fail(ErrorKind::label, "label " + std::to_string(labels[s]) + " at row " + std::to_string(s) +
                                 " outside [0," + std::to_string(k) + ")");
    }
  }
  const auto z = logits.values();
  double loss = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    const double* row = z.data() + s * k;
    const double mx = *std::max_element(row, row + k);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += std::exp(row[j] - mx);
    loss += mx + std::log(total) - row[labels[s]];
  }
  loss /= static_cast<double>(n);
  std::vector<int> targets(labels.begin(), labels.end());
  return Tensor::from_op({1}, {loss}, {logits},
                         [logits, targets = std::move(targets), n, k](std::span<const double> gy) mutable {
                           auto p = softmax_rows(logits.values(), n, k);
                           auto dz = logits.mutable_grad();
                           const double scale = gy[0] / static_cast<double>(n);
                           for (std::size_t s = 0; s < n; ++s) {
                             p[s * k + static_cast<std::size_t>(targets[s])] -= 1.0;
                             for (std::size_t j = 0; j < k; ++j) dz[s * k + j] += scale * p[s * k + j];
                           }
                         });
}

Tensor dropout(const Tensor& input, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) fail(ErrorKind::config, "dropout rate must be in [0,1)");
  if (rate == 0.0) return input;
  const double keep = 1.0 - rate;
  std::bernoulli_distribution coin(keep);
  const auto x = input.values();
  std::vector<double> mask(x.size());
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask[i] = coin(rng) ? 1.0 / keep : 0.0;
    out[i] = x[i] * mask[i];
  }
  return Tensor::from_op(input.shape(), std::move(out), {input},
                         [input, mask = std::move(mask)](std::span<const double> gy) mutable {
                           auto dx = input.mutable_grad();
                           for (std::size_t i = 0; i < gy.size(); ++i) dx[i] += gy[i] * mask[i];
                         });
}

Tensor add(const Tensor& a, const Tensor& b) { return residual_add_scaled(a, b, 1.0); }

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto x = a.values();
  const auto y = b.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return Tensor::from_op(a.shape(), std::move(out), {a, b},
                         [a, b](std::span<const double> gy) mutable {
                           if (a.requires_grad()) {
                             auto d = a.mutable_grad();
                             const auto yv = b.values();
                             for (std::size_t i = 0; i < gy.size(); ++i) d[i] += gy[i] * yv[i];
                           }
                           if (b.requires_grad()) {
                             auto d = b.mutable_grad();
                             const auto xv = a.values();
                             for (std::size_t i = 0; i < gy.size(); ++i) d[i] += gy[i] * xv[i];
                           }
                         });
}

Tensor sum(const Tensor& input) {
  double acc = 0.0;
  for (double v : input.values()) acc += v;
  return Tensor::from_op({1}, {acc}, {input}, [input](std::span<const double> gy) mutable {
    auto dx = input.mutable_grad();
    for (double& d : dx) d += gy[0];
  });
}

}  // namespace kiln
