#include "qfit/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

namespace qfit::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

void require_same_shape(const Tensor& x, const Tensor& y, const char* op) {
  if (x.shape() != y.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(x.shape()) + " vs " +
                     shape_string(y.shape()));
  }
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(x.shape()));
  }
}

// Accumulate a parent's gradient only when it participates in differentiation.
inline std::vector<double>* grad_of(detail::Node& self, std::size_t i) {
  detail::Node& parent = *self.parents[i];
  return parent.requires_grad ? &parent.grad : nullptr;
}

template <typename Forward, typename Derivative>
Tensor unary(const char* op, const Tensor& x, Forward f, Derivative df) {
  const auto in = x.values();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return Tensor::from_op(op, x.shape(), std::move(out), {x}, [df](detail::Node& self) {
    auto* gx = grad_of(self, 0);
    if (!gx) return;
    const auto& xv = self.parents[0]->value;
    for (std::size_t i = 0; i < xv.size(); ++i) (*gx)[i] += self.grad[i] * df(xv[i], self.value[i]);
  });
}

}  // namespace

Tensor add(const Tensor& x, const Tensor& y) {
  require_same_shape(x, y, "add");
  const auto a = x.values();
  const auto b = y.values();
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return Tensor::from_op("add", x.shape(), std::move(out), {x, y}, [](detail::Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (auto* g = grad_of(self, p)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& x, const Tensor& y) {
  require_same_shape(x, y, "sub");
  const auto a = x.values();
  const auto b = y.values();
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return Tensor::from_op("sub", x.shape(), std::move(out), {x, y}, [](detail::Node& self) {
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    }
    if (auto* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& x, const Tensor& y) {
  require_same_shape(x, y, "mul");
  const auto a = x.values();
  const auto b = y.values();
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return Tensor::from_op("mul", x.shape(), std::move(out), {x, y}, [](detail::Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    }
    if (auto* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * av[i];
    }
  });
}

Tensor div(const Tensor& x, const Tensor& y) {
  require_same_shape(x, y, "div");
  const auto a = x.values();
  const auto b = y.values();
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] / b[i];
  return Tensor::from_op("div", x.shape(), std::move(out), {x, y}, [](detail::Node& self) {
    const auto& bv = self.parents[1]->value;
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] / bv[i];
    }
    if (auto* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        (*g)[i] -= self.grad[i] * self.value[i] / bv[i];
      }
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  return unary("scale", x, [factor](double v) { return factor * v; },
               [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double offset) {
  return unary("add_scalar", x, [offset](double v) { return v + offset; },
               [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& x) {
  return unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor square(const Tensor& x) {
  return unary("square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor reciprocal(const Tensor& x) {
  return unary("reciprocal", x, [](double v) { return 1.0 / v; },
               [](double, double y) { return -y * y; });
}

Tensor relu(const Tensor& x) {
  return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor softplus(const Tensor& x) {
  return unary(
      "softplus", x, [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
      [](double v, double) {
        return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x,
      [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimension mismatch " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  std::vector<double> out(m * n);
  MatrixMap(out.data(), m, n).noalias() =
      ConstMatrixMap(a.values().data(), m, k) * ConstMatrixMap(b.values().data(), k, n);
  return Tensor::from_op("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    ConstMatrixMap dout(self.grad.data(), m, n);
    if (auto* g = grad_of(self, 0)) {
      MatrixMap(g->data(), m, k).noalias() +=
          dout * ConstMatrixMap(self.parents[1]->value.data(), k, n).transpose();
    }
    if (auto* g = grad_of(self, 1)) {
      MatrixMap(g->data(), k, n).noalias() +=
          ConstMatrixMap(self.parents[0]->value.data(), m, k).transpose() * dout;
    }
  });
}

Tensor reduce_sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return Tensor::from_op("reduce_sum", {1}, {s}, {x}, [](detail::Node& self) {
    if (auto* g = grad_of(self, 0)) {
      for (double& gi : *g) gi += self.grad[0];
    }
  });
}

Tensor reduce_mean(const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  double s = 0.0;
  for (double v : x.values()) s += v;
  return Tensor::from_op("reduce_mean", {1}, {s / n}, {x}, [n](detail::Node& self) {
    if (auto* g = grad_of(self, 0)) {
      const double d = self.grad[0] / n;
      for (double& gi : *g) gi += d;
    }
  });
}

Tensor reduce_abs_mean(const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  double s = 0.0;
  for (double v : x.values()) s += std::abs(v);
  return Tensor::from_op("reduce_abs_mean", {1}, {s / n}, {x}, [n](detail::Node& self) {
    if (auto* g = grad_of(self, 0)) {
      const double d = self.grad[0] / n;
      const auto& xv = self.parents[0]->value;
      for (std::size_t i = 0; i < xv.size(); ++i) {
        if (xv[i] > 0.0) {
          (*g)[i] += d;
        } else if (xv[i] < 0.0) {
          (*g)[i] -= d;
        }
      }
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d");
  require_rank(bias, 1, "conv2d");
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != cin) {
    throw ShapeError("conv2d: input has " + std::to_string(cin) + " channels, weight expects " +
                     std::to_string(weight.dim(1)));
  }
  if (weight.dim(3) != k) throw ShapeError("conv2d: kernel must be square");
  if (k % 2 == 0) throw ShapeError("conv2d: kernel size must be odd, got " + std::to_string(k));
  if (bias.dim(0) != cout) throw ShapeError("conv2d: bias length does not match output channels");

  const std::size_t pad = k / 2;
  const std::size_t plane = h * w;
  const std::size_t rows = cin * k * k;
  const auto xv = x.values();

  // im2col buffers are kept for the weight gradient.
  auto cols = std::make_shared<std::vector<double>>(batch * rows * plane, 0.0);
  for (std::size_t n = 0; n < batch; ++n) {
    double* col = cols->data() + n * rows * plane;
    for (std::size_t c = 0; c < cin; ++c) {
      const double* src = xv.data() + (n * cin + c) * plane;
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          double* dst = col + ((c * k + ky) * k + kx) * plane;
          for (std::size_t y = 0; y < h; ++y) {
            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(pad);
            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
            const std::size_t x0 = kx < pad ? pad - kx : 0;
            const std::size_t x1 = std::min(w, w + pad - kx);
            for (std::size_t xx = x0; xx < x1; ++xx) dst[y * w + xx] = src[sy * w + xx + kx - pad];
          }
        }
      }
    }
  }

  std::vector<double> out(batch * cout * plane);
  ConstMatrixMap wmat(weight.values().data(), cout, rows);
  const auto bv = bias.values();
  for (std::size_t n = 0; n < batch; ++n) {
    MatrixMap o(out.data() + n * cout * plane, cout, plane);
    o.noalias() = wmat * ConstMatrixMap(cols->data() + n * rows * plane, rows, plane);
    for (std::size_t c = 0; c < cout; ++c) o.row(c).array() += bv[c];
  }

  return Tensor::from_op(
      "conv2d", {batch, cout, h, w}, std::move(out), {x, weight, bias},
      [=](detail::Node& self) {
        const auto& wv = self.parents[1]->value;
        ConstMatrixMap wm(wv.data(), cout, rows);
        auto* gx = grad_of(self, 0);
        auto* gw = grad_of(self, 1);
        auto* gb = grad_of(self, 2);
        std::vector<double> dcol(gx ? rows * plane : 0);
        for (std::size_t n = 0; n < batch; ++n) {
          ConstMatrixMap dout(self.grad.data() + n * cout * plane, cout, plane);
          const double* col = cols->data() + n * rows * plane;
          if (gw) MatrixMap(gw->data(), cout, rows).noalias() += dout * ConstMatrixMap(col, rows, plane).transpose();
          if (gb) {
            // Plain loop: Eigen's vectorized sum peels by address, which breaks run-to-run determinism.
            for (std::size_t c = 0; c < cout; ++c) {
              const double* row = self.grad.data() + (n * cout + c) * plane;
              double acc = 0.0;
              for (std::size_t i = 0; i < plane; ++i) acc += row[i];
              (*gb)[c] += acc;
            }
          }
          if (gx) {
            MatrixMap(dcol.data(), rows, plane).noalias() = wm.transpose() * dout;
            for (std::size_t c = 0; c < cin; ++c) {
              double* dst = gx->data() + (n * cin + c) * plane;
              for (std::size_t ky = 0; ky < k; ++ky) {
                for (std::size_t kx = 0; kx < k; ++kx) {
                  const double* src = dcol.data() + ((c * k + ky) * k + kx) * plane;
                  for (std::size_t y = 0; y < h; ++y) {
                    const std::ptrdiff_t sy =
                        static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(pad);
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
                    const std::size_t x0 = kx < pad ? pad - kx : 0;
                    const std::size_t x1 = std::min(w, w + pad - kx);
                    for (std::size_t xx = x0; xx < x1; ++xx) dst[sy * w + xx + kx - pad] += src[y * w + xx];
                  }
                }
              }
            }
          }
        }
      });
}

Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank(x, 4, "instance_norm");
  const std::size_t batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (plane < 2) throw ShapeError("instance_norm: planes need at least 2 elements");
  if (gamma.shape() != Shape{channels} || beta.shape() != Shape{channels}) {
    throw ShapeError("instance_norm: gamma/beta must have shape (" + std::to_string(channels) + ")");
  }
  if (!(eps > 0.0)) throw std::invalid_argument("instance_norm: eps must be positive");

  const auto xv = x.values();
  const auto gv = gamma.values();
  const auto betav = beta.values();
  auto normalized = std::make_shared<std::vector<double>>(xv.size());
  auto inv_std = std::make_shared<std::vector<double>>(batch * channels);
  std::vector<double> out(xv.size());
  const double count = static_cast<double>(plane);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (n * channels + c) * plane;
      double mean = 0.0;
      for (std::size_t i = 0; i < plane; ++i) mean += xv[base + i];
      mean /= count;
      double var = 0.0;
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = xv[base + i] - mean;
        var += d * d;
      }
      var /= count;
      const double is = 1.0 / std::sqrt(var + eps);
      (*inv_std)[n * channels + c] = is;
      for (std::size_t i = 0; i < plane; ++i) {
        const double xh = (xv[base + i] - mean) * is;
        (*normalized)[base + i] = xh;
        out[base + i] = gv[c] * xh + betav[c];
      }
    }
  }

  return Tensor::from_op(
      "instance_norm", x.shape(), std::move(out), {x, gamma, beta}, [=](detail::Node& self) {
        auto* gx = grad_of(self, 0);
        auto* gg = grad_of(self, 1);
        auto* gb = grad_of(self, 2);
        const auto& gam = self.parents[1]->value;
        for (std::size_t n = 0; n < batch; ++n) {
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t base = (n * channels + c) * plane;
            double sum_dy = 0.0, sum_dy_xh = 0.0;
            for (std::size_t i = 0; i < plane; ++i) {
              sum_dy += self.grad[base + i];
              sum_dy_xh += self.grad[base + i] * (*normalized)[base + i];
            }
            if (gg) (*gg)[c] += sum_dy_xh;
            if (gb) (*gb)[c] += sum_dy;
            if (gx) {
              const double scale_c = gam[c] * (*inv_std)[n * channels + c] / count;
              for (std::size_t i = 0; i < plane; ++i) {
                (*gx)[base + i] += scale_c * (count * self.grad[base + i] - sum_dy -
                                              (*normalized)[base + i] * sum_dy_xh);
              }
            }
          }
        }
      });
}

Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count) {
  require_rank(x, 4, "slice_channels");
  const std::size_t batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (count == 0 || begin + count > channels) {
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside " + std::to_string(channels) +
                     " channels");
  }
  const auto xv = x.values();
  std::vector<double> out(batch * count * plane);
  for (std::size_t n = 0; n < batch; ++n) {
    std::copy_n(xv.data() + (n * channels + begin) * plane, count * plane,
                out.data() + n * count * plane);
  }
  return Tensor::from_op("slice_channels", {batch, count, x.dim(2), x.dim(3)}, std::move(out), {x},
                         [=](detail::Node& self) {
                           auto* g = grad_of(self, 0);
                           if (!g) return;
                           for (std::size_t n = 0; n < batch; ++n) {
                             const double* src = self.grad.data() + n * count * plane;
                             double* dst = g->data() + (n * channels + begin) * plane;
                             for (std::size_t i = 0; i < count * plane; ++i) dst[i] += src[i];
                           }
                         });
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  for (const Tensor& p : parts) require_rank(p, 4, "concat_channels");
  const std::size_t batch = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
  const std::size_t plane = h * w;
  std::vector<std::size_t> offsets;
  std::size_t channels = 0;
  for (const Tensor& p : parts) {
    if (p.dim(0) != batch || p.dim(2) != h || p.dim(3) != w) {
      throw ShapeError("concat_channels: incompatible " + shape_string(p.shape()) + " and " +
                       shape_string(parts[0].shape()));
    }
    offsets.push_back(channels);
    channels += p.dim(1);
  }
  std::vector<double> out(batch * channels * plane);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const std::size_t c = parts[i].dim(1);
    const auto pv = parts[i].values();
    for (std::size_t n = 0; n < batch; ++n) {
      std::copy_n(pv.data() + n * c * plane, c * plane,
                  out.data() + (n * channels + offsets[i]) * plane);
    }
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return Tensor::from_op("concat_channels", {batch, channels, h, w}, std::move(out), std::move(parents),
                         [=](detail::Node& self) {
                           for (std::size_t i = 0; i < self.parents.size(); ++i) {
                             auto* g = grad_of(self, i);
                             if (!g) continue;
                             const std::size_t c = self.parents[i]->shape[1];
                             for (std::size_t n = 0; n < batch; ++n) {
                               const double* src =
                                   self.grad.data() + (n * channels + offsets[i]) * plane;
                               double* dst = g->data() + n * c * plane;
                               for (std::size_t j = 0; j < c * plane; ++j) dst[j] += src[j];
                             }
                           }
                         });
}

Tensor filter_valid(const Tensor& x, std::span<const double> window, std::size_t k) {
  require_rank(x, 4, "filter_valid");
  if (window.size() != k * k) throw ShapeError("filter_valid: window must hold k*k weights");
  const std::size_t batch = x.dim(0), channels = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h < k || w < k) {
    throw ShapeError("filter_valid: image " + shape_string(x.shape()) + " smaller than window " +
                     std::to_string(k));
  }
  const std::size_t oh = h - k + 1, ow = w - k + 1;
  std::vector<double> win(window.begin(), window.end());
  const auto xv = x.values();
  std::vector<double> out(batch * channels * oh * ow, 0.0);
  for (std::size_t p = 0; p < batch * channels; ++p) {
    const double* src = xv.data() + p * h * w;
    double* dst = out.data() + p * oh * ow;
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const double wij = win[i * k + j];
        for (std::size_t y = 0; y < oh; ++y) {
          const double* row = src + (y + i) * w + j;
          double* orow = dst + y * ow;
          for (std::size_t xx = 0; xx < ow; ++xx) orow[xx] += wij * row[xx];
        }
      }
    }
  }
  return Tensor::from_op("filter_valid", {batch, channels, oh, ow}, std::move(out), {x},
                         [=](detail::Node& self) {
                           auto* g = grad_of(self, 0);
                           if (!g) return;
                           for (std::size_t p = 0; p < batch * channels; ++p) {
                             const double* dout = self.grad.data() + p * oh * ow;
                             double* dst = g->data() + p * h * w;
                             for (std::size_t i = 0; i < k; ++i) {
                               for (std::size_t j = 0; j < k; ++j) {
                                 const double wij = win[i * k + j];
                                 for (std::size_t y = 0; y < oh; ++y) {
                                   double* row = dst + (y + i) * w + j;
                                   const double* drow = dout + y * ow;
                                   for (std::size_t xx = 0; xx < ow; ++xx) row[xx] += wij * drow[xx];
                                 }
                               }
                             }
                           }
                         });
}

Tensor channels_to_rows(const Tensor& x) {
  require_rank(x, 4, "channels_to_rows");
  if (x.dim(0) != 1) throw ShapeError("channels_to_rows: batch size must be 1");
  const std::size_t channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  const auto xv = x.values();
  std::vector<double> out(plane * channels);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < plane; ++i) out[i * channels + c] = xv[c * plane + i];
  }
  return Tensor::from_op("channels_to_rows", {plane, channels}, std::move(out), {x},
                         [=](detail::Node& self) {
                           auto* g = grad_of(self, 0);
                           if (!g) return;
                           for (std::size_t c = 0; c < channels; ++c) {
                             for (std::size_t i = 0; i < plane; ++i) {
                               (*g)[c * plane + i] += self.grad[i * channels + c];
                             }
                           }
                         });
}

}  // namespace qfit::ad
