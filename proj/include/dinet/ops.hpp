#pragma once

#include <Eigen/Core>

#include <cmath>
#include <span>
#include <vector>

#include "dinet/autograd.hpp"

namespace dinet::ops {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

namespace detail {

template <class Fwd, class Deriv>
Var unary(const Var& a, Fwd f, Deriv df) {
  Tensor out(a.shape());
  const Tensor& av = a.value();
  for (int64_t i = 0; i < av.numel(); ++i) out[i] = f(av[i]);
  return make_op(std::move(out), {a}, [df](Node& self) {
    const Tensor& x = self.parents[0]->value;
    Tensor g(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) g[i] = self.grad[i] * df(x[i], self.value[i]);
    accumulate_into(self, 0, g);
  });
}

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

using detail::sigmoid;
using detail::softplus;

inline Var add(const Var& a, const Var& b) {
  a.value().require_same_shape(b.value(), "add");
  Tensor out = a.value();
  out += b.value();
  return make_op(std::move(out), {a, b}, [](Node& self) {
    accumulate_into(self, 0, self.grad);
    accumulate_into(self, 1, self.grad);
  });
}

inline Var sub(const Var& a, const Var& b) {
  a.value().require_same_shape(b.value(), "sub");
  Tensor out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    accumulate_into(self, 0, self.grad);
    if (parent_needs_grad(self, 1)) {
      Tensor g = self.grad;
      for (auto& v : g.vec()) v = -v;
      accumulate_into(self, 1, g);
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  a.value().require_same_shape(b.value(), "mul");
  Tensor out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = self.parents[0]->value;
    const Tensor& bv = self.parents[1]->value;
    if (parent_needs_grad(self, 0)) {
      Tensor g(av.shape());
      for (int64_t i = 0; i < g.numel(); ++i) g[i] = self.grad[i] * bv[i];
      accumulate_into(self, 0, g);
    }
    if (parent_needs_grad(self, 1)) {
      Tensor g(bv.shape());
      for (int64_t i = 0; i < g.numel(); ++i) g[i] = self.grad[i] * av[i];
      accumulate_into(self, 1, g);
    }
  });
}

inline Var scale(const Var& a, double k) {
  return detail::unary(a, [k](double x) { return k * x; }, [k](double, double) { return k; });
}

inline Var add_scalar(const Var& a, double k) {
  return detail::unary(a, [k](double x) { return x + k; }, [](double, double) { return 1.0; });
}

inline Var square(const Var& a) {
  return detail::unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Var abs(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

inline Var leaky_relu(const Var& a, double slope = 0.2) {
  return detail::unary(
      a, [slope](double x) { return x > 0 ? x : slope * x; },
      [slope](double x, double) { return x > 0 ? 1.0 : slope; });
}

inline Var relu(const Var& a) { return leaky_relu(a, 0.0); }

inline Var sigmoid(const Var& a) {
  return detail::unary(a, [](double x) { return detail::sigmoid(x); },
                       [](double, double y) { return y * (1.0 - y); });
}

inline Var softplus(const Var& a) {
  return detail::unary(a, [](double x) { return detail::softplus(x); },
                       [](double x, double) { return detail::sigmoid(x); });
}

inline Var sum(const Var& a) {
  Tensor out({1}, a.value().sum());
  return make_op(std::move(out), {a}, [](Node& self) {
    accumulate_into(self, 0, Tensor(self.parents[0]->value.shape(), self.grad[0]));
  });
}

inline Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().numel());
  if (n == 0) throw ContractViolation("mean of empty tensor");
  Tensor out({1}, a.value().sum() / n);
  return make_op(std::move(out), {a}, [n](Node& self) {
    accumulate_into(self, 0, Tensor(self.parents[0]->value.shape(), self.grad[0] / n));
  });
}

/// Sum of scalar Vars.
inline Var add_all(std::span<const Var> terms) {
  if (terms.empty()) return Var(Tensor({1}, 0.0));
  Var acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return acc;
}

inline Var reshape(const Var& a, Shape s) {
  return make_op(a.value().reshaped(std::move(s)), {a}, [](Node& self) {
    accumulate_into(self, 0, self.grad.reshaped(self.parents[0]->value.shape()));
  });
}

inline Var concat_channels(const std::vector<Var>& parts) {
  std::vector<Tensor> vals;
  vals.reserve(parts.size());
  for (const auto& p : parts) vals.push_back(p.value());
  Tensor out = dinet::concat_channels(vals);
  return make_op(std::move(out), parts, [](Node& self) {
    int64_t c0 = 0;
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      const int64_t c = self.parents[i]->value.dim(0);
      if (parent_needs_grad(self, i)) accumulate_into(self, i, dinet::channel_slice(self.grad, c0, c));
      c0 += c;
    }
  });
}

inline Var channel_slice(const Var& a, int64_t c0, int64_t n) {
  return make_op(dinet::channel_slice(a.value(), c0, n), {a}, [c0, n](Node& self) {
    const Tensor& x = self.parents[0]->value;
    Tensor g = Tensor::zeros_like(x);
    const int64_t plane = x.dim(1) * x.dim(2);
    std::copy_n(self.grad.data(), n * plane, g.data() + c0 * plane);
    accumulate_into(self, 0, g);
  });
}

inline Var crop_region(const Var& a, int64_t y0, int64_t x0, int64_t h, int64_t w) {
  return make_op(dinet::crop_region(a.value(), y0, x0, h, w), {a}, [y0, x0, h, w](Node& self) {
    const Tensor& x = self.parents[0]->value;
    Tensor g = Tensor::zeros_like(x);
    for (int64_t c = 0; c < x.dim(0); ++c)
      for (int64_t y = 0; y < h; ++y)
        for (int64_t xx = 0; xx < w; ++xx) g.at(c, y0 + y, x0 + xx) = self.grad.at(c, y, xx);
    accumulate_into(self, 0, g);
  });
}

/// y = W x + b for a rank-1 x; W is (out, in).
inline Var linear(const Var& x, const Var& weight, const Var& bias) {
  const int64_t out_f = weight.dim(0), in_f = weight.dim(1);
  if (x.value().rank() != 1 || x.dim(0) != in_f || bias.dim(0) != out_f)
    throw ContractViolation("linear: expected input of length " + std::to_string(in_f) + ", got " +
                            to_string(x.shape()));
  Tensor out({out_f});
  ConstMatMap w(weight.value().data(), out_f, in_f);
  Eigen::Map<const Eigen::VectorXd> xv(x.value().data(), in_f);
  Eigen::Map<const Eigen::VectorXd> bv(bias.value().data(), out_f);
  Eigen::Map<Eigen::VectorXd>(out.data(), out_f) = w * xv + bv;
  return make_op(std::move(out), {x, weight, bias}, [out_f, in_f](Node& self) {
    Eigen::Map<const Eigen::VectorXd> g(self.grad.data(), out_f);
    if (parent_needs_grad(self, 0)) {
      Tensor gx({in_f});
      ConstMatMap w(self.parents[1]->value.data(), out_f, in_f);
      Eigen::Map<Eigen::VectorXd>(gx.data(), in_f) = w.transpose() * g;
      accumulate_into(self, 0, gx);
    }
    if (parent_needs_grad(self, 1)) {
      Tensor gw({out_f, in_f});
      Eigen::Map<const Eigen::VectorXd> xv(self.parents[0]->value.data(), in_f);
      MatMap(gw.data(), out_f, in_f) = g * xv.transpose();
      accumulate_into(self, 1, gw);
    }
    accumulate_into(self, 2, self.grad);
  });
}

struct Conv2dOptions {
  int64_t stride = 1;
  int64_t pad_h = 0;
  int64_t pad_w = 0;
};

namespace detail {

struct ConvGeometry {
  int64_t cin, h, w, cout, kh, kw, stride, pad_h, pad_w, ho, wo;
  int64_t k() const { return cin * kh * kw; }
  int64_t p() const { return ho * wo; }
};

inline void im2col(const double* x, const ConvGeometry& g, double* cols) {
  for (int64_t c = 0; c < g.cin; ++c)
    for (int64_t ky = 0; ky < g.kh; ++ky)
      for (int64_t kx = 0; kx < g.kw; ++kx) {
        double* row = cols + ((c * g.kh + ky) * g.kw + kx) * g.p();
        for (int64_t oy = 0; oy < g.ho; ++oy) {
          const int64_t iy = oy * g.stride - g.pad_h + ky;
          double* dst = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill_n(dst, g.wo, 0.0);
            continue;
          }
          const double* src = x + (c * g.h + iy) * g.w;
          for (int64_t ox = 0; ox < g.wo; ++ox) {
            const int64_t ix = ox * g.stride - g.pad_w + kx;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
          }
        }
      }
}

inline void col2im(const double* cols, const ConvGeometry& g, double* x) {
  for (int64_t c = 0; c < g.cin; ++c)
    for (int64_t ky = 0; ky < g.kh; ++ky)
      for (int64_t kx = 0; kx < g.kw; ++kx) {
        const double* row = cols + ((c * g.kh + ky) * g.kw + kx) * g.p();
        for (int64_t oy = 0; oy < g.ho; ++oy) {
          const int64_t iy = oy * g.stride - g.pad_h + ky;
          if (iy < 0 || iy >= g.h) continue;
          const double* src = row + oy * g.wo;
          double* dst = x + (c * g.h + iy) * g.w;
          for (int64_t ox = 0; ox < g.wo; ++ox) {
            const int64_t ix = ox * g.stride - g.pad_w + kx;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
}

}  // namespace detail

/// 2-D convolution of a (Cin, H, W) map with a (Cout, Cin, kh, kw) kernel.
inline Var conv2d(const Var& x, const Var& weight, const Var& bias, Conv2dOptions opt = {}) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  if (xv.rank() != 3 || wv.rank() != 4 || wv.dim(1) != xv.dim(0))
    throw ContractViolation("conv2d: input " + to_string(xv.shape()) + " incompatible with kernel " +
                            to_string(wv.shape()));
  detail::ConvGeometry g{xv.dim(0), xv.dim(1), xv.dim(2), wv.dim(0), wv.dim(2), wv.dim(3), opt.stride,
                         opt.pad_h, opt.pad_w, 0, 0};
  g.ho = (g.h + 2 * g.pad_h - g.kh) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad_w - g.kw) / g.stride + 1;
  if (g.ho <= 0 || g.wo <= 0) throw ContractViolation("conv2d: input too small for kernel");

  Storage cols(static_cast<std::size_t>(g.k() * g.p()));
  detail::im2col(xv.data(), g, cols.data());
  Tensor out({g.cout, g.ho, g.wo});
  MatMap o(out.data(), g.cout, g.p());
  o.noalias() = ConstMatMap(wv.data(), g.cout, g.k()) * ConstMatMap(cols.data(), g.k(), g.p());
  o.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.value().data(), g.cout);

  if (!grad_enabled() || !(x.requires_grad() || weight.requires_grad() || bias.requires_grad()))
    return Var(std::move(out));
  // Cols are only needed for the weight gradient.
  if (!weight.requires_grad()) cols = {};
  return make_op(std::move(out), {x, weight, bias}, [g, cols = std::move(cols)](Node& self) {
    ConstMatMap gout(self.grad.data(), g.cout, g.p());
    if (parent_needs_grad(self, 0)) {
      Storage gcols(static_cast<std::size_t>(g.k() * g.p()));
      MatMap(gcols.data(), g.k(), g.p()).noalias() =
          ConstMatMap(self.parents[1]->value.data(), g.cout, g.k()).transpose() * gout;
      Tensor gx({g.cin, g.h, g.w});
      detail::col2im(gcols.data(), g, gx.data());
      accumulate_into(self, 0, gx);
    }
    if (parent_needs_grad(self, 1)) {
      Tensor gw({g.cout, g.cin, g.kh, g.kw});
      MatMap(gw.data(), g.cout, g.k()).noalias() = gout * ConstMatMap(cols.data(), g.k(), g.p()).transpose();
      accumulate_into(self, 1, gw);
    }
    if (parent_needs_grad(self, 2)) {
      Tensor gb({g.cout});
      Eigen::Map<Eigen::VectorXd>(gb.data(), g.cout) = gout.rowwise().sum();
      accumulate_into(self, 2, gb);
    }
  });
}

/// 2x2 average pooling; H and W must be even.
inline Var avg_pool2(const Var& a) {
  const Tensor& x = a.value();
  if (x.rank() != 3 || x.dim(1) % 2 || x.dim(2) % 2)
    throw ContractViolation("avg_pool2: needs even spatial dims, got " + to_string(x.shape()));
  const int64_t c = x.dim(0), h = x.dim(1) / 2, w = x.dim(2) / 2;
  Tensor out({c, h, w});
  for (int64_t k = 0; k < c; ++k)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t xx = 0; xx < w; ++xx)
        out.at(k, y, xx) = 0.25 * (x.at(k, 2 * y, 2 * xx) + x.at(k, 2 * y, 2 * xx + 1) +
                                   x.at(k, 2 * y + 1, 2 * xx) + x.at(k, 2 * y + 1, 2 * xx + 1));
  return make_op(std::move(out), {a}, [](Node& self) {
    Tensor g = Tensor::zeros_like(self.parents[0]->value);
    for (int64_t k = 0; k < self.grad.dim(0); ++k)
      for (int64_t y = 0; y < self.grad.dim(1); ++y)
        for (int64_t xx = 0; xx < self.grad.dim(2); ++xx) {
          const double v = 0.25 * self.grad.at(k, y, xx);
          g.at(k, 2 * y, 2 * xx) = v;
          g.at(k, 2 * y, 2 * xx + 1) = v;
          g.at(k, 2 * y + 1, 2 * xx) = v;
          g.at(k, 2 * y + 1, 2 * xx + 1) = v;
        }
    accumulate_into(self, 0, g);
  });
}

inline Var upsample_nearest2(const Var& a) {
  const Tensor& x = a.value();
  if (x.rank() != 3) throw ContractViolation("upsample_nearest2: rank-3 input required");
  const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor out({c, 2 * h, 2 * w});
  for (int64_t k = 0; k < c; ++k)
    for (int64_t y = 0; y < 2 * h; ++y)
      for (int64_t xx = 0; xx < 2 * w; ++xx) out.at(k, y, xx) = x.at(k, y / 2, xx / 2);
  return make_op(std::move(out), {a}, [](Node& self) {
    Tensor g = Tensor::zeros_like(self.parents[0]->value);
    for (int64_t k = 0; k < self.grad.dim(0); ++k)
      for (int64_t y = 0; y < self.grad.dim(1); ++y)
        for (int64_t xx = 0; xx < self.grad.dim(2); ++xx) g.at(k, y / 2, xx / 2) += self.grad.at(k, y, xx);
    accumulate_into(self, 0, g);
  });
}

/// (C, H, W) -> (C)
inline Var global_avg_pool(const Var& a) {
  const Tensor& x = a.value();
  if (x.rank() != 3) throw ContractViolation("global_avg_pool: rank-3 input required");
  const int64_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
  Tensor out({c});
  for (int64_t k = 0; k < c; ++k) {
    double s = 0;
    for (int64_t i = 0; i < plane; ++i) s += x[k * plane + i];
    out[k] = s / static_cast<double>(plane);
  }
  return make_op(std::move(out), {a}, [c, plane](Node& self) {
    Tensor g = Tensor::zeros_like(self.parents[0]->value);
    for (int64_t k = 0; k < c; ++k)
      std::fill_n(g.data() + k * plane, plane, self.grad[k] / static_cast<double>(plane));
    accumulate_into(self, 0, g);
  });
}

/// Cosine similarity of two rank-1 vectors, with `eps` guarding zero norms.
inline Var cosine_similarity(const Var& a, const Var& b, double eps = 1e-8) {
  a.value().require_same_shape(b.value(), "cosine_similarity");
  const auto& av = a.value().vec();
  const auto& bv = b.value().vec();
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    dot += av[i] * bv[i];
    na += av[i] * av[i];
    nb += bv[i] * bv[i];
  }
  const double la = std::max(std::sqrt(na), eps), lb = std::max(std::sqrt(nb), eps);
  const double cs = dot / (la * lb);
  return make_op(Tensor({1}, cs), {a, b}, [la, lb, cs](Node& self) {
    const Tensor& x = self.parents[0]->value;
    const Tensor& y = self.parents[1]->value;
    const double g = self.grad[0];
    if (parent_needs_grad(self, 0)) {
      Tensor ga(x.shape());
      for (int64_t i = 0; i < x.numel(); ++i) ga[i] = g * (y[i] / (la * lb) - cs * x[i] / (la * la));
      accumulate_into(self, 0, ga);
    }
    if (parent_needs_grad(self, 1)) {
      Tensor gb(y.shape());
      for (int64_t i = 0; i < y.numel(); ++i) gb[i] = g * (x[i] / (la * lb) - cs * y[i] / (lb * lb));
      accumulate_into(self, 1, gb);
    }
  });
}

/// Bilinear sample of channel c at pixel-index position (fy, fx); positions
/// outside the image are clamped to the border.
inline double sample_clamped(const Tensor& img, int64_t c, double fy, double fx) {
  const int64_t h = img.dim(1), w = img.dim(2);
  fy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
  fx = std::clamp(fx, 0.0, static_cast<double>(w - 1));
  const int64_t y0 = static_cast<int64_t>(std::floor(fy)), x0 = static_cast<int64_t>(std::floor(fx));
  const int64_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double wy = fy - static_cast<double>(y0), wx = fx - static_cast<double>(x0);
  return (1 - wy) * ((1 - wx) * img.at(c, y0, x0) + wx * img.at(c, y0, x1)) +
         wy * ((1 - wx) * img.at(c, y1, x0) + wx * img.at(c, y1, x1));
}

/// Resize with pixel-centre alignment and border clamp. Differentiable in `a`.
inline Var resize_bilinear(const Var& a, int64_t out_h, int64_t out_w) {
  const Tensor& x = a.value();
  if (x.rank() != 3 || out_h < 1 || out_w < 1) throw ContractViolation("resize_bilinear: bad shape");
  const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  struct Tap {
    int64_t i0, i1;
    double w1;
  };
  auto taps = [](int64_t in, int64_t out) {
    std::vector<Tap> t(static_cast<std::size_t>(out));
    const double r = static_cast<double>(in) / static_cast<double>(out);
    for (int64_t o = 0; o < out; ++o) {
      double f = std::clamp((static_cast<double>(o) + 0.5) * r - 0.5, 0.0, static_cast<double>(in - 1));
      const int64_t i0 = static_cast<int64_t>(std::floor(f));
      t[static_cast<std::size_t>(o)] = {i0, std::min(i0 + 1, in - 1), f - static_cast<double>(i0)};
    }
    return t;
  };
  auto ty = taps(h, out_h), tx = taps(w, out_w);
  Tensor out({c, out_h, out_w});
  for (int64_t k = 0; k < c; ++k)
    for (int64_t y = 0; y < out_h; ++y) {
      const Tap& a_ = ty[static_cast<std::size_t>(y)];
      for (int64_t xx = 0; xx < out_w; ++xx) {
        const Tap& b_ = tx[static_cast<std::size_t>(xx)];
        out.at(k, y, xx) = (1 - a_.w1) * ((1 - b_.w1) * x.at(k, a_.i0, b_.i0) + b_.w1 * x.at(k, a_.i0, b_.i1)) +
                           a_.w1 * ((1 - b_.w1) * x.at(k, a_.i1, b_.i0) + b_.w1 * x.at(k, a_.i1, b_.i1));
      }
    }
  return make_op(std::move(out), {a}, [ty, tx](Node& self) {
    Tensor g = Tensor::zeros_like(self.parents[0]->value);
    for (int64_t k = 0; k < self.grad.dim(0); ++k)
      for (int64_t y = 0; y < self.grad.dim(1); ++y) {
        const Tap& a_ = ty[static_cast<std::size_t>(y)];
        for (int64_t xx = 0; xx < self.grad.dim(2); ++xx) {
          const Tap& b_ = tx[static_cast<std::size_t>(xx)];
          const double v = self.grad.at(k, y, xx);
          g.at(k, a_.i0, b_.i0) += (1 - a_.w1) * (1 - b_.w1) * v;
          g.at(k, a_.i0, b_.i1) += (1 - a_.w1) * b_.w1 * v;
          g.at(k, a_.i1, b_.i0) += a_.w1 * (1 - b_.w1) * v;
          g.at(k, a_.i1, b_.i1) += a_.w1 * b_.w1 * v;
        }
      }
    accumulate_into(self, 0, g);
  });
}

inline Tensor resize_bilinear(const Tensor& t, int64_t out_h, int64_t out_w) {
  NoGradGuard ng;
  return resize_bilinear(Var(t), out_h, out_w).value();
}

}  // namespace dinet::ops
