#pragma once

// Channel-specific affine deformation of feature maps.
//
// Every channel c of a (C, h, w) map gets its own transform
//
//   x_hat = s_c cos(theta_c) x - s_c sin(theta_c) y + tx_c
//   y_hat = s_c sin(theta_c) x + s_c cos(theta_c) y + ty_c
//
// evaluated at each OUTPUT lattice point (x, y); (x_hat, y_hat) is where the
// input is sampled (backward warp). Coordinates are normalised to [-1, 1]
// with the origin at the map centre and y pointing down; lattice point j of
// an n-wide axis sits at -1 + 2j / (n - 1), so the corner pixels land exactly
// on +-1.

#include <cmath>
#include <string>

#include "dinet/autograd.hpp"

namespace dinet {

using FeatureMap = Tensor;

inline void require_feature_map(const Tensor& t, const char* what) {
  if (t.rank() != 3) throw ContractViolation(std::string(what) + ": expected (C, h, w), got " + to_string(t.shape()));
  if (!t.all_finite()) throw ContractViolation(std::string(what) + ": non-finite values");
}

/// Per-channel rotation (radians), positive scale, and translation in
/// normalised coordinate units.
class AffineParamSet {
 public:
  AffineParamSet(Tensor theta, Tensor scale, Tensor tx, Tensor ty)
      : theta_(std::move(theta)), scale_(std::move(scale)), tx_(std::move(tx)), ty_(std::move(ty)) {
    validate(theta_, scale_, tx_, ty_);
  }

  static AffineParamSet identity(int64_t channels) {
    return AffineParamSet(Tensor({channels}, 0.0), Tensor({channels}, 1.0), Tensor({channels}, 0.0),
                          Tensor({channels}, 0.0));
  }

  /// Throws InvalidParameter unless the four arrays are rank-1 of one length
  /// C > 0, all finite, with every scale strictly positive.
  static void validate(const Tensor& theta, const Tensor& scale, const Tensor& tx, const Tensor& ty) {
    for (const Tensor* t : {&theta, &scale, &tx, &ty})
      if (t->rank() != 1) throw InvalidParameter("affine coefficients must be rank-1 arrays");
    const int64_t c = theta.dim(0);
    if (c == 0) throw InvalidParameter("affine parameter set has zero channels");
    if (scale.dim(0) != c || tx.dim(0) != c || ty.dim(0) != c)
      throw InvalidParameter("affine coefficient arrays differ in length");
    for (const Tensor* t : {&theta, &scale, &tx, &ty})
      if (!t->all_finite()) throw InvalidParameter("affine coefficients must be finite");
    for (int64_t i = 0; i < c; ++i)
      if (!(scale[i] > 0.0))
        throw InvalidParameter("scale of channel " + std::to_string(i) + " is not positive (" +
                               std::to_string(scale[i]) + ")");
  }

  int64_t channels() const noexcept { return theta_.dim(0); }
  const Tensor& theta() const noexcept { return theta_; }
  const Tensor& scale() const noexcept { return scale_; }
  const Tensor& tx() const noexcept { return tx_; }
  const Tensor& ty() const noexcept { return ty_; }

 private:
  Tensor theta_, scale_, tx_, ty_;
};

/// Differentiable counterpart of AffineParamSet: each field is a (C) Var.
struct AffineParamVars {
  Var theta, scale, tx, ty;

  AffineParamSet values() const {
    return AffineParamSet(theta.value(), scale.value(), tx.value(), ty.value());
  }
  static AffineParamVars constant(const AffineParamSet& p) {
    return {Var(p.theta()), Var(p.scale()), Var(p.tx()), Var(p.ty())};
  }
};

/// (C, h, w, 2) normalised sampling coordinates; last axis is (x_hat, y_hat).
class SamplingGrid {
 public:
  explicit SamplingGrid(Tensor coords) : coords_(std::move(coords)) {
    if (coords_.rank() != 4 || coords_.dim(3) != 2)
      throw ContractViolation("sampling grid must be (C, h, w, 2), got " + to_string(coords_.shape()));
    if (!coords_.all_finite()) throw ContractViolation("sampling grid has non-finite coordinates");
  }
  const Tensor& coords() const noexcept { return coords_; }
  int64_t channels() const { return coords_.dim(0); }
  int64_t height() const { return coords_.dim(1); }
  int64_t width() const { return coords_.dim(2); }

 private:
  Tensor coords_;
};

namespace adaat_detail {

inline double lattice(int64_t i, int64_t n) {
  return n == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1);
}

// Normalised coordinate -> continuous pixel index on an n-wide axis, clamped
// to [0, n-1]. `slope` receives d(index)/d(coord), zero where clamped.
// Indices within 1e-9 of an integer snap to it so that lattice-preserving
// warps reproduce their input bit-exactly.
inline double to_index(double coord, int64_t n, double& slope) {
  if (n == 1) {
    slope = 0.0;
    return 0.0;
  }
  const double half = 0.5 * static_cast<double>(n - 1);
  double idx = (coord + 1.0) * half;
  slope = half;
  if (idx <= 0.0) {
    slope = idx < 0.0 ? 0.0 : half;
    return 0.0;
  }
  const double top = static_cast<double>(n - 1);
  if (idx >= top) {
    slope = idx > top ? 0.0 : half;
    return top;
  }
  const double r = std::round(idx);
  if (std::abs(idx - r) < 1e-9) idx = r;
  return idx;
}

// Left cell corner for a clamped index; keeps i0 + 1 in range so the last
// column interpolates from its left neighbour with weight one.
inline int64_t cell(double idx, int64_t n) {
  if (n == 1) return 0;
  return std::min(static_cast<int64_t>(std::floor(idx)), n - 2);
}

}  // namespace adaat_detail

/// Differentiable grid construction from per-channel coefficient Vars.
inline Var affine_grid(const AffineParamVars& p, int64_t h, int64_t w) {
  if (h < 1 || w < 1) throw InvalidParameter("affine grid needs h, w >= 1");
  AffineParamSet::validate(p.theta.value(), p.scale.value(), p.tx.value(), p.ty.value());
  const int64_t c = p.theta.dim(0);
  Tensor grid({c, h, w, 2});
  for (int64_t k = 0; k < c; ++k) {
    const double th = p.theta.value()[k], s = p.scale.value()[k];
    const double a = s * std::cos(th), b = s * std::sin(th);
    const double tx = p.tx.value()[k], ty = p.ty.value()[k];
    double* g = grid.data() + k * h * w * 2;
    for (int64_t i = 0; i < h; ++i) {
      const double y = adaat_detail::lattice(i, h);
      for (int64_t j = 0; j < w; ++j) {
        const double x = adaat_detail::lattice(j, w);
        g[(i * w + j) * 2 + 0] = a * x - b * y + tx;
        g[(i * w + j) * 2 + 1] = b * x + a * y + ty;
      }
    }
  }
  return make_op(std::move(grid), {p.theta, p.scale, p.tx, p.ty}, [c, h, w](Node& self) {
    const Tensor& theta = self.parents[0]->value;
    const Tensor& scale = self.parents[1]->value;
    Tensor gth({c}), gs({c}), gtx({c}), gty({c});
    for (int64_t k = 0; k < c; ++k) {
      const double ct = std::cos(theta[k]), st = std::sin(theta[k]), s = scale[k];
      const double* g = self.grad.data() + k * h * w * 2;
      double dth = 0, ds = 0, dtx = 0, dty = 0;
      for (int64_t i = 0; i < h; ++i) {
        const double y = adaat_detail::lattice(i, h);
        for (int64_t j = 0; j < w; ++j) {
          const double x = adaat_detail::lattice(j, w);
          const double gx = g[(i * w + j) * 2 + 0], gy = g[(i * w + j) * 2 + 1];
          dth += gx * (-s * st * x - s * ct * y) + gy * (s * ct * x - s * st * y);
          ds += gx * (ct * x - st * y) + gy * (st * x + ct * y);
          dtx += gx;
          dty += gy;
        }
      }
      gth[k] = dth;
      gs[k] = ds;
      gtx[k] = dtx;
      gty[k] = dty;
    }
    accumulate_into(self, 0, gth);
    accumulate_into(self, 1, gs);
    accumulate_into(self, 2, gtx);
    accumulate_into(self, 3, gty);
  });
}

/// Bilinear sampling of channel c of `fmap` at grid[c, i, j]; out-of-range
/// coordinates read the clamped border. The grid may have any (h, w); its
/// channel count must match the map's.
inline Var grid_sample(const Var& fmap, const Var& grid) {
  const Tensor& f = fmap.value();
  const Tensor& g = grid.value();
  if (f.rank() != 3 || g.rank() != 4 || g.dim(3) != 2 || g.dim(0) != f.dim(0))
    throw ContractViolation("grid_sample: map " + to_string(f.shape()) + " incompatible with grid " +
                            to_string(g.shape()));
  const int64_t c = f.dim(0), H = f.dim(1), W = f.dim(2), h = g.dim(1), w = g.dim(2);
  Tensor out({c, h, w});
  for (int64_t k = 0; k < c; ++k) {
    const double* src = f.data() + k * H * W;
    const double* gk = g.data() + k * h * w * 2;
    double* dst = out.data() + k * h * w;
    for (int64_t p = 0; p < h * w; ++p) {
      double sx, sy;
      const double ix = adaat_detail::to_index(gk[2 * p], W, sx);
      const double iy = adaat_detail::to_index(gk[2 * p + 1], H, sy);
      const int64_t x0 = adaat_detail::cell(ix, W), y0 = adaat_detail::cell(iy, H);
      const int64_t x1 = W == 1 ? 0 : x0 + 1, y1 = H == 1 ? 0 : y0 + 1;
      const double wx = ix - static_cast<double>(x0), wy = iy - static_cast<double>(y0);
      dst[p] = (1 - wy) * ((1 - wx) * src[y0 * W + x0] + wx * src[y0 * W + x1]) +
               wy * ((1 - wx) * src[y1 * W + x0] + wx * src[y1 * W + x1]);
    }
  }
  return make_op(std::move(out), {fmap, grid}, [c, H, W, h, w](Node& self) {
    const Tensor& f = self.parents[0]->value;
    const Tensor& g = self.parents[1]->value;
    const bool want_f = parent_needs_grad(self, 0), want_g = parent_needs_grad(self, 1);
    Tensor gf = want_f ? Tensor::zeros_like(f) : Tensor();
    Tensor gg = want_g ? Tensor::zeros_like(g) : Tensor();
    for (int64_t k = 0; k < c; ++k) {
      const double* src = f.data() + k * H * W;
      const double* gk = g.data() + k * h * w * 2;
      const double* up = self.grad.data() + k * h * w;
      for (int64_t p = 0; p < h * w; ++p) {
        double sx, sy;
        const double ix = adaat_detail::to_index(gk[2 * p], W, sx);
        const double iy = adaat_detail::to_index(gk[2 * p + 1], H, sy);
        const int64_t x0 = adaat_detail::cell(ix, W), y0 = adaat_detail::cell(iy, H);
        const int64_t x1 = W == 1 ? 0 : x0 + 1, y1 = H == 1 ? 0 : y0 + 1;
        const double wx = ix - static_cast<double>(x0), wy = iy - static_cast<double>(y0);
        const double u = up[p];
        if (want_f) {
          double* d = gf.data() + k * H * W;
          d[y0 * W + x0] += (1 - wy) * (1 - wx) * u;
          d[y0 * W + x1] += (1 - wy) * wx * u;
          d[y1 * W + x0] += wy * (1 - wx) * u;
          d[y1 * W + x1] += wy * wx * u;
        }
        if (want_g) {
          const double v00 = src[y0 * W + x0], v01 = src[y0 * W + x1];
          const double v10 = src[y1 * W + x0], v11 = src[y1 * W + x1];
          const double dix = (1 - wy) * (v01 - v00) + wy * (v11 - v10);
          const double diy = (1 - wx) * (v10 - v00) + wx * (v11 - v01);
          double* d = gg.data() + (k * h * w + p) * 2;
          d[0] += u * dix * sx;
          d[1] += u * diy * sy;
        }
      }
    }
    if (want_f) accumulate_into(self, 0, gf);
    if (want_g) accumulate_into(self, 1, gg);
  });
}

/// Differentiable AdaAT: grid construction followed by bilinear sampling.
inline Var adaat_deform(const Var& fmap, const AffineParamVars& params) {
  if (fmap.value().rank() != 3 || params.theta.dim(0) != fmap.dim(0))
    throw ContractViolation("adaat_deform: " + std::to_string(params.theta.dim(0)) +
                            " affine channels for a map of shape " + to_string(fmap.shape()));
  return grid_sample(fmap, affine_grid(params, fmap.dim(1), fmap.dim(2)));
}

// Value-level API.

inline SamplingGrid make_affine_grid(const AffineParamSet& params, int64_t h, int64_t w) {
  NoGradGuard ng;
  return SamplingGrid(affine_grid(AffineParamVars::constant(params), h, w).value());
}

inline FeatureMap grid_sample_bilinear(const FeatureMap& fmap, const SamplingGrid& grid) {
  require_feature_map(fmap, "grid_sample_bilinear");
  if (grid.channels() != fmap.dim(0) || grid.height() != fmap.dim(1) || grid.width() != fmap.dim(2))
    throw ContractViolation("grid_sample_bilinear: grid " + to_string(grid.coords().shape()) +
                            " does not match map " + to_string(fmap.shape()));
  NoGradGuard ng;
  return grid_sample(Var(fmap), Var(grid.coords())).value();
}

inline FeatureMap adaat_deform(const FeatureMap& fmap, const AffineParamSet& params) {
  require_feature_map(fmap, "adaat_deform");
  if (params.channels() != fmap.dim(0))
    throw ContractViolation("adaat_deform: " + std::to_string(params.channels()) +
                            " affine channels for a map with " + std::to_string(fmap.dim(0)));
  return grid_sample_bilinear(fmap, make_affine_grid(params, fmap.dim(1), fmap.dim(2)));
}

}  // namespace dinet
