#include "semalign/ops.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "semalign/errors.hpp"

namespace semalign {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require_chw(const Tensor& t, const char* what) {
  if (t.rank() != 3) throw ShapeError(std::string(what) + " expects a (C,H,W) tensor, got " + t.shape_string());
}

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  }
}

// Lowers a (C,H,W) input into a (C*k*k, Ho*Wo) patch matrix.
void im2col(const Tensor& x, int k, int stride, int pad, int ho, int wo, RowMat& col) {
  const int c_in = x.channels(), h = x.height(), w = x.width();
  col.resize(static_cast<Eigen::Index>(c_in) * k * k, static_cast<Eigen::Index>(ho) * wo);
  for (int c = 0; c < c_in; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = col.row((c * k + ky) * k + kx).data();
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            row[oy * wo + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w) ? x.at(c, iy, ix) : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const RowMat& col, int k, int stride, int pad, int ho, int wo, Tensor& dx) {
  const int c_in = dx.channels(), h = dx.height(), w = dx.width();
  for (int c = 0; c < c_in; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = col.row((c * k + ky) * k + kx).data();
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dx.at(c, iy, ix) += row[oy * wo + ox];
          }
        }
      }
    }
  }
}

// Bilinear tap of a normalized coordinate on a grid with n cells per axis.
struct AxisTap {
  int i0;
  double frac;
  double dcoord;  // d(pixel position)/d(normalized coordinate); 0 when clamped
};

AxisTap axis_tap(double u, int n) {
  double scale = 0.5 * (n - 1);
  double p = (u + 1.0) * scale;
  if (u < -1.0) {
    p = 0.0;
    scale = 0.0;
  } else if (u > 1.0) {
    p = n - 1.0;
    scale = 0.0;
  }
  int i0 = std::min(static_cast<int>(std::floor(p)), n - 2);
  i0 = std::max(i0, 0);
  return {i0, p - i0, scale};
}

struct BilinearTap {
  AxisTap x, y;
  double sample(const double* plane, int w) const {
    const double* r0 = plane + static_cast<std::size_t>(y.i0) * w + x.i0;
    const double* r1 = r0 + w;
    return (1 - y.frac) * ((1 - x.frac) * r0[0] + x.frac * r0[1]) +
           y.frac * ((1 - x.frac) * r1[0] + x.frac * r1[1]);
  }
  // Scatters g into the four neighbours and returns (d/dx, d/dy) of the sample.
  std::pair<double, double> scatter(const double* plane, double* gplane, int w, double g) const {
    const std::size_t o = static_cast<std::size_t>(y.i0) * w + x.i0;
    if (gplane) {
      gplane[o] += g * (1 - y.frac) * (1 - x.frac);
      gplane[o + 1] += g * (1 - y.frac) * x.frac;
      gplane[o + w] += g * y.frac * (1 - x.frac);
      gplane[o + w + 1] += g * y.frac * x.frac;
    }
    const double v00 = plane[o], v01 = plane[o + 1], v10 = plane[o + w], v11 = plane[o + w + 1];
    const double ddx = ((1 - y.frac) * (v01 - v00) + y.frac * (v11 - v10)) * x.dcoord;
    const double ddy = ((1 - x.frac) * (v10 - v00) + x.frac * (v11 - v01)) * y.dcoord;
    return {g * ddx, g * ddy};
  }
};

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  require_chw(xv, "conv2d");
  if (wv.rank() != 4 || wv.dim(1) != xv.channels() || wv.dim(2) != wv.dim(3)) {
    throw ShapeError("conv2d weight " + wv.shape_string() + " incompatible with input " + xv.shape_string());
  }
  const int c_out = wv.dim(0), k = wv.dim(2);
  if (bias.value().size() != static_cast<std::size_t>(c_out)) throw ShapeError("conv2d bias size");
  const int ho = (xv.height() + 2 * pad - k) / stride + 1;
  const int wo = (xv.width() + 2 * pad - k) / stride + 1;
  if (ho <= 0 || wo <= 0) throw ShapeError("conv2d output would be empty");

  auto col = std::make_shared<RowMat>();
  im2col(xv, k, stride, pad, ho, wo, *col);
  Tensor out = Tensor::chw(c_out, ho, wo);
  const Eigen::Index kk = col->rows();
  ConstMapMat wm(wv.data(), c_out, kk);
  MapMat om(out.data(), c_out, static_cast<Eigen::Index>(ho) * wo);
  om.noalias() = wm * (*col);
  for (int c = 0; c < c_out; ++c) om.row(c).array() += bias.value()[c];

  return make_op(std::move(out), {x, weight, bias}, [col, k, stride, pad, ho, wo, c_out, kk](Node& n) {
    ConstMapMat gm(n.grad.data(), c_out, static_cast<Eigen::Index>(ho) * wo);
    if (Tensor* gw = input_grad(n, 1)) {
      MapMat(gw->data(), c_out, kk).noalias() += gm * col->transpose();
    }
    if (Tensor* gb = input_grad(n, 2)) {
      for (int c = 0; c < c_out; ++c) (*gb)[c] += gm.row(c).sum();
    }
    if (Tensor* gx = input_grad(n, 0)) {
      ConstMapMat wm(n.inputs[1]->value.data(), c_out, kk);
      RowMat dcol = wm.transpose() * gm;
      col2im(dcol, k, stride, pad, ho, wo, *gx);
    }
  });
}

Var relu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = std::max(v, 0.0);
  return make_op(std::move(out), {x}, [](Node& n) {
    Tensor* gx = input_grad(n, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < n.value.size(); ++i) {
      if (n.value[i] > 0.0) (*gx)[i] += n.grad[i];
    }
  });
}

Var add(const Var& a, const Var& b) {
  require_same(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& n) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (Tensor* g = input_grad(n, k)) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) (*g)[i] += n.grad[i];
      }
    }
  });
}

Var sub(const Var& a, const Var& b) { return weighted_sum({{1.0, a}, {-1.0, b}}); }

Var scale(const Var& a, double s) { return weighted_sum({{s, a}}); }

Var weighted_sum(const std::vector<std::pair<double, Var>>& terms) {
  if (terms.empty()) throw ShapeError("weighted_sum of nothing");
  Tensor out(terms.front().second.shape(), 0.0);
  std::vector<Var> inputs;
  std::vector<double> weights;
  for (const auto& [w, v] : terms) {
    require_same(out, v.value(), "weighted_sum");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += w * v.value()[i];
    inputs.push_back(v);
    weights.push_back(w);
  }
  return make_op(std::move(out), std::move(inputs), [weights](Node& n) {
    for (std::size_t k = 0; k < weights.size(); ++k) {
      if (Tensor* g = input_grad(n, k)) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) (*g)[i] += weights[k] * n.grad[i];
      }
    }
  });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return make_op(Tensor::scalar(s), {x}, [](Node& n) {
    if (Tensor* g = input_grad(n, 0)) {
      for (double& v : g->values()) v += n.grad[0];
    }
  });
}

Var mean(const Var& x) {
  const double count = static_cast<double>(x.value().size());
  return scale(sum(x), 1.0 / count);
}

Var concat_channels(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_chw(av, "concat_channels");
  require_chw(bv, "concat_channels");
  if (av.height() != bv.height() || av.width() != bv.width()) {
    throw ShapeError("concat_channels spatial mismatch " + av.shape_string() + " vs " + bv.shape_string());
  }
  Tensor out = Tensor::chw(av.channels() + bv.channels(), av.height(), av.width());
  std::copy(av.data(), av.data() + av.size(), out.data());
  std::copy(bv.data(), bv.data() + bv.size(), out.data() + av.size());
  const std::size_t split = av.size();
  return make_op(std::move(out), {a, b}, [split](Node& n) {
    if (Tensor* ga = input_grad(n, 0)) {
      for (std::size_t i = 0; i < split; ++i) (*ga)[i] += n.grad[i];
    }
    if (Tensor* gb = input_grad(n, 1)) {
      for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] += n.grad[split + i];
    }
  });
}

Var slice_channels(const Var& x, int begin, int end) {
  const Tensor& xv = x.value();
  require_chw(xv, "slice_channels");
  if (begin < 0 || end > xv.channels() || begin >= end) throw ShapeError("slice_channels range");
  const std::size_t plane = xv.plane();
  Tensor out = Tensor::chw(end - begin, xv.height(), xv.width());
  std::copy(xv.data() + begin * plane, xv.data() + end * plane, out.data());
  const std::size_t offset = begin * plane;
  return make_op(std::move(out), {x}, [offset](Node& n) {
    if (Tensor* g = input_grad(n, 0)) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) (*g)[offset + i] += n.grad[i];
    }
  });
}

Var upsample_nearest(const Var& x, int height, int width) {
  const Tensor& xv = x.value();
  require_chw(xv, "upsample_nearest");
  const int c = xv.channels(), h = xv.height(), w = xv.width();
  std::vector<int> src(static_cast<std::size_t>(height) * width);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(h - 1, y * h / height);
    for (int xx = 0; xx < width; ++xx) {
      src[static_cast<std::size_t>(y) * width + xx] = sy * w + std::min(w - 1, xx * w / width);
    }
  }
  Tensor out = Tensor::chw(c, height, width);
  const std::size_t in_plane = xv.plane(), out_plane = out.plane();
  for (int ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < out_plane; ++i) out[ch * out_plane + i] = xv[ch * in_plane + src[i]];
  }
  return make_op(std::move(out), {x}, [src = std::move(src), c, in_plane, out_plane](Node& n) {
    if (Tensor* g = input_grad(n, 0)) {
      for (int ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < out_plane; ++i) (*g)[ch * in_plane + src[i]] += n.grad[ch * out_plane + i];
      }
    }
  });
}

Var clamp(const Var& x, double lo, double hi) {
  Tensor out = x.value();
  for (double& v : out.values()) v = std::clamp(v, lo, hi);
  return make_op(std::move(out), {x}, [lo, hi](Node& n) {
    Tensor* g = input_grad(n, 0);
    if (!g) return;
    const Tensor& in = n.inputs[0]->value;
    for (std::size_t i = 0; i < in.size(); ++i) {
      if (in[i] > lo && in[i] < hi) (*g)[i] += n.grad[i];
    }
  });
}

Var l2_normalize_channels(const Var& x, double eps) {
  const Tensor& xv = x.value();
  require_chw(xv, "l2_normalize_channels");
  const int c = xv.channels();
  const std::size_t plane = xv.plane();
  std::vector<double> norms(plane, 0.0);
  for (int ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < plane; ++i) norms[i] += xv[ch * plane + i] * xv[ch * plane + i];
  }
  for (double& v : norms) v = std::sqrt(v);
  Tensor out(xv.shape(), 0.0);
  for (int ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < plane; ++i) {
      if (norms[i] >= eps) out[ch * plane + i] = xv[ch * plane + i] / norms[i];
    }
  }
  return make_op(std::move(out), {x}, [norms = std::move(norms), c, plane, eps](Node& n) {
    Tensor* g = input_grad(n, 0);
    if (!g) return;
    // d(x/|x|) = (g - y <y,g>) / |x|
    for (std::size_t i = 0; i < plane; ++i) {
      if (norms[i] < eps) continue;
      double dot = 0.0;
      for (int ch = 0; ch < c; ++ch) dot += n.value[ch * plane + i] * n.grad[ch * plane + i];
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t o = ch * plane + i;
        (*g)[o] += (n.grad[o] - n.value[o] * dot) / norms[i];
      }
    }
  });
}

Var channel_softmax(const Var& x) {
  const Tensor& xv = x.value();
  require_chw(xv, "channel_softmax");
  const int c = xv.channels();
  const std::size_t plane = xv.plane();
  Tensor out(xv.shape(), 0.0);
  for (std::size_t i = 0; i < plane; ++i) {
    double mx = xv[i];
    for (int ch = 1; ch < c; ++ch) mx = std::max(mx, xv[ch * plane + i]);
    double z = 0.0;
    for (int ch = 0; ch < c; ++ch) {
      const double e = std::exp(xv[ch * plane + i] - mx);
      out[ch * plane + i] = e;
      z += e;
    }
    for (int ch = 0; ch < c; ++ch) out[ch * plane + i] /= z;
  }
  return make_op(std::move(out), {x}, [c, plane](Node& n) {
    Tensor* g = input_grad(n, 0);
    if (!g) return;
    for (std::size_t i = 0; i < plane; ++i) {
      double dot = 0.0;
      for (int ch = 0; ch < c; ++ch) dot += n.value[ch * plane + i] * n.grad[ch * plane + i];
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t o = ch * plane + i;
        (*g)[o] += n.value[o] * (n.grad[o] - dot);
      }
    }
  });
}

Var normalize_planes(const Var& x) {
  const Tensor& xv = x.value();
  require_chw(xv, "normalize_planes");
  const int c = xv.channels();
  const std::size_t plane = xv.plane();
  std::vector<double> sums(c, 0.0);
  Tensor out(xv.shape(), 0.0);
  for (int ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < plane; ++i) sums[ch] += xv[ch * plane + i];
    if (sums[ch] < 1e-8) {
      throw DegenerateChannel("map channel " + std::to_string(ch) + " has no mass to normalize");
    }
    for (std::size_t i = 0; i < plane; ++i) out[ch * plane + i] = xv[ch * plane + i] / sums[ch];
  }
  return make_op(std::move(out), {x}, [sums = std::move(sums), c, plane](Node& n) {
    Tensor* g = input_grad(n, 0);
    if (!g) return;
    // d(x_i / S) = (g_i - <y,g>) / S
    for (int ch = 0; ch < c; ++ch) {
      double dot = 0.0;
      for (std::size_t i = 0; i < plane; ++i) dot += n.value[ch * plane + i] * n.grad[ch * plane + i];
      for (std::size_t i = 0; i < plane; ++i) (*g)[ch * plane + i] += (n.grad[ch * plane + i] - dot) / sums[ch];
    }
  });
}

Var grid_sample(const Var& field, const Var& coords) {
  const Tensor& fv = field.value();
  const Tensor& cv = coords.value();
  require_chw(fv, "grid_sample field");
  require_chw(cv, "grid_sample coords");
  if (cv.channels() != 2) throw ShapeError("grid_sample coords need 2 channels");
  const int d = fv.channels(), h = fv.height(), w = fv.width();
  if (h < 2 || w < 2) throw ShapeError("grid_sample field must be at least 2x2");
  const std::size_t out_plane = cv.plane(), in_plane = fv.plane();

  std::vector<BilinearTap> taps(out_plane);
  for (std::size_t i = 0; i < out_plane; ++i) {
    taps[i] = {axis_tap(cv[i], w), axis_tap(cv[out_plane + i], h)};
  }
  Tensor out = Tensor::chw(d, cv.height(), cv.width());
  for (int ch = 0; ch < d; ++ch) {
    const double* plane = fv.data() + ch * in_plane;
    for (std::size_t i = 0; i < out_plane; ++i) out[ch * out_plane + i] = taps[i].sample(plane, w);
  }
  return make_op(std::move(out), {field, coords}, [taps = std::move(taps), d, w, in_plane, out_plane](Node& n) {
    Tensor* gf = input_grad(n, 0);
    Tensor* gc = input_grad(n, 1);
    const Tensor& fv = n.inputs[0]->value;
    for (int ch = 0; ch < d; ++ch) {
      const double* plane = fv.data() + ch * in_plane;
      double* gplane = gf ? gf->data() + ch * in_plane : nullptr;
      for (std::size_t i = 0; i < out_plane; ++i) {
        const double g = n.grad[ch * out_plane + i];
        if (g == 0.0) continue;
        auto [gx, gy] = taps[i].scatter(plane, gplane, w, g);
        if (gc) {
          (*gc)[i] += gx;
          (*gc)[out_plane + i] += gy;
        }
      }
    }
  });
}

Var sample_points(const Var& field, const Var& points) {
  const Tensor& pv = points.value();
  if (pv.rank() != 2 || pv.dim(1) != 2) throw ShapeError("sample_points expects (N,2) points");
  const int count = pv.dim(0);
  // Re-lay the points as a (2,1,N) coordinate map and reuse grid_sample.
  Tensor coords = Tensor::chw(2, 1, count);
  for (int i = 0; i < count; ++i) {
    coords[i] = pv.at(i, 0);
    coords[count + i] = pv.at(i, 1);
  }
  Var coord_map = make_op(std::move(coords), {points}, [count](Node& n) {
    if (Tensor* g = input_grad(n, 0)) {
      for (int i = 0; i < count; ++i) {
        g->at(i, 0) += n.grad[i];
        g->at(i, 1) += n.grad[count + i];
      }
    }
  });
  Var sampled = grid_sample(field, coord_map);
  const int d = sampled.value().channels();
  Tensor out({count, d}, 0.0);
  for (int ch = 0; ch < d; ++ch) {
    for (int i = 0; i < count; ++i) out.at(i, ch) = sampled.value()[ch * count + i];
  }
  return make_op(std::move(out), {sampled}, [count, d](Node& n) {
    if (Tensor* g = input_grad(n, 0)) {
      for (int ch = 0; ch < d; ++ch) {
        for (int i = 0; i < count; ++i) (*g)[ch * count + i] += n.grad[static_cast<std::size_t>(i) * d + ch];
      }
    }
  });
}

}  // namespace semalign
