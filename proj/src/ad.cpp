#include "camo/ad.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace camo::ad {

namespace {

Ptr make_node(Shape shape, Eigen::Index n, std::vector<Ptr> parents) {
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->value = Array::Zero(n);
  t->parents = std::move(parents);
  for (const auto& p : t->parents)
    if (p->requires_grad) t->requires_grad = true;
  return t;
}

void check_same_size(const Ptr& a, const Ptr& b, const char* op) {
  if (a->size() != b->size())
    throw Error("ad", std::string(op) + ": size mismatch");
}

}  // namespace

Eigen::Index shape_size(const Shape& shape) {
  Eigen::Index n = 1;
  for (int d : shape) n *= d;
  return n;
}

Ptr constant(Shape shape, Array value) {
  if (shape_size(shape) != value.size()) throw Error("ad", "constant: shape/value mismatch");
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->value = std::move(value);
  return t;
}

Ptr constant_scalar(double v) {
  Array a(1);
  a[0] = v;
  return constant({1}, std::move(a));
}

Ptr leaf(Shape shape, Array value) {
  auto t = constant(std::move(shape), std::move(value));
  t->requires_grad = true;
  return t;
}

Ptr zeros(Shape shape, bool requires_grad) {
  auto t = std::make_shared<Tensor>();
  t->value = Array::Zero(shape_size(shape));
  t->shape = std::move(shape);
  t->requires_grad = requires_grad;
  return t;
}

Ptr tensor_from_image(const Image& img, bool requires_grad) {
  const int c = img.channels;
  Array v(static_cast<Eigen::Index>(img.size()));
  Eigen::Index k = 0;
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) v[k++] = img.at(y, x, ch);
  auto t = constant({c, img.height, img.width}, std::move(v));
  t->requires_grad = requires_grad;
  return t;
}

Image image_from_tensor(const Tensor& t) {
  if (t.shape.size() != 3) throw Error("ad", "image_from_tensor: expected [C,H,W]");
  const int c = t.shape[0], h = t.shape[1], w = t.shape[2];
  Image img(h, w, c);
  Eigen::Index k = 0;
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) img.at(y, x, ch) = t.value[k++];
  return img;
}

Ptr add(const Ptr& a, const Ptr& b) {
  check_same_size(a, b, "add");
  auto t = make_node(a->shape, a->size(), {a, b});
  t->value = a->value + b->value;
  t->backprop = [](Tensor& self) {
    for (int i = 0; i < 2; ++i) {
      auto& p = self.parents[static_cast<std::size_t>(i)];
      if (p->requires_grad) {
        p->ensure_grad();
        p->grad += self.grad;
      }
    }
  };
  return t;
}

Ptr sub(const Ptr& a, const Ptr& b) {
  check_same_size(a, b, "sub");
  auto t = make_node(a->shape, a->size(), {a, b});
  t->value = a->value - b->value;
  t->backprop = [](Tensor& self) {
    auto& a = self.parents[0];
    auto& b = self.parents[1];
    if (a->requires_grad) {
      a->ensure_grad();
      a->grad += self.grad;
    }
    if (b->requires_grad) {
      b->ensure_grad();
      b->grad -= self.grad;
    }
  };
  return t;
}

Ptr mul(const Ptr& a, const Ptr& b) {
  check_same_size(a, b, "mul");
  auto t = make_node(a->shape, a->size(), {a, b});
  t->value = a->value * b->value;
  t->backprop = [](Tensor& self) {
    auto& a = self.parents[0];
    auto& b = self.parents[1];
    if (a->requires_grad) {
      a->ensure_grad();
      a->grad += self.grad * b->value;
    }
    if (b->requires_grad) {
      b->ensure_grad();
      b->grad += self.grad * a->value;
    }
  };
  return t;
}

Ptr scale(const Ptr& a, double s) {
  auto t = make_node(a->shape, a->size(), {a});
  t->value = a->value * s;
  t->backprop = [s](Tensor& self) {
    auto& a = self.parents[0];
    if (a->requires_grad) {
      a->ensure_grad();
      a->grad += self.grad * s;
    }
  };
  return t;
}

Ptr add_scalar(const Ptr& a, double s) {
  auto t = make_node(a->shape, a->size(), {a});
  t->value = a->value + s;
  t->backprop = [](Tensor& self) {
    auto& a = self.parents[0];
    if (a->requires_grad) {
      a->ensure_grad();
      a->grad += self.grad;
    }
  };
  return t;
}

Ptr abs_(const Ptr& a) {
  auto t = make_node(a->shape, a->size(), {a});
  t->value = a->value.abs();
  t->backprop = [](Tensor& self) {
    auto& a = self.parents[0];
    if (!a->requires_grad) return;
    a->ensure_grad();
    a->grad += self.grad * a->value.sign();
  };
  return t;
}

Ptr square(const Ptr& a) {
  auto t = make_node(a->shape, a->size(), {a});
  t->value = a->value.square();
  t->backprop = [](Tensor& self) {
    auto& a = self.parents[0];
    if (!a->requires_grad) return;
    a->ensure_grad();
    a->grad += self.grad * 2.0 * a->value;
  };
  return t;
}

Ptr sqrt_(const Ptr& a) {
  auto t = make_node(a->shape, a->size(), {a});
  t->value = a->value.max(0.0).sqrt();
  t->backprop = [](Tensor& self) {
    auto& a = self.parents[0];
    if (!a->requires_grad) return;
    a->ensure_grad();
    for (Eigen::Index i = 0; i < self.value.size(); ++i)
      if (self.value[i] > 0.0) a->grad[i] += self.grad[i] * 0.5 / self.value[i];
  };
  return t;
}

Ptr reciprocal(const Ptr& a) {
  auto t = make_node(a->shape, a->size(), {a});
  t->value = a->value.inverse();
  t->backprop = [](Tensor& self) {
    auto& a = self.parents[0];
    if (!a->requires_grad) return;
    a->ensure_grad();
    a->grad -= self.grad * self.value.square();
  };
  return t;
}

Ptr sigmoid(const Ptr& a) {
  auto t = make_node(a->shape, a->size(), {a});
  for (Eigen::Index i = 0; i < a->size(); ++i) {
    const double z = a->value[i];
    t->value[i] = z >= 0 ? 1.0 / (1.0 + std::exp(-z))
                         : std::exp(z) / (1.0 + std::exp(z));
  }
  t->backprop = [](Tensor& self) {
    auto& a = self.parents[0];
    if (!a->requires_grad) return;
    a->ensure_grad();
    a->grad += self.grad * self.value * (1.0 - self.value);
  };
  return t;
}

Ptr leaky_relu(const Ptr& a, double negative_slope) {
  auto t = make_node(a->shape, a->size(), {a});
  t->value = (a->value > 0.0).select(a->value, a->value * negative_slope);
  t->backprop = [negative_slope](Tensor& self) {
    auto& a = self.parents[0];
    if (!a->requires_grad) return;
    a->ensure_grad();
    a->grad += self.grad * (a->value > 0.0).select(Array::Ones(a->size()),
                                                   Array::Constant(a->size(), negative_slope));
  };
  return t;
}

Ptr relu(const Ptr& a) { return leaky_relu(a, 0.0); }

Ptr clamp01(const Ptr& a) {
  auto t = make_node(a->shape, a->size(), {a});
  t->value = a->value.min(1.0).max(0.0);
  t->backprop = [](Tensor& self) {
    auto& a = self.parents[0];
    if (!a->requires_grad) return;
    a->ensure_grad();
    a->grad += self.grad * ((a->value >= 0.0) && (a->value <= 1.0))
                               .select(Array::Ones(a->size()), Array::Zero(a->size()));
  };
  return t;
}

Ptr vmax(const Ptr& a, const Ptr& b) {
  check_same_size(a, b, "vmax");
  auto t = make_node(a->shape, a->size(), {a, b});
  t->value = a->value.max(b->value);
  t->backprop = [](Tensor& self) {
    auto& a = self.parents[0];
    auto& b = self.parents[1];
    const auto take_a = a->value >= b->value;
    if (a->requires_grad) {
      a->ensure_grad();
      a->grad += self.grad * take_a.select(Array::Ones(a->size()), Array::Zero(a->size()));
    }
    if (b->requires_grad) {
      b->ensure_grad();
      b->grad += self.grad * take_a.select(Array::Zero(a->size()), Array::Ones(a->size()));
    }
  };
  return t;
}

Ptr vmin(const Ptr& a, const Ptr& b) {
  check_same_size(a, b, "vmin");
  auto t = make_node(a->shape, a->size(), {a, b});
  t->value = a->value.min(b->value);
  t->backprop = [](Tensor& self) {
    auto& a = self.parents[0];
    auto& b = self.parents[1];
    const auto take_a = a->value <= b->value;
    if (a->requires_grad) {
      a->ensure_grad();
      a->grad += self.grad * take_a.select(Array::Ones(a->size()), Array::Zero(a->size()));
    }
    if (b->requires_grad) {
      b->ensure_grad();
      b->grad += self.grad * take_a.select(Array::Zero(a->size()), Array::Ones(a->size()));
    }
  };
  return t;
}

Ptr sum(const Ptr& a) {
  auto t = make_node({1}, 1, {a});
  t->value[0] = a->value.sum();
  t->backprop = [](Tensor& self) {
    auto& a = self.parents[0];
    if (!a->requires_grad) return;
    a->ensure_grad();
    a->grad += self.grad[0];
  };
  return t;
}

Ptr mean(const Ptr& a) { return scale(sum(a), 1.0 / static_cast<double>(a->size())); }

Ptr pick(const Ptr& a, Eigen::Index index) {
  if (index < 0 || index >= a->size()) throw Error("ad", "pick: index out of range");
  auto t = make_node({1}, 1, {a});
  t->value[0] = a->value[index];
  t->backprop = [index](Tensor& self) {
    auto& a = self.parents[0];
    if (!a->requires_grad) return;
    a->ensure_grad();
    a->grad[index] += self.grad[0];
  };
  return t;
}

Ptr gather(const Ptr& a, std::vector<int> indices) {
  auto t = make_node({static_cast<int>(indices.size())},
                     static_cast<Eigen::Index>(indices.size()), {a});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= a->size()) throw Error("ad", "gather: index out of range");
    t->value[static_cast<Eigen::Index>(i)] = a->value[indices[i]];
  }
  t->backprop = [idx = std::move(indices)](Tensor& self) {
    auto& a = self.parents[0];
    if (!a->requires_grad) return;
    a->ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i)
      a->grad[idx[i]] += self.grad[static_cast<Eigen::Index>(i)];
  };
  return t;
}

Ptr concat_channels(const Ptr& a, const Ptr& b) {
  if (a->shape.size() != 3 || b->shape.size() != 3 || a->shape[1] != b->shape[1] ||
      a->shape[2] != b->shape[2])
    throw Error("ad", "concat_channels: incompatible shapes");
  const int ca = a->shape[0], cb = b->shape[0], h = a->shape[1], w = a->shape[2];
  auto t = make_node({ca + cb, h, w}, static_cast<Eigen::Index>(ca + cb) * h * w, {a, b});
  t->value.head(a->size()) = a->value;
  t->value.tail(b->size()) = b->value;
  t->backprop = [](Tensor& self) {
    auto& a = self.parents[0];
    auto& b = self.parents[1];
    if (a->requires_grad) {
      a->ensure_grad();
      a->grad += self.grad.head(a->size());
    }
    if (b->requires_grad) {
      b->ensure_grad();
      b->grad += self.grad.tail(b->size());
    }
  };
  return t;
}

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatCM = Eigen::MatrixXd;

// im2col for [Ci,H,W] -> [Ci*kh*kw, Ho*Wo].
void im2col(const Array& x, int ci, int h, int w, int kh, int kw, int stride, int pad,
            int ho, int wo, MatCM& cols) {
  cols.setZero(static_cast<Eigen::Index>(ci) * kh * kw, static_cast<Eigen::Index>(ho) * wo);
  for (int c = 0; c < ci; ++c) {
    const Eigen::Index plane = static_cast<Eigen::Index>(c) * h * w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const Eigen::Index row = (static_cast<Eigen::Index>(c) * kh + ky) * kw + kx;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            cols(row, static_cast<Eigen::Index>(oy) * wo + ox) = x[plane + static_cast<Eigen::Index>(iy) * w + ix];
          }
        }
      }
    }
  }
}

void col2im_add(const MatCM& cols, int ci, int h, int w, int kh, int kw, int stride, int pad,
                int ho, int wo, Array& gx) {
  for (int c = 0; c < ci; ++c) {
    const Eigen::Index plane = static_cast<Eigen::Index>(c) * h * w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const Eigen::Index row = (static_cast<Eigen::Index>(c) * kh + ky) * kw + kx;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            gx[plane + static_cast<Eigen::Index>(iy) * w + ix] += cols(row, static_cast<Eigen::Index>(oy) * wo + ox);
          }
        }
      }
    }
  }
}

}  // namespace

Ptr conv2d(const Ptr& x, const Ptr& w, const Ptr& bias, int stride, int pad) {
  if (x->shape.size() != 3 || w->shape.size() != 4)
    throw Error("ad", "conv2d: expected x[Ci,H,W], w[Co,Ci,kh,kw]");
  const int ci = x->shape[0], h = x->shape[1], wd = x->shape[2];
  const int co = w->shape[0], wci = w->shape[1], kh = w->shape[2], kw = w->shape[3];
  if (wci != ci) throw Error("ad", "conv2d: channel mismatch");
  if (stride < 1) throw Error("ad", "conv2d: stride must be >= 1");
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (wd + 2 * pad - kw) / stride + 1;
  if (ho <= 0 || wo <= 0) throw Error("ad", "conv2d: output would be empty");
  if (bias && bias->size() != co) throw Error("ad", "conv2d: bias size mismatch");

  std::vector<Ptr> parents{x, w};
  if (bias) parents.push_back(bias);
  auto t = make_node({co, ho, wo}, static_cast<Eigen::Index>(co) * ho * wo, std::move(parents));

  MatCM cols;
  im2col(x->value, ci, h, wd, kh, kw, stride, pad, ho, wo, cols);
  Eigen::Map<const MatRM> wm(w->value.data(), co, static_cast<Eigen::Index>(ci) * kh * kw);
  Eigen::Map<MatRM> ym(t->value.data(), co, static_cast<Eigen::Index>(ho) * wo);
  ym.noalias() = wm * cols;
  if (bias)
    for (int c = 0; c < co; ++c) ym.row(c).array() += bias->value[c];

  t->backprop = [ci, h, wd, co, kh, kw, stride, pad, ho, wo,
                 has_bias = static_cast<bool>(bias)](Tensor& self) {
    auto& x = self.parents[0];
    auto& w = self.parents[1];
    Eigen::Map<const MatRM> gy(self.grad.data(), co, static_cast<Eigen::Index>(ho) * wo);
    Eigen::Map<const MatRM> wm(w->value.data(), co, static_cast<Eigen::Index>(ci) * kh * kw);
    // Recompute the column matrix; cheaper than holding it for every node.
    if (w->requires_grad) {
      MatCM cols;
      im2col(x->value, ci, h, wd, kh, kw, stride, pad, ho, wo, cols);
      w->ensure_grad();
      Eigen::Map<MatRM> gw(w->grad.data(), co, static_cast<Eigen::Index>(ci) * kh * kw);
      gw.noalias() += gy * cols.transpose();
    }
    if (x->requires_grad) {
      x->ensure_grad();
      MatCM gcols = wm.transpose() * gy;
      col2im_add(gcols, ci, h, wd, kh, kw, stride, pad, ho, wo, x->grad);
    }
    if (has_bias) {
      auto& b = self.parents[2];
      if (b->requires_grad) {
        b->ensure_grad();
        for (int c = 0; c < co; ++c) b->grad[c] += gy.row(c).sum();
      }
    }
  };
  return t;
}

Ptr group_norm(const Ptr& x, const Ptr& gamma, const Ptr& beta, int groups, double eps) {
  if (x->shape.size() != 3) throw Error("ad", "group_norm: expected [C,H,W]");
  const int c = x->shape[0], h = x->shape[1], w = x->shape[2];
  if (groups < 1 || c % groups != 0) throw Error("ad", "group_norm: groups must divide channels");
  if (gamma->size() != c || beta->size() != c) throw Error("ad", "group_norm: affine size mismatch");
  const int cpg = c / groups;
  const Eigen::Index plane = static_cast<Eigen::Index>(h) * w;
  const Eigen::Index gsize = plane * cpg;

  auto t = make_node(x->shape, x->size(), {x, gamma, beta});
  Array xhat(x->size());
  Array inv_sigma(groups);
  for (int g = 0; g < groups; ++g) {
    const auto seg = x->value.segment(g * gsize, gsize);
    const double m = seg.mean();
    const double var = (seg - m).square().mean();
    const double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[g] = is;
    xhat.segment(g * gsize, gsize) = (seg - m) * is;
  }
  for (int ch = 0; ch < c; ++ch)
    t->value.segment(ch * plane, plane) =
        xhat.segment(ch * plane, plane) * gamma->value[ch] + beta->value[ch];

  t->backprop = [c, groups, cpg, plane, gsize, xhat = std::move(xhat),
                 inv_sigma = std::move(inv_sigma)](Tensor& self) {
    auto& x = self.parents[0];
    auto& gamma = self.parents[1];
    auto& beta = self.parents[2];
    if (gamma->requires_grad) {
      gamma->ensure_grad();
      for (int ch = 0; ch < c; ++ch)
        gamma->grad[ch] +=
            (self.grad.segment(ch * plane, plane) * xhat.segment(ch * plane, plane)).sum();
    }
    if (beta->requires_grad) {
      beta->ensure_grad();
      for (int ch = 0; ch < c; ++ch) beta->grad[ch] += self.grad.segment(ch * plane, plane).sum();
    }
    if (x->requires_grad) {
      x->ensure_grad();
      // dL/dxhat = g * gamma (per channel), then the usual normalization
      // backward per group with biased variance.
      Array dxhat(self.grad.size());
      for (int ch = 0; ch < c; ++ch)
        dxhat.segment(ch * plane, plane) = self.grad.segment(ch * plane, plane) * gamma->value[ch];
      for (int g = 0; g < groups; ++g) {
        const auto dxh = dxhat.segment(g * gsize, gsize);
        const auto xh = xhat.segment(g * gsize, gsize);
        const double mean_dxh = dxh.mean();
        const double mean_dxh_xh = (dxh * xh).mean();
        x->grad.segment(g * gsize, gsize) +=
            inv_sigma[g] * (dxh - mean_dxh - xh * mean_dxh_xh);
      }
    }
  };
  return t;
}

Ptr upsample_nearest2x(const Ptr& x) {
  if (x->shape.size() != 3) throw Error("ad", "upsample_nearest2x: expected [C,H,W]");
  const int c = x->shape[0], h = x->shape[1], w = x->shape[2];
  auto t = make_node({c, 2 * h, 2 * w}, static_cast<Eigen::Index>(c) * 4 * h * w, {x});
  for (int ch = 0; ch < c; ++ch) {
    const Eigen::Index src_plane = static_cast<Eigen::Index>(ch) * h * w;
    const Eigen::Index dst_plane = static_cast<Eigen::Index>(ch) * 4 * h * w;
    for (int y = 0; y < 2 * h; ++y)
      for (int xx = 0; xx < 2 * w; ++xx)
        t->value[dst_plane + static_cast<Eigen::Index>(y) * 2 * w + xx] =
            x->value[src_plane + static_cast<Eigen::Index>(y / 2) * w + xx / 2];
  }
  t->backprop = [c, h, w](Tensor& self) {
    auto& x = self.parents[0];
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int ch = 0; ch < c; ++ch) {
      const Eigen::Index src_plane = static_cast<Eigen::Index>(ch) * h * w;
      const Eigen::Index dst_plane = static_cast<Eigen::Index>(ch) * 4 * h * w;
      for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx)
          x->grad[src_plane + static_cast<Eigen::Index>(y / 2) * w + xx / 2] +=
              self.grad[dst_plane + static_cast<Eigen::Index>(y) * 2 * w + xx];
    }
  };
  return t;
}

Ptr resize_bilinear(const Ptr& x, int out_h, int out_w) {
  if (x->shape.size() != 3) throw Error("ad", "resize_bilinear: expected [C,H,W]");
  const int c = x->shape[0], h = x->shape[1], w = x->shape[2];
  if (out_h == h && out_w == w) return x;
  auto t = make_node({c, out_h, out_w}, static_cast<Eigen::Index>(c) * out_h * out_w, {x});
  // Precompute the 4-tap weights once; shared by forward and backward.
  struct Tap {
    int y0, y1, x0, x1;
    double wy, wx;
  };
  std::vector<Tap> taps(static_cast<std::size_t>(out_h) * out_w);
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = (y + 0.5) * sy - 0.5;
    const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, h - 1);
    for (int xx = 0; xx < out_w; ++xx) {
      const double fx = (xx + 0.5) * sx - 0.5;
      const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, w - 1);
      taps[static_cast<std::size_t>(y) * out_w + xx] = {
          y0, std::min(y0 + 1, h - 1), x0, std::min(x0 + 1, w - 1),
          std::clamp(fy - std::floor(fy), 0.0, 1.0), std::clamp(fx - std::floor(fx), 0.0, 1.0)};
    }
  }
  for (int ch = 0; ch < c; ++ch) {
    const Eigen::Index sp = static_cast<Eigen::Index>(ch) * h * w;
    const Eigen::Index dp = static_cast<Eigen::Index>(ch) * out_h * out_w;
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(taps.size()); ++i) {
      const Tap& tp = taps[static_cast<std::size_t>(i)];
      const double top = x->value[sp + static_cast<Eigen::Index>(tp.y0) * w + tp.x0] * (1 - tp.wx) +
                         x->value[sp + static_cast<Eigen::Index>(tp.y0) * w + tp.x1] * tp.wx;
      const double bot = x->value[sp + static_cast<Eigen::Index>(tp.y1) * w + tp.x0] * (1 - tp.wx) +
                         x->value[sp + static_cast<Eigen::Index>(tp.y1) * w + tp.x1] * tp.wx;
      t->value[dp + i] = top * (1 - tp.wy) + bot * tp.wy;
    }
  }
  t->backprop = [c, h, w, out_h, out_w, taps = std::move(taps)](Tensor& self) {
    auto& x = self.parents[0];
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int ch = 0; ch < c; ++ch) {
      const Eigen::Index sp = static_cast<Eigen::Index>(ch) * h * w;
      const Eigen::Index dp = static_cast<Eigen::Index>(ch) * out_h * out_w;
      for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(taps.size()); ++i) {
        const Tap& tp = taps[static_cast<std::size_t>(i)];
        const double g = self.grad[dp + i];
        x->grad[sp + static_cast<Eigen::Index>(tp.y0) * w + tp.x0] += g * (1 - tp.wy) * (1 - tp.wx);
        x->grad[sp + static_cast<Eigen::Index>(tp.y0) * w + tp.x1] += g * (1 - tp.wy) * tp.wx;
        x->grad[sp + static_cast<Eigen::Index>(tp.y1) * w + tp.x0] += g * tp.wy * (1 - tp.wx);
        x->grad[sp + static_cast<Eigen::Index>(tp.y1) * w + tp.x1] += g * tp.wy * tp.wx;
      }
    }
  };
  return t;
}

Ptr bce_with_logits(const Ptr& logits, const Array& targets, const Array& weights) {
  if (targets.size() != logits->size() || weights.size() != logits->size())
    throw Error("ad", "bce_with_logits: size mismatch");
  auto t = make_node(logits->shape, logits->size(), {logits});
  Array sig(logits->size());
  for (Eigen::Index i = 0; i < logits->size(); ++i) {
    const double z = logits->value[i];
    // log(1+e^z) stable form.
    const double softplus = std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
    t->value[i] = weights[i] * (softplus - targets[i] * z);
    sig[i] = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  }
  t->backprop = [targets, weights, sig = std::move(sig)](Tensor& self) {
    auto& z = self.parents[0];
    if (!z->requires_grad) return;
    z->ensure_grad();
    z->grad += self.grad * weights * (sig - targets);
  };
  return t;
}

Ptr sample_uv(const Ptr& texture, const std::vector<UvSample>& samples) {
  if (texture->shape.size() != 3 || texture->shape[0] != 3)
    throw Error("ad", "sample_uv: expected texture [3,H,W]");
  const int h = texture->shape[1], w = texture->shape[2];
  const Eigen::Index n = static_cast<Eigen::Index>(samples.size());
  struct Tap {
    Eigen::Index i00, i01, i10, i11;
    double w00, w01, w10, w11;
  };
  std::vector<Tap> taps(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double u = std::clamp(samples[i].u, 0.0, 1.0);
    const double v = std::clamp(samples[i].v, 0.0, 1.0);
    const double x = u * (w - 1);
    const double y = (1.0 - v) * (h - 1);
    const int x0 = std::clamp(static_cast<int>(std::floor(x)), 0, w - 1);
    const int y0 = std::clamp(static_cast<int>(std::floor(y)), 0, h - 1);
    const int x1 = std::min(x0 + 1, w - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const double wx = x - x0;
    const double wy = y - y0;
    taps[i] = {static_cast<Eigen::Index>(y0) * w + x0, static_cast<Eigen::Index>(y0) * w + x1,
               static_cast<Eigen::Index>(y1) * w + x0, static_cast<Eigen::Index>(y1) * w + x1,
               (1 - wy) * (1 - wx), (1 - wy) * wx, wy * (1 - wx), wy * wx};
  }
  auto t = make_node({3, static_cast<int>(n)}, 3 * n, {texture});
  const Eigen::Index plane = static_cast<Eigen::Index>(h) * w;
  for (int c = 0; c < 3; ++c)
    for (Eigen::Index i = 0; i < n; ++i) {
      const Tap& tp = taps[static_cast<std::size_t>(i)];
      t->value[c * n + i] = texture->value[c * plane + tp.i00] * tp.w00 +
                            texture->value[c * plane + tp.i01] * tp.w01 +
                            texture->value[c * plane + tp.i10] * tp.w10 +
                            texture->value[c * plane + tp.i11] * tp.w11;
    }
  t->backprop = [n, plane, taps = std::move(taps)](Tensor& self) {
    auto& tex = self.parents[0];
    if (!tex->requires_grad) return;
    tex->ensure_grad();
    for (int c = 0; c < 3; ++c)
      for (Eigen::Index i = 0; i < n; ++i) {
        const Tap& tp = taps[static_cast<std::size_t>(i)];
        const double g = self.grad[c * n + i];
        tex->grad[c * plane + tp.i00] += g * tp.w00;
        tex->grad[c * plane + tp.i01] += g * tp.w01;
        tex->grad[c * plane + tp.i10] += g * tp.w10;
        tex->grad[c * plane + tp.i11] += g * tp.w11;
      }
  };
  return t;
}

Ptr scatter_pixels(const Image& base, const std::vector<int>& pixel_indices, const Ptr& values) {
  if (base.channels != 3) throw Error("ad", "scatter_pixels: base must be RGB");
  if (values->shape.size() != 2 || values->shape[0] != 3 ||
      values->shape[1] != static_cast<int>(pixel_indices.size()))
    throw Error("ad", "scatter_pixels: values must be [3,N]");
  const int h = base.height, w = base.width;
  const Eigen::Index plane = static_cast<Eigen::Index>(h) * w;
  const Eigen::Index n = static_cast<Eigen::Index>(pixel_indices.size());
  auto t = make_node({3, h, w}, 3 * plane, {values});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        t->value[c * plane + static_cast<Eigen::Index>(y) * w + x] = base.at(y, x, c);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int p = pixel_indices[static_cast<std::size_t>(i)];
    if (p < 0 || p >= plane) throw Error("ad", "scatter_pixels: pixel index out of range");
    for (int c = 0; c < 3; ++c) t->value[c * plane + p] = values->value[c * n + i];
  }
  t->backprop = [plane, n, idx = pixel_indices](Tensor& self) {
    auto& vals = self.parents[0];
    if (!vals->requires_grad) return;
    vals->ensure_grad();
    for (Eigen::Index i = 0; i < n; ++i)
      for (int c = 0; c < 3; ++c)
        vals->grad[c * n + i] += self.grad[c * plane + idx[static_cast<std::size_t>(i)]];
  };
  return t;
}

void backward(const Ptr& root) {
  if (!root) throw Error("ad", "backward: null root");
  if (root->size() != 1) throw Error("ad", "backward: root must be scalar");
  if (!root->requires_grad)
    throw Error("ad", "backward: no differentiable leaves reachable from root");

  // Post-order DFS over grad-requiring subgraph.
  std::vector<Tensor*> order;
  std::unordered_set<Tensor*> visited;
  struct Frame {
    Tensor* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      Tensor* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  for (Tensor* t : order) t->ensure_grad();
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backprop) (*it)->backprop(**it);
}

void adam_step(std::vector<Ptr>& params, AdamState& state) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i] = Array::Zero(params[i]->size());
      state.v[i] = Array::Zero(params[i]->size());
    }
  }
  if (state.m.size() != params.size())
    throw Error("ad", "adam_step: parameter count changed");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    p.ensure_grad();
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * p.grad;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * p.grad.square();
    const Array mhat = state.m[i] / bc1;
    const Array vhat = state.v[i] / bc2;
    p.value -= state.lr * mhat / (vhat.sqrt() + state.eps);
    p.grad.setZero();
  }
}

}  // namespace camo::ad
