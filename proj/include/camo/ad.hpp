#pragma once

// Reverse-mode automatic differentiation on dense double tensors.
//
// A deliberately small tape engine: enough operations for the texture
// pipeline (bilinear texture sampling, Phong-scaled albedo, compositing),
// the convolutional detector and the encoder-decoder generator. Graphs are
// built per step and freed when the last Ptr goes out of scope. Everything
// is single-threaded and evaluation order is fixed, so results are
// bit-reproducible.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <vector>

#include "camo/common.hpp"
#include "camo/image.hpp"

namespace camo::ad {

using Array = Eigen::ArrayXd;
using Shape = std::vector<int>;

struct Tensor;
using Ptr = std::shared_ptr<Tensor>;

struct Tensor {
  Shape shape;
  Array value;
  Array grad;  // allocated lazily by backward()
  bool requires_grad = false;
  std::vector<Ptr> parents;
  std::function<void(Tensor&)> backprop;

  Eigen::Index size() const { return value.size(); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad = Array::Zero(value.size());
  }
};

Eigen::Index shape_size(const Shape& shape);

// Leaves.
Ptr constant(Shape shape, Array value);
Ptr constant_scalar(double v);
Ptr leaf(Shape shape, Array value);  // trainable / grad-tracked input
Ptr zeros(Shape shape, bool requires_grad = false);

// Image (interleaved HxWxC) <-> tensor ([C,H,W] planar) conversion.
Ptr tensor_from_image(const Image& img, bool requires_grad = false);
Image image_from_tensor(const Tensor& t);

// Elementwise.
Ptr add(const Ptr& a, const Ptr& b);
Ptr sub(const Ptr& a, const Ptr& b);
Ptr mul(const Ptr& a, const Ptr& b);
Ptr scale(const Ptr& a, double s);
Ptr add_scalar(const Ptr& a, double s);
Ptr abs_(const Ptr& a);
Ptr square(const Ptr& a);
Ptr sqrt_(const Ptr& a);       // subgradient 0 at exactly 0
Ptr reciprocal(const Ptr& a);  // 1/x elementwise; x must be nonzero
Ptr sigmoid(const Ptr& a);
Ptr leaky_relu(const Ptr& a, double negative_slope = 0.1);
Ptr clamp01(const Ptr& a);
Ptr vmax(const Ptr& a, const Ptr& b);  // ties route gradient to a
Ptr vmin(const Ptr& a, const Ptr& b);
Ptr relu(const Ptr& a);

// Reductions and indexing.
Ptr sum(const Ptr& a);
Ptr mean(const Ptr& a);
Ptr pick(const Ptr& a, Eigen::Index index);            // scalar element
Ptr gather(const Ptr& a, std::vector<int> indices);    // [n]

// Structure ops ([C,H,W] layout).
Ptr concat_channels(const Ptr& a, const Ptr& b);
Ptr conv2d(const Ptr& x, const Ptr& w, const Ptr& bias, int stride, int pad);
Ptr group_norm(const Ptr& x, const Ptr& gamma, const Ptr& beta, int groups,
               double eps = 1e-5);
Ptr upsample_nearest2x(const Ptr& x);
Ptr resize_bilinear(const Ptr& x, int out_h, int out_w);

// Binary cross entropy with logits against constant targets, elementwise,
// optionally weighted. Numerically stable in both tails.
Ptr bce_with_logits(const Ptr& logits, const Array& targets, const Array& weights);

// Bilinear texture fetch for a list of UV samples; texture is [3,H,W],
// output [3,N]. Same addressing convention as sample_bilinear_uv().
struct UvSample {
  double u = 0;
  double v = 0;
};
Ptr sample_uv(const Ptr& texture, const std::vector<UvSample>& samples);

// Writes per-pixel values [3,N] over a constant base image at the given
// pixel indices (y*W+x); the remaining pixels keep the base values.
Ptr scatter_pixels(const Image& base, const std::vector<int>& pixel_indices,
                   const Ptr& values);

// Backward pass from a scalar root. Grads accumulate into every
// reachable tensor with requires_grad set.
void backward(const Ptr& root);

// Adam with bias correction; moment arrays are index-aligned with params.
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t t = 0;
  std::vector<Array> m;
  std::vector<Array> v;
};

void adam_step(std::vector<Ptr>& params, AdamState& state);

}  // namespace camo::ad
