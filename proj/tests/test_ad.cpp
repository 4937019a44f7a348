#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "camo/ad.hpp"
#include "camo/image.hpp"
#include "camo/rng.hpp"
#include "fd_check.hpp"

namespace ad = camo::ad;
using testutil::max_fd_error;
using testutil::random_array;

TEST_CASE("elementwise ops match finite differences") {
  camo::Rng rng(17);
  const ad::Array x0 = random_array(rng, 24, 0.2, 0.9);
  const ad::Array y0 = random_array(rng, 24, -0.9, -0.2);

  auto check1 = [&](const char* name, std::function<ad::Ptr(const ad::Ptr&)> op,
                    const ad::Array& init) {
    CAPTURE(name);
    const double err = max_fd_error(
        [&](std::vector<ad::Ptr>& ls) { return ad::sum(op(ls[0])); }, {{{24}, init}});
    CHECK(err < 1e-6);
  };

  check1("abs", [](const ad::Ptr& a) { return ad::abs_(a); }, x0);
  check1("reciprocal", [](const ad::Ptr& a) { return ad::reciprocal(a); }, x0);
  check1("square", [](const ad::Ptr& a) { return ad::square(a); }, y0);
  check1("sqrt", [](const ad::Ptr& a) { return ad::sqrt_(a); }, x0);
  check1("sigmoid", [](const ad::Ptr& a) { return ad::sigmoid(a); }, y0);
  check1("leaky_relu", [](const ad::Ptr& a) { return ad::leaky_relu(a, 0.1); }, y0);
  check1("relu", [](const ad::Ptr& a) { return ad::relu(a); }, x0);
  check1("scale", [](const ad::Ptr& a) { return ad::scale(a, -2.5); }, x0);
  check1("add_scalar", [](const ad::Ptr& a) { return ad::square(ad::add_scalar(a, 0.3)); }, x0);
  check1("mean", [](const ad::Ptr& a) { return ad::mean(ad::square(a)); }, x0);

  const double err2 = max_fd_error(
      [&](std::vector<ad::Ptr>& ls) {
        auto prod = ad::mul(ls[0], ls[1]);
        auto diff = ad::sub(ls[0], ls[1]);
        return ad::sum(ad::add(ad::square(prod), ad::abs_(diff)));
      },
      {{{24}, x0}, {{24}, y0}});
  CHECK(err2 < 1e-6);
}

TEST_CASE("clamp01 passes gradient only inside the box") {
  ad::Array v(4);
  v << -0.5, 0.25, 0.75, 1.5;
  auto x = ad::leaf({4}, v);
  auto root = ad::sum(ad::clamp01(x));
  ad::backward(root);
  CHECK(x->grad[0] == 0.0);
  CHECK(x->grad[1] == 1.0);
  CHECK(x->grad[2] == 1.0);
  CHECK(x->grad[3] == 0.0);
}

TEST_CASE("vmax and vmin route gradients to the winning input") {
  ad::Array a0(3), b0(3);
  a0 << 1.0, -2.0, 0.5;
  b0 << 0.0, 3.0, 0.5;
  auto a = ad::leaf({3}, a0);
  auto b = ad::leaf({3}, b0);
  ad::backward(ad::sum(ad::vmax(a, b)));
  CHECK(a->grad[0] == 1.0);
  CHECK(b->grad[0] == 0.0);
  CHECK(a->grad[1] == 0.0);
  CHECK(b->grad[1] == 1.0);
  // Exact ties go to the first argument.
  CHECK(a->grad[2] == 1.0);
  CHECK(b->grad[2] == 0.0);

  auto c = ad::leaf({3}, a0);
  auto d = ad::leaf({3}, b0);
  ad::backward(ad::sum(ad::vmin(c, d)));
  CHECK(c->grad[0] == 0.0);
  CHECK(d->grad[0] == 1.0);
  CHECK(c->grad[1] == 1.0);
  CHECK(d->grad[1] == 0.0);
  CHECK(c->grad[2] == 1.0);
}

TEST_CASE("pick and gather index into flat storage") {
  camo::Rng rng(3);
  const ad::Array x0 = random_array(rng, 12);
  const double err = max_fd_error(
      [&](std::vector<ad::Ptr>& ls) {
        auto g = ad::gather(ls[0], {0, 5, 5, 11});
        return ad::add(ad::sum(ad::square(g)), ad::pick(ls[0], 3));
      },
      {{{12}, x0}});
  CHECK(err < 1e-6);

  auto x = ad::leaf({12}, x0);
  auto g = ad::gather(x, {2, 2, 2});
  CHECK(g->value[0] == x0[2]);
  ad::backward(ad::sum(g));
  CHECK(x->grad[2] == doctest::Approx(3.0));
}

TEST_CASE("shared subexpressions accumulate once per path") {
  ad::Array v(1);
  v << 3.0;
  auto x = ad::leaf({1}, v);
  auto y = ad::mul(x, x);            // x^2
  auto z = ad::add(y, ad::scale(y, 2.0));  // 3 x^2, y reused
  ad::backward(ad::sum(z));
  CHECK(x->grad[0] == doctest::Approx(18.0));  // d(3x^2)/dx = 6x
}

TEST_CASE("conv2d matches a naive loop and finite differences") {
  camo::Rng rng(101);
  const int ci = 2, h = 5, w = 6, co = 3, k = 3;
  const ad::Array x0 = random_array(rng, ci * h * w);
  const ad::Array w0 = random_array(rng, co * ci * k * k, -0.5, 0.5);
  const ad::Array b0 = random_array(rng, co, -0.2, 0.2);

  for (const auto& [stride, pad] : std::vector<std::pair<int, int>>{{1, 1}, {2, 1}, {1, 0}}) {
    CAPTURE(stride);
    CAPTURE(pad);
    auto x = ad::leaf({ci, h, w}, x0);
    auto wt = ad::leaf({co, ci, k, k}, w0);
    auto bt = ad::leaf({co}, b0);
    auto y = ad::conv2d(x, wt, bt, stride, pad);

    const int ho = (h + 2 * pad - k) / stride + 1;
    const int wo = (w + 2 * pad - k) / stride + 1;
    REQUIRE(y->shape == ad::Shape{co, ho, wo});

    // Direct convolution oracle.
    for (int oc = 0; oc < co; ++oc)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double acc = b0[oc];
          for (int icn = 0; icn < ci; ++icn)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * stride - pad + ky;
                const int ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += x0[(icn * h + iy) * w + ix] * w0[((oc * ci + icn) * k + ky) * k + kx];
              }
          CHECK(y->value[(oc * ho + oy) * wo + ox] == doctest::Approx(acc).epsilon(1e-12));
        }

    const double err = max_fd_error(
        [&](std::vector<ad::Ptr>& ls) {
          return ad::sum(ad::square(ad::conv2d(ls[0], ls[1], ls[2], stride, pad)));
        },
        {{{ci, h, w}, x0}, {{co, ci, k, k}, w0}, {{co}, b0}});
    CHECK(err < 1e-5);
  }
}

TEST_CASE("conv2d without bias") {
  camo::Rng rng(7);
  const ad::Array x0 = random_array(rng, 1 * 4 * 4);
  const ad::Array w0 = random_array(rng, 2 * 1 * 1 * 1);
  const double err = max_fd_error(
      [&](std::vector<ad::Ptr>& ls) {
        return ad::sum(ad::square(ad::conv2d(ls[0], ls[1], nullptr, 1, 0)));
      },
      {{{1, 4, 4}, x0}, {{2, 1, 1, 1}, w0}});
  CHECK(err < 1e-6);
}

TEST_CASE("group_norm normalizes per group and matches finite differences") {
  camo::Rng rng(55);
  const int c = 4, h = 3, w = 3, groups = 2;
  const ad::Array x0 = random_array(rng, c * h * w, -2.0, 2.0);
  ad::Array gamma0 = random_array(rng, c, 0.5, 1.5);
  ad::Array beta0 = random_array(rng, c, -0.3, 0.3);

  auto x = ad::leaf({c, h, w}, x0);
  auto gm = ad::leaf({c}, gamma0);
  auto bt = ad::leaf({c}, beta0);
  auto y = ad::group_norm(x, gm, bt, groups);

  // Undo the affine part; each group must be zero-mean unit-variance.
  const int cpg = c / groups;
  const int plane = h * w;
  for (int g = 0; g < groups; ++g) {
    double mean = 0, var = 0;
    std::vector<double> xhat;
    for (int cc = g * cpg; cc < (g + 1) * cpg; ++cc)
      for (int i = 0; i < plane; ++i)
        xhat.push_back((y->value[cc * plane + i] - beta0[cc]) / gamma0[cc]);
    for (double v : xhat) mean += v;
    mean /= static_cast<double>(xhat.size());
    for (double v : xhat) var += (v - mean) * (v - mean);
    var /= static_cast<double>(xhat.size());
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));  // eps shifts variance slightly
  }

  const double err = max_fd_error(
      [&](std::vector<ad::Ptr>& ls) {
        return ad::sum(ad::square(ad::group_norm(ls[0], ls[1], ls[2], groups)));
      },
      {{{c, h, w}, x0}, {{c}, gamma0}, {{c}, beta0}});
  CHECK(err < 1e-5);
}

TEST_CASE("upsample_nearest2x repeats texels and splits gradient") {
  camo::Rng rng(9);
  const ad::Array x0 = random_array(rng, 2 * 2 * 3);
  auto x = ad::leaf({2, 2, 3}, x0);
  auto y = ad::upsample_nearest2x(x);
  REQUIRE(y->shape == ad::Shape{2, 4, 6});
  CHECK(y->value[0] == x0[0]);
  CHECK(y->value[1] == x0[0]);
  CHECK(y->value[6] == x0[0]);

  const double err = max_fd_error(
      [&](std::vector<ad::Ptr>& ls) { return ad::sum(ad::square(ad::upsample_nearest2x(ls[0]))); },
      {{{2, 2, 3}, x0}});
  CHECK(err < 1e-6);
}

TEST_CASE("resize_bilinear agrees with the image resampler") {
  camo::Rng rng(31);
  camo::Image img(5, 7, 3);
  for (double& p : img.pix) p = rng.uniform();
  auto x = ad::tensor_from_image(img, true);
  auto y = ad::resize_bilinear(x, 9, 4);
  const camo::Image ref = camo::resize_bilinear(img, 9, 4);
  const camo::Image got = ad::image_from_tensor(*y);
  REQUIRE(got.same_shape(ref));
  for (std::size_t i = 0; i < ref.pix.size(); ++i)
    CHECK(got.pix[i] == doctest::Approx(ref.pix[i]).epsilon(1e-12));

  const ad::Array x0 = x->value;
  const double err = max_fd_error(
      [&](std::vector<ad::Ptr>& ls) {
        return ad::sum(ad::square(ad::resize_bilinear(ls[0], 9, 4)));
      },
      {{{3, 5, 7}, x0}});
  CHECK(err < 1e-6);
}

TEST_CASE("bce_with_logits is stable and differentiable") {
  ad::Array z0(4);
  z0 << -30.0, -0.5, 0.5, 30.0;
  ad::Array targets(4);
  targets << 0.0, 1.0, 0.0, 1.0;
  ad::Array weights(4);
  weights << 1.0, 2.0, 1.0, 1.0;

  auto z = ad::leaf({4}, z0);
  auto loss = ad::bce_with_logits(z, targets, weights);
  // Extreme logits with matching targets give ~0 loss, no overflow.
  CHECK(loss->value[0] == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(loss->value[3] == doctest::Approx(0.0).epsilon(1e-10));
  // Reference: w * (softplus(z) - t z).
  const double expect1 = 2.0 * (std::log1p(std::exp(-0.5)) - 1.0 * -0.5);
  CHECK(loss->value[1] == doctest::Approx(expect1).epsilon(1e-12));

  const double err = max_fd_error(
      [&](std::vector<ad::Ptr>& ls) {
        return ad::sum(ad::bce_with_logits(ls[0], targets, weights));
      },
      {{{4}, z0}});
  CHECK(err < 1e-6);
}

TEST_CASE("sample_uv matches the image sampler and backpropagates to texels") {
  camo::Rng rng(77);
  camo::Image tex(6, 8, 3);
  for (double& p : tex.pix) p = rng.uniform();

  std::vector<ad::UvSample> samples;
  for (int i = 0; i < 20; ++i) samples.push_back({rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)});
  samples.push_back({0.0, 0.0});
  samples.push_back({1.0, 1.0});

  auto t = ad::tensor_from_image(tex, true);
  auto out = ad::sample_uv(t, samples);
  REQUIRE(out->shape == ad::Shape{3, static_cast<int>(samples.size())});
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto rgb = camo::sample_bilinear_uv(tex, samples[i].u, samples[i].v);
    for (int c = 0; c < 3; ++c)
      CHECK(out->value[c * static_cast<int>(samples.size()) + static_cast<int>(i)] ==
            doctest::Approx(rgb[static_cast<std::size_t>(c)]).epsilon(1e-12));
  }

  // FD only over interior samples; corners sit on clamp boundaries.
  std::vector<ad::UvSample> interior(samples.begin(), samples.end() - 2);
  const ad::Array tex0 = t->value;
  const double err = max_fd_error(
      [&](std::vector<ad::Ptr>& ls) {
        return ad::sum(ad::square(ad::sample_uv(ls[0], interior)));
      },
      {{{3, 6, 8}, tex0}});
  CHECK(err < 1e-6);
}

TEST_CASE("scatter_pixels overwrites listed pixels and passes gradient through") {
  camo::Rng rng(13);
  camo::Image base(4, 5, 3);
  for (double& p : base.pix) p = rng.uniform();
  const std::vector<int> idx{0, 7, 19};
  const ad::Array v0 = random_array(rng, 3 * 3, 0.0, 1.0);

  auto vals = ad::leaf({3, 3}, v0);
  auto out = ad::scatter_pixels(base, idx, vals);
  REQUIRE(out->shape == ad::Shape{3, 4, 5});
  // Untouched pixel keeps the base value.
  CHECK(out->value[1] == doctest::Approx(base.at(0, 1, 0)));
  // Scattered pixel takes the new value (index 7 = row 1, col 2).
  CHECK(out->value[7] == doctest::Approx(v0[1]));
  CHECK(out->value[20 + 7] == doctest::Approx(v0[3 + 1]));

  const double err = max_fd_error(
      [&](std::vector<ad::Ptr>& ls) {
        return ad::sum(ad::square(ad::scatter_pixels(base, idx, ls[0])));
      },
      {{{3, 3}, v0}});
  CHECK(err < 1e-6);
}

TEST_CASE("concat_channels stacks planes in order") {
  camo::Rng rng(4);
  const ad::Array a0 = random_array(rng, 2 * 3 * 3);
  const ad::Array b0 = random_array(rng, 1 * 3 * 3);
  const double err = max_fd_error(
      [&](std::vector<ad::Ptr>& ls) {
        return ad::sum(ad::square(ad::concat_channels(ls[0], ls[1])));
      },
      {{{2, 3, 3}, a0}, {{1, 3, 3}, b0}});
  CHECK(err < 1e-6);

  auto a = ad::leaf({2, 3, 3}, a0);
  auto b = ad::leaf({1, 3, 3}, b0);
  auto c = ad::concat_channels(a, b);
  REQUIRE(c->shape == ad::Shape{3, 3, 3});
  CHECK(c->value[0] == a0[0]);
  CHECK(c->value[18] == b0[0]);
}

TEST_CASE("image round trip preserves layout") {
  camo::Rng rng(2);
  camo::Image img(3, 4, 3);
  for (double& p : img.pix) p = rng.uniform();
  auto t = ad::tensor_from_image(img);
  REQUIRE(t->shape == ad::Shape{3, 3, 4});
  CHECK(t->value[0] == img.at(0, 0, 0));
  CHECK(t->value[12] == img.at(0, 0, 1));  // channel plane offset
  const camo::Image back = ad::image_from_tensor(*t);
  REQUIRE(back.same_shape(img));
  for (std::size_t i = 0; i < img.pix.size(); ++i) CHECK(back.pix[i] == img.pix[i]);
}

TEST_CASE("adam matches the reference update and minimizes a quadratic") {
  // One hand-checked step: m = (1-b1) g, v = (1-b2) g^2, update = lr * g/|g|.
  ad::Array x0(2);
  x0 << 5.0, -3.0;
  auto x = ad::leaf({2}, x0);
  ad::AdamState st;
  st.lr = 0.1;
  std::vector<ad::Ptr> params{x};

  auto root = ad::sum(ad::square(x));
  ad::backward(root);
  ad::adam_step(params, st);
  // Bias-corrected mhat/sqrt(vhat) = sign(g) when t=1, up to eps.
  CHECK(x->value[0] == doctest::Approx(5.0 - 0.1).epsilon(1e-6));
  CHECK(x->value[1] == doctest::Approx(-3.0 + 0.1).epsilon(1e-6));
  CHECK(st.t == 1);

  for (int i = 0; i < 400; ++i) {
    auto r = ad::sum(ad::square(x));
    ad::backward(r);
    ad::adam_step(params, st);
  }
  CHECK(std::abs(x->value[0]) < 1e-2);
  CHECK(std::abs(x->value[1]) < 1e-2);
}

TEST_CASE("backward rejects non-scalar roots and constant graphs") {
  auto c = ad::constant_scalar(1.0);
  CHECK_THROWS_AS(ad::backward(c), camo::Error);
  auto x = ad::leaf({3}, ad::Array::Zero(3));
  CHECK_THROWS_AS(ad::backward(x), camo::Error);
}
