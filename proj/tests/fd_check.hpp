// Shared finite-difference gradient checking helpers for test binaries.
#pragma once

#include <algorithm>
#include <functional>
#include <utility>
#include <vector>

#include "camo/ad.hpp"
#include "camo/rng.hpp"

namespace testutil {

inline camo::ad::Array random_array(camo::Rng& rng, Eigen::Index n, double lo = -1.0,
                                    double hi = 1.0) {
  camo::ad::Array a(n);
  for (Eigen::Index i = 0; i < n; ++i) a[i] = rng.uniform(lo, hi);
  return a;
}

// Central-difference check of d(root)/d(leaf) for every leaf. The builder is
// re-invoked per evaluation so each perturbation sees a fresh graph.
using Builder = std::function<camo::ad::Ptr(std::vector<camo::ad::Ptr>&)>;

inline double max_fd_error(const Builder& build,
                           const std::vector<std::pair<camo::ad::Shape, camo::ad::Array>>& inits,
                           double h = 1e-5, int max_checks_per_leaf = 64) {
  namespace ad = camo::ad;
  auto make_leaves = [&]() {
    std::vector<ad::Ptr> leaves;
    leaves.reserve(inits.size());
    for (const auto& [shape, value] : inits) leaves.push_back(ad::leaf(shape, value));
    return leaves;
  };
  auto eval = [&](std::size_t li, Eigen::Index idx, double delta) {
    auto leaves = make_leaves();
    leaves[li]->value[idx] += delta;
    return build(leaves)->value[0];
  };

  auto leaves = make_leaves();
  auto root = build(leaves);
  ad::backward(root);

  double worst = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    const Eigen::Index n = leaves[li]->size();
    const Eigen::Index step = std::max<Eigen::Index>(1, n / max_checks_per_leaf);
    for (Eigen::Index idx = 0; idx < n; idx += step) {
      const double numeric = (eval(li, idx, h) - eval(li, idx, -h)) / (2.0 * h);
      worst = std::max(worst, std::abs(numeric - leaves[li]->grad[idx]));
    }
  }
  return worst;
}

}  // namespace testutil
