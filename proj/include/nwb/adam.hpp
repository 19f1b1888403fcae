#pragma once

#include "nwb/networks.hpp"

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace nwb {

enum class Direction { Minimize, Maximize };

/// Adam moments for one network. Moment tensors are created lazily on the
/// first step with the shapes of the parameter blocks.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t t = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

/// One bias-corrected Adam update of every block. Maximize ascends.
inline void adam_step(AdamState& s, std::vector<ParamBlock>& params, std::span<const Tensor> grads, double lr,
                      Direction dir) {
  if (grads.size() != params.size()) throw ShapeError("adam_step: gradient count differs from parameter count");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (!grads[i].same_shape(params[i].value))
      throw ShapeError("adam_step: gradient " + grads[i].shape_str() + " for parameter '" + params[i].name + "' " +
                       params[i].value.shape_str());
  if (s.m.empty()) {
    for (const auto& p : params) {
      s.m.emplace_back(p.value.rows(), p.value.cols(), 0.0);
      s.v.emplace_back(p.value.rows(), p.value.cols(), 0.0);
    }
  }
  ++s.t;
  const double sign = dir == Direction::Maximize ? -1.0 : 1.0;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix g = sign * grads[i].mat();
    auto m = s.m[i].mat().array();
    auto v = s.v[i].mat().array();
    m = s.beta1 * m + (1.0 - s.beta1) * g.array();
    v = s.beta2 * v + (1.0 - s.beta2) * g.array().square();
    params[i].value.mat().array() -= lr * (m / c1) / ((v / c2).sqrt() + s.eps);
  }
}

}  // namespace nwb
