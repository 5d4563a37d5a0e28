#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "kdream/autodiff.hpp"
#include "kdream/error.hpp"

namespace kdream::optim {

enum class Kind { kSgd, kAdam };

inline Kind parse_kind(const std::string& s) {
  if (s == "sgd") return Kind::kSgd;
  if (s == "adam") return Kind::kAdam;
  throw Error(ErrorKind::kInvalidArgument, "unknown optimizer '" + s + "' (expected sgd or adam)");
}

inline std::string to_string(Kind k) { return k == Kind::kSgd ? "sgd" : "adam"; }

/// First-order update over a flat list of parameter tensors.
class Optimizer {
 public:
  Optimizer(Kind kind, double learning_rate, const std::vector<ad::Tensor>& params)
      : kind_(kind), lr_(learning_rate) {
    if (kind_ == Kind::kAdam)
      for (const auto& p : params) {
        m_.emplace_back(p.rows(), p.cols());
        v_.emplace_back(p.rows(), p.cols());
      }
  }

  void step(std::vector<ad::Tensor>& params, const std::vector<ad::Tensor>& grads) {
    ++t_;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& p = params[k];
      const auto& g = grads[k];
      if (kind_ == Kind::kSgd) {
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr_ * g[i];
        continue;
      }
      for (std::size_t i = 0; i < p.size(); ++i) {
        m_[k][i] = b1 * m_[k][i] + (1 - b1) * g[i];
        v_[k][i] = b2 * v_[k][i] + (1 - b2) * g[i] * g[i];
        p[i] -= lr_ * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + eps);
      }
    }
  }

 private:
  Kind kind_;
  double lr_;
  long t_ = 0;
  std::vector<ad::Tensor> m_, v_;
};

/// Exponential moving average of parameters.
inline void ema_update(std::vector<ad::Tensor>& shadow, const std::vector<ad::Tensor>& params, double decay) {
  for (std::size_t k = 0; k < params.size(); ++k)
    for (std::size_t i = 0; i < params[k].size(); ++i)
      shadow[k][i] = decay * shadow[k][i] + (1 - decay) * params[k][i];
}

}  // namespace kdream::optim
