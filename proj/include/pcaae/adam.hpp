#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pcaae/nets.hpp"

namespace pcaae {

struct AdamOptions {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction over a fixed list of parameters.
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(nets::ParamRefs<T> params, AdamOptions opts) : params_(std::move(params)), opts_(opts) {
    for (auto* p : params_) {
      first_.emplace_back(p->value.shape());
      second_.emplace_back(p->value.shape());
      p->zero_grad();
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  /// One update from the parameters' accumulated gradients.
  void step() { step(opts_.lr); }

  void step(double lr) {
    for (auto* p : params_) {
      if (p->grad.shape() != p->value.shape())
        throw DimensionError("adam: gradient of " + p->name + " has shape " + shape_str(p->grad.shape()));
      for (auto g : p->grad.values())
        if (!std::isfinite(static_cast<double>(g))) throw TrainingError("non-finite gradient in parameter " + p->name);
    }
    ++steps_;
    const double t = static_cast<double>(steps_);
    const double c1 = 1.0 - std::pow(opts_.beta1, t);
    const double c2 = 1.0 - std::pow(opts_.beta2, t);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Parameter<T>& p = *params_[k];
      Tensor<T>& m = first_[k];
      Tensor<T>& v = second_[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        const double mi = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g;
        const double vi = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g * g;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        p.value[i] = static_cast<T>(p.value[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + opts_.eps));
      }
    }
  }

  std::uint64_t steps() const { return steps_; }
  const AdamOptions& options() const { return opts_; }
  const nets::ParamRefs<T>& params() const { return params_; }
  std::vector<Tensor<T>>& first_moments() { return first_; }
  std::vector<Tensor<T>>& second_moments() { return second_; }
  void set_steps(std::uint64_t s) { steps_ = s; }

 private:
  nets::ParamRefs<T> params_;
  AdamOptions opts_;
  std::vector<Tensor<T>> first_;
  std::vector<Tensor<T>> second_;
  std::uint64_t steps_ = 0;
};

}  // namespace pcaae
