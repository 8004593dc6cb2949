#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "pcaae/ops.hpp"
#include "pcaae/rng.hpp"

namespace pcaae::testing {

using Graph = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = scale * rng.normal();
  return t;
}

/// Scalarizes a graph output by projecting onto fixed random weights, so every
/// output element contributes to the checked gradient.
inline Graph projected(Graph g, std::uint64_t seed) {
  return [g, seed](Tape<double>& tape, const std::vector<Var<double>>& in) {
    auto out = g(tape, in);
    if (out.value().size() == 1) return out;
    Rng rng(seed);
    auto w = tape.constant(random_tensor(out.shape(), rng));
    return ops::sum(ops::mul(out, w));
  };
}

inline double evaluate(const Graph& g, const std::vector<Tensor<double>>& inputs) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  return g(tape, vars).item();
}

/// Relative error ‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂) over all
/// inputs, with central differences of step `h`.
inline double gradient_error(const Graph& g, std::vector<Tensor<double>> inputs, double h = 1e-5) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  for (const auto& t : inputs) vars.push_back(tape.leaf(t));
  auto loss = g(tape, vars);
  tape.backward(loss);
  double diff = 0, na = 0, nn = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor<double>* analytic = tape.grad(vars[k]);
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double orig = inputs[k][i];
      inputs[k][i] = orig + h;
      const double up = evaluate(g, inputs);
      inputs[k][i] = orig - h;
      const double down = evaluate(g, inputs);
      inputs[k][i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic ? (*analytic)[i] : 0.0;
      diff += (a - numeric) * (a - numeric);
      na += a * a;
      nn += numeric * numeric;
    }
  }
  const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
  return std::sqrt(diff) / denom;
}

}  // namespace pcaae::testing
