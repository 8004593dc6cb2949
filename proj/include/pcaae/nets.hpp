#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pcaae/ops.hpp"
#include "pcaae/rng.hpp"
#include "pcaae/tape.hpp"

namespace pcaae::nets {

inline constexpr double kLeakySlope = 0.2;

template <typename T>
using ParamRefs = std::vector<Parameter<T>*>;

/// Uniform He-style fan-in scaling: U(−√(6/fan_in), √(6/fan_in)), std √(2/fan_in).
template <typename T>
void init_he_uniform(Parameter<T>& p, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : p.value.values()) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
std::uint64_t params_checksum(const ParamRefs<T>& params) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto* p : params) {
    h = fnv1a(p->name.data(), p->name.size(), h);
    h = checksum(p->value, h);
  }
  return h;
}

template <typename T>
Var<T> apply_leaky(const Var<T>& x) {
  return ops::leaky_relu(x, static_cast<T>(kLeakySlope));
}

inline std::size_t log2_exact(std::size_t s, const char* what) {
  if (s < 2 || !std::has_single_bit(s))
    throw DimensionError(std::string(what) + ": image size must be a power of two >= 2, got " + std::to_string(s));
  return static_cast<std::size_t>(std::countr_zero(s));
}

/// Fully connected layer, y = x·W + b with W[in×out].
template <typename T>
class Dense {
 public:
  Dense() = default;
  Dense(const std::string& name, std::size_t in, std::size_t out, Rng& rng)
      : weight_{name + ".w", Tensor<T>({in, out}), {}}, bias_{name + ".b", Tensor<T>({out}), {}} {
    init_he_uniform(weight_, in, rng);
  }

  Var<T> operator()(Tape<T>& tape, const Var<T>& x, bool trainable) {
    return ops::add_row_bias(ops::matmul(x, tape.param(weight_, trainable)), tape.param(bias_, trainable));
  }

  void collect(ParamRefs<T>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  Parameter<T> weight_;
  Parameter<T> bias_;
};

/// Kernel-4, stride-2, padding-1 convolution (or its transpose) with a channel bias.
template <typename T>
class StridedConv {
 public:
  StridedConv() = default;
  StridedConv(const std::string& name, std::size_t in_ch, std::size_t out_ch, bool transpose, Rng& rng)
      : transpose_(transpose),
        weight_{name + ".w", Tensor<T>(transpose ? Shape{in_ch, out_ch, 4, 4} : Shape{out_ch, in_ch, 4, 4}), {}},
        bias_{name + ".b", Tensor<T>({out_ch}), {}} {
    // A transposed stride-2 kernel-4 layer feeds each output pixel from 2×2 taps per input channel.
    init_he_uniform(weight_, transpose ? in_ch * 4 : in_ch * 16, rng);
  }

  Var<T> operator()(Tape<T>& tape, const Var<T>& x, bool trainable) {
    auto w = tape.param(weight_, trainable);
    auto y = transpose_ ? ops::conv2d_transpose(x, w) : ops::conv2d(x, w);
    return ops::add_channel_bias(y, tape.param(bias_, trainable));
  }

  void collect(ParamRefs<T>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  bool transpose_ = false;
  Parameter<T> weight_;
  Parameter<T> bias_;
};

/// Strided CNN: B×1×s×s → B×out. Feature counts halve with resolution
/// (s/2, s/4, …, 2) and end at `out` channels on a 1×1 grid; (32,16,8,4,2,1)
/// for s = 64. Leaky ReLU after every layer but the last.
template <typename T>
class ConvEncoder {
 public:
  ConvEncoder() = default;
  ConvEncoder(const std::string& name, std::size_t image_size, std::uint64_t seed, std::size_t out = 1)
      : image_size_(image_size), out_(out) {
    const std::size_t layers = log2_exact(image_size, "ConvEncoder");
    Rng rng(seed);
    std::size_t in_ch = 1;
    for (std::size_t l = 0; l < layers; ++l) {
      const std::size_t ch = (l + 1 == layers) ? out : (image_size >> (l + 1));
      layers_.emplace_back(name + ".conv" + std::to_string(l), in_ch, ch, false, rng);
      in_ch = ch;
    }
  }

  Var<T> forward(Tape<T>& tape, const Var<T>& x, bool trainable) {
    const Shape& s = x.shape();
    if (s.size() != 4 || s[1] != 1 || s[2] != image_size_ || s[3] != image_size_)
      throw DimensionError("ConvEncoder expects Bx1x" + std::to_string(image_size_) + "x" +
                           std::to_string(image_size_) + ", got " + shape_str(s));
    Var<T> h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      h = layers_[l](tape, h, trainable);
      if (l + 1 < layers_.size()) h = apply_leaky(h);
    }
    return ops::reshape(h, {s[0], out_});
  }

  ParamRefs<T> params() {
    ParamRefs<T> out;
    for (auto& l : layers_) l.collect(out);
    return out;
  }

  std::size_t image_size() const { return image_size_; }
  std::size_t out_features() const { return out_; }

 private:
  std::size_t image_size_ = 0;
  std::size_t out_ = 1;
  std::vector<StridedConv<T>> layers_;
};

/// Mirror of ConvEncoder for a latent of size i: B×i → B×1×s×s. Resolution r
/// carries r·i features (2i, 4i, …, (s/2)·i), a last layer maps to one
/// channel, and a sigmoid keeps pixels in (0, 1).
template <typename T>
class ConvDecoder {
 public:
  ConvDecoder() = default;
  ConvDecoder(const std::string& name, std::size_t latent, std::size_t image_size, std::uint64_t seed)
      : latent_(latent), image_size_(image_size) {
    const std::size_t layers = log2_exact(image_size, "ConvDecoder");
    Rng rng(seed);
    std::size_t in_ch = latent;
    for (std::size_t l = 0; l < layers; ++l) {
      const std::size_t ch = (l + 1 == layers) ? 1 : (std::size_t{2} << l) * latent;
      layers_.emplace_back(name + ".deconv" + std::to_string(l), in_ch, ch, true, rng);
      in_ch = ch;
    }
  }

  Var<T> forward(Tape<T>& tape, const Var<T>& z, bool trainable) {
    const Shape& s = z.shape();
    if (s.size() != 2 || s[1] != latent_)
      throw DimensionError("ConvDecoder expects Bx" + std::to_string(latent_) + ", got " + shape_str(s));
    Var<T> h = ops::reshape(z, {s[0], latent_, 1, 1});
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      h = layers_[l](tape, h, trainable);
      h = (l + 1 < layers_.size()) ? apply_leaky(h) : ops::sigmoid(h);
    }
    return h;
  }

  ParamRefs<T> params() {
    ParamRefs<T> out;
    for (auto& l : layers_) l.collect(out);
    return out;
  }

  std::size_t latent() const { return latent_; }

 private:
  std::size_t latent_ = 0;
  std::size_t image_size_ = 0;
  std::vector<StridedConv<T>> layers_;
};

/// Two fully connected layers in → 64 → 1, leaky ReLU after each.
template <typename T>
class FcEncoder {
 public:
  FcEncoder() = default;
  FcEncoder(const std::string& name, std::size_t in, std::uint64_t seed, std::size_t hidden = 64) {
    Rng rng(seed);
    l1_ = Dense<T>(name + ".fc0", in, hidden, rng);
    l2_ = Dense<T>(name + ".fc1", hidden, 1, rng);
  }

  Var<T> forward(Tape<T>& tape, const Var<T>& x, bool trainable) {
    return apply_leaky(l2_(tape, apply_leaky(l1_(tape, x, trainable)), trainable));
  }

  ParamRefs<T> params() {
    ParamRefs<T> out;
    l1_.collect(out);
    l2_.collect(out);
    return out;
  }

 private:
  Dense<T> l1_, l2_;
};

/// i → 64·i (leaky ReLU) → out, linear output.
template <typename T>
class FcDecoder {
 public:
  FcDecoder() = default;
  FcDecoder(const std::string& name, std::size_t latent, std::size_t out, std::uint64_t seed, std::size_t hidden = 64)
      : latent_(latent) {
    Rng rng(seed);
    l1_ = Dense<T>(name + ".fc0", latent, hidden * latent, rng);
    l2_ = Dense<T>(name + ".fc1", hidden * latent, out, rng);
  }

  Var<T> forward(Tape<T>& tape, const Var<T>& z, bool trainable) {
    return l2_(tape, apply_leaky(l1_(tape, z, trainable)), trainable);
  }

  ParamRefs<T> params() {
    ParamRefs<T> out;
    l1_.collect(out);
    l2_.collect(out);
    return out;
  }

  std::size_t latent() const { return latent_; }

 private:
  std::size_t latent_ = 0;
  Dense<T> l1_, l2_;
};

/// Five dense layers (8i, 8i, 8i, 8i, 1) over an i-dimensional code; sigmoid output.
template <typename T>
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(const std::string& name, std::size_t latent, std::uint64_t seed) : latent_(latent) {
    Rng rng(seed);
    std::size_t in = latent;
    for (std::size_t l = 0; l < 5; ++l) {
      const std::size_t out = (l == 4) ? 1 : 8 * latent;
      layers_.emplace_back(name + ".fc" + std::to_string(l), in, out, rng);
      in = out;
    }
  }

  Var<T> forward(Tape<T>& tape, const Var<T>& z, bool trainable) {
    if (z.shape().size() != 2 || z.shape()[1] != latent_)
      throw DimensionError("Discriminator expects Bx" + std::to_string(latent_) + ", got " + shape_str(z.shape()));
    Var<T> h = z;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      h = layers_[l](tape, h, trainable);
      h = (l + 1 < layers_.size()) ? apply_leaky(h) : ops::sigmoid(h);
    }
    return h;
  }

  ParamRefs<T> params() {
    ParamRefs<T> out;
    for (auto& l : layers_) l.collect(out);
    return out;
  }

  std::size_t latent() const { return latent_; }

 private:
  std::size_t latent_ = 0;
  std::vector<Dense<T>> layers_;
};

enum class NormMode { Train, Eval };

/// Batch normalization of latent columns without any affine parameters.
///
/// Train mode standardizes with the batch's own mean and population variance
/// (so the batch output is exactly zero-mean, unit-variance) and folds those
/// statistics into running averages. Eval mode uses the running averages,
/// with `eps` added to the variance.
template <typename T>
class LatentNorm {
 public:
  LatentNorm() = default;
  explicit LatentNorm(std::size_t width, double momentum = 0.1, double eps = 1e-5)
      : running_mean(Shape{width}, T(0)), running_var(Shape{width}, T(1)), momentum(momentum), eps(eps) {}

  Var<T> forward(Tape<T>& tape, const Var<T>& z, NormMode mode) {
    const std::size_t width = running_mean.size();
    if (z.shape().size() != 2 || z.shape()[1] != width)
      throw DimensionError("LatentNorm expects Bx" + std::to_string(width) + ", got " + shape_str(z.shape()));
    if (mode == NormMode::Train) {
      ops::ColumnStats<T> stats;
      auto out = ops::standardize_columns(z, &stats);
      for (std::size_t c = 0; c < width; ++c) {
        running_mean[c] = static_cast<T>((1.0 - momentum) * running_mean[c] + momentum * stats.mean[c]);
        running_var[c] = static_cast<T>((1.0 - momentum) * running_var[c] + momentum * stats.var[c]);
      }
      return out;
    }
    const std::size_t rows = z.shape()[0];
    Tensor<T> shift({width}), gain({rows, width});
    for (std::size_t c = 0; c < width; ++c) {
      shift[c] = -running_mean[c];
      const T g = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[c]) + eps));
      for (std::size_t r = 0; r < rows; ++r) gain[r * width + c] = g;
    }
    return ops::mul(ops::add_row_bias(z, tape.constant(std::move(shift))), tape.constant(std::move(gain)));
  }

  Tensor<T> running_mean;
  Tensor<T> running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

}  // namespace pcaae::nets
