#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "pcaae/adam.hpp"
#include "pcaae/checkpoint.hpp"
#include "pcaae/ellipse.hpp"
#include "pcaae/nets.hpp"

namespace pcaae {

enum class ModelKind : std::int64_t { Pcaae = 0, Vanilla = 1, Pcawae = 2, Surgery = 3 };

inline const char* kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::Pcaae: return "pcaae";
    case ModelKind::Vanilla: return "vanilla";
    case ModelKind::Pcawae: return "pcawae";
    case ModelKind::Surgery: return "surgery";
  }
  return "?";
}

struct TrainConfig {
  std::size_t latent_max = 3;
  double lambda_cov = 1.0;
  double lambda_adv = 0.1;
  AdamOptions adam{};
  std::size_t batch_size = 64;
  std::size_t steps_per_stage = 8000;
  std::uint64_t seed = 1;
  std::size_t image_size = 32;
  std::string dataset_path;
  std::string checkpoint_dir;

  void validate() const {
    if (latent_max < 1) throw ConfigError("latent_max must be >= 1");
    if (!(lambda_cov >= 0)) throw ConfigError("lambda_cov must be >= 0");
    if (!(lambda_adv >= 0)) throw ConfigError("lambda_adv must be >= 0");
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
    if (steps_per_stage < 1) throw ConfigError("steps_per_stage must be >= 1");
    if (!(adam.lr > 0)) throw ConfigError("lr must be > 0");
  }
};

/// Seed tags; each network and stream draws from its own derived seed so that
/// adding a consumer never perturbs another one.
namespace seed_tag {
inline constexpr std::uint64_t kEncoder = 1, kDecoder = 2, kBatches = 3, kDiscriminator = 4, kPrior = 5,
                               kPerturb = 6;
}

/// Σ_{j<i} ((1/B) Σ_k z_j⁽ᵏ⁾ z_i⁽ᵏ⁾)² over a [B×i] code, i the last column.
/// Only the last column receives gradient. Exactly 0 when i = 1.
template <typename T>
Var<T> cov_loss(const Var<T>& z) {
  const Shape& s = z.shape();
  if (s.size() != 2) throw DimensionError("cov_loss expects a BxI code, got " + shape_str(s));
  Tape<T>& tape = z.tape();
  if (s[1] < 2) return tape.constant(Tensor<T>::scalar(T(0)));
  if (s[0] < 2) throw DimensionError("cov_loss needs a batch of at least 2, got " + shape_str(s));
  const std::size_t last = s[1] - 1;
  Var<T> current = ops::column(z, last);
  Var<T> total;
  for (std::size_t j = 0; j < last; ++j) {
    Var<T> prev = ops::detach(ops::column(z, j));
    Var<T> term = ops::square(ops::mean(ops::mul(prev, current)));
    total = j == 0 ? term : ops::add(total, term);
  }
  return total;
}

/// Encoders E_1..E_k, their normalizations, and the current decoder.
/// A vanilla autoencoder is a single encoder with k outputs.
template <typename T>
struct ImageAutoencoder {
  ModelKind kind = ModelKind::Pcaae;
  std::size_t image_size = 32;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::vector<nets::ConvEncoder<T>> encoders;
  std::vector<nets::LatentNorm<T>> norms;
  nets::ConvDecoder<T> decoder;
  nets::Discriminator<T> discriminator;  // PCAWAE only: the current stage's C_i
  bool has_discriminator = false;

  std::size_t latent() const {
    std::size_t n = 0;
    for (const auto& e : encoders) n += e.out_features();
    return n;
  }

  /// Column block j is LatentNorm_j(E_j(x)). Blocks before `trainable_from`
  /// are frozen (no gradient, running statistics); later blocks are trained.
  Var<T> encode(Tape<T>& tape, const Var<T>& x, std::size_t trainable_from) {
    std::vector<Var<T>> cols;
    for (std::size_t j = 0; j < encoders.size(); ++j) {
      const bool train = j >= trainable_from;
      Var<T> raw = encoders[j].forward(tape, x, train);
      cols.push_back(norms[j].forward(tape, raw, train ? nets::NormMode::Train : nets::NormMode::Eval));
    }
    return cols.size() == 1 ? cols[0] : ops::concat_cols(cols);
  }

  /// Eval-mode codes for every image in a flat buffer of `count` images.
  std::vector<T> encode_eval(const float* images, std::size_t count, std::size_t chunk = 256) {
    const std::size_t px = image_size * image_size;
    const std::size_t n = latent();
    std::vector<T> out(count * n);
    for (std::size_t start = 0; start < count; start += chunk) {
      const std::size_t b = std::min(chunk, count - start);
      Tensor<T> x({b, 1, image_size, image_size});
      for (std::size_t i = 0; i < b * px; ++i) x[i] = static_cast<T>(images[start * px + i]);
      Tape<T> tape;
      auto z = encode(tape, tape.constant(std::move(x)), encoders.size());
      std::copy(z.value().data(), z.value().data() + b * n, out.begin() + static_cast<std::ptrdiff_t>(start * n));
    }
    return out;
  }

  Tensor<T> decode(const Tensor<T>& z) {
    Tape<T> tape;
    return decoder.forward(tape, tape.constant(z), false).value();
  }

  std::uint64_t encoder_checksum(std::size_t j) { return nets::params_checksum(encoders.at(j).params()); }

  void save(Checkpoint& ck) {
    ck.put_int("meta.kind", static_cast<std::int64_t>(kind));
    ck.put_int("meta.image_size", static_cast<std::int64_t>(image_size));
    ck.put_int("meta.latent", static_cast<std::int64_t>(latent()));
    ck.put_int("meta.stage", static_cast<std::int64_t>(encoders.size()));
    ck.put_int("meta.encoder_outputs", static_cast<std::int64_t>(encoders.empty() ? 0 : encoders[0].out_features()));
    ck.put_int("meta.seed", static_cast<std::int64_t>(seed));
    ck.put_int("meta.step", static_cast<std::int64_t>(step));
    for (std::size_t j = 0; j < encoders.size(); ++j) {
      for (auto* p : encoders[j].params()) ck.put(p->name, p->value);
      ck.put("norm" + std::to_string(j + 1) + ".running_mean", norms[j].running_mean);
      ck.put("norm" + std::to_string(j + 1) + ".running_var", norms[j].running_var);
    }
    for (auto* p : decoder.params()) ck.put(p->name, p->value);
    ck.put_int("meta.has_discriminator", has_discriminator ? 1 : 0);
    if (has_discriminator)
      for (auto* p : discriminator.params()) ck.put(p->name, p->value);
  }

  static ImageAutoencoder load(const Checkpoint& ck) {
    ImageAutoencoder m;
    m.kind = static_cast<ModelKind>(ck.get_int("meta.kind"));
    if (m.kind == ModelKind::Surgery) throw IoError("checkpoint holds a surgery model, not an image autoencoder");
    m.image_size = static_cast<std::size_t>(ck.get_int("meta.image_size"));
    m.seed = static_cast<std::uint64_t>(ck.get_int("meta.seed"));
    m.step = static_cast<std::uint64_t>(ck.get_int("meta.step"));
    const auto stages = static_cast<std::size_t>(ck.get_int("meta.stage"));
    const auto outs = static_cast<std::size_t>(ck.get_int("meta.encoder_outputs"));
    for (std::size_t j = 0; j < stages; ++j) {
      m.encoders.emplace_back("enc" + std::to_string(j + 1), m.image_size, 0, outs);
      for (auto* p : m.encoders.back().params()) p->value = ck.get<T>(p->name);
      nets::LatentNorm<T> norm(outs);
      norm.running_mean = ck.get<T>("norm" + std::to_string(j + 1) + ".running_mean");
      norm.running_var = ck.get<T>("norm" + std::to_string(j + 1) + ".running_var");
      m.norms.push_back(std::move(norm));
    }
    m.decoder = nets::ConvDecoder<T>("dec", m.latent(), m.image_size, 0);
    for (auto* p : m.decoder.params()) p->value = ck.get<T>(p->name);
    m.has_discriminator = ck.get_int("meta.has_discriminator") != 0;
    if (m.has_discriminator) {
      m.discriminator = nets::Discriminator<T>("disc", m.latent(), 0);
      for (auto* p : m.discriminator.params()) p->value = ck.get<T>(p->name);
    }
    return m;
  }
};

/// Per-epoch shuffled mini-batches, fully determined by the seed.
class BatchSampler {
 public:
  BatchSampler(std::size_t dataset_size, std::size_t batch, std::uint64_t seed)
      : order_(dataset_size), batch_(batch), rng_(seed) {
    if (batch > dataset_size)
      throw ConfigError("batch_size " + std::to_string(batch) + " exceeds dataset size " + std::to_string(dataset_size));
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    rng_.shuffle(order_.begin(), order_.end());
  }

  std::vector<std::size_t> next() {
    if (cursor_ + batch_ > order_.size()) {
      rng_.shuffle(order_.begin(), order_.end());
      cursor_ = 0;
    }
    std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_));
    cursor_ += batch_;
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_;
  std::size_t cursor_ = 0;
  Rng rng_;
};

template <typename T>
Tensor<T> gather_images(const ellipse::Dataset& data, const std::vector<std::size_t>& idx) {
  const std::size_t s = data.header.height;
  Tensor<T> x({idx.size(), 1, s, data.header.width});
  const std::size_t px = data.pixels();
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const float* src = data.image(idx[k]);
    for (std::size_t i = 0; i < px; ++i) x[k * px + i] = static_cast<T>(src[i]);
  }
  return x;
}

struct StepLosses {
  double recon = 0;
  double cov = 0;
  double total = 0;
  double disc = 0;
  double adv = 0;
};

/// Loss terms of one stage evaluated on one batch.
template <typename T>
struct StageLoss {
  Var<T> total, recon, cov;
  Var<T> code;
};

/// ‖x − D_i(z)‖² (mean over batch and pixels) + λ_cov · cov_loss(z).
template <typename T>
StageLoss<T> stage_loss(ImageAutoencoder<T>& model, Tape<T>& tape, const Var<T>& x, double lambda_cov,
                        std::size_t trainable_from) {
  StageLoss<T> out;
  out.code = model.encode(tape, x, trainable_from);
  Var<T> recon_img = model.decoder.forward(tape, out.code, true);
  out.recon = ops::mse(x, recon_img);
  out.cov = cov_loss(out.code);
  out.total = ops::add(out.recon, ops::scale(out.cov, static_cast<T>(lambda_cov)));
  return out;
}

inline void check_finite(double v, const char* what, std::size_t stage, std::uint64_t step) {
  if (!std::isfinite(v))
    throw TrainingError(std::string("non-finite ") + what + " loss at stage " + std::to_string(stage) + ", step " +
                        std::to_string(step));
}

/// Receives each logged step; return false to abort.
using StepCallback = std::function<void(std::size_t stage, std::uint64_t step, const StepLosses&)>;

inline void write_log_header(std::ostream& log, bool adversarial) {
  log << "step,stage,recon,cov,total" << (adversarial ? ",disc,adv" : "") << '\n';
}

inline void write_log_row(std::ostream& log, std::uint64_t step, std::size_t stage, const StepLosses& l,
                          bool adversarial) {
  log << step << ',' << stage << ',' << std::setprecision(9) << l.recon << ',' << l.cov << ',' << l.total;
  if (adversarial) log << ',' << l.disc << ',' << l.adv;
  log << '\n';
}

/// Runs one stage on a model whose encoders 1..i−1 are already trained:
/// appends E_i, replaces the decoder with a fresh D_i and trains both.
template <typename T>
void train_stage(ImageAutoencoder<T>& model, const ellipse::Dataset& data, const TrainConfig& cfg, std::size_t stage,
                 std::ostream* log, const StepCallback& on_step = {}) {
  if (stage != model.encoders.size() + 1)
    throw ConfigError("stage " + std::to_string(stage) + " needs " + std::to_string(stage - 1) +
                      " trained encoders, model has " + std::to_string(model.encoders.size()));
  if (data.header.height != model.image_size)
    throw ConfigError("dataset image size " + std::to_string(data.header.height) + " does not match model size " +
                      std::to_string(model.image_size));
  const std::size_t outs = model.kind == ModelKind::Vanilla ? cfg.latent_max : 1;
  model.encoders.emplace_back("enc" + std::to_string(stage), model.image_size,
                              derive_seed(cfg.seed, {seed_tag::kEncoder, stage}), outs);
  model.norms.emplace_back(outs);
  model.decoder = nets::ConvDecoder<T>("dec", model.latent(), model.image_size,
                                       derive_seed(cfg.seed, {seed_tag::kDecoder, stage}));
  auto params = model.encoders.back().params();
  for (auto* p : model.decoder.params()) params.push_back(p);
  Adam<T> opt(params, cfg.adam);
  BatchSampler batches(data.size(), cfg.batch_size, derive_seed(cfg.seed, {seed_tag::kBatches, stage}));
  const std::size_t trainable_from = stage - 1;
  for (std::size_t s = 0; s < cfg.steps_per_stage; ++s) {
    Tape<T> tape;
    auto x = tape.constant(gather_images<T>(data, batches.next()));
    auto loss = stage_loss(model, tape, x, cfg.lambda_cov, trainable_from);
    ++model.step;
    StepLosses l{loss.recon.item(), loss.cov.item(), loss.total.item(), 0, 0};
    check_finite(l.total, "total", stage, model.step);
    opt.zero_grad();
    tape.backward(loss.total);
    opt.step();
    if (log) write_log_row(*log, model.step, stage, l, false);
    if (on_step) on_step(stage, model.step, l);
  }
}

inline std::string stage_checkpoint_path(const std::string& dir, std::size_t stage) {
  return (std::filesystem::path(dir) / ("stage_" + std::to_string(stage) + ".pcae")).string();
}

inline std::string final_checkpoint_path(const std::string& dir) {
  return (std::filesystem::path(dir) / "model.pcae").string();
}

template <typename T>
void save_model(ImageAutoencoder<T>& model, const std::string& path) {
  Checkpoint ck;
  model.save(ck);
  ck.save(path);
}

/// Stages 1..n in sequence; each intermediate decoder is discarded when the
/// next stage starts. `resume` (optional) is a model holding stages 1..k.
template <typename T>
ImageAutoencoder<T> train_pcaae(const ellipse::Dataset& data, const TrainConfig& cfg, std::ostream* log = nullptr,
                                ImageAutoencoder<T>* resume = nullptr, const StepCallback& on_step = {}) {
  cfg.validate();
  ImageAutoencoder<T> model;
  if (resume) {
    model = *resume;
    if (model.kind != ModelKind::Pcaae) throw ConfigError("resume checkpoint is not a PCAAE model");
    if (model.seed != cfg.seed) throw ConfigError("resume checkpoint was trained with a different seed");
  } else {
    model.kind = ModelKind::Pcaae;
    model.image_size = cfg.image_size;
    model.seed = cfg.seed;
  }
  if (log) write_log_header(*log, false);
  for (std::size_t stage = model.encoders.size() + 1; stage <= cfg.latent_max; ++stage) {
    train_stage(model, data, cfg, stage, log, on_step);
    if (!cfg.checkpoint_dir.empty()) save_model(model, stage_checkpoint_path(cfg.checkpoint_dir, stage));
  }
  if (!cfg.checkpoint_dir.empty()) save_model(model, final_checkpoint_path(cfg.checkpoint_dir));
  return model;
}

/// One encoder with an n-dimensional output and one decoder, reconstruction only.
template <typename T>
ImageAutoencoder<T> train_vanilla_ae(const ellipse::Dataset& data, const TrainConfig& cfg, std::ostream* log = nullptr,
                                     const StepCallback& on_step = {}) {
  cfg.validate();
  ImageAutoencoder<T> model;
  model.kind = ModelKind::Vanilla;
  model.image_size = cfg.image_size;
  model.seed = cfg.seed;
  TrainConfig plain = cfg;
  plain.lambda_cov = 0;
  if (log) write_log_header(*log, false);
  train_stage(model, data, plain, 1, log, on_step);
  if (!cfg.checkpoint_dir.empty()) {
    save_model(model, stage_checkpoint_path(cfg.checkpoint_dir, 1));
    save_model(model, final_checkpoint_path(cfg.checkpoint_dir));
  }
  return model;
}

}  // namespace pcaae
