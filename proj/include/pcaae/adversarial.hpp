#pragma once

#include <memory>
#include <optional>

#include "pcaae/trainer.hpp"

namespace pcaae {

inline constexpr double kLogClampEps = 1e-7;

template <typename T>
Var<T> clamped_log(const Var<T>& p) {
  return ops::log(ops::clamp(p, static_cast<T>(kLogClampEps), static_cast<T>(1.0 - kLogClampEps)));
}

/// mean log C(z_prior) + mean log(1 − C(z_enc)); the discriminator ascends it.
template <typename T>
Var<T> disc_loss(nets::Discriminator<T>& disc, Tape<T>& tape, const Var<T>& z_prior, const Var<T>& z_enc,
                 bool trainable = true) {
  if (z_prior.shape() != z_enc.shape())
    throw DimensionError("disc_loss: prior batch " + shape_str(z_prior.shape()) + " vs encoded batch " +
                         shape_str(z_enc.shape()));
  Var<T> real = clamped_log(disc.forward(tape, z_prior, trainable));
  Var<T> fake = clamped_log(ops::add_scalar(ops::scale(disc.forward(tape, z_enc, trainable), T(-1)), T(1)));
  return ops::add(ops::mean(real), ops::mean(fake));
}

/// −mean log C(z_enc), with C's parameters frozen.
template <typename T>
Var<T> adv_gen_term(nets::Discriminator<T>& disc, Tape<T>& tape, const Var<T>& z_enc) {
  return ops::scale(ops::mean(clamped_log(disc.forward(tape, z_enc, false))), T(-1));
}

/// One PCAWAE stage: E_i, D_i and C_i with separate optimizers.
///
/// Each iteration encodes one batch once. The discriminator ascends on the
/// detached codes against a prior batch, then the autoencoder descends on
/// recon + λ_cov·cov + λ_adv·adv, where adv uses the freshly updated C_i.
template <typename T>
class PcawaeStage {
 public:
  /// Forward pass of one batch, shared by both halves of an iteration.
  struct Pending {
    std::unique_ptr<Tape<T>> tape;
    StageLoss<T> loss;
    double disc = 0;
  };

  PcawaeStage(ImageAutoencoder<T>& model, const ellipse::Dataset& data, const TrainConfig& cfg, std::size_t stage)
      : model_(model),
        data_(data),
        cfg_(cfg),
        stage_(stage),
        batches_(data.size(), cfg.batch_size, derive_seed(cfg.seed, {seed_tag::kBatches, stage})),
        prior_(derive_seed(cfg.seed, {seed_tag::kPrior, stage})) {
    if (stage != model.encoders.size() + 1)
      throw ConfigError("stage " + std::to_string(stage) + " needs " + std::to_string(stage - 1) +
                        " trained encoders, model has " + std::to_string(model.encoders.size()));
    if (data.header.height != model.image_size)
      throw ConfigError("dataset image size " + std::to_string(data.header.height) + " does not match model size " +
                        std::to_string(model.image_size));
    model.encoders.emplace_back("enc" + std::to_string(stage), model.image_size,
                                derive_seed(cfg.seed, {seed_tag::kEncoder, stage}));
    model.norms.emplace_back(1);
    model.decoder = nets::ConvDecoder<T>("dec", model.latent(), model.image_size,
                                         derive_seed(cfg.seed, {seed_tag::kDecoder, stage}));
    model.discriminator =
        nets::Discriminator<T>("disc", model.latent(), derive_seed(cfg.seed, {seed_tag::kDiscriminator, stage}));
    model.has_discriminator = true;
    auto ae = model.encoders.back().params();
    for (auto* p : model.decoder.params()) ae.push_back(p);
    ae_opt_.emplace(ae, cfg.adam);
    disc_opt_.emplace(model.discriminator.params(), cfg.adam);
  }

  Pending forward() {
    Pending p;
    p.tape = std::make_unique<Tape<T>>();
    auto x = p.tape->constant(gather_images<T>(data_, batches_.next()));
    p.loss = stage_loss(model_, *p.tape, x, cfg_.lambda_cov, stage_ - 1);
    return p;
  }

  /// Discriminator ascent on the pending batch's codes; touches only C_i.
  double disc_update(Pending& p) {
    const Tensor<T>& codes = p.loss.code.value();
    Tensor<T> prior(codes.shape());
    for (auto& v : prior.values()) v = static_cast<T>(prior_.normal());
    Tape<T> tape;
    Var<T> objective = disc_loss(model_.discriminator, tape, tape.constant(std::move(prior)), tape.constant(codes));
    p.disc = objective.item();
    check_finite(p.disc, "discriminator", stage_, model_.step + 1);
    disc_opt_->zero_grad();
    tape.backward(ops::scale(objective, T(-1)));
    disc_opt_->step();
    return p.disc;
  }

  /// Autoencoder descent on the pending batch; touches only E_i and D_i.
  StepLosses ae_update(Pending& p) {
    Tape<T>& tape = *p.tape;
    Var<T> adv = adv_gen_term(model_.discriminator, tape, p.loss.code);
    Var<T> total = cfg_.lambda_adv > 0 ? ops::add(p.loss.total, ops::scale(adv, static_cast<T>(cfg_.lambda_adv)))
                                       : p.loss.total;
    ++model_.step;
    StepLosses l{p.loss.recon.item(), p.loss.cov.item(), total.item(), p.disc, adv.item()};
    check_finite(l.total, "total", stage_, model_.step);
    ae_opt_->zero_grad();
    tape.backward(total);
    ae_opt_->step();
    return l;
  }

  StepLosses step() {
    Pending p = forward();
    disc_update(p);
    return ae_update(p);
  }

 private:
  ImageAutoencoder<T>& model_;
  const ellipse::Dataset& data_;
  const TrainConfig& cfg_;
  std::size_t stage_;
  BatchSampler batches_;
  Rng prior_;
  std::optional<Adam<T>> ae_opt_;
  std::optional<Adam<T>> disc_opt_;
};

/// Algorithm 2: stagewise PCAAE training with a per-stage discriminator C_i
/// matching the i-dimensional code to N(0, I).
template <typename T>
ImageAutoencoder<T> train_pcawae(const ellipse::Dataset& data, const TrainConfig& cfg, std::ostream* log = nullptr,
                                 ImageAutoencoder<T>* resume = nullptr, const StepCallback& on_step = {}) {
  cfg.validate();
  ImageAutoencoder<T> model;
  if (resume) {
    model = *resume;
    if (model.kind != ModelKind::Pcawae) throw ConfigError("resume checkpoint is not a PCAWAE model");
    if (model.seed != cfg.seed) throw ConfigError("resume checkpoint was trained with a different seed");
  } else {
    model.kind = ModelKind::Pcawae;
    model.image_size = cfg.image_size;
    model.seed = cfg.seed;
  }
  if (log) write_log_header(*log, true);
  for (std::size_t stage = model.encoders.size() + 1; stage <= cfg.latent_max; ++stage) {
    PcawaeStage<T> runner(model, data, cfg, stage);
    for (std::size_t s = 0; s < cfg.steps_per_stage; ++s) {
      const StepLosses l = runner.step();
      if (log) write_log_row(*log, model.step, stage, l, true);
      if (on_step) on_step(stage, model.step, l);
    }
    if (!cfg.checkpoint_dir.empty()) save_model(model, stage_checkpoint_path(cfg.checkpoint_dir, stage));
  }
  if (!cfg.checkpoint_dir.empty()) save_model(model, final_checkpoint_path(cfg.checkpoint_dir));
  return model;
}

}  // namespace pcaae
