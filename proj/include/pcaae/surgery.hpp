#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "pcaae/adam.hpp"
#include "pcaae/checkpoint.hpp"
#include "pcaae/ellipse.hpp"
#include "pcaae/eval.hpp"
#include "pcaae/nets.hpp"
#include "pcaae/trainer.hpp"

namespace pcaae::surgery {

struct GeneratorOptions {
  std::size_t latent_dim = 8;
  std::size_t image_size = 32;
  double sharpness = 8.0;
  // Geometric mean radius r = √(ab) and log-aspect t = ln √(a/b).
  double r_min = 4.0;
  double r_max = 12.0;
  double t_max = 0.5;
  std::array<double, 3> gains{1.0, 1.0, 0.6};
  std::uint64_t seed = 2024;

  void validate() const {
    if (latent_dim < 3) throw ConfigError("generator latent dimension must be >= 3");
    if (image_size < 8) throw ConfigError("generator image size must be >= 8");
    if (!(sharpness > 0)) throw ConfigError("generator sharpness must be > 0");
    if (!(r_min > 0) || !(r_max > r_min)) throw ConfigError("generator radius range must satisfy 0 < r_min < r_max");
    if (!(t_max > 0)) throw ConfigError("generator t_max must be > 0");
    for (double g : gains)
      if (!(g > 0)) throw ConfigError("generator gains must be > 0");
  }
};

/// Uniformly distributed orthogonal d×d matrix (Gram–Schmidt on Gaussian rows).
inline std::vector<double> random_orthogonal(std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> m(d * d);
  for (auto& v : m) v = rng.normal();
  for (std::size_t i = 0; i < d; ++i) {
    double* row = &m[i * d];
    for (std::size_t k = 0; k < i; ++k) {
      const double* prev = &m[k * d];
      double dot = 0;
      for (std::size_t j = 0; j < d; ++j) dot += row[j] * prev[j];
      for (std::size_t j = 0; j < d; ++j) row[j] -= dot * prev[j];
    }
    double norm = 0;
    for (std::size_t j = 0; j < d; ++j) norm += row[j] * row[j];
    norm = std::sqrt(norm);
    for (std::size_t j = 0; j < d; ++j) row[j] /= norm;
  }
  return m;
}

/// Frozen differentiable map η ∈ ℝ^d → s×s ellipse image.
///
/// u = diag(gains) · (Mη)[0..3) feeds the squash maps
///   r = r_min + (r_max − r_min)·σ(u₁),  t = t_max·(2σ(u₂) − 1),  φ = (π/2)·σ(u₃)
///   a = r·eᵗ,  b = r·e⁻ᵗ
/// and each pixel is σ(κ(1 − q)) with q the ellipse quadratic form at the pixel
/// centre. M is orthogonal, so every ellipse parameter depends on all of η.
template <typename T>
class SyntheticEllipseGenerator {
 public:
  struct Readout {
    std::array<double, 3> u{}, sig{};
    double r = 0, t = 0, a = 0, b = 0, phi = 0;
  };

  explicit SyntheticEllipseGenerator(GeneratorOptions opts = {}) : opts_(opts) {
    opts_.validate();
    const std::size_t d = opts_.latent_dim;
    const auto m = random_orthogonal(d, opts_.seed);
    mixing_.name = "gen.mixing";
    mixing_.value = Tensor<T>({d, d});
    for (std::size_t i = 0; i < d * d; ++i) mixing_.value[i] = static_cast<T>(m[i]);
    gains_.name = "gen.gains";
    gains_.value = Tensor<T>({3});
    for (std::size_t k = 0; k < 3; ++k) gains_.value[k] = static_cast<T>(opts_.gains[k]);
  }

  const GeneratorOptions& options() const { return opts_; }
  std::size_t latent_dim() const { return opts_.latent_dim; }
  std::size_t image_size() const { return opts_.image_size; }
  Parameter<T>& mixing() { return mixing_; }
  Parameter<T>& gains() { return gains_; }

  std::uint64_t checksum() { return nets::params_checksum(nets::ParamRefs<T>{&mixing_, &gains_}); }

  Readout readout(const T* eta) const {
    const std::size_t d = opts_.latent_dim;
    Readout r;
    for (std::size_t k = 0; k < 3; ++k) {
      double acc = 0;
      for (std::size_t j = 0; j < d; ++j) acc += static_cast<double>(mixing_.value[k * d + j]) * eta[j];
      r.u[k] = static_cast<double>(gains_.value[k]) * acc;
      r.sig[k] = ops::sigmoid_scalar(r.u[k]);
    }
    r.r = opts_.r_min + (opts_.r_max - opts_.r_min) * r.sig[0];
    r.t = opts_.t_max * (2.0 * r.sig[1] - 1.0);
    r.phi = std::numbers::pi / 2 * r.sig[2];
    r.a = r.r * std::exp(r.t);
    r.b = r.r * std::exp(-r.t);
    return r;
  }

  ellipse::EllipseParams params(const T* eta) const {
    const auto r = readout(eta);
    return {r.a, r.b, r.phi};
  }

  /// Analytic attribute oracle (A, R1, R2) of G(η).
  ellipse::Attributes attributes(const T* eta) const { return ellipse::attributes(params(eta)); }

  /// Latent point whose readout is (u₁, u₂, u₃) with the remaining Mη coordinates 0.
  std::vector<T> latent_for_readout(const std::array<double, 3>& u) const {
    const std::size_t d = opts_.latent_dim;
    std::vector<T> eta(d, T(0));
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < 3; ++k)
        acc += static_cast<double>(mixing_.value[k * d + j]) * u[k] / static_cast<double>(gains_.value[k]);
      eta[j] = static_cast<T>(acc);
    }
    return eta;
  }

  /// φ = π/4 with a mildly elongated ellipse (t = t_max/2) at the midpoint radius.
  std::vector<T> default_base() const { return latent_for_readout({0.0, std::log(3.0), 0.0}); }

  /// η[B×d] → images [B×1×s×s]. Differentiable w.r.t. η only; G's own
  /// parameters are registered as frozen and never receive gradient.
  Var<T> render(Tape<T>& tape, const Var<T>& eta) {
    const Shape& es = eta.shape();
    if (es.size() != 2 || es[1] != opts_.latent_dim)
      throw DimensionError("generator expects Bx" + std::to_string(opts_.latent_dim) + ", got " + shape_str(es));
    const std::size_t batch = es[0], s = opts_.image_size, px = s * s;
    auto mv = tape.param(mixing_, false);
    auto gv = tape.param(gains_, false);
    Tensor<T> out({batch, 1, s, s});
    for (std::size_t b = 0; b < batch; ++b) {
      const auto r = readout(eta.value().data() + b * opts_.latent_dim);
      rasterize(r, [&](std::size_t i, double, double, double p) { out[b * px + i] = static_cast<T>(p); });
    }
    const std::size_t ei = eta.id();
    return tape.record(std::move(out), {eta, mv, gv}, [this, ei, batch, px](Tape<T>& tp, const Tensor<T>& g) {
      if (!tp.requires_grad(ei)) return;
      const std::size_t d = opts_.latent_dim;
      const Tensor<T>& ev = tp.value(ei);
      Tensor<T>& de = tp.grad_buffer(ei);
      const double kappa = opts_.sharpness;
      for (std::size_t b = 0; b < batch; ++b) {
        const auto r = readout(ev.data() + b * d);
        const double ia2 = 1.0 / (r.a * r.a), ib2 = 1.0 / (r.b * r.b);
        double ga = 0, gb = 0, gphi = 0;
        rasterize(r, [&](std::size_t i, double xr, double yr, double p) {
          const double gq = static_cast<double>(g[b * px + i]) * p * (1.0 - p) * -kappa;
          ga += gq * (-2.0 * xr * xr * ia2 / r.a);
          gb += gq * (-2.0 * yr * yr * ib2 / r.b);
          gphi += gq * 2.0 * xr * yr * (ia2 - ib2);
        });
        const double et = std::exp(r.t), emt = std::exp(-r.t);
        const double gr = ga * et + gb * emt;
        const double gt = ga * r.a - gb * r.b;
        std::array<double, 3> gu{
            gr * (opts_.r_max - opts_.r_min) * r.sig[0] * (1 - r.sig[0]),
            gt * 2.0 * opts_.t_max * r.sig[1] * (1 - r.sig[1]),
            gphi * std::numbers::pi / 2 * r.sig[2] * (1 - r.sig[2]),
        };
        for (std::size_t k = 0; k < 3; ++k) {
          const double c = gu[k] * static_cast<double>(gains_.value[k]);
          for (std::size_t j = 0; j < d; ++j) de[b * d + j] += static_cast<T>(c * static_cast<double>(mixing_.value[k * d + j]));
        }
      }
    });
  }

  Tensor<T> render(const Tensor<T>& eta) {
    Tape<T> tape;
    return render(tape, tape.constant(eta)).value();
  }

 private:
  /// Calls f(pixel, x', y', value) with (x', y') the pixel centre in the ellipse frame.
  template <typename F>
  void rasterize(const Readout& r, F&& f) const {
    const std::size_t s = opts_.image_size;
    const double half = static_cast<double>(s) / 2.0;
    const double c = std::cos(r.phi), sn = std::sin(r.phi);
    const double ia2 = 1.0 / (r.a * r.a), ib2 = 1.0 / (r.b * r.b);
    for (std::size_t row = 0; row < s; ++row) {
      const double y = half - (static_cast<double>(row) + 0.5);
      for (std::size_t col = 0; col < s; ++col) {
        const double x = static_cast<double>(col) + 0.5 - half;
        const double xr = x * c + y * sn, yr = -x * sn + y * c;
        const double q = xr * xr * ia2 + yr * yr * ib2;
        f(row * s + col, xr, yr, ops::sigmoid_scalar(opts_.sharpness * (1.0 - q)));
      }
    }
  }

  GeneratorOptions opts_;
  Parameter<T> mixing_;
  Parameter<T> gains_;
};

struct SurgeryConfig {
  std::vector<double> base;  // η̄; empty selects the generator's default base point
  double sigma_p = 0.3;
  std::size_t latent_max = 3;
  double lambda_cov = 1.0;
  std::size_t samples = 20000;
  std::size_t batch_size = 64;
  std::size_t steps_per_stage = 8000;
  AdamOptions adam{};
  std::uint64_t seed = 1;
  std::string checkpoint_dir;

  void validate(std::size_t latent_dim) const {
    if (!(sigma_p > 0)) throw ConfigError("sigma_p must be > 0");
    if (!base.empty() && base.size() != latent_dim)
      throw ConfigError("base point has " + std::to_string(base.size()) + " coordinates, generator needs " +
                        std::to_string(latent_dim));
    for (double v : base)
      if (!std::isfinite(v)) throw ConfigError("base point must be finite");
    if (latent_max < 1) throw ConfigError("latent_max must be >= 1");
    if (!(lambda_cov >= 0)) throw ConfigError("lambda_cov must be >= 0");
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
    if (samples < batch_size) throw ConfigError("samples must be >= batch_size");
    if (steps_per_stage < 1) throw ConfigError("steps_per_stage must be >= 1");
    if (!(adam.lr > 0)) throw ConfigError("lr must be > 0");
  }
};

/// count × d i.i.d. N(0, σ_p²) draws.
template <typename T>
Tensor<T> sample_perturbations(std::size_t count, std::size_t d, double sigma_p, std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("sample_perturbations: count must be >= 1");
  Rng rng(seed);
  Tensor<T> out({count, d});
  for (auto& v : out.values()) v = static_cast<T>(sigma_p * rng.normal());
  return out;
}

/// E_1..E_k over perturbations η ∈ ℝ^d, with D_k mapping codes back to ℝ^d.
template <typename T>
struct SurgeryModel {
  std::size_t latent_dim = 8;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::uint64_t generator_checksum = 0;
  std::vector<T> base;
  std::vector<nets::FcEncoder<T>> encoders;
  std::vector<nets::LatentNorm<T>> norms;
  nets::FcDecoder<T> decoder;

  std::size_t latent() const { return encoders.size(); }

  Var<T> encode(Tape<T>& tape, const Var<T>& eta, std::size_t trainable_from) {
    std::vector<Var<T>> cols;
    for (std::size_t j = 0; j < encoders.size(); ++j) {
      const bool train = j >= trainable_from;
      cols.push_back(norms[j].forward(tape, encoders[j].forward(tape, eta, train),
                                      train ? nets::NormMode::Train : nets::NormMode::Eval));
    }
    return cols.size() == 1 ? cols[0] : ops::concat_cols(cols);
  }

  /// Eval-mode codes [N×n] for perturbations [N×d].
  Tensor<T> encode_eval(const Tensor<T>& eta) {
    Tape<T> tape;
    return encode(tape, tape.constant(eta), encoders.size()).value();
  }

  /// η̄ added to every row of a [B×d] latent batch.
  Var<T> shift(Tape<T>& tape, const Var<T>& eta) const {
    return ops::add_row_bias(eta, tape.constant(Tensor<T>({latent_dim}, base)));
  }

  void save(Checkpoint& ck) {
    ck.put_int("meta.kind", static_cast<std::int64_t>(ModelKind::Surgery));
    ck.put_int("meta.latent_dim", static_cast<std::int64_t>(latent_dim));
    ck.put_int("meta.latent", static_cast<std::int64_t>(latent()));
    ck.put_int("meta.stage", static_cast<std::int64_t>(latent()));
    ck.put_int("meta.seed", static_cast<std::int64_t>(seed));
    ck.put_int("meta.step", static_cast<std::int64_t>(step));
    ck.put_int("meta.generator_checksum", static_cast<std::int64_t>(generator_checksum));
    ck.put("meta.base", Tensor<T>({latent_dim}, base));
    for (std::size_t j = 0; j < encoders.size(); ++j) {
      for (auto* p : encoders[j].params()) ck.put(p->name, p->value);
      ck.put("norm" + std::to_string(j + 1) + ".running_mean", norms[j].running_mean);
      ck.put("norm" + std::to_string(j + 1) + ".running_var", norms[j].running_var);
    }
    for (auto* p : decoder.params()) ck.put(p->name, p->value);
  }

  static SurgeryModel load(const Checkpoint& ck) {
    if (static_cast<ModelKind>(ck.get_int("meta.kind")) != ModelKind::Surgery)
      throw IoError("checkpoint does not hold a surgery model");
    SurgeryModel m;
    m.latent_dim = static_cast<std::size_t>(ck.get_int("meta.latent_dim"));
    m.seed = static_cast<std::uint64_t>(ck.get_int("meta.seed"));
    m.step = static_cast<std::uint64_t>(ck.get_int("meta.step"));
    m.generator_checksum = static_cast<std::uint64_t>(ck.get_int("meta.generator_checksum"));
    const auto base = ck.get<T>("meta.base");
    m.base.assign(base.values().begin(), base.values().end());
    const auto n = static_cast<std::size_t>(ck.get_int("meta.latent"));
    for (std::size_t j = 0; j < n; ++j) {
      m.encoders.emplace_back("enc" + std::to_string(j + 1), m.latent_dim, 0);
      for (auto* p : m.encoders.back().params()) p->value = ck.get<T>(p->name);
      nets::LatentNorm<T> norm(1);
      norm.running_mean = ck.get<T>("norm" + std::to_string(j + 1) + ".running_mean");
      norm.running_var = ck.get<T>("norm" + std::to_string(j + 1) + ".running_var");
      m.norms.push_back(std::move(norm));
    }
    m.decoder = nets::FcDecoder<T>("dec", n, m.latent_dim, 0);
    for (auto* p : m.decoder.params()) p->value = ck.get<T>(p->name);
    return m;
  }
};

/// ‖G(η+η̄) − G(D(E(η))+η̄)‖² (summed over pixels, averaged over the batch)
/// + λ_cov · cov_loss.
template <typename T>
StageLoss<T> surgery_loss(SurgeryModel<T>& model, SyntheticEllipseGenerator<T>& gen, Tape<T>& tape,
                          const Var<T>& eta, double lambda_cov, std::size_t trainable_from) {
  StageLoss<T> out;
  Var<T> target = ops::detach(gen.render(tape, model.shift(tape, eta)));
  out.code = model.encode(tape, eta, trainable_from);
  Var<T> eta_hat = model.decoder.forward(tape, out.code, true);
  const auto px = static_cast<T>(gen.image_size() * gen.image_size());
  out.recon = ops::scale(ops::mse(gen.render(tape, model.shift(tape, eta_hat)), target), px);
  out.cov = cov_loss(out.code);
  out.total = ops::add(out.recon, ops::scale(out.cov, static_cast<T>(lambda_cov)));
  return out;
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& pool, const std::vector<std::size_t>& idx) {
  const std::size_t d = pool.shape()[1];
  Tensor<T> out({idx.size(), d});
  for (std::size_t k = 0; k < idx.size(); ++k)
    std::copy_n(pool.data() + idx[k] * d, d, out.data() + k * d);
  return out;
}

template <typename T>
void save_surgery_model(SurgeryModel<T>& model, const std::string& path) {
  Checkpoint ck;
  model.save(ck);
  ck.save(path);
}

/// Stagewise training around η̄ on a fixed pool of perturbations. Throws
/// TrainingError if the generator's parameters change during the run.
template <typename T>
SurgeryModel<T> train_surgery(const SurgeryConfig& cfg, SyntheticEllipseGenerator<T>& gen, std::ostream* log = nullptr,
                              const StepCallback& on_step = {}) {
  const std::size_t d = gen.latent_dim();
  cfg.validate(d);
  SurgeryModel<T> model;
  model.latent_dim = d;
  model.seed = cfg.seed;
  model.generator_checksum = gen.checksum();
  if (cfg.base.empty()) {
    model.base = gen.default_base();
  } else {
    for (double v : cfg.base) model.base.push_back(static_cast<T>(v));
  }
  const Tensor<T> pool = sample_perturbations<T>(cfg.samples, d, cfg.sigma_p, derive_seed(cfg.seed, {seed_tag::kPerturb}));
  if (log) write_log_header(*log, false);
  for (std::size_t stage = 1; stage <= cfg.latent_max; ++stage) {
    model.encoders.emplace_back("enc" + std::to_string(stage), d, derive_seed(cfg.seed, {seed_tag::kEncoder, stage}));
    model.norms.emplace_back(1);
    model.decoder = nets::FcDecoder<T>("dec", stage, d, derive_seed(cfg.seed, {seed_tag::kDecoder, stage}));
    auto params = model.encoders.back().params();
    for (auto* p : model.decoder.params()) params.push_back(p);
    Adam<T> opt(params, cfg.adam);
    BatchSampler batches(cfg.samples, cfg.batch_size, derive_seed(cfg.seed, {seed_tag::kBatches, stage}));
    for (std::size_t s = 0; s < cfg.steps_per_stage; ++s) {
      Tape<T> tape;
      auto eta = tape.constant(gather_rows(pool, batches.next()));
      auto loss = surgery_loss(model, gen, tape, eta, cfg.lambda_cov, stage - 1);
      ++model.step;
      StepLosses l{loss.recon.item(), loss.cov.item(), loss.total.item(), 0, 0};
      check_finite(l.total, "total", stage, model.step);
      opt.zero_grad();
      tape.backward(loss.total);
      opt.step();
      if (log) write_log_row(*log, model.step, stage, l, false);
      if (on_step) on_step(stage, model.step, l);
    }
    if (!cfg.checkpoint_dir.empty()) save_surgery_model(model, stage_checkpoint_path(cfg.checkpoint_dir, stage));
  }
  if (gen.checksum() != model.generator_checksum)
    throw TrainingError("generator parameters changed during surgery training");
  if (!cfg.checkpoint_dir.empty()) save_surgery_model(model, final_checkpoint_path(cfg.checkpoint_dir));
  return model;
}

/// |PCC| between eval-mode codes of fresh perturbations and the analytic
/// attributes of G(η + η̄).
template <typename T>
eval::PccMatrix surgery_pcc(SurgeryModel<T>& model, const SyntheticEllipseGenerator<T>& gen, std::size_t count,
                            double sigma_p, std::uint64_t seed) {
  const std::size_t d = model.latent_dim;
  Tensor<T> eta = sample_perturbations<T>(count, d, sigma_p, seed);
  Tensor<T> codes = model.encode_eval(eta);
  std::vector<ellipse::Attributes> attrs;
  std::vector<T> point(d);
  for (std::size_t k = 0; k < count; ++k) {
    for (std::size_t j = 0; j < d; ++j) point[j] = eta[k * d + j] + model.base[j];
    attrs.push_back(gen.attributes(point.data()));
  }
  std::vector<double> c(codes.values().begin(), codes.values().end());
  return eval::pcc_matrix(c, model.latent(), attrs);
}

/// Evenly spaced values from −r to r; a single step yields 0.
inline std::vector<double> traversal_values(double r, std::size_t steps) {
  if (steps < 1) throw std::invalid_argument("traverse: steps must be >= 1");
  if (steps == 1) return {0.0};
  std::vector<double> out(steps);
  for (std::size_t k = 0; k < steps; ++k)
    out[k] = -r + 2.0 * r * static_cast<double>(k) / static_cast<double>(steps - 1);
  return out;
}

/// Grayscale image in [0, 1], row-major.
struct Grid {
  std::size_t width = 0, height = 0;
  std::vector<float> pixels;
};

/// Horizontal strip of `steps` cells; cell k is the decoded image with code
/// component j (1-based) set to t_k and all other components 0.
template <typename T, typename DecodeFn>
Grid traverse_codes(std::size_t latent, std::size_t j, double r, std::size_t steps, std::size_t s, DecodeFn&& decode) {
  if (j < 1 || j > latent)
    throw std::invalid_argument("traverse: component " + std::to_string(j) + " outside 1.." + std::to_string(latent));
  const auto ts = traversal_values(r, steps);
  Tensor<T> z({steps, latent});
  for (std::size_t k = 0; k < steps; ++k) z[k * latent + (j - 1)] = static_cast<T>(ts[k]);
  const Tensor<T> images = decode(z);
  Grid g{steps * s, s, std::vector<float>(steps * s * s)};
  for (std::size_t k = 0; k < steps; ++k)
    for (std::size_t row = 0; row < s; ++row)
      for (std::size_t col = 0; col < s; ++col)
        g.pixels[row * g.width + k * s + col] = static_cast<float>(images[(k * s + row) * s + col]);
  return g;
}

template <typename T>
Grid traverse(SurgeryModel<T>& model, SyntheticEllipseGenerator<T>& gen, std::size_t j, double r, std::size_t steps) {
  if (gen.checksum() != model.generator_checksum)
    throw ConfigError("generator does not match the one the surgery model was trained against");
  return traverse_codes<T>(model.latent(), j, r, steps, gen.image_size(), [&](const Tensor<T>& z) {
    Tape<T> tape;
    auto eta = model.decoder.forward(tape, tape.constant(z), false);
    return gen.render(tape, model.shift(tape, eta)).value();
  });
}

/// Codes used for each traversal cell, decoded to latent points η̄ + D(z).
template <typename T>
std::vector<std::vector<T>> traverse_latents(SurgeryModel<T>& model, std::size_t j, double r, std::size_t steps) {
  if (j < 1 || j > model.latent())
    throw std::invalid_argument("traverse: component " + std::to_string(j) + " outside 1.." +
                                std::to_string(model.latent()));
  const auto ts = traversal_values(r, steps);
  const std::size_t n = model.latent(), d = model.latent_dim;
  Tensor<T> z({steps, n});
  for (std::size_t k = 0; k < steps; ++k) z[k * n + (j - 1)] = static_cast<T>(ts[k]);
  Tape<T> tape;
  const auto& eta = model.decoder.forward(tape, tape.constant(z), false).value();
  std::vector<std::vector<T>> out(steps, std::vector<T>(d));
  for (std::size_t k = 0; k < steps; ++k)
    for (std::size_t i = 0; i < d; ++i) out[k][i] = eta[k * d + i] + model.base[i];
  return out;
}

/// Binary PGM (P5, maxval 255).
inline void write_pgm(const Grid& g, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << "P5\n" << g.width << ' ' << g.height << "\n255\n";
  std::vector<unsigned char> bytes(g.pixels.size());
  for (std::size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(g.pixels[i], 0.0f, 1.0f) * 255.0f));
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing " + path);
}

}  // namespace pcaae::surgery
