#include <gtest/gtest.h>

#include <cmath>

#include "pcaae/surgery.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

using namespace pcaae;
using namespace pcaae::surgery;

namespace {

GeneratorOptions small_generator() {
  GeneratorOptions o;
  o.image_size = 16;
  o.r_min = 2;
  o.r_max = 6;
  return o;
}

SurgeryConfig quick_config(std::size_t latent, std::size_t steps, double lambda_cov = 1.0) {
  SurgeryConfig cfg;
  cfg.latent_max = latent;
  cfg.steps_per_stage = steps;
  cfg.samples = 4096;
  cfg.batch_size = 32;
  cfg.adam.lr = 1e-3;
  cfg.lambda_cov = lambda_cov;
  return cfg;
}

// One trained single-component model shared by the slower tests.
struct TrainedOne {
  SyntheticEllipseGenerator<double> gen{small_generator()};
  std::vector<double> recon;
  SurgeryModel<double> model;

  TrainedOne() {
    model = train_surgery(quick_config(1, 600), gen, nullptr,
                          [&](std::size_t, std::uint64_t, const StepLosses& l) { recon.push_back(l.recon); });
  }
};

TrainedOne& trained_one() {
  static TrainedOne t;
  return t;
}

SurgeryModel<double> untrained(SyntheticEllipseGenerator<double>& gen, std::size_t n) {
  SurgeryModel<double> m;
  m.latent_dim = gen.latent_dim();
  m.generator_checksum = gen.checksum();
  m.base = gen.default_base();
  for (std::size_t j = 0; j < n; ++j) {
    m.encoders.emplace_back("enc" + std::to_string(j + 1), m.latent_dim, 10 + j);
    m.norms.emplace_back(1);
  }
  m.decoder = nets::FcDecoder<double>("dec", n, m.latent_dim, 20);
  return m;
}

}  // namespace

TEST(Perturbations, DeterministicAndCorrectlyScaled) {
  const std::size_t count = 100000, d = 8;
  const double sigma = 0.3;
  const auto a = sample_perturbations<double>(count, d, sigma, 5);
  EXPECT_EQ(a, sample_perturbations<double>(count, d, sigma, 5));
  EXPECT_NE(a, sample_perturbations<double>(count, d, sigma, 6));
  for (std::size_t j = 0; j < d; ++j) {
    double m = 0, v = 0;
    for (std::size_t k = 0; k < count; ++k) m += a[k * d + j];
    m /= count;
    for (std::size_t k = 0; k < count; ++k) v += (a[k * d + j] - m) * (a[k * d + j] - m);
    EXPECT_NEAR(std::sqrt(v / count) / sigma, 1.0, 0.05);
    EXPECT_LT(std::abs(m), 3 * sigma / std::sqrt(static_cast<double>(count)));
  }
  EXPECT_THROW(sample_perturbations<double>(0, d, sigma, 1), std::invalid_argument);
}

TEST(Generator, MixingIsOrthogonal) {
  for (std::uint64_t seed : {1u, 2024u}) {
    const auto m = random_orthogonal(8, seed);
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j) {
        double dot = 0;
        for (std::size_t k = 0; k < 8; ++k) dot += m[i * 8 + k] * m[j * 8 + k];
        EXPECT_NEAR(dot, i == j ? 1.0 : 0.0, 1e-12);
      }
  }
}

TEST(Generator, ReadoutSquashesIntoValidEllipses) {
  SyntheticEllipseGenerator<double> gen;
  const auto& o = gen.options();
  Rng rng(2);
  for (int k = 0; k < 200; ++k) {
    const auto eta = pcaae::testing::random_tensor({8}, rng, 5.0);
    const auto r = gen.readout(eta.data());
    EXPECT_GT(r.r, o.r_min);
    EXPECT_LT(r.r, o.r_max);
    EXPECT_LT(std::abs(r.t), o.t_max);
    EXPECT_GT(r.phi, 0.0);
    EXPECT_LT(r.phi, std::numbers::pi / 2);
    EXPECT_NEAR(r.a * r.b, r.r * r.r, 1e-9);
  }
}

TEST(Generator, EveryCoordinateMovesEveryReadout) {
  SyntheticEllipseGenerator<double> gen;
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_GT(std::abs(gen.mixing().value[k * 8 + j]), 1e-6);
}

TEST(Generator, DefaultBaseIsDiagonalAndElongated) {
  SyntheticEllipseGenerator<double> gen;
  const auto base = gen.default_base();
  const auto r = gen.readout(base.data());
  EXPECT_NEAR(r.phi, std::numbers::pi / 4, 1e-12);
  EXPECT_NEAR(r.t, gen.options().t_max / 2, 1e-12);
  EXPECT_NEAR(r.r, (gen.options().r_min + gen.options().r_max) / 2, 1e-12);
}

TEST(Generator, PixelsInsideUnitIntervalAndBrightAtCentre) {
  SyntheticEllipseGenerator<double> gen;
  Rng rng(3);
  const auto img = gen.render(pcaae::testing::random_tensor({4, 8}, rng));
  ASSERT_EQ(img.shape(), (Shape{4, 1, 32, 32}));
  for (double v : img.values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_GT(img[16 * 32 + 16], 0.99);
}

TEST(Generator, GradientMatchesFiniteDifferences) {
  SyntheticEllipseGenerator<double> gen;
  Rng rng(4);
  double worst = 0;
  for (int probe = 0; probe < 20; ++probe) {
    auto g = pcaae::testing::projected([&gen](Tape<double>& tape, const std::vector<Var<double>>& in) { return gen.render(tape, in[0]); },
                                rng.next_u64());
    worst = std::max(worst, pcaae::testing::gradient_error(g, {pcaae::testing::random_tensor({1, 8}, rng, 0.8)}));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Generator, ParametersNeverReceiveGradient) {
  SyntheticEllipseGenerator<double> gen;
  auto model = untrained(gen, 2);
  gen.mixing().zero_grad();
  gen.gains().zero_grad();
  Tape<double> tape;
  auto eta = tape.constant(sample_perturbations<double>(8, 8, 0.3, 1));
  tape.backward(surgery_loss(model, gen, tape, eta, 1.0, 1).total);
  for (double g : gen.mixing().grad.values()) ASSERT_EQ(g, 0.0);
  for (double g : gen.gains().grad.values()) ASSERT_EQ(g, 0.0);
}

TEST(SurgeryLoss, ZeroWhenDecoderReturnsInput) {
  // All-zero perturbations with a decoder that outputs 0: D∘E is the identity on this batch.
  SyntheticEllipseGenerator<double> gen;
  auto model = untrained(gen, 1);
  for (auto* p : model.decoder.params()) p->value.fill(0.0);
  Tape<double> tape;
  auto loss = surgery_loss(model, gen, tape, tape.constant(Tensor<double>({3, 8})), 1.0, 1);
  EXPECT_EQ(loss.recon.item(), 0.0);
  EXPECT_EQ(loss.total.item(), 0.0);
}

TEST(SurgeryLoss, ReconIsPixelSumAveragedOverBatch) {
  SyntheticEllipseGenerator<double> gen;
  auto model = untrained(gen, 2);
  const auto eta = sample_perturbations<double>(2, 8, 0.3, 7);
  Tape<double> tape;
  auto loss = surgery_loss(model, gen, tape, tape.constant(eta), 1.0, 1);

  const auto codes = loss.code.value();
  Tape<double> dt;
  const auto eta_hat = model.decoder.forward(dt, dt.constant(codes), false).value();
  Tensor<double> shifted({2, 8}), shifted_hat({2, 8});
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t j = 0; j < 8; ++j) {
      shifted[k * 8 + j] = eta[k * 8 + j] + model.base[j];
      shifted_hat[k * 8 + j] = eta_hat[k * 8 + j] + model.base[j];
    }
  const auto x = gen.render(shifted), y = gen.render(shifted_hat);
  double oracle = 0;
  for (std::size_t i = 0; i < x.size(); ++i) oracle += (x[i] - y[i]) * (x[i] - y[i]);
  oracle /= 2;
  EXPECT_NEAR(loss.recon.item(), oracle, 1e-6);
  EXPECT_GT(oracle, 0.0);
}

TEST(SurgeryTraining, SingleComponentHalvesReconstructionError) {
  auto& t = trained_one();
  ASSERT_EQ(t.recon.size(), 600u);
  double first = 0, last = 0;
  for (std::size_t k = 0; k < 100; ++k) {
    first += t.recon[k] / 100;
    last += t.recon[t.recon.size() - 100 + k] / 100;
  }
  EXPECT_LE(last, 0.5 * first);
  EXPECT_EQ(t.gen.checksum(), t.model.generator_checksum);
}

TEST(SurgeryTraining, FirstComponentMovesAreaMonotonically) {
  auto& t = trained_one();
  const auto points = traverse_latents(t.model, 1, 2.0, 11);
  int agree = 0, up = 0;
  std::vector<double> area;
  for (const auto& p : points) area.push_back(t.gen.attributes(p.data()).area);
  for (std::size_t k = 1; k < area.size(); ++k) up += area[k] > area[k - 1];
  agree = std::max(up, static_cast<int>(area.size() - 1) - up);
  EXPECT_GE(agree, 8);
}

TEST(SurgeryTraining, CheckpointRoundTripsBitExactly) {
  auto& t = trained_one();
  const auto dir = pcaae::testing::scratch_dir("surgery");
  save_surgery_model(t.model, (dir / "a.pcae").string());
  auto back = SurgeryModel<double>::load(Checkpoint::load((dir / "a.pcae").string()));
  save_surgery_model(back, (dir / "b.pcae").string());
  EXPECT_EQ(pcaae::testing::slurp(dir / "a.pcae"), pcaae::testing::slurp(dir / "b.pcae"));
  EXPECT_EQ(back.base, t.model.base);
  EXPECT_THROW(ImageAutoencoder<double>::load(Checkpoint::load((dir / "a.pcae").string())), IoError);
}

TEST(SurgeryTraining, CovariancePenaltyReducesComponentCorrelation) {
  auto offdiag = [](double lambda) {
    SyntheticEllipseGenerator<double> gen(small_generator());
    auto model = train_surgery(quick_config(2, 400, lambda), gen);
    const auto codes = model.encode_eval(sample_perturbations<double>(4000, 8, 0.3, 99));
    std::vector<double> z1, z2;
    for (std::size_t k = 0; k < 4000; ++k) {
      z1.push_back(codes[k * 2]);
      z2.push_back(codes[k * 2 + 1]);
    }
    return eval::abs_pcc(z1, z2);
  };
  EXPECT_GT(offdiag(0.0), offdiag(1.0));
}

TEST(SurgeryConfig, Validation) {
  SurgeryConfig cfg;
  EXPECT_NO_THROW(cfg.validate(8));
  cfg.sigma_p = 0;
  EXPECT_THROW(cfg.validate(8), ConfigError);
  cfg = {};
  cfg.base = {1, 2};
  EXPECT_THROW(cfg.validate(8), ConfigError);
  cfg.base = std::vector<double>(8, NAN);
  EXPECT_THROW(cfg.validate(8), ConfigError);
}

TEST(Traverse, StepValues) {
  EXPECT_EQ(traversal_values(3, 1), std::vector<double>{0.0});
  EXPECT_EQ(traversal_values(2, 3), (std::vector<double>{-2, 0, 2}));
  EXPECT_THROW(traversal_values(1, 0), std::invalid_argument);
}

TEST(Traverse, SingleStepIsGeneratorAtDecodedZero) {
  SyntheticEllipseGenerator<double> gen;
  auto model = untrained(gen, 2);
  const auto grid = traverse(model, gen, 2, 3.0, 1);
  ASSERT_EQ(grid.width, 32u);
  ASSERT_EQ(grid.height, 32u);
  Tape<double> tape;
  auto eta = model.decoder.forward(tape, tape.constant(Tensor<double>({1, 2})), false);
  const auto expected = gen.render(tape, model.shift(tape, eta)).value();
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_FLOAT_EQ(grid.pixels[i], static_cast<float>(expected[i]));
}

TEST(Traverse, GridLayoutAndErrors) {
  SyntheticEllipseGenerator<double> gen;
  auto model = untrained(gen, 3);
  const auto grid = traverse(model, gen, 1, 2.0, 5);
  EXPECT_EQ(grid.width, 5u * 32u);
  EXPECT_EQ(grid.pixels.size(), grid.width * grid.height);
  // Cell k equals a one-step traversal fixed at t_k.
  const auto lat = traverse_latents(model, 1, 2.0, 5);
  Tensor<double> eta({1, 8}, std::vector<double>(lat[3].begin(), lat[3].end()));
  const auto cell = gen.render(eta);
  for (std::size_t row = 0; row < 32; ++row)
    for (std::size_t col = 0; col < 32; ++col)
      EXPECT_FLOAT_EQ(grid.pixels[row * grid.width + 3 * 32 + col], static_cast<float>(cell[row * 32 + col]));
  EXPECT_THROW(traverse(model, gen, 0, 1.0, 3), std::invalid_argument);
  EXPECT_THROW(traverse(model, gen, 4, 1.0, 3), std::invalid_argument);
  GeneratorOptions reseeded;
  reseeded.seed = 5;
  SyntheticEllipseGenerator<double> other(reseeded);
  EXPECT_THROW(traverse(model, other, 1, 1.0, 3), ConfigError);
}

TEST(Traverse, PgmExport) {
  Grid g{3, 2, {0.0f, 0.5f, 1.0f, 1.5f, -1.0f, 0.2f}};
  const auto path = pcaae::testing::scratch_dir("surgery") / "g.pgm";
  write_pgm(g, path.string());
  const auto bytes = pcaae::testing::slurp(path);
  const std::string header = "P5\n3 2\n255\n";
  ASSERT_EQ(bytes.size(), header.size() + 6);
  EXPECT_EQ(bytes.substr(0, header.size()), header);
  const auto* px = reinterpret_cast<const unsigned char*>(bytes.data() + header.size());
  EXPECT_EQ(px[0], 0);
  EXPECT_EQ(px[1], 128);
  EXPECT_EQ(px[2], 255);
  EXPECT_EQ(px[3], 255);
  EXPECT_EQ(px[4], 0);
  EXPECT_EQ(px[5], 51);
  EXPECT_THROW(write_pgm(g, "/nonexistent-dir/g.pgm"), IoError);
}
