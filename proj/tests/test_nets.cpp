#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "pcaae/adam.hpp"
#include "pcaae/nets.hpp"
#include "support/gradcheck.hpp"

using namespace pcaae;
using namespace pcaae::nets;

TEST(Nets, EncoderDecoderShapes) {
  Rng rng(1);
  for (std::size_t s : {32u, 64u}) {
    ConvEncoder<float> enc("enc", s, 3);
    for (std::size_t batch : {1u, 3u}) {
      Tape<float> tape;
      Tensor<float> x({batch, 1, s, s});
      for (auto& v : x.values()) v = static_cast<float>(rng.uniform());
      EXPECT_EQ(enc.forward(tape, tape.constant(x), true).shape(), (Shape{batch, 1}));
    }
    for (std::size_t i : {1u, 2u, 3u, 5u}) {
      ConvDecoder<float> dec("dec", i, s, 4);
      Tape<float> tape;
      Tensor<float> z({2, i});
      for (auto& v : z.values()) v = static_cast<float>(rng.normal());
      auto y = dec.forward(tape, tape.constant(z), true);
      ASSERT_EQ(y.shape(), (Shape{2, 1, s, s}));
      for (float v : y.value().values()) {
        EXPECT_GT(v, 0.0f);
        EXPECT_LT(v, 1.0f);
      }
    }
  }
}

TEST(Nets, EncoderChannelScheduleFor64) {
  ConvEncoder<float> enc("enc", 64, 1);
  std::vector<std::size_t> outs;
  for (auto* p : enc.params())
    if (p->value.rank() == 4) outs.push_back(p->value.shape()[0]);
  EXPECT_EQ(outs, (std::vector<std::size_t>{32, 16, 8, 4, 2, 1}));
}

TEST(Nets, DecoderFeaturesScaleWithLatent) {
  ConvDecoder<float> dec("dec", 3, 64, 1);
  std::vector<std::size_t> outs;
  for (auto* p : dec.params())
    if (p->value.rank() == 4) outs.push_back(p->value.shape()[1]);
  EXPECT_EQ(outs, (std::vector<std::size_t>{6, 12, 24, 48, 96, 1}));
}

TEST(Nets, RejectsNonPowerOfTwoSize) { EXPECT_THROW(ConvEncoder<float>("enc", 48, 1), DimensionError); }

TEST(Nets, DiscriminatorOutputInsideUnitInterval) {
  Rng rng(2);
  for (std::size_t i : {1u, 2u, 3u}) {
    Discriminator<double> d("disc", i, 7 + i);
    Tape<double> tape;
    auto y = d.forward(tape, tape.constant(pcaae::testing::random_tensor({16, i}, rng, 3.0)), true);
    ASSERT_EQ(y.shape(), (Shape{16, 1}));
    for (double v : y.value().values()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(Nets, FcShapes) {
  FcEncoder<double> enc("enc", 8, 1);
  FcDecoder<double> dec("dec", 3, 8, 2);
  Tape<double> tape;
  Rng rng(3);
  EXPECT_EQ(enc.forward(tape, tape.constant(pcaae::testing::random_tensor({5, 8}, rng)), true).shape(), (Shape{5, 1}));
  EXPECT_EQ(dec.forward(tape, tape.constant(pcaae::testing::random_tensor({5, 3}, rng)), true).shape(), (Shape{5, 8}));
}

TEST(Nets, AutoencoderGradientsAreFiniteAndReachEveryParameter) {
  ConvEncoder<float> enc("enc", 32, 11);
  ConvDecoder<float> dec("dec", 1, 32, 12);
  Rng rng(4);
  Tensor<float> x({4, 1, 32, 32});
  for (auto& v : x.values()) v = static_cast<float>(rng.uniform());
  Tape<float> tape;
  auto xv = tape.constant(x);
  tape.backward(ops::mse(xv, dec.forward(tape, enc.forward(tape, xv, true), true)));
  auto params = enc.params();
  for (auto* p : dec.params()) params.push_back(p);
  for (auto* p : params) {
    ASSERT_EQ(p->grad.shape(), p->value.shape()) << p->name;
    double norm = 0;
    for (float g : p->grad.values()) {
      ASSERT_TRUE(std::isfinite(g)) << p->name;
      norm += static_cast<double>(g) * g;
    }
    EXPECT_GT(norm, 0.0) << p->name;
  }
}

TEST(Init, SameSeedSameWeightsDifferentSeedDiffers) {
  ConvEncoder<float> a("enc", 32, 5), b("enc", 32, 5), c("enc", 32, 6);
  EXPECT_EQ(params_checksum(a.params()), params_checksum(b.params()));
  EXPECT_NE(params_checksum(a.params()), params_checksum(c.params()));
}

TEST(Init, HeStdOf32ChannelFilterLayer) {
  const double expected = std::sqrt(2.0 / (32.0 * 16.0));
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    StridedConv<double> layer("c", 32, 16, false, rng);
    ParamRefs<double> ps;
    layer.collect(ps);
    const auto& w = ps[0]->value;
    double m = 0, s = 0;
    for (double v : w.values()) m += v;
    m /= static_cast<double>(w.size());
    for (double v : w.values()) s += (v - m) * (v - m);
    const double sd = std::sqrt(s / static_cast<double>(w.size()));
    EXPECT_NEAR(sd / expected, 1.0, 0.2) << "seed " << seed;
  }
}

TEST(LatentNorm, PlusMinusOneIsFixedPoint) {
  LatentNorm<double> norm(1);
  Tape<double> tape;
  auto y = norm.forward(tape, tape.constant(Tensor<double>({2, 1}, std::vector<double>{1.0, -1.0})), NormMode::Train);
  EXPECT_DOUBLE_EQ(y.value()[0], 1.0);
  EXPECT_DOUBLE_EQ(y.value()[1], -1.0);
}

TEST(LatentNorm, ConstantBatchIsDegenerate) {
  LatentNorm<double> norm(1);
  Tape<double> tape;
  EXPECT_THROW(norm.forward(tape, tape.constant(Tensor<double>({4, 1}, 2.5)), NormMode::Train), DegenerateBatchError);
  EXPECT_THROW(norm.forward(tape, tape.constant(Tensor<double>({1, 1}, 2.5)), NormMode::Train), DegenerateBatchError);
}

TEST(LatentNorm, TrainModeStandardizesAndTracksRunningStats) {
  Rng rng(8);
  LatentNorm<double> norm(2);
  for (int k = 0; k < 20; ++k) {
    Tape<double> tape;
    auto x = pcaae::testing::random_tensor({32, 2}, rng);
    for (std::size_t r = 0; r < 32; ++r) x[r * 2 + 1] = 3.0 + 2.0 * x[r * 2 + 1];
    auto y = norm.forward(tape, tape.constant(x), NormMode::Train).value();
    for (std::size_t c = 0; c < 2; ++c) {
      double m = 0, v = 0;
      for (std::size_t r = 0; r < 32; ++r) m += y[r * 2 + c];
      m /= 32;
      for (std::size_t r = 0; r < 32; ++r) v += (y[r * 2 + c] - m) * (y[r * 2 + c] - m);
      EXPECT_LT(std::abs(m), 1e-6);
      EXPECT_NEAR(v / 32, 1.0, 1e-6);
    }
  }
  EXPECT_NEAR(norm.running_mean[1], 3.0, 0.6);
  EXPECT_NEAR(norm.running_var[1], 4.0, 1.5);
}

TEST(LatentNorm, EvalModeUsesRunningStatistics) {
  LatentNorm<double> norm(1);
  norm.running_mean[0] = 2.0;
  norm.running_var[0] = 4.0;
  Tape<double> tape;
  auto y = norm.forward(tape, tape.constant(Tensor<double>({1, 1}, 4.0)), NormMode::Eval);
  EXPECT_NEAR(y.item(), 2.0 / std::sqrt(4.0 + 1e-5), 1e-12);
  EXPECT_DOUBLE_EQ(norm.running_mean[0], 2.0);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Parameter<double> p{"p", Tensor<double>({3}, std::vector<double>{1, -2, 3}), {}};
  Adam<double> opt({&p}, {});
  opt.zero_grad();
  opt.step();
  EXPECT_EQ(p.value, (Tensor<double>({3}, std::vector<double>{1, -2, 3})));
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(Adam, FirstBiasCorrectedStepIsLearningRate) {
  // m̂ = g, v̂ = g², so the first update is lr·g/(|g| + ε).
  Parameter<double> p{"p", Tensor<double>::scalar(0.0), {}};
  Adam<double> opt({&p}, {0.1, 0.5, 0.999, 1e-8});
  opt.zero_grad();
  p.grad[0] = 1.0;
  opt.step();
  EXPECT_NEAR(p.value[0], -0.1 / (1.0 + 1e-8), 1e-12);
}

TEST(Adam, IsStateful) {
  auto run = [](int calls, double lr) {
    Parameter<double> p{"p", Tensor<double>::scalar(0.0), {}};
    Adam<double> opt({&p}, {lr, 0.5, 0.999, 1e-8});
    for (int k = 0; k < calls; ++k) {
      opt.zero_grad();
      p.grad[0] = 1.0 + k;
      opt.step();
    }
    return p.value[0];
  };
  // Closed form for gradients 1 then 2, β1 = 0.5, β2 = 0.999.
  const double m2 = (0.5 * 0.5 * 1 + 0.5 * 2) / (1 - 0.25);
  const double v2 = (0.999 * 0.001 * 1 + 0.001 * 4) / (1 - 0.999 * 0.999);
  const double two_steps = -0.1 / (1 + 1e-8) - 0.1 * m2 / (std::sqrt(v2) + 1e-8);
  EXPECT_NEAR(run(2, 0.1), two_steps, 1e-12);
  EXPECT_NE(run(2, 0.1), run(1, 0.2));
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  Parameter<double> p{"enc1.conv0.w", Tensor<double>({2}), {}};
  Adam<double> opt({&p}, {});
  opt.zero_grad();
  p.grad[1] = std::numeric_limits<double>::quiet_NaN();
  try {
    opt.step();
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("enc1.conv0.w"), std::string::npos);
  }
}
