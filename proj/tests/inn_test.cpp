#include <gtest/gtest.h>

#include <cmath>

#include "dlv/inn.hpp"
#include "oracles.hpp"

using namespace dlv;

namespace {

Tensor<double> mean_pool2(const Tensor<double>& x) {
  const Shape s = x.shape();
  Tensor<double> out(Shape{s.n, s.c, s.h / 2, s.w / 2});
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t i = 0; i < s.h / 2; ++i)
        for (std::size_t j = 0; j < s.w / 2; ++j)
          out.at(b, c, i, j) = (x.at(b, c, 2 * i, 2 * j) + x.at(b, c, 2 * i, 2 * j + 1) + x.at(b, c, 2 * i + 1, 2 * j) +
                                x.at(b, c, 2 * i + 1, 2 * j + 1)) / 4;
  return out;
}

}  // namespace

TEST(DenseBlock, ZeroAtInitialization) {
  Rng rng(1);
  DenseBlock<double> blk(5, 3, 8, rng);
  Tape<double> tape;
  std::mt19937_64 r2(2);
  auto out = blk.forward(tape, tape.constant(oracle::random_tensor(Shape{2, 5, 4, 4}, r2)));
  EXPECT_EQ(out.shape(), (Shape{2, 3, 4, 4}));
  for (double v : out.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(InvBlock, ZeroInitIsIdentity) {
  Rng rng(3);
  InvBlock<double> blk(6, 8, 1.0, rng);
  std::mt19937_64 r2(4);
  auto h1 = oracle::random_tensor(Shape{1, 3, 4, 4}, r2), h2 = oracle::random_tensor(Shape{1, 6, 4, 4}, r2);
  Tape<double> tape;
  auto [a, b] = blk.forward(tape, tape.constant(h1), tape.constant(h2));
  EXPECT_EQ(a.value(), h1);
  EXPECT_EQ(b.value(), h2);
}

TEST(InvBlock, ZeroClampIsAdditive) {
  Rng rng(5);
  InvBlock<double> blk(6, 8, 0.0, rng);
  blk.randomize(rng, 1.0);
  std::mt19937_64 r2(6);
  Tape<double> tape;
  auto ls = blk.log_scale(tape, tape.constant(oracle::random_tensor(Shape{1, 3, 4, 4}, r2)));
  for (double v : ls.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(InvBlock, RoundTripAndScaleBound) {
  Rng rng(7);
  std::mt19937_64 r2(8);
  for (int t = 0; t < 50; ++t) {
    InvBlock<double> blk(5, 6, 1.0, rng);
    blk.randomize(rng, 2.0);
    auto h1 = oracle::random_tensor(Shape{2, 3, 4, 3}, r2), h2 = oracle::random_tensor(Shape{2, 5, 4, 3}, r2);
    Tape<double> tape;
    auto [a, b] = blk.forward(tape, tape.constant(h1), tape.constant(h2));
    auto [c, d] = blk.inverse(tape, a, b);
    EXPECT_LE(max_abs_diff(c.value(), h1), 1e-10);
    EXPECT_LE(max_abs_diff(d.value(), h2), 1e-10);
    const auto s = exp(blk.log_scale(tape, a)).value();
    for (double v : s.data()) {
      EXPECT_GE(v, std::exp(-1.0) - 1e-15);
      EXPECT_LE(v, std::exp(1.0) + 1e-15);
    }
  }
}

TEST(Model, ShapesAndConservation) {
  Rng rng(9);
  for (int s : {2, 4}) {
    for (int cw : {0, 1, 2, 3}) {
      RescaleModel<float> m(ModelConfig{s, cw, 1, 4, 1.0}, rng);
      Tensor<float> x(Shape{1, 3, 16, 16}, 0.5f);
      Tensor<float> w = cw ? Tensor<float>(m.latent_shape(x.shape())) : Tensor<float>();
      auto enc = m.forward(x, w);
      const std::size_t side = 16 / static_cast<std::size_t>(s);
      EXPECT_EQ(enc.y.shape(), (Shape{1, 3, side, side}));
      EXPECT_EQ(enc.z.shape().c, static_cast<std::size_t>((3 + cw) * s * s - 3));
      EXPECT_EQ(x.size() + w.size(), enc.y.size() + enc.z.size());
    }
  }
}

TEST(Model, ChannelAccounting) {
  Rng rng(10);
  RescaleModel<float> m2(ModelConfig{2, 2, 1, 4, 1.0}, rng);
  Tensor<float> x(Shape{1, 3, 64, 64}), w(Shape{1, 2, 64, 64});
  auto enc = m2.forward(x, w);
  EXPECT_EQ(enc.y.shape(), (Shape{1, 3, 32, 32}));
  EXPECT_EQ(enc.z.shape(), (Shape{1, 17, 32, 32}));
  EXPECT_EQ(ModelConfig({4, 2, 1, 4, 1.0}).z_channels(), 77u);
}

TEST(Model, ZeroInitIsPureHaar) {
  Rng rng(11);
  std::mt19937_64 r2(12);
  RescaleModel<double> m(ModelConfig{2, 2, 2, 4, 1.0}, rng);
  auto x = oracle::random_tensor(Shape{1, 3, 8, 8}, r2, 0, 1);
  auto w = oracle::random_tensor(Shape{1, 2, 8, 8}, r2);
  auto enc = m.forward(x, w);
  const auto pooled = mean_pool2(x);
  for (std::size_t i = 0; i < pooled.size(); ++i) EXPECT_NEAR(enc.y[i], 2 * pooled[i], 1e-15);
  const auto ref = oracle::haar(concat_channels(x, w));
  EXPECT_LE(max_abs_diff(concat_channels(enc.y, enc.z), ref), 1e-15);

  RescaleModel<double> m4(ModelConfig{4, 1, 2, 4, 1.0}, rng);
  auto x4 = oracle::random_tensor(Shape{1, 3, 8, 8}, r2, 0, 1);
  auto w4 = oracle::random_tensor(Shape{1, 1, 8, 8}, r2);
  auto e4 = m4.forward(x4, w4);
  const auto ref4 = oracle::haar(oracle::haar(concat_channels(x4, w4)));
  EXPECT_LE(max_abs_diff(concat_channels(e4.y, e4.z), ref4), 1e-15);
}

TEST(Model, ZeroInitInverseFromZeroLatent) {
  Rng rng(13);
  std::mt19937_64 r2(14);
  RescaleModel<double> m(ModelConfig{2, 2, 2, 4, 1.0}, rng);
  auto x = oracle::random_tensor(Shape{1, 3, 8, 8}, r2, 0, 1);
  auto enc = m.forward(x, oracle::random_tensor(Shape{1, 2, 8, 8}, r2));
  auto dec = m.inverse(enc.y, Tensor<double>(m.z_shape_for_lr(enc.y.shape())));
  const auto pooled = mean_pool2(x);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(dec.x.at(0, c, i, j), pooled.at(0, c, i / 2, j / 2), 1e-15);
  const auto repooled = mean_pool2(dec.x);
  for (std::size_t i = 0; i < repooled.size(); ++i) EXPECT_NEAR(repooled[i], enc.y[i] / 2, 1e-15);
}

TEST(Model, RandomWeightsRoundTrip) {
  Rng rng(15);
  std::mt19937_64 r2(16);
  for (int s : {2, 4}) {
    for (int cw : {0, 2}) {
      RescaleModel<double> m(ModelConfig{s, cw, 2, 4, 1.0}, rng);
      m.randomize(rng, 1.0);
      auto x = oracle::random_tensor(Shape{2, 3, 8, 8}, r2, 0, 1);
      Tensor<double> w = cw ? sample_latent<double>(LatentMode::kGaussian, m.latent_shape(x.shape()), rng) : Tensor<double>();
      auto enc = m.forward(x, w);
      auto dec = m.inverse(enc.y, enc.z);
      EXPECT_LE(max_abs_diff(dec.x, x), 1e-10);
      if (cw) {
        EXPECT_LE(max_abs_diff(dec.w, w), 1e-10);
      }
      EXPECT_TRUE(dec.w.empty() == (cw == 0));
      EXPECT_EQ(m.inverse(enc.y, enc.z).x, dec.x);
    }
  }
}

TEST(Model, ShapeErrors) {
  Rng rng(17);
  RescaleModel<float> m(ModelConfig{2, 2, 1, 4, 1.0}, rng);
  EXPECT_THROW(m.forward(Tensor<float>(Shape{1, 3, 9, 8}), Tensor<float>(Shape{1, 2, 9, 8})), ShapeError);
  EXPECT_THROW(m.forward(Tensor<float>(Shape{1, 3, 8, 8}), Tensor<float>(Shape{1, 1, 8, 8})), ShapeError);
  EXPECT_THROW(m.forward(Tensor<float>(Shape{1, 4, 8, 8}), Tensor<float>(Shape{1, 2, 8, 8})), ShapeError);
  EXPECT_THROW(m.inverse(Tensor<float>(Shape{1, 3, 4, 4}), Tensor<float>(Shape{1, 16, 4, 4})), ShapeError);
  RescaleModel<float> m0(ModelConfig{2, 0, 1, 4, 1.0}, rng);
  EXPECT_THROW(m0.forward(Tensor<float>(Shape{1, 3, 8, 8}), Tensor<float>(Shape{1, 1, 8, 8})), ShapeError);
  EXPECT_THROW(RescaleModel<float>(ModelConfig{3, 2, 1, 4, 1.0}, rng), std::invalid_argument);
}

TEST(SampleLatent, ZeroAndGaussianMoments) {
  Rng rng(18);
  const auto zero = sample_latent<float>(LatentMode::kZero, Shape{1, 2, 3, 3}, rng);
  for (float v : zero.data()) EXPECT_EQ(v, 0.0f);
  auto g = sample_latent<double>(LatentMode::kGaussian, Shape{1, 1, 1000, 1000}, rng);
  const double mean = mean_all(g);
  double var = 0.0;
  for (double v : g.data()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(g.size() - 1);
  EXPECT_NEAR(mean, 0.0, 0.01);
  EXPECT_NEAR(var, 1.0, 0.01);
  Rng a(5), b(5);
  EXPECT_EQ(sample_latent<float>(LatentMode::kGaussian, Shape{1, 2, 4, 4}, a),
            sample_latent<float>(LatentMode::kGaussian, Shape{1, 2, 4, 4}, b));
  EXPECT_TRUE(sample_latent<float>(LatentMode::kGaussian, Shape{1, 0, 4, 4}, a).empty());
}

TEST(Model, ParameterNamesAreUnique) {
  Rng rng(19);
  RescaleModel<float> m(ModelConfig{4, 2, 2, 4, 1.0}, rng);
  auto names = m.parameter_names();
  std::sort(names.begin(), names.end());
  EXPECT_EQ(std::adjacent_find(names.begin(), names.end()), names.end());
  EXPECT_EQ(names.size(), 2u * 2 * 3 * 5 * 2);
}
