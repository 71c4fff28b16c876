#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "dlv/synth.hpp"
#include "dlv/trainer.hpp"
#include "oracles.hpp"

using namespace dlv;

namespace {

Corpus synth_corpus(std::size_t count, std::size_t side, std::uint64_t seed) {
  Rng rng(seed);
  Corpus c;
  for (std::size_t i = 0; i < count; ++i) {
    c.names.push_back("s" + std::to_string(i) + ".png");
    c.images.push_back(synth_image(side, side, rng));
  }
  return c;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.model = {2, 1, 1, 4, 1.0};
  c.weights = LossWeights::defaults(2);
  c.batch = 2;
  c.patch = 16;
  c.iterations = 4;
  c.learning_rate = 1e-3;
  c.halving_period = 1000;
  c.seed = 11;
  return c;
}

bool same_blobs(const Checkpoint& a, const Checkpoint& b) {
  if (a.blobs.size() != b.blobs.size()) return false;
  for (std::size_t i = 0; i < a.blobs.size(); ++i) {
    if (a.blobs[i].name != b.blobs[i].name || a.blobs[i].data != b.blobs[i].data) return false;
  }
  return true;
}

}  // namespace

TEST(Schedule, HalvingExamples) {
  EXPECT_EQ(lr_at(0, 2e-4, 50000), 2e-4);
  EXPECT_EQ(lr_at(49999, 2e-4, 50000), 2e-4);
  EXPECT_EQ(lr_at(50000, 2e-4, 50000), 1e-4);
  EXPECT_EQ(lr_at(100000, 2e-4, 50000), 5e-5);
  EXPECT_EQ(lr_at(7, 1.0, 2), 0.125);
  EXPECT_THROW(lr_at(-1, 1.0, 2), std::invalid_argument);
}

TEST(Adam, ConstantGradientStepsByLearningRate) {
  Parameter<double> p(Tensor<double>(Shape{1, 1, 1, 3}, std::vector<double>{1.0, -2.0, 0.5}));
  OptimizerState<double> state({&p});
  const double g[3] = {0.3, -4.0, 1e-2};
  for (int t = 1; t <= 4; ++t) {
    for (int k = 0; k < 3; ++k) p.grad[k] = g[k];
    const auto before = p.value;
    adam_step<double>({&p}, state, 1e-3);
    for (int k = 0; k < 3; ++k) {
      // bias correction makes m_hat = g and v_hat = g^2 exactly for a constant gradient
      const double expect = 1e-3 * g[k] / (std::fabs(g[k]) + kAdamEpsilon);
      EXPECT_NEAR(before[k] - p.value[k], expect, 1e-15);
    }
  }
  EXPECT_EQ(state.step, 4);
}

TEST(Adam, ZeroGradientIsNoOp) {
  Parameter<float> p(Tensor<float>(Shape{1, 1, 2, 2}, 0.75f));
  OptimizerState<float> state({&p});
  adam_step<float>({&p}, state, 1.0);
  for (float v : p.value.data()) EXPECT_EQ(v, 0.75f);
}

TEST(Adam, MatchesScalarReferenceSequence) {
  Parameter<double> p(Tensor<double>(Shape{1, 1, 1, 1}, 0.4));
  OptimizerState<double> state({&p});
  const double grads[5] = {0.5, -1.25, 0.0, 2.0, 0.125};
  double theta = 0.4, m = 0.0, v = 0.0;
  for (int t = 1; t <= 5; ++t) {
    const double g = grads[t - 1];
    p.grad[0] = g;
    adam_step<double>({&p}, state, 0.01);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    theta -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(p.value[0], theta, 1e-12) << "step " << t;
  }
}

TEST(Adam, StateMismatchRejected) {
  Parameter<double> p(Tensor<double>(Shape{1, 1, 1, 1}));
  OptimizerState<double> empty;
  EXPECT_THROW(adam_step<double>({&p}, empty, 1e-3), std::invalid_argument);
}

TEST(Train, ZeroWeightsLeaveParametersUnchanged) {
  auto cfg = tiny_config();
  cfg.iterations = 1;
  cfg.weights = {0.0, 0.0, 0.0, 0.0, 3};
  const auto corpus = synth_corpus(2, 24, 1);
  const auto res = train<float>(cfg, corpus, Corpus{});
  Rng init = derived_rng(cfg.seed, kInitStream);
  RescaleModel<float> fresh(cfg.model, init);
  Checkpoint ref;
  append_model_blobs(ref, fresh);
  for (const auto& b : ref.blobs) {
    const Blob* got = res.checkpoint.find(b.name);
    ASSERT_NE(got, nullptr);
    EXPECT_EQ(got->data, b.data) << b.name;
  }
  EXPECT_EQ(res.log.size(), 1u);
  EXPECT_EQ(res.log[0].total, 0.0);
}

TEST(Train, LossDecreasesOnFixedBatch) {
  // patch equals the image size and both latents are zero, so every step
  // sees the same batch and the loss is a deterministic function of the weights
  auto cfg = tiny_config();
  cfg.iterations = 60;
  cfg.latents = {LatentMode::kZero, LatentMode::kZero, true};
  const auto corpus = synth_corpus(1, 16, 2);
  const auto res = train<float>(cfg, corpus, Corpus{});
  EXPECT_LT(res.log.back().total, 0.75 * res.log.front().total);
  EXPECT_LT(res.log.back().recon, res.log.front().recon);
}

TEST(Train, SameSeedIsBitIdentical) {
  auto cfg = tiny_config();
  cfg.iterations = 6;
  cfg.eval_every = 3;
  const auto corpus = synth_corpus(3, 24, 3);
  const auto eval = synth_corpus(2, 32, 4);
  const auto a = train<float>(cfg, corpus, eval);
  const auto b = train<float>(cfg, corpus, eval);
  EXPECT_TRUE(same_blobs(a.checkpoint, b.checkpoint));
  EXPECT_EQ(a.checkpoint.rng, b.checkpoint.rng);
  std::ostringstream la, lb;
  write_train_log(la, a.log);
  write_train_log(lb, b.log);
  EXPECT_EQ(la.str(), lb.str());
  ASSERT_EQ(a.evals.size(), 2u);
  EXPECT_EQ(a.evals[0].iter, 3);
  EXPECT_EQ(a.final_eval.psnr_db, b.final_eval.psnr_db);
  cfg.seed = 12;
  const auto c = train<float>(cfg, corpus, eval);
  EXPECT_FALSE(same_blobs(a.checkpoint, c.checkpoint));
}

TEST(Train, WritesFilesWhenOutDirSet) {
  auto cfg = tiny_config();
  cfg.iterations = 4;
  cfg.checkpoint_every = 2;
  cfg.out_dir = std::filesystem::temp_directory_path() / "dlv_trainer_test_out";
  std::filesystem::remove_all(cfg.out_dir);
  const auto corpus = synth_corpus(2, 24, 5);
  const auto res = train<float>(cfg, corpus, Corpus{});
  EXPECT_TRUE(std::filesystem::exists(cfg.out_dir / "checkpoint_2.ckpt"));
  const auto ck = read_checkpoint(cfg.out_dir / "final.ckpt");
  EXPECT_EQ(ck.iteration, 4);
  EXPECT_EQ(ck.adam_step, 4);
  EXPECT_TRUE(same_blobs(ck, res.checkpoint));
  EXPECT_NE(ck.find("adam.m.stage0.block0.phi.conv1.weight"), nullptr);
  std::ifstream log(cfg.out_dir / "train_log.csv");
  std::string header;
  std::getline(log, header);
  EXPECT_EQ(header, "iter,lr,L_r,L_g,L_d,L_i,total");
}

TEST(Train, NonFiniteLossAborts) {
  auto cfg = tiny_config();
  cfg.iterations = 6;
  cfg.learning_rate = 1e30;
  const auto corpus = synth_corpus(2, 24, 6);
  try {
    train<float>(cfg, corpus, Corpus{});
    FAIL() << "no abort";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite loss at iteration"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("gradient norms"), std::string::npos);
  }
}

TEST(Train, InvalidConfigRejected) {
  auto cfg = tiny_config();
  cfg.patch = 15;
  EXPECT_THROW(train<float>(cfg, synth_corpus(1, 24, 1), Corpus{}), std::invalid_argument);
  cfg = tiny_config();
  cfg.halving_period = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Ablation, GridRows) {
  const auto grid = ablation_grid();
  ASSERT_EQ(grid.size(), 7u);
  int with_li = 0;
  for (const auto& v : grid) with_li += v.invariance;
  EXPECT_EQ(with_li, 1);
  EXPECT_EQ(grid[0].zhat_mode, LatentMode::kGaussian);
  EXPECT_EQ(grid[3].c_w, 1);
  EXPECT_EQ(grid[5].c_w, 3);
  auto base = tiny_config();
  base.model.scale = 4;
  base.weights = LossWeights::defaults(4);
  base.weights.invariance = 0.0;
  EXPECT_EQ(variant_config(base, grid[6]).weights.invariance, 4.0);
  EXPECT_EQ(variant_config(base, grid[4]).weights.invariance, 0.0);
}

TEST(Ablation, SingleRowEqualsPlainTrain) {
  auto base = tiny_config();
  base.iterations = 3;
  const auto corpus = synth_corpus(2, 24, 7);
  const auto eval = synth_corpus(1, 32, 8);
  const AblationVariant v{"only", 2, LatentMode::kZero, LatentMode::kGaussian, true};
  const auto rows = ablate<float>(base, {v}, corpus, eval);
  const auto direct = train<float>(variant_config(base, v), corpus, eval);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_TRUE(same_blobs(rows[0].result.checkpoint, direct.checkpoint));
  EXPECT_EQ(rows[0].eval.psnr_db, direct.final_eval.psnr_db);
  std::ostringstream os;
  write_ablation_csv(os, rows);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "setting,c_w,zhat,w,l_i,psnr_db,ssim,lr_ssim");
  EXPECT_NE(os.str().find("only,2,zero,gaussian,on,"), std::string::npos);
}

TEST(Evaluate, ZeroInitModelIsHaarRoundTrip) {
  // a fresh model has zero final layers: y is the Haar LL band and the round
  // trip with z_hat = 0 loses only the detail bands
  Rng rng(1);
  RescaleModel<double> model({2, 0, 1, 4, 1.0}, rng);
  Corpus c;
  c.names = {"flat.png"};
  c.images = {ImageRGB(30, 30, 0.4)};
  const auto e = evaluate(model, c, LatentOptions{LatentMode::kZero, LatentMode::kZero, true}, 1);
  EXPECT_EQ(e.images.size(), 1u);
  EXPECT_EQ(e.psnr_db, 99.0);
  EXPECT_NEAR(e.ssim, 1.0, 1e-12);
}

TEST(Probe, ZeroDeltaGivesZeroDistance) {
  Rng rng(2);
  RescaleModel<double> model({2, 0, 2, 4, 1.0}, rng);
  model.randomize(rng, 1.0);
  std::mt19937_64 g(3);
  const auto y = oracle::random_tensor(Shape{1, 3, 6, 6}, g, 0.0, 2.0);
  const auto r = sensitivity_probe(model, y, 2, 0.0, rng);
  EXPECT_EQ(r.max_distance, 0.0);
  ASSERT_EQ(r.distances.size(), 1u);
}

TEST(Probe, UnitDeltaVisibleAndMonotone) {
  Rng init(4);
  RescaleModel<double> model({2, 0, 2, 4, 1.0}, init);
  model.randomize(init, 1.0);
  std::mt19937_64 g(5);
  const auto y = oracle::random_tensor(Shape{1, 3, 6, 6}, g, 0.0, 2.0);
  double prev = 0.0;
  for (double delta : {1e-3, 1e-2, 1e-1, 1.0}) {
    Rng rng(6);
    const auto r = sensitivity_probe(model, y, 4, delta, rng);
    EXPECT_EQ(r.distances.size(), 6u);
    EXPECT_GT(r.min_distance, prev) << delta;
    prev = r.min_distance;
  }
  EXPECT_GT(prev, 1e-6);
  Rng rng(7);
  EXPECT_THROW(sensitivity_probe(model, y, 1, 1.0, rng), std::invalid_argument);
}
