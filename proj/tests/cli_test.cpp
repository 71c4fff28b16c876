#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "cli_app.hpp"

using namespace dlv;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run_cli(args, {out, err});
  return {code, out.str(), err.str()};
}

fs::path dir() {
  static const fs::path d = [] {
    auto p = fs::temp_directory_path() / "dlv_cli_test";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return d;
}

std::string p(const std::string& name) { return (dir() / name).string(); }

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

/// Randomized (non-identity) checkpoint written directly.
std::string random_ckpt(ModelConfig cfg, double gain, const std::string& name) {
  Rng rng(99);
  RescaleModel<float> m(cfg, rng);
  m.randomize(rng, gain);
  Checkpoint ck;
  append_model_blobs(ck, m);
  write_checkpoint(p(name), ck);
  return p(name);
}

std::string natural_png(std::size_t w, std::size_t h, std::uint64_t seed, const std::string& name) {
  Rng rng(seed);
  save_png(p(name), synth_image(w, h, rng));
  return p(name);
}

double max_abs(const ImageRGB& a, const ImageRGB& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.values.size(); ++i) m = std::max(m, std::fabs(a.values[i] - b.values[i]));
  return m;
}

}  // namespace

TEST(Cli, ZeroInitDownscaleOfGrayIsSameGray) {
  ASSERT_EQ(run({"init", "--out", p("zero2.ckpt"), "--scale", "2", "--blocks", "2", "--growth", "4"}).code, 0);
  save_png(p("gray.png"), ImageRGB(16, 12, 128 / 255.0));
  const auto r = run({"downscale", "--ckpt", p("zero2.ckpt"), "--in", p("gray.png"), "--out", p("gray_lr.png")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto lr = load_png(p("gray_lr.png"));
  EXPECT_EQ(lr.width, 8u);
  EXPECT_EQ(lr.height, 6u);
  for (double v : lr.values) EXPECT_EQ(v, 128 / 255.0);
}

TEST(Cli, OddInputCenterCroppedWithWarning) {
  ASSERT_EQ(run({"init", "--out", p("zero2b.ckpt"), "--blocks", "1", "--growth", "4"}).code, 0);
  save_png(p("odd.png"), ImageRGB(65, 64, 0.5));
  const auto r = run({"downscale", "--ckpt", p("zero2b.ckpt"), "--in", p("odd.png"), "--out", p("odd_lr.png")});
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.err.find("warning:"), std::string::npos);
  EXPECT_NE(r.err.find("64x64"), std::string::npos);
  EXPECT_EQ(load_png(p("odd_lr.png")).width, 32u);
}

TEST(Cli, DownscaleDeterministicPerSeed) {
  const auto ck = random_ckpt({2, 2, 1, 4, 1.0}, 0.2, "rand_det.ckpt");
  const auto in = natural_png(32, 32, 1, "det.png");
  ASSERT_EQ(run({"--seed", "4", "downscale", "--ckpt", ck, "--in", in, "--out", p("d1.png")}).code, 0);
  ASSERT_EQ(run({"--seed", "4", "downscale", "--ckpt", ck, "--in", in, "--out", p("d2.png")}).code, 0);
  EXPECT_EQ(slurp(p("d1.png")), slurp(p("d2.png")));
}

TEST(Cli, ZBlobRoundTripWithinOneLevel) {
  const auto ck = random_ckpt({2, 2, 2, 4, 1.0}, 0.5, "rand_zb.ckpt");
  const auto in = natural_png(32, 24, 2, "zb.png");
  ASSERT_EQ(run({"downscale", "--ckpt", ck, "--in", in, "--out", p("zb_lr.png"), "--save-z", p("zb.z"),
                 "--no-quantize"})
                .code,
            0);
  const auto r = run({"upscale", "--ckpt", ck, "--in", p("zb_lr.png"), "--out", p("zb_hr.png"), "--zblob", p("zb.z")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_LE(max_abs(load_png(p("zb_hr.png")), load_png(in)), 1.0 / 255 + 1e-12);
}

TEST(Cli, ZBlobShapeOrModelMismatchRejected) {
  const auto ck = random_ckpt({2, 2, 1, 4, 1.0}, 0.2, "rand_mm.ckpt");
  const auto in = natural_png(32, 32, 3, "mm.png");
  ASSERT_EQ(run({"downscale", "--ckpt", ck, "--in", in, "--out", p("mm_lr.png"), "--save-z", p("mm.z")}).code, 0);
  save_png(p("mm_small.png"), ImageRGB(8, 8, 0.5));
  auto r = run({"upscale", "--ckpt", ck, "--in", p("mm_small.png"), "--out", p("mm_hr.png"), "--zblob", p("mm.z")});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("z blob has shape"), std::string::npos);
  const auto other = random_ckpt({2, 1, 1, 4, 1.0}, 0.2, "rand_mm_other.ckpt");
  r = run({"upscale", "--ckpt", other, "--in", p("mm_lr.png"), "--out", p("mm_hr.png"), "--zblob", p("mm.z")});
  EXPECT_NE(r.code, 0);
}

TEST(Cli, UpscaleZeroRepeatableGaussianSeedDependent) {
  const auto ck = random_ckpt({2, 0, 2, 4, 1.0}, 0.5, "rand_up.ckpt");
  const auto lr = natural_png(16, 16, 4, "up_lr.png");
  for (const char* out : {"u0a.png", "u0b.png"})
    ASSERT_EQ(run({"upscale", "--ckpt", ck, "--in", lr, "--out", p(out), "--zhat", "zero"}).code, 0);
  EXPECT_EQ(slurp(p("u0a.png")), slurp(p("u0b.png")));
  ASSERT_EQ(run({"--seed", "1", "upscale", "--ckpt", ck, "--in", lr, "--out", p("ug1.png"), "--zhat", "gaussian"}).code, 0);
  ASSERT_EQ(run({"--seed", "2", "upscale", "--ckpt", ck, "--in", lr, "--out", p("ug2.png"), "--zhat", "gaussian"}).code, 0);
  EXPECT_NE(slurp(p("ug1.png")), slurp(p("ug2.png")));
  EXPECT_NE(run({"upscale", "--ckpt", ck, "--in", lr, "--out", p("x.png"), "--zhat", "uniform"}).code, 0);
}

TEST(Cli, RoundtripTrueZExactWithoutQuantization) {
  const auto ck = random_ckpt({2, 2, 2, 4, 1.0}, 0.2, "rand_rt.ckpt");
  for (std::uint64_t s = 0; s < 4; ++s) {
    const auto in = natural_png(48, 40, 10 + s, "rt.png");
    auto r = run({"roundtrip", "--ckpt", ck, "--in", in, "--zhat", "true", "--no-quantize", "--report", p("rt.csv")});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out, "name,psnr_db,ssim\nrt.png,99.0000,1.000000\n");
    EXPECT_EQ(slurp(p("rt.csv")), r.out);
  }
}

TEST(Cli, RoundtripTrueZQuantizedAbove45dB) {
  // zero-init and briefly trained checkpoints; only the LR rounding noise is injected
  fs::create_directories(dir() / "rt_train");
  Rng rng(21);
  for (int i = 0; i < 4; ++i) save_png(dir() / "rt_train" / ("t" + std::to_string(i) + ".png"), synth_image(48, 48, rng));
  ASSERT_EQ(run({"init", "--out", p("rt_zero.ckpt"), "--blocks", "2", "--growth", "4"}).code, 0);
  ASSERT_EQ(run({"train", "--train_dir", (dir() / "rt_train").string(), "--out_dir", p("rt_run"), "--blocks", "2",
                 "--growth", "4", "--patch", "32", "--iterations", "100", "--lr", "1e-3", "--eval_every", "0",
                 "--checkpoint_every", "0"})
                .code,
            0);
  for (const auto& ck : {p("rt_zero.ckpt"), (dir() / "rt_run" / "final.ckpt").string()}) {
    double worst = 1e9;
    for (std::uint64_t s = 0; s < 4; ++s) {
      const auto in = natural_png(48, 40, 30 + s, "rtq.png");
      const auto r = run({"roundtrip", "--ckpt", ck, "--in", in, "--zhat", "true"});
      ASSERT_EQ(r.code, 0) << r.err;
      worst = std::min(worst, std::stod(r.out.substr(r.out.find("rtq.png,") + 8)));
    }
    EXPECT_GT(worst, 45.0) << ck;
    EXPECT_LT(worst, 99.0) << ck;
  }
}

TEST(Cli, RoundtripZeroLatentUntrainedStillReports) {
  ASSERT_EQ(run({"init", "--out", p("zero_rt.ckpt"), "--blocks", "1", "--growth", "4"}).code, 0);
  const auto in = natural_png(32, 32, 5, "rt0.png");
  const auto r = run({"roundtrip", "--ckpt", p("zero_rt.ckpt"), "--in", in});
  ASSERT_EQ(r.code, 0);
  const double db = std::stod(r.out.substr(r.out.find("rt0.png,") + 8));
  EXPECT_GT(db, 0.0);
  EXPECT_LT(db, 45.0);
}

TEST(Cli, MetricsFileAndDirectory) {
  save_png(p("m_a.png"), ImageRGB(16, 16, 0.5));
  save_png(p("m_b.png"), ImageRGB(16, 16, 0.5));
  auto r = run({"metrics", "--ref", p("m_a.png"), "--test", p("m_b.png")});
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "name,psnr_db,ssim\nm_b.png,99.0000,1.000000\n");
  fs::create_directories(dir() / "ref");
  fs::create_directories(dir() / "test");
  save_png(dir() / "ref" / "a.png", ImageRGB(12, 12, 0.5));
  save_png(dir() / "test" / "a.png", ImageRGB(12, 12, 0.5));
  r = run({"metrics", "--ref", (dir() / "ref").string(), "--test", (dir() / "test").string()});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("a.png,99.0000"), std::string::npos);
  r = run({"metrics", "--ref", p("m_a.png"), "--test", p("missing.png")});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
}

TEST(Cli, GradcheckListsEveryPrimitiveOnce) {
  const auto r = run({"gradcheck", "--size", "tiny"});
  EXPECT_EQ(r.code, 0) << r.out;
  for (Op op : kPrimitives) {
    const std::string name(op_name(op));
    std::size_t count = 0;
    std::istringstream lines(r.out);
    for (std::string line; std::getline(lines, line);) count += line.rfind(name + " ", 0) == 0;
    EXPECT_EQ(count, 1u) << name;
  }
}

TEST(Cli, GradcheckFaultFails) {
  const auto r = run({"gradcheck", "--size", "tiny", "--fault", "sigmoid"});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.out.find("FAIL"), std::string::npos);
  EXPECT_FALSE(gradient_fault().has_value());
  EXPECT_NE(run({"gradcheck", "--fault", "nonsense"}).code, 0);
}

TEST(Cli, HelpListsEverySchemaKeyWithDefault) {
  const auto r = run({"train", "--help"});
  EXPECT_EQ(r.code, 0);
  for (const auto& k : train_config_schema()) {
    const std::string flag = "--" + k.name + " ";
    const auto pos = r.out.find(flag);
    ASSERT_NE(pos, std::string::npos) << k.name;
    const std::string line = r.out.substr(pos, r.out.find('\n', pos) - pos);
    const std::string shown = k.default_value.empty() ? "\"\"" : k.default_value;
    EXPECT_NE(line.find("[" + shown + "]"), std::string::npos) << line;
  }
  const auto top = run({"--help"});
  EXPECT_EQ(top.code, 0);
  EXPECT_NE(top.out.find("--seed"), std::string::npos);
  EXPECT_NE(top.out.find("DLV_SEED"), std::string::npos);
}

TEST(Cli, ErrorsGiveNonzeroExit) {
  EXPECT_NE(run({}).code, 0);
  EXPECT_NE(run({"frobnicate"}).code, 0);
  EXPECT_NE(run({"downscale", "--ckpt", p("nope.ckpt"), "--in", p("nope.png"), "--out", p("o.png")}).code, 0);
  EXPECT_NE(run({"train"}).code, 0);
}

TEST(Cli, TrainTinyRunWithConfigFile) {
  fs::create_directories(dir() / "train");
  Rng rng(5);
  for (int i = 0; i < 2; ++i) save_png(dir() / "train" / ("t" + std::to_string(i) + ".png"), synth_image(24, 24, rng));
  std::ofstream(p("tiny.cfg")) << "blocks = 1\ngrowth = 4\nbatch = 2\npatch = 16\niterations = 3\n";
  const auto r = run({"train", "--config", p("tiny.cfg"), "--train_dir", (dir() / "train").string(), "--out_dir",
                      p("run"), "--c_w", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ck = read_checkpoint(dir() / "run" / "final.ckpt");
  EXPECT_EQ(ck.model.blocks, 1);
  EXPECT_EQ(ck.model.c_w, 1);
  EXPECT_EQ(ck.iteration, 3);
  EXPECT_TRUE(fs::exists(dir() / "run" / "train_log.csv"));
}

TEST(Cli, SynthWritesCorpus) {
  const auto r = run({"--seed", "3", "synth", "--out", p("syn"), "--count", "3", "--width", "20", "--height", "16"});
  ASSERT_EQ(r.code, 0);
  const auto c = load_corpus(dir() / "syn");
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c.images[0].width, 20u);
}
