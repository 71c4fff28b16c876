#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dlv/checkpoint.hpp"
#include "dlv/image.hpp"
#include "dlv/inn.hpp"
#include "dlv/losses.hpp"
#include "dlv/metrics.hpp"

namespace dlv {

struct TrainConfig {
  ModelConfig model{};
  LatentOptions latents{};
  LossWeights weights = LossWeights::defaults(2);
  int batch = 4;
  int patch = 64;
  long iterations = 5000;
  double learning_rate = 2e-4;
  long halving_period = 1000;
  std::uint64_t seed = 0;
  long eval_every = 0;        // 0: evaluate only at the end
  long checkpoint_every = 0;  // 0: final checkpoint only
  std::filesystem::path train_dir;
  std::filesystem::path eval_dir;
  std::filesystem::path out_dir;  // empty: nothing is written

  void validate() const {
    model.validate();
    weights.validate();
    if (halving_period <= 0) throw std::invalid_argument("TrainConfig: halving period must be > 0");
    if (iterations < 1) throw std::invalid_argument("TrainConfig: iterations must be >= 1");
    if (batch < 1) throw std::invalid_argument("TrainConfig: batch must be >= 1");
    if (patch < 1 || patch % model.scale != 0) {
      throw std::invalid_argument("TrainConfig: patch must be a positive multiple of the scale");
    }
  }
};

/// base * 2^-floor(iter / period)
inline double lr_at(long iter, double base, long period) {
  if (iter < 0) throw std::invalid_argument("lr_at: iteration must be >= 0");
  return std::ldexp(base, -static_cast<int>(iter / period));
}

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;

template <typename T>
struct OptimizerState {
  std::vector<Tensor<T>> first;
  std::vector<Tensor<T>> second;
  long step = 0;

  explicit OptimizerState(const std::vector<Parameter<T>*>& params = {}) {
    for (const auto* p : params) {
      first.push_back(Tensor<T>::zeros(p->value.shape()));
      second.push_back(Tensor<T>::zeros(p->value.shape()));
    }
  }
};

/// One bias-corrected Adam update from the gradients held in each parameter.
template <typename T>
void adam_step(const std::vector<Parameter<T>*>& params, OptimizerState<T>& state, double lr) {
  if (state.first.size() != params.size()) throw std::invalid_argument("adam_step: state/parameter count mismatch");
  ++state.step;
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    auto& m = state.first[i];
    auto& v = state.second[i];
    require_same_shape("adam_step", p.value.shape(), m.shape());
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = static_cast<double>(p.grad[k]);
      const double mk = kAdamBeta1 * static_cast<double>(m[k]) + (1.0 - kAdamBeta1) * g;
      const double vk = kAdamBeta2 * static_cast<double>(v[k]) + (1.0 - kAdamBeta2) * g * g;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double update = lr * (mk / c1) / (std::sqrt(vk / c2) + kAdamEpsilon);
      p.value[k] = static_cast<T>(static_cast<double>(p.value[k]) - update);
    }
  }
}

// ---------------------------------------------------------------------------
// Evaluation

struct ImageEval {
  std::string name;
  MetricReport hr;  // x_hat vs x
  MetricReport lr;  // quantized y vs bicubic reference
};

struct EvalSummary {
  double psnr_db = 0.0;  // mean over images of capped PSNR
  double ssim = 0.0;
  double lr_ssim = 0.0;
  double lr_psnr_db = 0.0;
  std::vector<ImageEval> images;
};

/// Stream seeds derived from the run seed, so data order does not depend on
/// how many latent draws a variant makes.
inline Rng derived_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return Rng(seq);
}

enum RngStream : std::uint64_t { kInitStream = 1, kDataStream = 2, kLatentStream = 3, kEvalStream = 4 };

/// Downscale with w per w_mode, optionally store the LR as 8 bits, upscale
/// with z_hat per zhat_mode, then score on luma with an s-pixel border crop.
/// Uses its own RNG stream so results do not depend on when it runs.
template <typename T>
EvalSummary evaluate(RescaleModel<T>& model, const Corpus& corpus, const LatentOptions& latents, std::uint64_t seed) {
  EvalSummary out;
  if (corpus.empty()) return out;
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return corpus.names[a] < corpus.names[b]; });
  Rng rng = derived_rng(seed, kEvalStream);
  const auto s = static_cast<std::size_t>(model.scale());
  const T gain = static_cast<T>(model.lf_gain());
  for (std::size_t idx : order) {
    const ImageRGB hr = center_crop_to_multiple(corpus.images[idx], s);
    const Tensor<T> x = image_to_tensor<T>(hr);
    const Tensor<T> w = sample_latent<T>(latents.w_mode, model.latent_shape(x.shape()), rng);
    auto enc = model.forward(x, w);
    ImageRGB lr_img = tensor_to_image(enc.y);
    for (auto& v : lr_img.values) v /= static_cast<double>(gain);
    if (latents.quantize) lr_img = quantize_8bit(lr_img);
    Tensor<T> y = image_to_tensor<T>(lr_img);
    for (auto& v : y.data()) v *= gain;
    const Tensor<T> zhat = sample_latent<T>(latents.zhat_mode, model.z_shape_for_lr(y.shape()), rng);
    const ImageRGB xhat = quantize_8bit(tensor_to_image(model.inverse(y, zhat).x));
    ImageEval e;
    e.name = corpus.names[idx];
    e.hr = evaluate_y(xhat, hr, s);
    e.lr = evaluate_y(quantize_8bit(lr_img), quantize_8bit(bicubic_downsample(hr, s)), s);
    out.psnr_db += capped_db(e.hr.psnr_db);
    out.ssim += e.hr.ssim;
    out.lr_ssim += e.lr.ssim;
    out.lr_psnr_db += capped_db(e.lr.psnr_db);
    out.images.push_back(e);
  }
  const double n = static_cast<double>(out.images.size());
  out.psnr_db /= n;
  out.ssim /= n;
  out.lr_ssim /= n;
  out.lr_psnr_db /= n;
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct LogRow {
  long iter = 0;
  double lr = 0.0;
  double recon = 0.0, guidance = 0.0, distribution = 0.0, invariance = 0.0, total = 0.0;
};

struct EvalRow {
  long iter = 0;
  EvalSummary summary;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LogRow> log;
  std::vector<EvalRow> evals;
  EvalSummary final_eval;
};

inline std::string format_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

inline void write_train_log(std::ostream& os, const std::vector<LogRow>& rows) {
  os << "iter,lr,L_r,L_g,L_d,L_i,total\n";
  for (const auto& r : rows) {
    os << r.iter << ',' << format_g(r.lr) << ',' << format_g(r.recon) << ',' << format_g(r.guidance) << ','
       << format_g(r.distribution) << ',' << format_g(r.invariance) << ',' << format_g(r.total) << '\n';
  }
}

inline void write_eval_log(std::ostream& os, const std::vector<EvalRow>& rows) {
  os << "iter,psnr_db,ssim,lr_psnr_db,lr_ssim\n";
  for (const auto& r : rows) {
    os << r.iter << ',' << format_fixed(r.summary.psnr_db, 4) << ',' << format_fixed(r.summary.ssim, 6) << ','
       << format_fixed(r.summary.lr_psnr_db, 4) << ',' << format_fixed(r.summary.lr_ssim, 6) << '\n';
  }
}

template <typename T>
Checkpoint make_checkpoint(RescaleModel<T>& model, const OptimizerState<T>& state, const TrainConfig& config, long iter,
                           const Rng& data_rng, const Rng& latent_rng) {
  Checkpoint ck;
  ck.w_mode = config.latents.w_mode;
  ck.zhat_mode = config.latents.zhat_mode;
  ck.iteration = iter;
  ck.adam_step = state.step;
  ck.rng["data"] = rng_state(data_rng);
  ck.rng["latent"] = rng_state(latent_rng);
  append_model_blobs(ck, model);
  std::vector<std::string> names;
  model.parameters(&names);
  for (std::size_t i = 0; i < names.size(); ++i) ck.blobs.push_back(to_blob("adam.m." + names[i], state.first[i]));
  for (std::size_t i = 0; i < names.size(); ++i) ck.blobs.push_back(to_blob("adam.v." + names[i], state.second[i]));
  return ck;
}

/// Loss and gradient norms for the failure report.
template <typename T>
std::string diagnostic_dump(long iter, const LossBreakdown<T>& l, RescaleModel<T>& model) {
  std::ostringstream os;
  os << "non-finite loss at iteration " << iter << ": L_r=" << l.recon << " L_g=" << l.guidance
     << " L_d=" << l.distribution << " L_i=" << l.invariance << " total=" << l.total_value << "\ngradient norms:";
  std::vector<std::string> names;
  auto params = model.parameters(&names);
  for (std::size_t i = 0; i < params.size(); ++i) os << "\n  " << names[i] << ' ' << std::sqrt(sumsq_all(params[i]->grad));
  return os.str();
}

/// Runs `iterations` steps of objective + Adam under the halving schedule.
/// Single-threaded; the result is a pure function of (config, corpora).
template <typename T = float>
TrainResult train(const TrainConfig& config, const Corpus& train_set, const Corpus& eval_set,
                  const std::function<void(const LogRow&)>& on_step = {}) {
  config.validate();
  Rng init_rng = derived_rng(config.seed, kInitStream);
  Rng data_rng = derived_rng(config.seed, kDataStream);
  Rng latent_rng = derived_rng(config.seed, kLatentStream);
  RescaleModel<T> model(config.model, init_rng);
  auto params = model.parameters();
  OptimizerState<T> state(params);
  TrainResult result;
  if (!config.out_dir.empty()) std::filesystem::create_directories(config.out_dir);

  auto save = [&](long iter, const std::string& file) {
    Checkpoint ck = make_checkpoint(model, state, config, iter, data_rng, latent_rng);
    if (!config.out_dir.empty()) write_checkpoint(config.out_dir / file, ck);
    return ck;
  };

  for (long iter = 0; iter < config.iterations; ++iter) {
    const double lr = lr_at(iter, config.learning_rate, config.halving_period);
    const auto batch = random_crop_batch<T>(train_set, static_cast<std::size_t>(config.batch),
                                            static_cast<std::size_t>(config.patch),
                                            static_cast<std::size_t>(config.model.scale), data_rng);
    model.zero_grad();
    LossBreakdown<T> loss;
    {
      Tape<T> tape;
      loss = total_loss(tape, model, batch.hr, config.weights, config.latents, latent_rng);
      tape.backward(loss.total);
    }
    if (!std::isfinite(loss.total_value)) throw TrainingError(diagnostic_dump(iter, loss, model));
    adam_step(params, state, lr);
    LogRow row{iter + 1, lr, loss.recon, loss.guidance, loss.distribution, loss.invariance, loss.total_value};
    result.log.push_back(row);
    if (on_step) on_step(row);
    const long done = iter + 1;
    if (config.eval_every > 0 && done % config.eval_every == 0 && done != config.iterations && !eval_set.empty()) {
      result.evals.push_back({done, evaluate(model, eval_set, config.latents, config.seed)});
    }
    if (config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done != config.iterations) {
      save(done, "checkpoint_" + std::to_string(done) + ".ckpt");
    }
  }
  if (!eval_set.empty()) {
    result.final_eval = evaluate(model, eval_set, config.latents, config.seed);
    result.evals.push_back({config.iterations, result.final_eval});
  }
  result.checkpoint = save(config.iterations, "final.ckpt");
  if (!config.out_dir.empty()) {
    std::ofstream log(config.out_dir / "train_log.csv");
    write_train_log(log, result.log);
    std::ofstream ev(config.out_dir / "eval_log.csv");
    write_eval_log(ev, result.evals);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Ablation

struct AblationVariant {
  std::string name;
  int c_w = 2;
  LatentMode zhat_mode = LatentMode::kZero;
  LatentMode w_mode = LatentMode::kGaussian;
  bool invariance = false;
};

/// The seven settings compared for the x4 ablation: latent sampling modes at
/// C_w = 2, then C_w in {1, 2, 3} with (z_0, w_N), then the LR-invariance term.
inline std::vector<AblationVariant> ablation_grid() {
  using enum LatentMode;
  return {
      {"cw2_zN_wN", 2, kGaussian, kGaussian, false}, {"cw2_zN_w0", 2, kGaussian, kZero, false},
      {"cw2_z0_w0", 2, kZero, kZero, false},         {"cw1_z0_wN", 1, kZero, kGaussian, false},
      {"cw2_z0_wN", 2, kZero, kGaussian, false},     {"cw3_z0_wN", 3, kZero, kGaussian, false},
      {"cw2_z0_wN_Li", 2, kZero, kGaussian, true},
  };
}

struct AblationRow {
  AblationVariant variant;
  EvalSummary eval;
  TrainResult result;
};

inline TrainConfig variant_config(const TrainConfig& base, const AblationVariant& v) {
  TrainConfig cfg = base;
  cfg.model.c_w = v.c_w;
  cfg.latents.zhat_mode = v.zhat_mode;
  cfg.latents.w_mode = v.w_mode;
  const double s2 = static_cast<double>(base.model.scale) * base.model.scale;
  cfg.weights.invariance = v.invariance ? (base.weights.invariance > 0 ? base.weights.invariance : s2 / 4.0) : 0.0;
  if (!base.out_dir.empty()) cfg.out_dir = base.out_dir / v.name;
  return cfg;
}

/// Trains every variant from the same seed and data order.
template <typename T = float>
std::vector<AblationRow> ablate(const TrainConfig& base, const std::vector<AblationVariant>& grid, const Corpus& train_set,
                                const Corpus& eval_set, const std::function<void(const AblationRow&)>& on_row = {}) {
  for (const auto& v : grid) {
    if (v.c_w < 0) throw std::invalid_argument("ablate: negative c_w in variant " + v.name);
  }
  std::vector<AblationRow> rows;
  for (const auto& v : grid) {
    AblationRow row{v, {}, train<T>(variant_config(base, v), train_set, eval_set)};
    row.eval = row.result.final_eval;
    if (on_row) on_row(row);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
  os << "setting,c_w,zhat,w,l_i,psnr_db,ssim,lr_ssim\n";
  for (const auto& r : rows) {
    os << r.variant.name << ',' << r.variant.c_w << ',' << to_string(r.variant.zhat_mode) << ','
       << to_string(r.variant.w_mode) << ',' << (r.variant.invariance ? "on" : "off") << ','
       << format_fixed(r.eval.psnr_db, 4) << ',' << format_fixed(r.eval.ssim, 6) << ','
       << format_fixed(r.eval.lr_ssim, 6) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Latent sensitivity

struct ProbeResult {
  double min_distance = 0.0;
  double max_distance = 0.0;
  std::vector<double> distances;  // pairwise max-abs, (i, j) with i < j in row order
};

/// Upscales one LR input from k latents: z_1 drawn per `base_mode`, and
/// z_i = z_1 + delta * u_i for i >= 2 with u_i a random unit-L2 direction.
/// Reports pairwise max-abs distances between the reconstructions.
template <typename T>
ProbeResult sensitivity_probe(RescaleModel<T>& model, const Tensor<T>& y, int k, double delta, Rng& rng,
                              LatentMode base_mode = LatentMode::kZero) {
  if (k < 2) throw std::invalid_argument("sensitivity_probe: k must be >= 2");
  const Shape zs = model.z_shape_for_lr(y.shape());
  const Tensor<T> base = sample_latent<T>(base_mode, zs, rng);
  std::vector<Tensor<T>> recon;
  recon.push_back(model.inverse(y, base).x);
  for (int i = 1; i < k; ++i) {
    Tensor<T> dir = sample_latent<T>(LatentMode::kGaussian, zs, rng);
    const double norm = std::sqrt(sumsq_all(dir));
    Tensor<T> z = base;
    for (std::size_t e = 0; e < z.size(); ++e) z[e] += static_cast<T>(delta * static_cast<double>(dir[e]) / norm);
    recon.push_back(model.inverse(y, z).x);
  }
  ProbeResult out;
  out.min_distance = std::numeric_limits<double>::infinity();
  for (int i = 0; i < k; ++i) {
    for (int j = i + 1; j < k; ++j) {
      const double d = static_cast<double>(max_abs_diff(recon[i], recon[j]));
      out.distances.push_back(d);
      out.min_distance = std::min(out.min_distance, d);
      out.max_distance = std::max(out.max_distance, d);
    }
  }
  return out;
}

}  // namespace dlv
