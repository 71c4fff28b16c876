#pragma once

// Command-line front end. run_cli() is the whole program; main() only
// forwards argv, so tests can drive commands in-process.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dlv/dlv.hpp"

namespace dlv::cli {

inline constexpr const char* kSeedEnv = "DLV_SEED";

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

/// Loads a PNG and center-crops it to a multiple of `scale`, with a warning.
inline ImageRGB load_for_scale(const std::filesystem::path& path, std::size_t scale, std::ostream& err) {
  ImageRGB img = load_png(path);
  if (img.width % scale != 0 || img.height % scale != 0) {
    const ImageRGB cropped = center_crop_to_multiple(img, scale);
    err << "warning: " << path.string() << " is " << img.width << 'x' << img.height << ", not divisible by " << scale
        << "; center-cropped to " << cropped.width << 'x' << cropped.height << '\n';
    return cropped;
  }
  return img;
}

/// y in model units -> display range image (divides out the LF gain).
template <typename T>
ImageRGB lr_to_display(const Tensor<T>& y, double gain) {
  ImageRGB img = tensor_to_image(y);
  for (auto& v : img.values) v /= gain;
  return img;
}

template <typename T>
Tensor<T> display_to_lr(const ImageRGB& img, double gain) {
  Tensor<T> y = image_to_tensor<T>(img);
  for (auto& v : y.data()) v = static_cast<T>(v * gain);
  return y;
}

struct ModelFile {
  Checkpoint ck;
  RescaleModel<float> model;
};

inline ModelFile load_model(const std::filesystem::path& path) {
  ModelFile mf{read_checkpoint(path), {}};
  mf.model = model_from_checkpoint<float>(mf.ck);
  return mf;
}

/// Registers --<key> for every schema entry; values land in `flags` only if given.
struct ConfigFlags {
  std::map<std::string, std::string> values;
  std::vector<std::pair<std::string, CLI::Option*>> options;
  std::string config_path;

  void add_to(CLI::App* app) {
    for (const auto& k : train_config_schema()) {
      auto* opt = app->add_option("--" + k.name, values[k.name], k.help);
      opt->default_str(k.default_value.empty() ? "\"\"" : k.default_value);
      options.emplace_back(k.name, opt);
    }
    app->add_option("--config", config_path, "flat key = value config file (flags take precedence)");
  }

  std::map<std::string, std::string> resolve() const {
    std::map<std::string, std::string> given;
    for (const auto& [name, opt] : options) {
      if (opt->count() > 0) given[name] = values.at(name);
    }
    const auto file = config_path.empty() ? std::map<std::string, std::string>{} : parse_config_file(config_path);
    return merge_config(given, file);
  }
};

inline void print_eval(std::ostream& os, const EvalSummary& e) {
  os << "eval: psnr_db=" << format_fixed(e.psnr_db, 4) << " ssim=" << format_fixed(e.ssim, 6)
     << " lr_ssim=" << format_fixed(e.lr_ssim, 6) << '\n';
}

inline Corpus load_optional_corpus(const std::filesystem::path& dir) {
  return dir.empty() ? Corpus{} : load_corpus(dir);
}

inline int run_cli(const std::vector<std::string>& args, Streams io) {
  CLI::App app{"dlv: invertible image rescaling with a downscaling latent"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "RNG seed for every command")->envname(kSeedEnv)->default_str("0");

  // train
  ConfigFlags train_flags;
  auto* train_cmd = app.add_subcommand("train", "train a model; writes logs and checkpoints to out_dir");
  train_flags.add_to(train_cmd);

  // init
  ConfigFlags init_flags;
  std::string init_out;
  auto* init_cmd = app.add_subcommand("init", "write an untrained checkpoint");
  init_flags.add_to(init_cmd);
  init_cmd->add_option("--out", init_out, "checkpoint path")->required();

  // downscale
  std::string ds_ckpt, ds_in, ds_out, ds_save_z;
  bool ds_float_lr = false;
  auto* ds_cmd = app.add_subcommand("downscale", "HR PNG -> 8-bit LR PNG");
  ds_cmd->add_option("--ckpt", ds_ckpt, "model checkpoint")->required();
  ds_cmd->add_option("--in", ds_in, "HR PNG")->required();
  ds_cmd->add_option("--out", ds_out, "LR PNG to write")->required();
  ds_cmd->add_option("--save-z", ds_save_z, "also write z as a checkpoint-format blob");
  ds_cmd->add_flag("--no-quantize", ds_float_lr, "store the unrounded LR in the z blob as well");

  // upscale
  std::string us_ckpt, us_in, us_out, us_zhat = "zero", us_zblob;
  auto* us_cmd = app.add_subcommand("upscale", "LR PNG -> HR PNG");
  us_cmd->add_option("--ckpt", us_ckpt, "model checkpoint")->required();
  us_cmd->add_option("--in", us_in, "LR PNG")->required();
  us_cmd->add_option("--out", us_out, "HR PNG to write")->required();
  us_cmd->add_option("--zhat", us_zhat, "z_hat sampling: zero or gaussian")
      ->check(CLI::IsMember({"zero", "gaussian"}))
      ->capture_default_str();
  us_cmd->add_option("--zblob", us_zblob, "use the stored z (and unrounded LR, if present) from downscale");

  // roundtrip
  std::string rt_ckpt, rt_in, rt_report, rt_zhat = "zero";
  bool rt_no_quantize = false;
  auto* rt_cmd = app.add_subcommand("roundtrip", "downscale, upscale and score against the input");
  rt_cmd->add_option("--ckpt", rt_ckpt, "model checkpoint")->required();
  rt_cmd->add_option("--in", rt_in, "HR PNG")->required();
  rt_cmd->add_option("--report", rt_report, "CSV report path (name,psnr_db,ssim)");
  rt_cmd->add_option("--zhat", rt_zhat, "z_hat: zero, gaussian, or true (the forward pass's z)")
      ->check(CLI::IsMember({"zero", "gaussian", "true"}))
      ->capture_default_str();
  rt_cmd->add_flag("--no-quantize", rt_no_quantize, "skip 8-bit rounding of the LR");

  // ablate
  ConfigFlags ab_flags;
  std::string ab_out = "ablation.csv", ab_rows;
  auto* ab_cmd = app.add_subcommand("ablate", "train every sampling / c_w / L_i setting and tabulate");
  ab_flags.add_to(ab_cmd);
  ab_cmd->add_option("--out", ab_out, "ablation CSV")->capture_default_str();
  ab_cmd->add_option("--rows", ab_rows, "comma-separated subset of setting names (default: all)");

  // metrics
  std::string mt_ref, mt_test, mt_report;
  std::size_t mt_border = 0;
  auto* mt_cmd = app.add_subcommand("metrics", "luma PSNR/SSIM between two PNGs or two directories");
  mt_cmd->add_option("--ref", mt_ref, "reference PNG or directory")->required();
  mt_cmd->add_option("--test", mt_test, "test PNG or directory")->required();
  mt_cmd->add_option("--border", mt_border, "pixels cropped from each side")->capture_default_str();
  mt_cmd->add_option("--report", mt_report, "CSV report path");

  // gradcheck
  std::string gc_size = "tiny", gc_fault;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of every primitive and composite");
  gc_cmd->add_option("--size", gc_size, "tiny (20 points per primitive) or full (100)")
      ->check(CLI::IsMember({"tiny", "full"}))
      ->capture_default_str();
  gc_cmd->add_option("--fault", gc_fault, "test hook: perturb this primitive's gradient by 1%");

  // synth
  std::string sy_out;
  std::size_t sy_count = 20, sy_width = 96, sy_height = 96;
  std::string sy_prefix = "img";
  auto* sy_cmd = app.add_subcommand("synth", "write a procedural PNG corpus");
  sy_cmd->add_option("--out", sy_out, "output directory")->required();
  sy_cmd->add_option("--count", sy_count, "number of images")->capture_default_str();
  sy_cmd->add_option("--width", sy_width, "image width")->capture_default_str();
  sy_cmd->add_option("--height", sy_height, "image height")->capture_default_str();
  sy_cmd->add_option("--prefix", sy_prefix, "file name prefix")->capture_default_str();

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp&) {
    io.out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    io.err << "error: " << e.what() << '\n';
    return e.get_exit_code() == 0 ? 2 : e.get_exit_code();
  }

  try {
    if (*train_cmd) {
      const TrainConfig cfg = to_train_config(train_flags.resolve(), seed);
      if (cfg.train_dir.empty()) throw ConfigError("train: train_dir is required");
      const Corpus tr = load_corpus(cfg.train_dir);
      const Corpus ev = load_optional_corpus(cfg.eval_dir);
      auto progress = [&](const LogRow& r) {
        if (r.iter % 100 == 0 || r.iter == cfg.iterations) {
          io.out << "iter " << r.iter << " lr=" << format_g(r.lr) << " total=" << format_g(r.total) << '\n';
        }
      };
      const TrainResult res = train<float>(cfg, tr, ev, progress);
      if (!ev.empty()) print_eval(io.out, res.final_eval);
      io.out << "wrote " << (cfg.out_dir / "final.ckpt").string() << '\n';
      return 0;
    }
    if (*init_cmd) {
      const TrainConfig cfg = to_train_config(init_flags.resolve(), seed);
      Rng rng = derived_rng(seed, kInitStream);
      RescaleModel<float> model(cfg.model, rng);
      Checkpoint ck;
      ck.w_mode = cfg.latents.w_mode;
      ck.zhat_mode = cfg.latents.zhat_mode;
      append_model_blobs(ck, model);
      write_checkpoint(init_out, ck);
      io.out << "wrote " << init_out << " (" << model.parameter_count() << " parameters)\n";
      return 0;
    }
    if (*ds_cmd) {
      auto mf = load_model(ds_ckpt);
      auto& model = mf.model;
      const ImageRGB hr = load_for_scale(ds_in, static_cast<std::size_t>(model.scale()), io.err);
      Rng rng(seed);
      const Tensor<float> x = image_to_tensor<float>(hr);
      const auto enc = model.forward(x, sample_latent<float>(mf.ck.w_mode, model.latent_shape(x.shape()), rng));
      if (!ds_save_z.empty()) save_zblob(ds_save_z, model.config(), enc.z, ds_float_lr ? enc.y : Tensor<float>());
      save_png(ds_out, lr_to_display(enc.y, model.lf_gain()));
      io.out << "wrote " << ds_out << '\n';
      return 0;
    }
    if (*us_cmd) {
      auto mf = load_model(us_ckpt);
      auto& model = mf.model;
      Tensor<float> y = display_to_lr<float>(load_png(us_in), model.lf_gain());
      Tensor<float> z;
      if (!us_zblob.empty()) {
        ZBlob<float> zb = load_zblob<float>(us_zblob);
        if (!(zb.model == model.config())) throw CheckpointError("upscale: z blob was made by a different model");
        if (!zb.y.empty()) {
          if (zb.y.shape() != y.shape()) {
            throw ShapeError("upscale: stored LR " + zb.y.shape().str() + " does not match input " + y.shape().str());
          }
          y = zb.y;
        }
        const Shape expected = model.z_shape_for_lr(y.shape());
        if (zb.z.shape() != expected) {
          throw ShapeError("upscale: z blob has shape " + zb.z.shape().str() + ", expected " + expected.str());
        }
        z = std::move(zb.z);
      } else {
        Rng rng(seed);
        z = sample_latent<float>(parse_latent_mode(us_zhat), model.z_shape_for_lr(y.shape()), rng);
      }
      save_png(us_out, tensor_to_image(model.inverse(y, z).x));
      io.out << "wrote " << us_out << '\n';
      return 0;
    }
    if (*rt_cmd) {
      auto mf = load_model(rt_ckpt);
      auto& model = mf.model;
      const ImageRGB hr = load_for_scale(rt_in, static_cast<std::size_t>(model.scale()), io.err);
      Rng rng(seed);
      const Tensor<float> x = image_to_tensor<float>(hr);
      const auto enc = model.forward(x, sample_latent<float>(mf.ck.w_mode, model.latent_shape(x.shape()), rng));
      Tensor<float> y = enc.y;
      if (!rt_no_quantize) y = display_to_lr<float>(quantize_8bit(lr_to_display(enc.y, model.lf_gain())), model.lf_gain());
      const Tensor<float> z = rt_zhat == "true" ? enc.z
                                                : sample_latent<float>(parse_latent_mode(rt_zhat), enc.z.shape(), rng);
      const ImageRGB xhat = quantize_8bit(tensor_to_image(model.inverse(y, z).x));
      const MetricReport rep = evaluate_y(xhat, hr, 0);
      const std::string name = std::filesystem::path(rt_in).filename().string();
      std::ostringstream csv;
      write_metrics_csv(csv, {{name, rep}});
      if (!rt_report.empty()) {
        std::ofstream f(rt_report);
        f << csv.str();
        if (!f) throw std::runtime_error("roundtrip: cannot write " + rt_report);
      }
      io.out << csv.str();
      return 0;
    }
    if (*ab_cmd) {
      const TrainConfig cfg = to_train_config(ab_flags.resolve(), seed);
      if (cfg.train_dir.empty()) throw ConfigError("ablate: train_dir is required");
      if (cfg.eval_dir.empty()) throw ConfigError("ablate: eval_dir is required");
      std::vector<AblationVariant> grid;
      for (const auto& v : ablation_grid()) {
        if (ab_rows.empty() || ("," + ab_rows + ",").find("," + v.name + ",") != std::string::npos) grid.push_back(v);
      }
      if (grid.empty()) throw ConfigError("ablate: --rows matched no setting");
      const Corpus tr = load_corpus(cfg.train_dir), ev = load_corpus(cfg.eval_dir);
      const auto rows = ablate<float>(cfg, grid, tr, ev, [&](const AblationRow& r) {
        io.out << r.variant.name << ": psnr_db=" << format_fixed(r.eval.psnr_db, 4) << '\n';
      });
      std::ofstream f(ab_out);
      write_ablation_csv(f, rows);
      if (!f) throw std::runtime_error("ablate: cannot write " + ab_out);
      io.out << "wrote " << ab_out << '\n';
      return 0;
    }
    if (*mt_cmd) {
      std::vector<MetricRow> rows;
      if (std::filesystem::is_directory(mt_ref)) {
        const Corpus ref = load_corpus(mt_ref);
        for (std::size_t i = 0; i < ref.size(); ++i) {
          const auto other = std::filesystem::path(mt_test) / ref.names[i];
          rows.push_back({ref.names[i], evaluate_y(load_png(other), ref.images[i], mt_border)});
        }
      } else {
        rows.push_back({std::filesystem::path(mt_test).filename().string(),
                        evaluate_y(load_png(mt_test), load_png(mt_ref), mt_border)});
      }
      std::ostringstream csv;
      write_metrics_csv(csv, rows);
      if (!mt_report.empty()) {
        std::ofstream f(mt_report);
        f << csv.str();
        if (!f) throw std::runtime_error("metrics: cannot write " + mt_report);
      }
      io.out << csv.str();
      return 0;
    }
    if (*gc_cmd) {
      GradcheckOptions opt;
      opt.points = gc_size == "full" ? 100 : 20;
      opt.seed = seed;
      gradient_fault().reset();
      if (!gc_fault.empty()) {
        for (Op op : kPrimitives) {
          if (op_name(op) == gc_fault) gradient_fault() = op;
        }
        if (!gradient_fault()) throw std::invalid_argument("gradcheck: unknown primitive '" + gc_fault + "'");
      }
      const GradcheckReport rep = run_gradcheck(opt);
      gradient_fault().reset();
      rep.print(io.out);
      io.out << (rep.passed() ? "gradcheck: all passed\n" : "gradcheck: FAILED\n");
      return rep.passed() ? 0 : 1;
    }
    if (*sy_cmd) {
      write_synth_corpus(sy_out, sy_count, sy_width, sy_height, seed, sy_prefix);
      io.out << "wrote " << sy_count << " images to " << sy_out << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    io.err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace dlv::cli
