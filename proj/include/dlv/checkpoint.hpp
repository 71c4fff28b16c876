#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dlv/inn.hpp"

namespace dlv {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs are written as native little-endian");

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kCheckpointMagic = "DLVCKPT";

/// FNV-1a, 64-bit.
inline std::uint64_t fnv1a64(const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct Blob {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

// File layout: a text header of "key = value" lines and "blob" lines,
// terminated by "end", followed by every blob's float32 payload in header
// order. Each blob line carries its shape and an FNV-1a checksum of the payload.
struct Checkpoint {
  int version = kCheckpointVersion;
  std::string kind = "model";  // "model" or "zblob"
  ModelConfig model{};
  LatentMode w_mode = LatentMode::kGaussian;
  LatentMode zhat_mode = LatentMode::kZero;
  long iteration = 0;
  long adam_step = 0;
  std::map<std::string, std::string> rng;  // stream name -> engine state text
  std::vector<Blob> blobs;

  const Blob* find(const std::string& name) const {
    for (const auto& b : blobs) {
      if (b.name == name) return &b;
    }
    return nullptr;
  }
};

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline Rng rng_from_state(const std::string& state) {
  Rng rng;
  std::istringstream is(state);
  is >> rng;
  if (!is) throw CheckpointError("checkpoint: malformed RNG state");
  return rng;
}

inline std::string checkpoint_header(const Checkpoint& ck) {
  std::ostringstream os;
  os << kCheckpointMagic << '\n';
  os << "format_version = " << ck.version << '\n';
  os << "kind = " << ck.kind << '\n';
  os << "scale = " << ck.model.scale << '\n';
  os << "c_w = " << ck.model.c_w << '\n';
  os << "blocks = " << ck.model.blocks << '\n';
  os << "growth = " << ck.model.growth << '\n';
  os << "clamp = " << format_double(ck.model.clamp) << '\n';
  os << "w_mode = " << to_string(ck.w_mode) << '\n';
  os << "zhat_mode = " << to_string(ck.zhat_mode) << '\n';
  os << "iteration = " << ck.iteration << '\n';
  os << "adam_step = " << ck.adam_step << '\n';
  for (const auto& [name, state] : ck.rng) os << "rng." << name << " = " << state << '\n';
  os << "blob_count = " << ck.blobs.size() << '\n';
  for (const auto& b : ck.blobs) {
    char sum[17];
    std::snprintf(sum, sizeof(sum), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(b.data.data(), b.data.size() * sizeof(float))));
    os << "blob " << b.name << ' ' << b.shape.n << ' ' << b.shape.c << ' ' << b.shape.h << ' ' << b.shape.w << ' '
       << sum << '\n';
  }
  os << "end\n";
  return os.str();
}

inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  for (const auto& b : ck.blobs) {
    if (b.data.size() != b.shape.numel()) throw CheckpointError("write_checkpoint: blob " + b.name + " size mismatch");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("write_checkpoint: cannot open " + path.string());
  const std::string header = checkpoint_header(ck);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& b : ck.blobs) {
    out.write(reinterpret_cast<const char*>(b.data.data()), static_cast<std::streamsize>(b.data.size() * sizeof(float)));
  }
  if (!out) throw CheckpointError("write_checkpoint: write failed for " + path.string());
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("read_checkpoint: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointMagic) {
    throw CheckpointError("read_checkpoint: " + path.string() + " is not a checkpoint file");
  }
  Checkpoint ck;
  std::map<std::string, std::string> kv;
  struct BlobLine {
    std::string name;
    Shape shape;
    std::uint64_t checksum;
  };
  std::vector<BlobLine> lines;
  bool ended = false;
  while (std::getline(in, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    if (line.rfind("blob ", 0) == 0) {
      std::istringstream ls(line.substr(5));
      BlobLine bl;
      std::string sum;
      ls >> bl.name >> bl.shape.n >> bl.shape.c >> bl.shape.h >> bl.shape.w >> sum;
      if (!ls) throw CheckpointError("read_checkpoint: malformed blob line '" + line + "'");
      bl.checksum = std::stoull(sum, nullptr, 16);
      lines.push_back(bl);
      continue;
    }
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw CheckpointError("read_checkpoint: malformed header line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  if (!ended) throw CheckpointError("read_checkpoint: header is truncated");
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw CheckpointError("read_checkpoint: header lacks '" + key + "'");
    return it->second;
  };
  ck.version = std::stoi(get("format_version"));
  if (ck.version != kCheckpointVersion) {
    throw CheckpointError("read_checkpoint: format version " + std::to_string(ck.version) + " unsupported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  ck.kind = get("kind");
  ck.model.scale = std::stoi(get("scale"));
  ck.model.c_w = std::stoi(get("c_w"));
  ck.model.blocks = std::stoi(get("blocks"));
  ck.model.growth = std::stoi(get("growth"));
  ck.model.clamp = std::stod(get("clamp"));
  ck.w_mode = parse_latent_mode(get("w_mode"));
  ck.zhat_mode = parse_latent_mode(get("zhat_mode"));
  ck.iteration = std::stol(get("iteration"));
  ck.adam_step = std::stol(get("adam_step"));
  for (const auto& [key, value] : kv) {
    if (key.rfind("rng.", 0) == 0) ck.rng[key.substr(4)] = value;
  }
  const auto count = std::stoull(get("blob_count"));
  if (count != lines.size()) {
    throw CheckpointError("read_checkpoint: header declares " + std::to_string(count) + " blobs but lists " +
                          std::to_string(lines.size()));
  }
  for (const auto& bl : lines) {
    Blob b{bl.name, bl.shape, std::vector<float>(bl.shape.numel())};
    const auto bytes = static_cast<std::streamsize>(b.data.size() * sizeof(float));
    in.read(reinterpret_cast<char*>(b.data.data()), bytes);
    if (in.gcount() != bytes) throw CheckpointError("read_checkpoint: blob " + bl.name + " is truncated");
    if (fnv1a64(b.data.data(), static_cast<std::size_t>(bytes)) != bl.checksum) {
      throw CheckpointError("read_checkpoint: checksum mismatch in blob " + bl.name);
    }
    ck.blobs.push_back(std::move(b));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError("read_checkpoint: trailing bytes after blobs");
  return ck;
}

template <typename T>
Blob to_blob(const std::string& name, const Tensor<T>& t) {
  Blob b{name, t.shape(), std::vector<float>(t.size())};
  for (std::size_t i = 0; i < t.size(); ++i) b.data[i] = static_cast<float>(t[i]);
  return b;
}

template <typename T>
Tensor<T> from_blob(const Blob& b) {
  Tensor<T> t(b.shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(b.data[i]);
  return t;
}

template <typename T>
void append_model_blobs(Checkpoint& ck, RescaleModel<T>& model) {
  ck.model = model.config();
  std::vector<std::string> names;
  auto params = model.parameters(&names);
  for (std::size_t i = 0; i < params.size(); ++i) ck.blobs.push_back(to_blob(names[i], params[i]->value));
}

/// Copies weights into `model`. Rejects a checkpoint whose architecture or
/// parameter list differs from the model's.
template <typename T>
void load_weights(RescaleModel<T>& model, const Checkpoint& ck) {
  if (!(ck.model == model.config())) {
    throw CheckpointError("load_weights: checkpoint architecture (scale " + std::to_string(ck.model.scale) + ", c_w " +
                          std::to_string(ck.model.c_w) + ", blocks " + std::to_string(ck.model.blocks) + ", growth " +
                          std::to_string(ck.model.growth) + ") does not match the model");
  }
  std::vector<std::string> names;
  auto params = model.parameters(&names);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Blob* b = ck.find(names[i]);
    if (!b) throw CheckpointError("load_weights: checkpoint lacks parameter " + names[i]);
    if (b->shape != params[i]->value.shape()) {
      throw CheckpointError("load_weights: parameter " + names[i] + " has shape " + b->shape.str() + ", expected " +
                            params[i]->value.shape().str());
    }
    params[i]->value = from_blob<T>(*b);
  }
}

template <typename T>
RescaleModel<T> model_from_checkpoint(const Checkpoint& ck) {
  if (ck.kind != "model") throw CheckpointError("model_from_checkpoint: file holds a '" + ck.kind + "', not a model");
  Rng unused(0);
  RescaleModel<T> model(ck.model, unused);
  load_weights(model, ck);
  return model;
}

/// Latents stored in checkpoint format, tagged with the producing model's
/// architecture. `y` (float LR, model units) is optional and empty if absent.
template <typename T>
struct ZBlob {
  ModelConfig model;
  Tensor<T> z;
  Tensor<T> y;
};

template <typename T>
void save_zblob(const std::filesystem::path& path, const ModelConfig& config, const Tensor<T>& z,
                const Tensor<T>& y = Tensor<T>()) {
  Checkpoint ck;
  ck.kind = "zblob";
  ck.model = config;
  ck.blobs.push_back(to_blob("z", z));
  if (!y.empty()) ck.blobs.push_back(to_blob("y", y));
  write_checkpoint(path, ck);
}

template <typename T>
ZBlob<T> load_zblob(const std::filesystem::path& path) {
  const Checkpoint ck = read_checkpoint(path);
  if (ck.kind != "zblob") throw CheckpointError("load_zblob: " + path.string() + " holds a '" + ck.kind + "'");
  const Blob* z = ck.find("z");
  if (!z) throw CheckpointError("load_zblob: no 'z' blob in " + path.string());
  ZBlob<T> out{ck.model, from_blob<T>(*z), Tensor<T>()};
  if (const Blob* y = ck.find("y")) out.y = from_blob<T>(*y);
  return out;
}

}  // namespace dlv
