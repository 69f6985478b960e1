#pragma once

// Single-file checkpoint archive:
//
//   8 bytes   magic "VDICKPT1"
//   u64 LE    header length N
//   N bytes   JSON header {model, train, rng_state, blocks:[{name, group, rows, cols}]}
//   f64 LE    block data in header order, each block row-major
//
// Training-only (injection) blocks can be left out, which is what inference
// exports do.

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "vdi/data_io.hpp"
#include "vdi/model.hpp"

namespace vdi {

inline constexpr std::array<char, 8> kCheckpointMagic = {'V', 'D', 'I', 'C', 'K', 'P', 'T', '1'};

struct CheckpointBlock {
  std::string name;
  nn::ParamGroup group = nn::ParamGroup::head;
  Matrix value;
};

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  std::string rng_state;
  std::vector<CheckpointBlock> blocks;

  bool has_group(nn::ParamGroup g) const {
    for (const auto& b : blocks) {
      if (b.group == g) return true;
    }
    return false;
  }
};

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
  for (int k = 0; k < 8; ++k) out.put(static_cast<char>((v >> (8 * k)) & 0xff));
}

inline std::uint64_t get_u64(std::istream& in) {
  std::uint64_t v = 0;
  for (int k = 0; k < 8; ++k) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) throw IoError("checkpoint: truncated");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * k);
  }
  return v;
}

}  // namespace detail

inline Checkpoint make_checkpoint(const Model& model, const TrainConfig& train,
                                  const std::string& rng_state, bool include_injection = true) {
  Checkpoint ck{model.config(), train, rng_state, {}};
  for (const auto& p : model.params().all()) {
    if (!include_injection && p.group == nn::ParamGroup::injection) continue;
    ck.blocks.push_back({p.name, p.group, p.var.value()});
  }
  return ck;
}

inline void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
  nlohmann::json header;
  header["model"] = to_json(ck.model);
  header["train"] = to_json(ck.train);
  header["rng_state"] = ck.rng_state;
  header["blocks"] = nlohmann::json::array();
  for (const auto& b : ck.blocks) {
    header["blocks"].push_back({{"name", b.name},
                                {"group", std::string(nn::to_string(b.group))},
                                {"rows", b.value.rows()},
                                {"cols", b.value.cols()}});
  }
  const std::string text = header.dump();
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& b : ck.blocks) {
    for (Index r = 0; r < b.value.rows(); ++r) {
      for (Index c = 0; c < b.value.cols(); ++c) detail::put_u64(out, std::bit_cast<std::uint64_t>(b.value(r, c)));
    }
  }
  if (!out) throw IoError("checkpoint: write failed");
}

inline Checkpoint read_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kCheckpointMagic) {
    throw IoError("checkpoint: bad magic");
  }
  const std::uint64_t length = detail::get_u64(in);
  if (length > (1ULL << 30)) throw IoError("checkpoint: header too large");
  std::string text(length, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(length))) throw IoError("checkpoint: truncated header");
  Checkpoint ck;
  try {
    const auto header = nlohmann::json::parse(text);
    apply_config(header.at("model"), &ck.model, nullptr);
    apply_config(header.at("train"), nullptr, &ck.train);
    ck.rng_state = header.at("rng_state").get<std::string>();
    for (const auto& jb : header.at("blocks")) {
      CheckpointBlock b;
      b.name = jb.at("name").get<std::string>();
      b.group = nn::param_group_from_string(jb.at("group").get<std::string>());
      b.value.resize(jb.at("rows").get<Index>(), jb.at("cols").get<Index>());
      ck.blocks.push_back(std::move(b));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: bad header: ") + e.what());
  }
  for (auto& b : ck.blocks) {
    for (Index r = 0; r < b.value.rows(); ++r) {
      for (Index c = 0; c < b.value.cols(); ++c) b.value(r, c) = std::bit_cast<double>(detail::get_u64(in));
    }
  }
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
  write_checkpoint(out, ck);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint '" + path.string() + "'");
  return read_checkpoint(in);
}

/// Copies every block into `model`. Blocks must exist with the same shape;
/// model parameters absent from the checkpoint keep their values.
inline void load_into(Model& model, const Checkpoint& ck) {
  std::map<std::string, Matrix> values;
  for (const auto& b : ck.blocks) {
    if (!model.params().contains(b.name)) throw ConfigError("checkpoint block '" + b.name + "' is not a model parameter");
    values.emplace(b.name, b.value);
  }
  model.params().restore(values);
}

/// Fresh model with the checkpoint's configuration and weights.
inline Model model_from_checkpoint(const Checkpoint& ck) {
  Model model(ck.model);
  load_into(model, ck);
  return model;
}

// ---------------------------------------------------------------------------
// Digests for reports

inline std::string hex_digest(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string config_digest(const ModelConfig& model, const TrainConfig& train) {
  const nlohmann::json j = {{"model", to_json(model)}, {"train", to_json(train)}};
  return hex_digest(hash_string(0, j.dump()));
}

inline std::string dataset_digest(const std::vector<TimedAnnotation>& annotations,
                                  const std::vector<Video>& videos) {
  std::ostringstream out;
  write_annotations(out, annotations);
  out << videos_to_json(videos).dump();
  return hex_digest(hash_string(0, out.str()));
}

}  // namespace vdi
