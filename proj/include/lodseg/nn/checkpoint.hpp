#ifndef LODSEG_NN_CHECKPOINT_HPP
#define LODSEG_NN_CHECKPOINT_HPP

// Checkpoint container (see docs/checkpoint_format.md):
//
//   bytes 0..7    magic "LODSEGCK"
//   bytes 8..11   uint32 container version (little-endian)
//   bytes 12..19  uint64 header length H
//   next H bytes  UTF-8 JSON header
//   remainder     float32 little-endian parameter payload
//
// Files are written to "<path>.tmp" and renamed into place.

#include <zlib.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lodseg/core/error.hpp"
#include "lodseg/nn/lod_net.hpp"

namespace lodseg::nn {

inline constexpr std::array<char, 8> kCheckpointMagic = {'L', 'O', 'D', 'S', 'E', 'G', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline nlohmann::json config_to_json(const NetworkConfig& c) {
  return {{"input_shape", {c.input_shape.x, c.input_shape.y, c.input_shape.z}},
          {"num_classes", c.num_classes},
          {"level0_entry_filters", c.level0_entry_filters},
          {"level0_block_filters", c.level0_block_filters},
          {"level1_block_filters", c.level1_block_filters},
          {"level0_inner_reduction", c.level0_inner_reduction},
          {"level0_entry_pool", c.level0_entry_pool},
          {"blocks_per_stage", c.blocks_per_stage},
          {"level1_blocks", c.level1_blocks},
          {"dropout_rate", c.dropout_rate},
          {"groupnorm_groups", c.groupnorm_groups},
          {"head_init_gain", c.head_init_gain},
          {"init_seed", c.init_seed}};
}

inline NetworkConfig config_from_json(const nlohmann::json& j) {
  NetworkConfig c;
  const auto& s = j.at("input_shape");
  c.input_shape = {s.at(0).get<int>(), s.at(1).get<int>(), s.at(2).get<int>()};
  c.num_classes = j.at("num_classes").get<int>();
  c.level0_entry_filters = j.at("level0_entry_filters").get<int>();
  c.level0_block_filters = j.at("level0_block_filters").get<int>();
  c.level1_block_filters = j.at("level1_block_filters").get<int>();
  c.level0_inner_reduction = j.at("level0_inner_reduction").get<int>();
  c.level0_entry_pool = j.at("level0_entry_pool").get<int>();
  c.blocks_per_stage = j.at("blocks_per_stage").get<int>();
  c.level1_blocks = j.at("level1_blocks").get<int>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.groupnorm_groups = j.at("groupnorm_groups").get<int>();
  c.head_init_gain = j.value("head_init_gain", 0.1);
  c.init_seed = j.at("init_seed").get<std::uint64_t>();
  return c;
}

inline void save_checkpoint(const Network& s, const std::filesystem::path& path) {
  nlohmann::json header;
  header["config"] = config_to_json(s.config);
  header["head_generation"] = s.head_generation;
  std::vector<std::string> frozen;
  for (Level l : s.frozen_levels) frozen.push_back(to_string(l));
  header["frozen_levels"] = frozen;
  std::uint64_t offset = 0;
  std::vector<float> payload;
  payload.reserve(s.parameter_count());
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : s.parameters) {
    params.push_back({{"name", p.name}, {"shape", p.shape}, {"level", to_string(p.level)}, {"offset", offset},
                      {"count", p.value.size()}});
    offset += p.value.size();
    payload.insert(payload.end(), p.value.begin(), p.value.end());
  }
  header["parameters"] = params;
  header["payload_crc32"] =
      crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size() * sizeof(float)));
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t len = text.size();
    out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size() * sizeof(float)));
    out.close();
    if (!out) throw IoError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

// `expected_classes`, when set, must equal the stored head width.
inline Network load_checkpoint(const std::filesystem::path& path, std::optional<int> expected_classes = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kCheckpointMagic) throw FormatError(path.string() + ": not a lodseg checkpoint (bad magic)");
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!in) throw FormatError(path.string() + ": truncated checkpoint");
  if (version != kCheckpointVersion) {
    throw MigrationError(path.string() + ": checkpoint container version " + std::to_string(version) +
                         " cannot be read by this build (expects " + std::to_string(kCheckpointVersion) +
                         "); re-export it with a matching lodseg version");
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (std::uint64_t{1} << 30)) throw FormatError(path.string() + ": corrupt checkpoint header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw FormatError(path.string() + ": truncated checkpoint header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": corrupt checkpoint header: " + e.what());
  }

  Network s;
  try {
    s.config = config_from_json(header.at("config"));
    s.head_generation = header.at("head_generation").get<std::uint64_t>();
    for (const auto& l : header.at("frozen_levels")) s.frozen_levels.insert(parse_level(l.get<std::string>()));
    std::vector<float> payload;
    std::uint64_t total = 0;
    for (const auto& p : header.at("parameters")) total += p.at("count").get<std::uint64_t>();
    payload.resize(total);
    in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(total * sizeof(float)));
    if (!in) throw FormatError(path.string() + ": truncated checkpoint payload");
    const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(payload.data()),
                           static_cast<uInt>(payload.size() * sizeof(float)));
    if (crc != header.at("payload_crc32").get<std::uint64_t>()) {
      throw FormatError(path.string() + ": checkpoint payload checksum mismatch");
    }
    for (const auto& p : header.at("parameters")) {
      Parameter<float> q;
      q.name = p.at("name").get<std::string>();
      q.shape = p.at("shape").get<std::vector<int>>();
      q.level = parse_level(p.at("level").get<std::string>());
      const auto off = p.at("offset").get<std::uint64_t>();
      const auto cnt = p.at("count").get<std::uint64_t>();
      if (off + cnt > total) throw FormatError(path.string() + ": parameter range outside payload");
      q.value.assign(payload.begin() + static_cast<std::ptrdiff_t>(off),
                     payload.begin() + static_cast<std::ptrdiff_t>(off + cnt));
      s.parameters.push_back(std::move(q));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed checkpoint header: " + e.what());
  }
  s.config.validate();
  // Layout must match what build() would produce for this config.
  const Network reference = build<float>(s.config);
  if (reference.parameters.size() != s.parameters.size()) {
    throw FormatError(path.string() + ": parameter list does not match the stored configuration");
  }
  for (std::size_t i = 0; i < s.parameters.size(); ++i) {
    if (reference.parameters[i].name != s.parameters[i].name ||
        reference.parameters[i].value.size() != s.parameters[i].value.size()) {
      throw FormatError(path.string() + ": parameter " + s.parameters[i].name + " does not match the configuration");
    }
  }
  if (expected_classes && *expected_classes != s.config.num_classes) {
    throw ContractError(path.string() + ": checkpoint has a " + std::to_string(s.config.num_classes) +
                        "-class head but the pipeline expects " + std::to_string(*expected_classes) +
                        " classes (use swap_head first)");
  }
  return s;
}

}  // namespace lodseg::nn

#endif  // LODSEG_NN_CHECKPOINT_HPP
