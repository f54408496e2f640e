#pragma once

// Checkpoint file: "DOAC", u32 version, u32-length-prefixed JSON metadata
// (the network spec lives under "network"), u32 block count, then per block:
// u32 layer index, u32 block kind, u32 rank, u64 dims..., raw doubles.

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "doa/binary_io.hpp"
#include "doa/nn/network.hpp"

namespace doa::nn {

inline constexpr io::Magic kCheckpointMagic{'D', 'O', 'A', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  NetworkSpec spec;
  ModelParams params;
  nlohmann::json metadata = nlohmann::json::object();
};

inline void save_checkpoint(const std::filesystem::path& path, const NetworkSpec& spec, const ModelParams& params,
                            const nlohmann::json& metadata = nlohmann::json::object()) {
  nlohmann::json header = metadata;
  header["network"] = to_json(spec);

  std::uint32_t blocks = 0;
  for (const auto& layer : params.layers) blocks += static_cast<std::uint32_t>(layer.size());

  io::BinaryWriter w(path);
  w.magic(kCheckpointMagic);
  w.put(kCheckpointVersion);
  w.put_string(header.dump());
  w.put(blocks);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    for (const auto& block : params.layers[l]) {
      w.put(static_cast<std::uint32_t>(l));
      w.put(static_cast<std::uint32_t>(block.kind));
      w.put(static_cast<std::uint32_t>(block.tensor.rank()));
      for (auto d : block.tensor.shape) w.put(static_cast<std::uint64_t>(d));
      w.put_doubles(block.tensor.values);
    }
  }
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  io::BinaryReader r(path);
  r.expect_magic(kCheckpointMagic);
  r.expect_version(kCheckpointVersion);
  Checkpoint ck;
  try {
    ck.metadata = nlohmann::json::parse(r.get_string());
    ck.spec = spec_from_json(ck.metadata.at("network"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": bad metadata: " + e.what());
  }
  ck.metadata.erase("network");

  // Shapes are checked against a freshly laid-out parameter set.
  const ModelParams layout = init_params(ck.spec, 0);
  ck.params.layers.resize(layout.layers.size());
  const auto blocks = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < blocks; ++i) {
    const auto layer = r.get<std::uint32_t>();
    const auto kind = static_cast<BlockKind>(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw FormatError(path.string() + ": implausible tensor rank");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    if (layer >= layout.layers.size()) throw FormatError(path.string() + ": block for unknown layer");
    const auto slot = ck.params.layers[layer].size();
    const auto& expected = layout.layers[layer];
    if (slot >= expected.size() || expected[slot].kind != kind || expected[slot].tensor.shape != shape) {
      throw FormatError(path.string() + ": block " + std::to_string(i) + " does not match the network layout");
    }
    ck.params.layers[layer].push_back({kind, Tensor(shape, r.get_doubles(shape_size(shape)))});
  }
  for (std::size_t l = 0; l < layout.layers.size(); ++l) {
    if (ck.params.layers[l].size() != layout.layers[l].size()) {
      throw FormatError(path.string() + ": missing parameter blocks for layer " + std::to_string(l));
    }
  }
  if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes");
  return ck;
}

}  // namespace doa::nn
