#pragma once

// Dataset file: "DOAD", u32 version, u32-length-prefixed JSON header
// (grid, geometry, SNRs, source-count range), u64 example count, then per
// example: f64 SNR, N*N*3 f64 input values, (2G+1) u8 label bits.

#include <cstdint>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "doa/binary_io.hpp"
#include "doa/training.hpp"

namespace doa::io {

inline constexpr Magic kDatasetMagic{'D', 'O', 'A', 'D'};
inline constexpr std::uint32_t kDatasetVersion = 1;

inline void write_dataset(const std::filesystem::path& path, const Dataset& data) {
  const nlohmann::json header{
      {"grid", {{"half_points", data.grid.half_points}, {"resolution_deg", data.grid.resolution_deg}}},
      {"geometry", {{"n_sensors", data.geometry.n_sensors}, {"spacing_ratio", data.geometry.spacing_ratio}}},
      {"snr_db", data.snr_db},
      {"k_min", data.k_min},
      {"k_max", data.k_max},
  };
  BinaryWriter w(path);
  w.magic(kDatasetMagic);
  w.put(kDatasetVersion);
  w.put_string(header.dump());
  w.put(static_cast<std::uint64_t>(data.size()));
  for (const auto& ex : data.examples) {
    w.put(ex.snr_db);
    w.put_doubles(ex.input.tensor().values);
    w.bytes(ex.label.bits.data(), ex.label.bits.size());
  }
}

inline Dataset read_dataset(const std::filesystem::path& path) {
  BinaryReader r(path);
  r.expect_magic(kDatasetMagic);
  r.expect_version(kDatasetVersion);
  Dataset d;
  try {
    const auto h = nlohmann::json::parse(r.get_string());
    d.grid = {h.at("grid").at("half_points").get<std::size_t>(), h.at("grid").at("resolution_deg").get<double>()};
    d.geometry = {h.at("geometry").at("n_sensors").get<std::size_t>(), h.at("geometry").at("spacing_ratio").get<double>()};
    d.snr_db = h.at("snr_db").get<std::vector<double>>();
    d.k_min = h.at("k_min").get<std::size_t>();
    d.k_max = h.at("k_max").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": bad header: " + e.what());
  }
  d.geometry.validate();
  const auto count = r.get<std::uint64_t>();
  if (count > kMaxDatasetSize) throw FormatError(path.string() + ": implausible example count");
  const std::size_t n = d.geometry.n_sensors;
  d.examples.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    Example ex;
    ex.snr_db = r.get<double>();
    ex.input = CovarianceInput(Tensor({n, n, 3}, r.get_doubles(n * n * 3)));
    ex.label.bits.resize(d.grid.size());
    r.bytes(ex.label.bits.data(), ex.label.bits.size());
    d.examples.push_back(std::move(ex));
  }
  if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes");
  return d;
}

}  // namespace doa::io
