#pragma once

// Little-endian binary containers. The host must be little-endian; all
// formats below are written with native layout after that check.

#include <array>
#include <bit>
#include <complex>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "doa/array_model.hpp"
#include "doa/errors.hpp"

namespace doa::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

using Magic = std::array<char, 4>;

class BinaryWriter {
 public:
  explicit BinaryWriter(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw FormatError("cannot open " + path.string() + " for writing");
  }

  void magic(const Magic& m) { bytes(m.data(), m.size()); }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T v) {
    bytes(&v, sizeof v);
  }

  void put_complex(std::complex<double> z) {
    put(z.real());
    put(z.imag());
  }

  void put_doubles(const std::vector<double>& v) { bytes(v.data(), v.size() * sizeof(double)); }

  /// u32 byte length followed by the UTF-8 bytes.
  void put_string(std::string_view s) {
    put(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  void bytes(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out_) throw FormatError("write failed");
  }

 private:
  std::ofstream out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path.string()) {
    if (!in_) throw FormatError("cannot open " + path_);
  }

  void expect_magic(const Magic& m) {
    Magic got{};
    bytes(got.data(), got.size());
    if (got != m) {
      throw FormatError(path_ + ": bad magic, expected '" + std::string(m.data(), m.size()) + "'");
    }
  }

  void expect_version(std::uint32_t version) {
    const auto v = get<std::uint32_t>();
    if (v != version) {
      throw FormatError(path_ + ": unsupported version " + std::to_string(v) + " (expected " +
                        std::to_string(version) + ")");
    }
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    T v{};
    bytes(&v, sizeof v);
    return v;
  }

  std::complex<double> get_complex() {
    const double re = get<double>();
    const double im = get<double>();
    return {re, im};
  }

  std::vector<double> get_doubles(std::size_t n) {
    std::vector<double> v(n);
    bytes(v.data(), n * sizeof(double));
    return v;
  }

  std::string get_string() {
    const auto n = get<std::uint32_t>();
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw FormatError(path_ + ": truncated file");
  }

  [[nodiscard]] bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::ifstream in_;
  std::string path_;
};

// Snapshot block file: "DOAS", u32 version, u32 N, u32 T, then T*N complex
// doubles (re, im) in column-major order. The spacing ratio is not part of
// the format; readers supply it.

inline constexpr Magic kSnapshotMagic{'D', 'O', 'A', 'S'};
inline constexpr std::uint32_t kSnapshotVersion = 1;

inline void write_snapshots(const std::filesystem::path& path, const SnapshotBlock& block) {
  BinaryWriter w(path);
  w.magic(kSnapshotMagic);
  w.put(kSnapshotVersion);
  w.put(static_cast<std::uint32_t>(block.data.rows()));
  w.put(static_cast<std::uint32_t>(block.data.cols()));
  for (Eigen::Index t = 0; t < block.data.cols(); ++t) {
    for (Eigen::Index n = 0; n < block.data.rows(); ++n) w.put_complex(block.data(n, t));
  }
}

inline SnapshotBlock read_snapshots(const std::filesystem::path& path, double spacing_ratio = 0.5) {
  BinaryReader r(path);
  r.expect_magic(kSnapshotMagic);
  r.expect_version(kSnapshotVersion);
  const auto n = r.get<std::uint32_t>();
  const auto t = r.get<std::uint32_t>();
  if (n < 2 || t < 1) throw FormatError(path.string() + ": invalid dimensions");
  SnapshotBlock block{UlaGeometry{n, spacing_ratio}, ComplexMatrix(n, t)};
  for (Eigen::Index j = 0; j < block.data.cols(); ++j) {
    for (Eigen::Index i = 0; i < block.data.rows(); ++i) block.data(i, j) = r.get_complex();
  }
  return block;
}

}  // namespace doa::io
