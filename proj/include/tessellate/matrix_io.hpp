/*
 * tessellate - temporal semantic transfer for video clip sequences
 *
 * Licensed under the terms of the Apache 2.0 License.
 * See LICENSE file in the project root for terms.
 */
#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tessellate/types.hpp"

namespace tess {

// FMAT, the on-disk feature matrix format:
//
//   bytes 0..3   magic "FMAT"
//   bytes 4..5   format version, u16 little-endian (currently 1)
//   byte  6      dtype tag: 0 = f32, 1 = f64
//   bytes 7..14  rows, u64 little-endian
//   bytes 15..22 cols, u64 little-endian
//   bytes 23..   payload, rows*cols values, row-major, little-endian
//
// A plain-text variant is accepted on read: first line "rows cols", then
// whitespace-separated decimal values. Values are always widened to f64 in
// memory. Non-finite values are rejected with the byte offset of the
// offending element.

inline constexpr std::uint16_t kFmatVersion = 1;
inline constexpr std::uint16_t kContainerVersion = 1;

enum class FmatDtype : std::uint8_t { F32 = 0, F64 = 1 };

FeatureMatrix load_feature_matrix(const std::filesystem::path& path);

void write_feature_matrix(const std::filesystem::path& path, const FeatureMatrix& m,
                          FmatDtype dtype = FmatDtype::F64);

void write_feature_matrix_text(const std::filesystem::path& path, const FeatureMatrix& m);

// In-memory codecs, used by the container below and handy in tests.
std::string encode_feature_matrix(const FeatureMatrix& m, FmatDtype dtype = FmatDtype::F64);
FeatureMatrix decode_feature_matrix(const std::string& bytes);

// Container of named matrices plus a free-form JSON metadata object:
//
//   bytes 0..3   magic "FMTC"
//   bytes 4..5   container version, u16 little-endian
//   bytes 6..13  metadata length, u64 little-endian
//   ...          metadata, UTF-8 JSON; its "entries" array lists matrix names
//   ...          one FMAT blob per entry, in listed order
//
// Used for embedding models, predictor checkpoints and prebuilt corpora.
class MatrixContainer {
 public:
  void set(const std::string& name, FeatureMatrix m);
  const FeatureMatrix& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }

  nlohmann::json meta;

  std::string encode() const;
  static MatrixContainer decode(const std::string& bytes);

  void save(const std::filesystem::path& path) const;
  static MatrixContainer load(const std::filesystem::path& path);

 private:
  std::vector<std::string> order_;
  std::vector<FeatureMatrix> matrices_;
};

// Reads a whole file; throws IngestionError naming the path when missing.
std::string read_file_bytes(const std::filesystem::path& path);

// Writes via a temporary file in the same directory plus an atomic rename, so
// no reader ever observes partial output.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

// FNV-1a 64-bit content hash, rendered as "fnv1a64:<hex>". Reproducibility
// metadata only, not a cryptographic digest.
std::string content_hash(const std::string& bytes);

}  // namespace tess
