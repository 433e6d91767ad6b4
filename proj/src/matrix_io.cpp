/*
 * tessellate - temporal semantic transfer for video clip sequences
 *
 * Licensed under the terms of the Apache 2.0 License.
 * See LICENSE file in the project root for terms.
 */
#include "tessellate/matrix_io.hpp"

#include <unistd.h>

#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "tessellate/error.hpp"

namespace tess {

namespace {

constexpr char kFmatMagic[4] = {'F', 'M', 'A', 'T'};
constexpr char kContainerMagic[4] = {'F', 'M', 'T', 'C'};
constexpr std::uint64_t kHeaderSize = 23;

template <typename T>
void append_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  // Little-endian host assumed; all supported targets are.
  out.append(buf, sizeof(T));
}

template <typename T>
T read_le(const std::string& bytes, std::uint64_t offset) {
  T value;
  std::memcpy(&value, bytes.data() + offset, sizeof(T));
  return value;
}

bool looks_binary(const std::string& bytes) {
  return bytes.size() >= 4 && std::memcmp(bytes.data(), kFmatMagic, 4) == 0;
}

FeatureMatrix decode_binary(const std::string& bytes) {
  if (bytes.size() < kHeaderSize)
    throw FormatError("FMAT: truncated header", bytes.size());
  const auto version = read_le<std::uint16_t>(bytes, 4);
  if (version != kFmatVersion)
    throw FormatError("FMAT: unsupported version " + std::to_string(version), 4);
  const auto dtype = read_le<std::uint8_t>(bytes, 6);
  if (dtype != 0 && dtype != 1)
    throw FormatError("FMAT: unknown dtype tag " + std::to_string(dtype), 6);
  const auto rows = read_le<std::uint64_t>(bytes, 7);
  const auto cols = read_le<std::uint64_t>(bytes, 15);
  const std::uint64_t elem_size = dtype == 0 ? 4 : 8;
  if (rows != 0 && cols != 0 && rows > (bytes.size() / cols) / elem_size + 1) {
    // Cheap overflow guard before computing rows*cols.
    throw FormatError("FMAT: declared shape exceeds payload", kHeaderSize);
  }
  const std::uint64_t count = rows * cols;
  if (bytes.size() != kHeaderSize + count * elem_size)
    throw FormatError("FMAT: payload size mismatch, expected " +
                          std::to_string(kHeaderSize + count * elem_size) + " bytes, got " +
                          std::to_string(bytes.size()),
                      kHeaderSize);
  FeatureMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t off = kHeaderSize + i * elem_size;
    double v;
    if (dtype == 0) {
      float f;
      std::memcpy(&f, bytes.data() + off, 4);
      v = static_cast<double>(f);
    } else {
      std::memcpy(&v, bytes.data() + off, 8);
    }
    if (!std::isfinite(v))
      throw FormatError("FMAT: non-finite value at element " + std::to_string(i), off);
    m.data()[i] = v;
  }
  return m;
}

FeatureMatrix decode_text(const std::string& bytes) {
  std::uint64_t pos = 0;
  auto skip_ws = [&]() {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  };
  auto next_token = [&](std::uint64_t& token_off) -> std::string {
    skip_ws();
    token_off = pos;
    std::uint64_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };

  std::uint64_t off = 0;
  auto parse_dim = [&](const char* what) -> std::uint64_t {
    const std::string tok = next_token(off);
    if (tok.empty()) throw FormatError(std::string("FMAT text: missing ") + what, off);
    try {
      std::size_t used = 0;
      const long long v = std::stoll(tok, &used);
      if (used != tok.size() || v < 0) throw std::invalid_argument(tok);
      return static_cast<std::uint64_t>(v);
    } catch (const std::exception&) {
      throw FormatError(std::string("FMAT text: bad ") + what + " '" + tok + "'", off);
    }
  };

  const std::uint64_t rows = parse_dim("row count");
  const std::uint64_t cols = parse_dim("column count");
  FeatureMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  const std::uint64_t count = rows * cols;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string tok = next_token(off);
    if (tok.empty())
      throw FormatError("FMAT text: expected " + std::to_string(count) + " values, got " +
                            std::to_string(i),
                        off);
    double v;
    try {
      std::size_t used = 0;
      v = std::stod(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw FormatError("FMAT text: bad value '" + tok + "'", off);
    }
    if (!std::isfinite(v))
      throw FormatError("FMAT text: non-finite value at element " + std::to_string(i), off);
    m.data()[i] = v;
  }
  const std::string extra = next_token(off);
  if (!extra.empty())
    throw FormatError("FMAT text: trailing data after " + std::to_string(count) + " values", off);
  return m;
}

}  // namespace

std::string encode_feature_matrix(const FeatureMatrix& m, FmatDtype dtype) {
  std::string out;
  const std::uint64_t count = static_cast<std::uint64_t>(m.rows()) * m.cols();
  out.reserve(kHeaderSize + count * (dtype == FmatDtype::F32 ? 4 : 8));
  out.append(kFmatMagic, 4);
  append_le<std::uint16_t>(out, kFmatVersion);
  append_le<std::uint8_t>(out, static_cast<std::uint8_t>(dtype));
  append_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
  append_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
  for (std::uint64_t i = 0; i < count; ++i) {
    if (dtype == FmatDtype::F32)
      append_le<float>(out, static_cast<float>(m.data()[i]));
    else
      append_le<double>(out, m.data()[i]);
  }
  return out;
}

FeatureMatrix decode_feature_matrix(const std::string& bytes) {
  return looks_binary(bytes) ? decode_binary(bytes) : decode_text(bytes);
}

FeatureMatrix load_feature_matrix(const std::filesystem::path& path) {
  return decode_feature_matrix(read_file_bytes(path));
}

void write_feature_matrix(const std::filesystem::path& path, const FeatureMatrix& m,
                          FmatDtype dtype) {
  write_file_atomic(path, encode_feature_matrix(m, dtype));
}

void write_feature_matrix_text(const std::filesystem::path& path, const FeatureMatrix& m) {
  std::ostringstream out;
  out.precision(std::numeric_limits<double>::max_digits10);
  out << m.rows() << " " << m.cols() << "\n";
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out << (c ? " " : "") << m(r, c);
    out << "\n";
  }
  write_file_atomic(path, out.str());
}

void MatrixContainer::set(const std::string& name, FeatureMatrix m) {
  for (std::size_t i = 0; i < order_.size(); ++i) {
    if (order_[i] == name) {
      matrices_[i] = std::move(m);
      return;
    }
  }
  order_.push_back(name);
  matrices_.push_back(std::move(m));
}

const FeatureMatrix& MatrixContainer::get(const std::string& name) const {
  for (std::size_t i = 0; i < order_.size(); ++i)
    if (order_[i] == name) return matrices_[i];
  throw FormatError("container: no matrix named '" + name + "'");
}

bool MatrixContainer::contains(const std::string& name) const {
  for (const auto& n : order_)
    if (n == name) return true;
  return false;
}

std::string MatrixContainer::encode() const {
  nlohmann::json header = meta.is_null() ? nlohmann::json::object() : meta;
  header["entries"] = order_;
  header["container_version"] = kContainerVersion;
  const std::string header_bytes = header.dump();

  std::string out;
  out.append(kContainerMagic, 4);
  append_le<std::uint16_t>(out, kContainerVersion);
  append_le<std::uint64_t>(out, header_bytes.size());
  out += header_bytes;
  for (const auto& m : matrices_) out += encode_feature_matrix(m, FmatDtype::F64);
  return out;
}

MatrixContainer MatrixContainer::decode(const std::string& bytes) {
  if (bytes.size() < 14 || std::memcmp(bytes.data(), kContainerMagic, 4) != 0)
    throw FormatError("container: bad magic", 0);
  const auto version = read_le<std::uint16_t>(bytes, 4);
  if (version != kContainerVersion)
    throw FormatError("container: unsupported version " + std::to_string(version), 4);
  const auto header_len = read_le<std::uint64_t>(bytes, 6);
  if (bytes.size() < 14 + header_len) throw FormatError("container: truncated metadata", 14);

  MatrixContainer c;
  try {
    c.meta = nlohmann::json::parse(bytes.substr(14, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("container: bad metadata JSON: ") + e.what(), 14);
  }
  if (!c.meta.contains("entries") || !c.meta["entries"].is_array())
    throw FormatError("container: metadata lacks entries list", 14);

  std::uint64_t off = 14 + header_len;
  for (const auto& name : c.meta["entries"]) {
    if (bytes.size() < off + kHeaderSize)
      throw FormatError("container: truncated matrix '" + name.get<std::string>() + "'", off);
    const auto dtype = read_le<std::uint8_t>(bytes, off + 6);
    const auto rows = read_le<std::uint64_t>(bytes, off + 7);
    const auto cols = read_le<std::uint64_t>(bytes, off + 15);
    const std::uint64_t blob_size = kHeaderSize + rows * cols * (dtype == 0 ? 4 : 8);
    if (bytes.size() < off + blob_size)
      throw FormatError("container: truncated matrix '" + name.get<std::string>() + "'", off);
    c.set(name.get<std::string>(), decode_binary(bytes.substr(off, blob_size)));
    off += blob_size;
  }
  if (off != bytes.size()) throw FormatError("container: trailing bytes", off);
  c.meta.erase("entries");
  c.meta.erase("container_version");
  return c;
}

void MatrixContainer::save(const std::filesystem::path& path) const {
  write_file_atomic(path, encode());
}

MatrixContainer MatrixContainer::load(const std::filesystem::path& path) {
  return decode(read_file_bytes(path));
}

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IngestionError("read failed: " + path.string());
  return buf.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  fs::path dir = path.parent_path();
  if (dir.empty()) dir = ".";
  const fs::path tmp = dir / (path.filename().string() + ".tmp." + std::to_string(::getpid()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IngestionError("cannot create file: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw IngestionError("write failed: " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IngestionError("rename failed: " + path.string());
  }
}

std::string content_hash(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "fnv1a64:%016llx", static_cast<unsigned long long>(h));
  return buf;
}

const char* to_string(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::InvalidArgument: return "invalid-argument";
    case ErrorCategory::Format: return "format-error";
    case ErrorCategory::Ingestion: return "ingestion-error";
    case ErrorCategory::Numeric: return "numeric-failure";
    case ErrorCategory::ResourceLimit: return "resource-limit";
    case ErrorCategory::UndefinedResult: return "undefined-result";
  }
  return "unknown";
}

}  // namespace tess
