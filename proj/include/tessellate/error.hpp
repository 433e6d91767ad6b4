/*
 * tessellate - temporal semantic transfer for video clip sequences
 *
 * Licensed under the terms of the Apache 2.0 License.
 * See LICENSE file in the project root for terms.
 */
#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace tess {

enum class ErrorCategory {
  InvalidArgument,  // caller violated a documented precondition
  Format,           // a file does not conform to its declared format
  Ingestion,        // manifest/corpus level inconsistency
  Numeric,          // computation produced or detected non-finite/ill-conditioned results
  ResourceLimit,    // request exceeds a hard size bound
  UndefinedResult,  // the quantity is mathematically undefined for this input
};

const char* to_string(ErrorCategory c);

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}
  ErrorCategory category() const { return category_; }

 private:
  ErrorCategory category_;
};

struct InvalidArgument : Error {
  explicit InvalidArgument(const std::string& msg) : Error(ErrorCategory::InvalidArgument, msg) {}
};

// Carries the byte offset of the first offending byte when known.
struct FormatError : Error {
  explicit FormatError(const std::string& msg, std::optional<std::uint64_t> offset = std::nullopt)
      : Error(ErrorCategory::Format, offset ? msg + " (byte offset " + std::to_string(*offset) + ")" : msg),
        byte_offset(offset) {}
  std::optional<std::uint64_t> byte_offset;
};

struct IngestionError : Error {
  explicit IngestionError(const std::string& msg) : Error(ErrorCategory::Ingestion, msg) {}
};

struct NumericFailure : Error {
  explicit NumericFailure(const std::string& msg) : Error(ErrorCategory::Numeric, msg) {}
};

struct ResourceLimit : Error {
  explicit ResourceLimit(const std::string& msg) : Error(ErrorCategory::ResourceLimit, msg) {}
};

struct UndefinedResult : Error {
  explicit UndefinedResult(const std::string& msg) : Error(ErrorCategory::UndefinedResult, msg) {}
};

}  // namespace tess
