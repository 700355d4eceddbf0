// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace reir {

enum class ErrorKind {
  kInvalidArgument,    // bad config values or flags
  kDimensionMismatch,  // vector/matrix shape violation
  kDataIntegrity,      // duplicate ids, dangling references, rejected batches
  kFormatMagic,        // unrecognized magic bytes
  kFormatVersion,      // unsupported format version
  kFormatTruncated,    // file ends before its framing says it should
  kFormatChecksum,     // trailer checksum does not match content
  kCheckpointMismatch, // checkpoint incompatible with the requested config
  kDivergence,         // non-finite loss during training
  kNumeric,            // non-finite value where finite math is required
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind
  kind() const noexcept {
    return kind_;
  }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void
fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void
require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) {
    fail(kind, what);
  }
}

}  // namespace reir
