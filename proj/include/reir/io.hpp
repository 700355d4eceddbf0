// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "reir/error.hpp"
#include "reir/model.hpp"

namespace reir {

// FNV-1a, 64-bit. `state` allows incremental hashing.
inline constexpr std::uint64_t kFnvOffsetBasis = 14695981039346656037ULL;
std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n,
                      std::uint64_t state = kFnvOffsetBasis);

// Little-endian byte packing, host-order independent.
class ByteWriter {
 public:
  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void bytes(const void* p, std::size_t n);

  const std::vector<std::uint8_t>&
  buffer() const {
    return buf_;
  }

 private:
  std::vector<std::uint8_t> buf_;
};

// Bounds-checked little-endian reads; running past the end raises a
// truncation error instead of yielding garbage.
class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}
  explicit ByteReader(const std::vector<std::uint8_t>& data)
      : ByteReader(data.data(), data.size()) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  void bytes(void* out, std::size_t n);

  std::size_t
  offset() const {
    return pos_;
  }

  std::size_t
  remaining() const {
    return size_ - pos_;
  }

 private:
  void need(std::size_t n) const;

  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_binary_file(const std::string& path);
void write_binary_file(const std::string& path, const std::vector<std::uint8_t>& bytes);

// Line-delimited record files (one JSON object per line).
//
// Instance lines: image_id, instance_id, raw, gt_box.
// Query lines: query_id, embedding, gt_image_id, gt_instance_id, gt_box,
//              relation_dependent.
void write_instance_file(const std::string& path, const std::vector<InstanceRecord>& records);
std::vector<InstanceRecord> read_instance_file(const std::string& path);
void write_query_file(const std::string& path, const std::vector<QueryRecord>& queries);
std::vector<QueryRecord> read_query_file(const std::string& path);

}  // namespace reir
