// SPDX-License-Identifier: Apache-2.0

#include "reir/io.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace reir {

namespace {

using nlohmann::json;

json
box_to_json(const Box& b) {
  return json::array({b.x, b.y, b.w, b.h});
}

Box
box_from_json(const json& j) {
  require(j.is_array() && j.size() == 4, ErrorKind::kDataIntegrity,
          "box field must be a 4-element array");
  return Box{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

Vec
vec_from_json(const json& j) {
  require(j.is_array(), ErrorKind::kDataIntegrity, "vector field must be an array");
  Vec v;
  v.reserve(j.size());
  for (const auto& e : j) {
    v.push_back(e.get<double>());
  }
  return v;
}

// Applies `parse` to every non-empty line, rethrowing with the line number.
template <typename Fn>
void
for_each_line(const std::string& path, Fn parse) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::kInvalidArgument, "cannot open " + path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    try {
      parse(json::parse(line));
    } catch (const json::exception& e) {
      fail(ErrorKind::kDataIntegrity,
           path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

std::ofstream
open_for_write(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::kInvalidArgument, "cannot write " + path);
  return out;
}

}  // namespace

std::uint64_t
fnv1a64(const std::uint8_t* data, std::size_t n, std::uint64_t state) {
  constexpr std::uint64_t kPrime = 1099511628211ULL;
  for (std::size_t i = 0; i < n; ++i) {
    state ^= data[i];
    state *= kPrime;
  }
  return state;
}

void
ByteWriter::u8(std::uint8_t v) {
  buf_.push_back(v);
}

void
ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

void
ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

void
ByteWriter::f32(float v) {
  u32(std::bit_cast<std::uint32_t>(v));
}

void
ByteWriter::f64(double v) {
  u64(std::bit_cast<std::uint64_t>(v));
}

void
ByteWriter::bytes(const void* p, std::size_t n) {
  const auto* src = static_cast<const std::uint8_t*>(p);
  buf_.insert(buf_.end(), src, src + n);
}

void
ByteReader::need(std::size_t n) const {
  require(pos_ + n <= size_, ErrorKind::kFormatTruncated, "unexpected end of data");
}

std::uint8_t
ByteReader::u8() {
  need(1);
  return data_[pos_++];
}

std::uint32_t
ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(data_[pos_++]) << (8 * i);
  }
  return v;
}

std::uint64_t
ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(data_[pos_++]) << (8 * i);
  }
  return v;
}

float
ByteReader::f32() {
  return std::bit_cast<float>(u32());
}

double
ByteReader::f64() {
  return std::bit_cast<double>(u64());
}

void
ByteReader::bytes(void* out, std::size_t n) {
  need(n);
  auto* dst = static_cast<std::uint8_t*>(out);
  for (std::size_t i = 0; i < n; ++i) {
    dst[i] = data_[pos_++];
  }
}

std::vector<std::uint8_t>
read_binary_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::kInvalidArgument, "cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  require(!in.bad(), ErrorKind::kInvalidArgument, "read failure on " + path);
  return bytes;
}

void
write_binary_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out = open_for_write(path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  out.flush();
  require(out.good(), ErrorKind::kInvalidArgument, "write failure on " + path);
}

void
write_instance_file(const std::string& path, const std::vector<InstanceRecord>& records) {
  std::ofstream out = open_for_write(path);
  for (const InstanceRecord& r : records) {
    json j;
    j["image_id"] = r.image_id;
    j["instance_id"] = r.instance_id;
    j["raw"] = r.raw;
    j["gt_box"] = box_to_json(r.gt_box);
    out << j.dump() << '\n';
  }
  out.flush();
  require(out.good(), ErrorKind::kInvalidArgument, "write failure on " + path);
}

std::vector<InstanceRecord>
read_instance_file(const std::string& path) {
  std::vector<InstanceRecord> records;
  for_each_line(path, [&](const json& j) {
    InstanceRecord r;
    r.image_id = j.at("image_id").get<std::int64_t>();
    r.instance_id = j.at("instance_id").get<std::int64_t>();
    r.raw = vec_from_json(j.at("raw"));
    r.gt_box = box_from_json(j.at("gt_box"));
    require(r.gt_box.valid(), ErrorKind::kDataIntegrity, "instance with degenerate gt_box");
    records.push_back(std::move(r));
  });
  return records;
}

void
write_query_file(const std::string& path, const std::vector<QueryRecord>& queries) {
  std::ofstream out = open_for_write(path);
  for (const QueryRecord& q : queries) {
    json j;
    j["query_id"] = q.query_id;
    j["embedding"] = q.raw;
    j["gt_image_id"] = q.gt_image_id;
    j["gt_instance_id"] = q.gt_instance_id;
    j["gt_box"] = box_to_json(q.gt_box);
    j["relation_dependent"] = q.relation_dependent;
    out << j.dump() << '\n';
  }
  out.flush();
  require(out.good(), ErrorKind::kInvalidArgument, "write failure on " + path);
}

std::vector<QueryRecord>
read_query_file(const std::string& path) {
  std::vector<QueryRecord> queries;
  for_each_line(path, [&](const json& j) {
    QueryRecord q;
    q.query_id = j.at("query_id").get<std::int64_t>();
    q.raw = vec_from_json(j.at("embedding"));
    q.gt_image_id = j.at("gt_image_id").get<std::int64_t>();
    q.gt_instance_id = j.at("gt_instance_id").get<std::int64_t>();
    q.gt_box = box_from_json(j.at("gt_box"));
    require(q.gt_box.valid(), ErrorKind::kDataIntegrity, "query with degenerate gt_box");
    q.relation_dependent = j.value("relation_dependent", false);
    queries.push_back(std::move(q));
  });
  return queries;
}

}  // namespace reir
