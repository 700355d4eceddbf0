// SPDX-License-Identifier: Apache-2.0

#include "reir/engine.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>

#include "reir/io.hpp"

namespace reir {

namespace {

constexpr char kIndexMagic[4] = {'R', 'E', 'I', 'R'};
constexpr std::uint32_t kIndexVersion = 1;

float
narrow(double v) {
  return static_cast<float>(v);
}

Box
narrow_box(const Box& b) {
  return Box{narrow(b.x), narrow(b.y), narrow(b.w), narrow(b.h)};
}

// Canonical body serialization; the trailer checksum is defined over these
// bytes, so build and save must agree on them exactly.
ByteWriter
serialize_body(const std::vector<IndexImage>& images, std::size_t dim) {
  ByteWriter w;
  w.bytes(kIndexMagic, 4);
  w.u32(kIndexVersion);
  w.u32(static_cast<std::uint32_t>(dim));
  w.u32(static_cast<std::uint32_t>(images.size()));
  for (const IndexImage& img : images) {
    w.u64(static_cast<std::uint64_t>(img.image_id));
    w.u32(static_cast<std::uint32_t>(img.instances.size()));
    for (const IndexInstance& inst : img.instances) {
      w.u64(static_cast<std::uint64_t>(inst.instance_id));
      w.u8(inst.gt_features ? 1 : 0);
      w.f32(narrow(inst.gt_box.x));
      w.f32(narrow(inst.gt_box.y));
      w.f32(narrow(inst.gt_box.w));
      w.f32(narrow(inst.gt_box.h));
      w.f32(narrow(inst.predicted_box.x));
      w.f32(narrow(inst.predicted_box.y));
      w.f32(narrow(inst.predicted_box.w));
      w.f32(narrow(inst.predicted_box.h));
      for (const float f : inst.feature) {
        w.f32(f);
      }
    }
  }
  return w;
}

}  // namespace

std::size_t
scoring_threads() {
  if (const char* env = std::getenv("REIR_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    return v >= 1 ? static_cast<std::size_t>(v) : 1;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw >= 1 ? hw : 1;
}

GalleryIndex
GalleryIndex::build(const std::vector<InstanceRecord>& records, bool gt_features) {
  GalleryIndex index;
  if (!records.empty()) {
    index.dim_ = records.front().feature.size();
  }

  std::vector<const InstanceRecord*> sorted;
  sorted.reserve(records.size());
  for (const InstanceRecord& r : records) {
    require(r.feature.size() == index.dim_, ErrorKind::kDimensionMismatch,
            "build_index: inconsistent feature dimension at instance (" +
                std::to_string(r.image_id) + ", " + std::to_string(r.instance_id) + ")");
    sorted.push_back(&r);
  }
  std::sort(sorted.begin(), sorted.end(), [](const InstanceRecord* a, const InstanceRecord* b) {
    if (a->image_id != b->image_id) return a->image_id < b->image_id;
    return a->instance_id < b->instance_id;
  });
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    require(sorted[i - 1]->image_id != sorted[i]->image_id ||
                sorted[i - 1]->instance_id != sorted[i]->instance_id,
            ErrorKind::kInvalidArgument,
            "build_index: duplicate instance (" + std::to_string(sorted[i]->image_id) + ", " +
                std::to_string(sorted[i]->instance_id) + ")");
  }

  for (const InstanceRecord* r : sorted) {
    if (index.images_.empty() || index.images_.back().image_id != r->image_id) {
      index.images_.push_back(IndexImage{r->image_id, {}});
    }
    IndexInstance inst;
    inst.instance_id = r->instance_id;
    inst.gt_features = gt_features;
    inst.gt_box = narrow_box(r->gt_box);
    inst.predicted_box = narrow_box(r->box);
    inst.feature.reserve(index.dim_);
    for (const double v : r->feature) {
      inst.feature.push_back(narrow(v));
    }
    index.images_.back().instances.push_back(std::move(inst));
  }
  index.finalize();
  return index;
}

void
GalleryIndex::finalize() {
  n_instances_ = 0;
  flat_.clear();
  row_coords_.clear();
  for (std::size_t k = 0; k < images_.size(); ++k) {
    for (std::size_t l = 0; l < images_[k].instances.size(); ++l) {
      flat_.insert(flat_.end(), images_[k].instances[l].feature.begin(),
                   images_[k].instances[l].feature.end());
      row_coords_.emplace_back(static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(l));
      ++n_instances_;
    }
  }
  const ByteWriter body = serialize_body(images_, dim_);
  checksum_ = fnv1a64(body.buffer().data(), body.buffer().size());
}

std::vector<RankedCandidate>
GalleryIndex::rank(const Vec& t, std::size_t k) const {
  require(t.size() == dim_, ErrorKind::kDimensionMismatch,
          "rank_query: embedding length does not match index dimension");

  std::vector<double> scores(n_instances_, 0.0);
  const auto score_range = [&](std::size_t begin, std::size_t end) {
    for (std::size_t row = begin; row < end; ++row) {
      const float* feat = flat_.data() + row * dim_;
      double acc = 0.0;
      for (std::size_t i = 0; i < dim_; ++i) {
        acc += static_cast<double>(feat[i]) * t[i];
      }
      scores[row] = acc;
    }
  };

  const std::size_t workers = std::min(scoring_threads(), std::max<std::size_t>(n_instances_, 1));
  if (workers <= 1 || n_instances_ < 2048) {
    score_range(0, n_instances_);
  } else {
    // Each worker writes disjoint rows; the later global sort makes the
    // result independent of the shard layout.
    std::vector<std::thread> pool;
    const std::size_t chunk = (n_instances_ + workers - 1) / workers;
    for (std::size_t wi = 0; wi < workers; ++wi) {
      const std::size_t begin = wi * chunk;
      const std::size_t end = std::min(begin + chunk, n_instances_);
      if (begin >= end) break;
      pool.emplace_back(score_range, begin, end);
    }
    for (std::thread& th : pool) {
      th.join();
    }
  }

  std::vector<std::size_t> order(n_instances_);
  for (std::size_t i = 0; i < order.size(); ++i) {
    order[i] = i;
  }
  const auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;  // rows are already in (image_id, instance_id) order
  };
  const std::size_t top = std::min(k, n_instances_);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top), order.end(),
                    better);

  std::vector<RankedCandidate> out;
  out.reserve(top);
  for (std::size_t i = 0; i < top; ++i) {
    const auto [img, inst] = row_coords_[order[i]];
    const IndexImage& image = images_[img];
    const IndexInstance& instance = image.instances[inst];
    out.push_back(RankedCandidate{image.image_id, instance.instance_id, scores[order[i]],
                                  instance.predicted_box});
  }
  return out;
}

void
GalleryIndex::save(const std::string& path) const {
  ByteWriter body = serialize_body(images_, dim_);
  ByteWriter file;
  file.bytes(body.buffer().data(), body.buffer().size());
  file.u64(checksum_);
  write_binary_file(path, file.buffer());
}

GalleryIndex
GalleryIndex::load(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_binary_file(path);
  require(bytes.size() >= 8, ErrorKind::kFormatTruncated, path + ": file too short");

  const std::size_t body_size = bytes.size() - 8;
  ByteReader r(bytes.data(), bytes.size());

  char magic[4];
  r.bytes(magic, 4);
  require(std::equal(magic, magic + 4, kIndexMagic), ErrorKind::kFormatMagic,
          path + ": not a gallery index file");
  const std::uint32_t version = r.u32();
  require(version == kIndexVersion, ErrorKind::kFormatVersion,
          path + ": unsupported index version " + std::to_string(version));

  ByteReader trailer(bytes.data() + body_size, 8);
  const std::uint64_t expect = trailer.u64();
  const std::uint64_t actual = fnv1a64(bytes.data(), body_size);
  require(expect == actual, ErrorKind::kFormatChecksum, path + ": checksum mismatch");

  GalleryIndex index;
  index.dim_ = r.u32();
  const std::uint32_t n_images = r.u32();
  index.images_.reserve(n_images);
  for (std::uint32_t k = 0; k < n_images; ++k) {
    IndexImage img;
    img.image_id = static_cast<std::int64_t>(r.u64());
    const std::uint32_t n_inst = r.u32();
    require(r.offset() <= body_size, ErrorKind::kFormatTruncated, path + ": truncated body");
    img.instances.reserve(n_inst);
    for (std::uint32_t l = 0; l < n_inst; ++l) {
      IndexInstance inst;
      inst.instance_id = static_cast<std::int64_t>(r.u64());
      inst.gt_features = r.u8() != 0;
      inst.gt_box = Box{r.f32(), r.f32(), r.f32(), r.f32()};
      inst.predicted_box = Box{r.f32(), r.f32(), r.f32(), r.f32()};
      inst.feature.resize(index.dim_);
      for (std::size_t i = 0; i < index.dim_; ++i) {
        inst.feature[i] = r.f32();
      }
      img.instances.push_back(std::move(inst));
    }
    index.images_.push_back(std::move(img));
  }
  require(r.offset() == body_size, ErrorKind::kFormatTruncated,
          path + ": trailing bytes inside the body");

  // Canonical-order and uniqueness invariants hold for any file we wrote;
  // reject hand-edited files that break them.
  for (std::size_t k = 0; k < index.images_.size(); ++k) {
    require(k == 0 || index.images_[k - 1].image_id < index.images_[k].image_id,
            ErrorKind::kDataIntegrity, path + ": images out of canonical order");
    const auto& inst = index.images_[k].instances;
    for (std::size_t l = 1; l < inst.size(); ++l) {
      require(inst[l - 1].instance_id < inst[l].instance_id, ErrorKind::kDataIntegrity,
              path + ": instances out of canonical order");
    }
  }
  index.finalize();
  require(index.checksum_ == expect, ErrorKind::kFormatChecksum,
          path + ": canonical checksum mismatch");
  return index;
}

MetricReport
evaluate_benchmark(const GalleryIndex& index, const std::vector<QueryRecord>& queries,
                   const EvalSpec& spec) {
  spec.validate();
  require(!queries.empty(), ErrorKind::kInvalidArgument, "evaluate_benchmark: no queries");

  // Ground-truth instances must exist before any ranking happens.
  for (const QueryRecord& q : queries) {
    bool found = false;
    for (const IndexImage& img : index.images()) {
      if (img.image_id != q.gt_image_id) continue;
      for (const IndexInstance& inst : img.instances) {
        if (inst.instance_id == q.gt_instance_id) {
          found = true;
          break;
        }
      }
      break;
    }
    require(found, ErrorKind::kDataIntegrity,
            "evaluate_benchmark: query " + std::to_string(q.query_id) +
                " references a missing gallery instance");
    require(q.t_refined.size() == index.dim(), ErrorKind::kDimensionMismatch,
            "evaluate_benchmark: query " + std::to_string(q.query_id) +
                " embedding length does not match the index");
  }

  std::vector<std::vector<RankedCandidate>> rankings;
  rankings.reserve(queries.size());
  std::vector<QueryGroundTruth> ground_truth;
  ground_truth.reserve(queries.size());
  std::vector<std::pair<Box, Box>> grounding_pairs;
  grounding_pairs.reserve(queries.size());

  for (const QueryRecord& q : queries) {
    std::vector<RankedCandidate> ranking = index.rank(q.t_refined, index.n_instances());
    // Localization pair: best-scoring candidate inside the query's own image
    // against the query's ground-truth box (single-image grounding protocol).
    for (const RankedCandidate& c : ranking) {
      if (c.image_id == q.gt_image_id) {
        grounding_pairs.emplace_back(c.predicted_box, q.gt_box);
        break;
      }
    }
    rankings.push_back(std::move(ranking));
    ground_truth.push_back(QueryGroundTruth{q.gt_image_id, q.gt_instance_id, q.gt_box});
  }

  return evaluate_rankings(rankings, ground_truth, grounding_pairs, spec);
}

}  // namespace reir
