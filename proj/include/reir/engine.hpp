// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "reir/metrics.hpp"
#include "reir/model.hpp"

namespace reir {

// Stored gallery entry. Features and boxes are narrowed to f32 at build time
// so in-memory scoring and a file round-trip see bit-identical values.
struct IndexInstance {
  std::int64_t instance_id = 0;
  bool gt_features = false;  // provenance: feature column holds oracle values
  Box gt_box;
  Box predicted_box;
  std::vector<float> feature;
};

struct IndexImage {
  std::int64_t image_id = 0;
  std::vector<IndexInstance> instances;
};

// Immutable exhaustive-scoring gallery. Iteration order is canonical
// (image_id asc, instance_id asc) regardless of insertion order; the
// checksum is FNV-1a over the canonical serialization.
class GalleryIndex {
 public:
  static GalleryIndex build(const std::vector<InstanceRecord>& records, bool gt_features);

  std::size_t
  dim() const {
    return dim_;
  }

  std::size_t
  n_instances() const {
    return n_instances_;
  }

  const std::vector<IndexImage>&
  images() const {
    return images_;
  }

  std::uint64_t
  checksum() const {
    return checksum_;
  }

  // Top-k candidates by dot product, 64-bit accumulation over the stored
  // 32-bit features; ties broken by (image_id asc, instance_id asc). The
  // result is identical for every worker count.
  std::vector<RankedCandidate> rank(const Vec& t, std::size_t k) const;

  void save(const std::string& path) const;
  static GalleryIndex load(const std::string& path);

 private:
  GalleryIndex() = default;
  void finalize();  // builds the flat block and checksum from `images_`

  std::size_t dim_ = 0;
  std::size_t n_instances_ = 0;
  std::vector<IndexImage> images_;
  // Flat row-major feature block plus the (image, instance) coordinate of
  // each row, in canonical order.
  std::vector<float> flat_;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> row_coords_;
  std::uint64_t checksum_ = 0;
};

// Worker count for gallery scoring: REIR_THREADS if set (clamped to >= 1),
// otherwise hardware parallelism.
std::size_t scoring_threads();

// Full-grid evaluation: rank every query against the whole gallery, then
// apply the retrieval and localization protocols. Every query's ground-truth
// instance must exist in the index. `t_refined` must be populated.
MetricReport evaluate_benchmark(const GalleryIndex& index,
                                const std::vector<QueryRecord>& queries, const EvalSpec& spec);

}  // namespace reir
