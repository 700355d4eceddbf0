// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "reir/model.hpp"

namespace reir {

struct SynthConfig {
  std::uint64_t seed = 17;
  std::size_t n_images = 200;
  std::size_t instances_per_image = 5;
  std::size_t d_attr = 16;
  std::size_t d_rel = 16;
  double relation_rate = 0.4;  // fraction of queries needing neighborhood context
  double noise_sigma = 0.05;
  double scene_extent = 1.0;

  void validate() const;
};

struct SynthBenchmark {
  std::vector<InstanceRecord> instances;  // raw + gt_box populated, features empty
  std::vector<QueryRecord> queries;       // raw + ground-truth link populated
};

// Deterministic benchmark generator.
//
// Every instance carries an attribute latent a drawn uniformly on the unit
// sphere and a unit-norm neighborhood summary r (truncated mean of neighbor
// attributes plus relative-offset statistics, normalized); its raw feature
// is concat(a, r) and its box is a smooth function of a[0..3], placed
// uniformly via the probability integral transform with intra-image overlap
// rejection above 0.7 IoU. Constant per-block norms make raw-space nearest
// neighbor and raw-space dot product induce the same ranking.
//
// Relation-dependent queries target twin instances: two instances in
// different images sharing one attribute latent, so attribute-only matching
// is exactly ambiguous while the full raw vector stays unique. Each instance
// receives one query; query raw = concat(a + eps, rho * r + eps') with
// rho = 1 only for relation-dependent queries. Any query whose raw-space
// nearest neighbor is not its target is resampled (at most 100 times).
SynthBenchmark generate_benchmark(const SynthConfig& cfg);

}  // namespace reir
