// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "reir/box.hpp"
#include "reir/error.hpp"

namespace reir {

double iou(const Box& a, const Box& b);

struct GiouTerms {
  double iou = 0.0;
  double enclosing = 0.0;   // area of the smallest box containing both
  double union_area = 0.0;  // enclosing >= union_area > 0 for valid boxes
};
GiouTerms giou_terms(const Box& a, const Box& b);

// One scored gallery instance for a single query.
struct RankedCandidate {
  std::int64_t image_id = 0;
  std::int64_t instance_id = 0;
  double score = 0.0;
  Box predicted_box;
};

// Canonical candidate order: score desc, then image_id asc, then
// instance_id asc. Every ranking consumed below is assumed sorted this way;
// the shared tie rule is what makes box recall <= image recall.
void sort_candidates(std::vector<RankedCandidate>& candidates);

// How "the referred instance is in the top-k" is decided:
//   kStrict: candidate ids must equal the ground-truth ids.
//   kIou:    any candidate of the ground-truth image counts; the box overlap
//            test doubles as the identity check.
// Both modes additionally gate on IoU(predicted, gt) > tau.
enum class IdentityMode { kStrict, kIou };

struct QueryGroundTruth {
  std::int64_t gt_image_id = 0;
  std::int64_t gt_instance_id = 0;
  Box gt_box;
};

struct EvalSpec {
  std::vector<std::size_t> ks;  // sorted, positive
  std::vector<double> taus;     // sorted, each in (0,1)
  IdentityMode identity_mode = IdentityMode::kIou;

  void validate() const;
};

struct MetricReport {
  std::map<std::size_t, double> recall_at_k;
  std::map<double, double> precision_at_iou;
  std::map<std::pair<std::size_t, double>, double> box_recall;
  std::size_t n_queries = 0;
};

// Fraction of (predicted, ground truth) pairs with IoU strictly above tau.
// An empty pair list has no defined precision and is rejected.
double precision_at_iou(const std::vector<std::pair<Box, Box>>& pairs, double tau);

// Image-level ranking induced by a sorted candidate list: images ordered by
// their best instance score, ties by image_id asc (first-appearance order).
std::vector<std::int64_t> image_ranking(const std::vector<RankedCandidate>& sorted_candidates);

// Fraction of queries whose ground-truth image is among the k highest-scoring
// images. k larger than the ranking is clamped.
double recall_at_k(const std::vector<std::vector<std::int64_t>>& image_rankings,
                   const std::vector<std::int64_t>& gt_image_ids, std::size_t k);

// Fraction of queries with a top-k candidate that (i) is the referred
// instance under `mode` and (ii) overlaps the ground-truth box above tau.
double box_recall_at_k(const std::vector<std::vector<RankedCandidate>>& rankings,
                       const std::vector<QueryGroundTruth>& ground_truth, std::size_t k,
                       double tau, IdentityMode mode);

// Full (k, tau) grid over shared per-query rankings. `grounding_pairs` feeds
// the localization precision column: one (predicted, gt) box pair per query,
// taken from the best-scoring candidate inside the query's own image.
MetricReport evaluate_rankings(const std::vector<std::vector<RankedCandidate>>& rankings,
                               const std::vector<QueryGroundTruth>& ground_truth,
                               const std::vector<std::pair<Box, Box>>& grounding_pairs,
                               const EvalSpec& spec);

}  // namespace reir
