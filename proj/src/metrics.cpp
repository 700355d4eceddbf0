// SPDX-License-Identifier: Apache-2.0

#include "reir/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace reir {

namespace {

double
intersection_area(const Box& a, const Box& b) {
  const double iw = std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x);
  const double ih = std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y);
  if (iw <= 0.0 || ih <= 0.0) {
    return 0.0;
  }
  return iw * ih;
}

bool
candidate_hit(const RankedCandidate& c, const QueryGroundTruth& gt, double tau,
              IdentityMode mode) {
  if (c.image_id != gt.gt_image_id) {
    return false;
  }
  if (mode == IdentityMode::kStrict && c.instance_id != gt.gt_instance_id) {
    return false;
  }
  return iou(c.predicted_box, gt.gt_box) > tau;
}

}  // namespace

double
iou(const Box& a, const Box& b) {
  require(a.valid() && b.valid(), ErrorKind::kInvalidArgument, "iou: invalid box");
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  return inter / uni;
}

GiouTerms
giou_terms(const Box& a, const Box& b) {
  require(a.valid() && b.valid(), ErrorKind::kInvalidArgument, "giou_terms: invalid box");
  GiouTerms t;
  const double inter = intersection_area(a, b);
  t.union_area = a.area() + b.area() - inter;
  t.iou = inter / t.union_area;
  const double ew = std::max(a.x + a.w, b.x + b.w) - std::min(a.x, b.x);
  const double eh = std::max(a.y + a.h, b.y + b.h) - std::min(a.y, b.y);
  t.enclosing = ew * eh;
  return t;
}

void
sort_candidates(std::vector<RankedCandidate>& candidates) {
  std::sort(candidates.begin(), candidates.end(),
            [](const RankedCandidate& a, const RankedCandidate& b) {
              if (a.score != b.score) return a.score > b.score;
              if (a.image_id != b.image_id) return a.image_id < b.image_id;
              return a.instance_id < b.instance_id;
            });
}

void
EvalSpec::validate() const {
  require(!ks.empty() && !taus.empty(), ErrorKind::kInvalidArgument,
          "EvalSpec: k and tau lists must be non-empty");
  require(std::is_sorted(ks.begin(), ks.end()), ErrorKind::kInvalidArgument,
          "EvalSpec: k list must be sorted");
  require(std::is_sorted(taus.begin(), taus.end()), ErrorKind::kInvalidArgument,
          "EvalSpec: tau list must be sorted");
  for (const std::size_t k : ks) {
    require(k >= 1, ErrorKind::kInvalidArgument, "EvalSpec: k must be positive");
  }
  for (const double tau : taus) {
    require(tau > 0.0 && tau < 1.0, ErrorKind::kInvalidArgument,
            "EvalSpec: tau must lie in (0,1)");
  }
}

double
precision_at_iou(const std::vector<std::pair<Box, Box>>& pairs, double tau) {
  require(!pairs.empty(), ErrorKind::kInvalidArgument,
          "precision_at_iou: undefined on an empty pair list");
  require(tau > 0.0 && tau < 1.0, ErrorKind::kInvalidArgument,
          "precision_at_iou: tau must lie in (0,1)");
  std::size_t hits = 0;
  for (const auto& [pred, gt] : pairs) {
    if (iou(pred, gt) > tau) {
      ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

std::vector<std::int64_t>
image_ranking(const std::vector<RankedCandidate>& sorted_candidates) {
  std::vector<std::int64_t> order;
  for (const RankedCandidate& c : sorted_candidates) {
    if (std::find(order.begin(), order.end(), c.image_id) == order.end()) {
      order.push_back(c.image_id);
    }
  }
  return order;
}

double
recall_at_k(const std::vector<std::vector<std::int64_t>>& image_rankings,
            const std::vector<std::int64_t>& gt_image_ids, std::size_t k) {
  require(k >= 1, ErrorKind::kInvalidArgument, "recall_at_k: k must be positive");
  require(image_rankings.size() == gt_image_ids.size(), ErrorKind::kDimensionMismatch,
          "recall_at_k: one ranking per query required");
  require(!image_rankings.empty(), ErrorKind::kInvalidArgument,
          "recall_at_k: undefined on zero queries");
  std::size_t hits = 0;
  for (std::size_t q = 0; q < image_rankings.size(); ++q) {
    const auto& ranking = image_rankings[q];
    const std::size_t top = std::min(k, ranking.size());
    for (std::size_t i = 0; i < top; ++i) {
      if (ranking[i] == gt_image_ids[q]) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(image_rankings.size());
}

double
box_recall_at_k(const std::vector<std::vector<RankedCandidate>>& rankings,
                const std::vector<QueryGroundTruth>& ground_truth, std::size_t k, double tau,
                IdentityMode mode) {
  require(k >= 1, ErrorKind::kInvalidArgument, "box_recall_at_k: k must be positive");
  require(tau > 0.0 && tau < 1.0, ErrorKind::kInvalidArgument,
          "box_recall_at_k: tau must lie in (0,1)");
  require(rankings.size() == ground_truth.size(), ErrorKind::kDimensionMismatch,
          "box_recall_at_k: one ranking per query required");
  require(!rankings.empty(), ErrorKind::kInvalidArgument,
          "box_recall_at_k: undefined on zero queries");
  std::size_t hits = 0;
  for (std::size_t q = 0; q < rankings.size(); ++q) {
    const auto& ranking = rankings[q];
    const std::size_t top = std::min(k, ranking.size());
    for (std::size_t i = 0; i < top; ++i) {
      if (candidate_hit(ranking[i], ground_truth[q], tau, mode)) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(rankings.size());
}

MetricReport
evaluate_rankings(const std::vector<std::vector<RankedCandidate>>& rankings,
                  const std::vector<QueryGroundTruth>& ground_truth,
                  const std::vector<std::pair<Box, Box>>& grounding_pairs,
                  const EvalSpec& spec) {
  spec.validate();
  require(rankings.size() == ground_truth.size() && rankings.size() == grounding_pairs.size(),
          ErrorKind::kDimensionMismatch,
          "evaluate_rankings: rankings, ground truth and grounding pairs must align");

  MetricReport report;
  report.n_queries = rankings.size();

  std::vector<std::vector<std::int64_t>> image_rankings;
  image_rankings.reserve(rankings.size());
  std::vector<std::int64_t> gt_images;
  gt_images.reserve(ground_truth.size());
  for (std::size_t q = 0; q < rankings.size(); ++q) {
    image_rankings.push_back(image_ranking(rankings[q]));
    gt_images.push_back(ground_truth[q].gt_image_id);
  }

  for (const std::size_t k : spec.ks) {
    report.recall_at_k[k] = recall_at_k(image_rankings, gt_images, k);
    for (const double tau : spec.taus) {
      report.box_recall[{k, tau}] =
          box_recall_at_k(rankings, ground_truth, k, tau, spec.identity_mode);
    }
  }
  for (const double tau : spec.taus) {
    report.precision_at_iou[tau] = precision_at_iou(grounding_pairs, tau);
  }
  return report;
}

}  // namespace reir
