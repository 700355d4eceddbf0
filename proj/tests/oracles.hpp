// SPDX-License-Identifier: Apache-2.0

#pragma once

// Independent reference implementations the unit tests compare the library
// against. Everything here is deliberately naive: rasterized geometry,
// full-sort rankings, direct closed-form scalars. None of it calls the
// library functions under test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "reir/box.hpp"
#include "reir/metrics.hpp"
#include "reir/numerics.hpp"

namespace reir::oracle {

// Area-of-overlap by counting subcell centers on a fixed grid spanning the
// enclosing region. Resolution is relative to the enclosing box, so the
// absolute error of the returned ratio is about the step size.
inline double
raster_iou(const Box& a, const Box& b, std::size_t cells_per_side = 1000) {
  const double lo_x = std::min(a.x, b.x);
  const double lo_y = std::min(a.y, b.y);
  const double hi_x = std::max(a.x + a.w, b.x + b.w);
  const double hi_y = std::max(a.y + a.h, b.y + b.h);
  const double sx = (hi_x - lo_x) / static_cast<double>(cells_per_side);
  const double sy = (hi_y - lo_y) / static_cast<double>(cells_per_side);
  std::size_t in_both = 0;
  std::size_t in_either = 0;
  for (std::size_t i = 0; i < cells_per_side; ++i) {
    const double cx = lo_x + (static_cast<double>(i) + 0.5) * sx;
    const bool ax = cx > a.x && cx < a.x + a.w;
    const bool bx = cx > b.x && cx < b.x + b.w;
    if (!ax && !bx) {
      continue;
    }
    for (std::size_t j = 0; j < cells_per_side; ++j) {
      const double cy = lo_y + (static_cast<double>(j) + 0.5) * sy;
      const bool in_a = ax && cy > a.y && cy < a.y + a.h;
      const bool in_b = bx && cy > b.y && cy < b.y + b.h;
      in_both += (in_a && in_b) ? 1 : 0;
      in_either += (in_a || in_b) ? 1 : 0;
    }
  }
  return in_either == 0 ? 0.0 : static_cast<double>(in_both) / static_cast<double>(in_either);
}

// Exact rectangle overlap via interval arithmetic, written independently of
// the library's implementation.
inline double
exact_iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

// Direct closed forms for the pinned loss examples.
inline double
single_pair_sigmoid_contrastive(double z, double t, double b, double s) {
  const double u = z * (b - t * s);
  return std::log1p(std::exp(u));
}

inline double
focal_closed_form(double s, bool positive, double gamma, double alpha_pos, double alpha_neg) {
  const double p = 1.0 / (1.0 + std::exp(-s));
  const double pt = positive ? p : 1.0 - p;
  const double at = positive ? alpha_pos : alpha_neg;
  return -at * std::pow(1.0 - pt, gamma) * std::log(pt);
}

// A gallery in plain arrays for brute-force evaluation: no index structure,
// no shared code with the engine.
struct FlatInstance {
  std::int64_t image_id = 0;
  std::int64_t instance_id = 0;
  std::vector<float> feature;  // engine galleries store f32
  Box predicted_box;
  Box gt_box;
};

struct FlatQuery {
  Vec t;
  std::int64_t gt_image_id = 0;
  std::int64_t gt_instance_id = 0;
  Box gt_box;
};

// Every candidate scored by direct dot product (f64 accumulation over f32
// features, matching the engine's stated arithmetic), then a full sort with
// the canonical tie rule.
inline std::vector<RankedCandidate>
full_sort_ranking(const std::vector<FlatInstance>& gallery, const Vec& t) {
  std::vector<RankedCandidate> out;
  out.reserve(gallery.size());
  for (const FlatInstance& g : gallery) {
    double s = 0.0;
    for (std::size_t d = 0; d < t.size(); ++d) {
      s += t[d] * static_cast<double>(g.feature[d]);
    }
    out.push_back(RankedCandidate{g.image_id, g.instance_id, s, g.predicted_box});
  }
  std::sort(out.begin(), out.end(), [](const RankedCandidate& a, const RankedCandidate& b) {
    if (a.score != b.score) {
      return a.score > b.score;
    }
    if (a.image_id != b.image_id) {
      return a.image_id < b.image_id;
    }
    return a.instance_id < b.instance_id;
  });
  return out;
}

inline double
brute_box_recall(const std::vector<std::vector<RankedCandidate>>& rankings,
                 const std::vector<FlatQuery>& queries, std::size_t k, double tau, bool strict) {
  std::size_t hits = 0;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const std::size_t top = std::min(k, rankings[q].size());
    for (std::size_t i = 0; i < top; ++i) {
      const RankedCandidate& c = rankings[q][i];
      const bool identity = strict ? (c.image_id == queries[q].gt_image_id &&
                                      c.instance_id == queries[q].gt_instance_id)
                                   : c.image_id == queries[q].gt_image_id;
      if (identity && exact_iou(c.predicted_box, queries[q].gt_box) > tau) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

inline double
brute_recall(const std::vector<std::vector<RankedCandidate>>& rankings,
             const std::vector<FlatQuery>& queries, std::size_t k) {
  std::size_t hits = 0;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    // image score = best instance score, first appearance in the sorted list
    std::vector<std::int64_t> seen;
    for (const RankedCandidate& c : rankings[q]) {
      if (std::find(seen.begin(), seen.end(), c.image_id) == seen.end()) {
        seen.push_back(c.image_id);
      }
    }
    const std::size_t top = std::min(k, seen.size());
    for (std::size_t i = 0; i < top; ++i) {
      if (seen[i] == queries[q].gt_image_id) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

inline double
brute_precision(const std::vector<std::pair<Box, Box>>& pairs, double tau) {
  std::size_t hits = 0;
  for (const auto& [pred, gt] : pairs) {
    hits += exact_iou(pred, gt) > tau ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

}  // namespace reir::oracle
