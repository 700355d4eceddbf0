// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "common.hpp"
#include "oracles.hpp"
#include "reir/metrics.hpp"

using namespace reir;
using testutil::thrown_kind;

namespace {

Box
random_box(Xoshiro256& rng) {
  return Box{rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0), rng.uniform(0.1, 1.5),
             rng.uniform(0.1, 1.5)};
}

// A pred box overlapping gt by a random amount, so IoU values spread over
// (0, 1] instead of clustering near zero.
Box
jittered_box(Xoshiro256& rng, const Box& gt) {
  Box b = gt;
  b.x += rng.uniform(-0.4, 0.4) * gt.w;
  b.y += rng.uniform(-0.4, 0.4) * gt.h;
  b.w *= rng.uniform(0.6, 1.5);
  b.h *= rng.uniform(0.6, 1.5);
  return b;
}

struct RandomGallery {
  std::vector<oracle::FlatInstance> instances;
  std::vector<oracle::FlatQuery> queries;
};

RandomGallery
random_gallery(Xoshiro256& rng, std::size_t max_images, std::size_t max_per, std::size_t dim) {
  RandomGallery g;
  const std::size_t n_images = 1 + rng.below(max_images);
  for (std::size_t k = 0; k < n_images; ++k) {
    const std::int64_t image_id = 100 + 3 * static_cast<std::int64_t>(k);
    const std::size_t n_inst = 1 + rng.below(max_per);
    for (std::size_t l = 0; l < n_inst; ++l) {
      oracle::FlatInstance inst;
      inst.image_id = image_id;
      inst.instance_id = 10 + static_cast<std::int64_t>(l);
      for (std::size_t d = 0; d < dim; ++d) {
        inst.feature.push_back(static_cast<float>(rng.normal()));
      }
      inst.gt_box = random_box(rng);
      inst.predicted_box = jittered_box(rng, inst.gt_box);
      g.instances.push_back(inst);
    }
  }
  // One query per image, aimed at a random instance of it; the expression
  // embedding is that instance's feature plus noise, so rankings vary.
  for (std::size_t k = 0; k < n_images; ++k) {
    std::vector<const oracle::FlatInstance*> of_image;
    for (const auto& inst : g.instances) {
      if (inst.image_id == 100 + 3 * static_cast<std::int64_t>(k)) {
        of_image.push_back(&inst);
      }
    }
    const oracle::FlatInstance* target = of_image[rng.below(of_image.size())];
    oracle::FlatQuery q;
    q.gt_image_id = target->image_id;
    q.gt_instance_id = target->instance_id;
    q.gt_box = target->gt_box;
    for (float v : target->feature) {
      q.t.push_back(static_cast<double>(v) + 0.8 * rng.normal());
    }
    g.queries.push_back(q);
  }
  return g;
}

std::vector<std::vector<RankedCandidate>>
all_rankings(const RandomGallery& g) {
  std::vector<std::vector<RankedCandidate>> out;
  for (const auto& q : g.queries) {
    out.push_back(oracle::full_sort_ranking(g.instances, q.t));
  }
  return out;
}

std::vector<QueryGroundTruth>
ground_truth_of(const RandomGallery& g) {
  std::vector<QueryGroundTruth> out;
  for (const auto& q : g.queries) {
    out.push_back(QueryGroundTruth{q.gt_image_id, q.gt_instance_id, q.gt_box});
  }
  return out;
}

}  // namespace

TEST_CASE("iou reproduces the pinned geometry") {
  SUBCASE("identical dyadic boxes overlap fully") {
    const Box b{0.25, 0.5, 1.5, 0.75};
    CHECK(iou(b, b) == 1.0);
  }

  SUBCASE("disjoint boxes overlap not at all") {
    CHECK(iou(Box{0.0, 0.0, 1.0, 1.0}, Box{5.0, 5.0, 1.0, 1.0}) == 0.0);
    CHECK(iou(Box{0.0, 0.0, 1.0, 1.0}, Box{1.0, 0.0, 1.0, 1.0}) == 0.0);  // touching edges
  }

  SUBCASE("unit-offset 2x2 squares overlap by one seventh") {
    const Box a{0.0, 0.0, 2.0, 2.0};
    const Box b{1.0, 1.0, 2.0, 2.0};
    CHECK(iou(a, b) == doctest::Approx(1.0 / 7.0).epsilon(1e-14));
    CHECK(std::abs(iou(a, b) - oracle::raster_iou(a, b)) < 2e-3);
  }
}

TEST_CASE("iou is symmetric and invariant under joint rigid motions") {
  Xoshiro256 rng(201);
  for (int trial = 0; trial < 200; ++trial) {
    const Box a = random_box(rng);
    const Box b = random_box(rng);
    const double base = iou(a, b);
    CHECK(base >= 0.0);
    CHECK(base <= 1.0);
    CHECK(iou(b, a) == base);

    const double dx = rng.uniform(-10.0, 10.0);
    const double dy = rng.uniform(-10.0, 10.0);
    const double translated =
        iou(Box{a.x + dx, a.y + dy, a.w, a.h}, Box{b.x + dx, b.y + dy, b.w, b.h});
    CHECK(std::abs(translated - base) < 1e-12);

    const double c = rng.uniform(0.5, 3.0);
    const double scaled =
        iou(Box{a.x * c, a.y * c, a.w * c, a.h * c}, Box{b.x * c, b.y * c, b.w * c, b.h * c});
    CHECK(std::abs(scaled - base) < 1e-12);

    CHECK(std::abs(base - oracle::exact_iou(a, b)) < 1e-12);
  }
}

TEST_CASE("giou_terms reproduces the pinned areas") {
  SUBCASE("identical boxes: unit iou, enclosing equals union") {
    const Box b{0.5, 0.25, 2.0, 0.5};
    const GiouTerms t = giou_terms(b, b);
    CHECK(t.iou == 1.0);
    CHECK(t.enclosing == 1.0);   // 2.0 * 0.5
    CHECK(t.union_area == 1.0);
  }

  SUBCASE("unit boxes nine apart") {
    const GiouTerms t = giou_terms(Box{0.0, 0.0, 1.0, 1.0}, Box{9.0, 0.0, 1.0, 1.0});
    CHECK(t.iou == 0.0);
    CHECK(t.enclosing == 10.0);
    CHECK(t.union_area == 2.0);
  }

  SUBCASE("nested boxes: enclosing is the outer area") {
    const Box outer{0.0, 0.0, 4.0, 2.0};
    const Box inner{1.0, 0.5, 1.0, 1.0};
    const GiouTerms t = giou_terms(outer, inner);
    CHECK(t.enclosing == 8.0);
    CHECK(t.union_area == 8.0);  // inner is contained
    CHECK(t.iou == doctest::Approx(1.0 / 8.0).epsilon(1e-14));
  }

  SUBCASE("enclosing dominates union on random boxes") {
    Xoshiro256 rng(202);
    for (int trial = 0; trial < 200; ++trial) {
      const GiouTerms t = giou_terms(random_box(rng), random_box(rng));
      CHECK(t.enclosing >= t.union_area);
      CHECK(t.union_area > 0.0);
    }
  }
}

TEST_CASE("precision_at_iou counts strictly-above-threshold pairs") {
  const Box unit{0.0, 0.0, 1.0, 1.0};

  SUBCASE("identical pairs all pass, disjoint pairs all fail") {
    const std::vector<std::pair<Box, Box>> same = {{unit, unit}, {unit, unit}};
    CHECK(precision_at_iou(same, 0.5) == 1.0);
    const Box far{7.0, 7.0, 1.0, 1.0};
    const std::vector<std::pair<Box, Box>> apart = {{far, unit}, {far, unit}};
    CHECK(precision_at_iou(apart, 0.5) == 0.0);
  }

  SUBCASE("three of four above the bar gives 0.75") {
    const Box far{7.0, 7.0, 1.0, 1.0};
    const std::vector<std::pair<Box, Box>> pairs = {
        {unit, unit}, {unit, unit}, {unit, unit}, {far, unit}};
    CHECK(precision_at_iou(pairs, 0.5) == 0.75);
  }

  SUBCASE("a pair exactly at the threshold does not count") {
    // Nested half-height box: intersection 0.5, union 1.0, IoU exactly 0.5.
    const Box half{0.0, 0.0, 1.0, 0.5};
    const std::vector<std::pair<Box, Box>> pairs = {{half, unit}};
    CHECK(iou(half, unit) == 0.5);
    CHECK(precision_at_iou(pairs, 0.5) == 0.0);
    CHECK(precision_at_iou(pairs, 0.25) == 1.0);
  }

  SUBCASE("the empty pair list is rejected, not reported as zero") {
    CHECK(thrown_kind([] { precision_at_iou({}, 0.5); }) == ErrorKind::kInvalidArgument);
  }

  SUBCASE("matches the brute enumeration on random pairs") {
    Xoshiro256 rng(203);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<std::pair<Box, Box>> pairs;
      const std::size_t n = 1 + rng.below(12);
      for (std::size_t i = 0; i < n; ++i) {
        const Box gt = random_box(rng);
        pairs.emplace_back(jittered_box(rng, gt), gt);
      }
      for (double tau : {0.3, 0.5, 0.7}) {
        CHECK(precision_at_iou(pairs, tau) == oracle::brute_precision(pairs, tau));
      }
    }
  }
}

TEST_CASE("sort_candidates applies the canonical tie rule") {
  std::vector<RankedCandidate> c = {
      {7, 2, 1.0, {}}, {3, 9, 2.0, {}}, {7, 1, 1.0, {}}, {2, 5, 1.0, {}}, {3, 1, 3.0, {}},
  };
  sort_candidates(c);
  // score desc first
  CHECK(c[0].image_id == 3);
  CHECK(c[0].score == 3.0);
  CHECK(c[1].score == 2.0);
  // then the three score-1.0 ties: image_id asc, instance_id asc
  CHECK(c[2].image_id == 2);
  CHECK(c[3].image_id == 7);
  CHECK(c[3].instance_id == 1);
  CHECK(c[4].image_id == 7);
  CHECK(c[4].instance_id == 2);
}

TEST_CASE("image_ranking keeps first appearance of each image") {
  const std::vector<RankedCandidate> sorted = {
      {20, 1, 5.0, {}}, {10, 3, 4.0, {}}, {20, 2, 3.0, {}}, {30, 1, 2.0, {}}, {10, 1, 1.0, {}},
  };
  const std::vector<std::int64_t> order = image_ranking(sorted);
  CHECK(order == std::vector<std::int64_t>{20, 10, 30});
}

TEST_CASE("recall_at_k reproduces the pinned enumeration") {
  // Two queries over a three-image gallery: gt ranked 1st for the first
  // query and 3rd for the second.
  const std::vector<std::vector<std::int64_t>> rankings = {{10, 20, 30}, {20, 30, 10}};
  const std::vector<std::int64_t> gt = {10, 10};
  CHECK(recall_at_k(rankings, gt, 1) == 0.5);
  CHECK(recall_at_k(rankings, gt, 2) == 0.5);
  CHECK(recall_at_k(rankings, gt, 3) == 1.0);
  CHECK(recall_at_k(rankings, gt, 5) == 1.0);  // k beyond the gallery clamps
}

TEST_CASE("box_recall_at_k reproduces the pinned enumeration") {
  const Box gt_box{0.0, 0.0, 1.0, 1.0};
  const Box iou08{0.0, 0.0, 1.0, 0.8};  // nested: IoU exactly 0.8
  const Box iou06{0.0, 0.0, 1.0, 0.6};  // nested: IoU exactly 0.6
  const Box iou04{0.0, 0.0, 1.0, 0.4};  // nested: IoU exactly 0.4
  const Box elsewhere{9.0, 9.0, 1.0, 1.0};

  // Query 0: its referent leads the ranking with a good box. Query 1: two
  // foreign-image candidates outscore the referent sitting at rank 3.
  const std::vector<std::vector<RankedCandidate>> rankings = {
      {{10, 1, 9.0, iou08}, {20, 1, 8.0, elsewhere}, {30, 1, 7.0, elsewhere}},
      {{20, 1, 9.0, elsewhere}, {30, 1, 8.0, elsewhere}, {10, 1, 7.0, iou06}},
  };
  const std::vector<QueryGroundTruth> gt = {{10, 1, gt_box}, {10, 1, gt_box}};

  for (IdentityMode mode : {IdentityMode::kStrict, IdentityMode::kIou}) {
    CHECK(box_recall_at_k(rankings, gt, 1, 0.5, mode) == 0.5);
    CHECK(box_recall_at_k(rankings, gt, 5, 0.5, mode) == 1.0);
  }

  SUBCASE("rank alone does not rescue a bad box") {
    const std::vector<std::vector<RankedCandidate>> bad = {{{10, 1, 9.0, iou04}}};
    const std::vector<QueryGroundTruth> one = {{10, 1, gt_box}};
    CHECK(box_recall_at_k(bad, one, 1, 0.5, IdentityMode::kStrict) == 0.0);
    CHECK(box_recall_at_k(bad, one, 1, 0.3, IdentityMode::kStrict) == 1.0);
  }

  SUBCASE("the IoU gate is strict") {
    const Box iou05{0.0, 0.0, 1.0, 0.5};
    const std::vector<std::vector<RankedCandidate>> edge = {{{10, 1, 9.0, iou05}}};
    const std::vector<QueryGroundTruth> one = {{10, 1, gt_box}};
    CHECK(box_recall_at_k(edge, one, 1, 0.5, IdentityMode::kStrict) == 0.0);
  }

  SUBCASE("an empty candidate list is a miss, not an error") {
    const std::vector<std::vector<RankedCandidate>> none = {{}};
    const std::vector<QueryGroundTruth> one = {{10, 1, gt_box}};
    CHECK(box_recall_at_k(none, one, 1, 0.5, IdentityMode::kStrict) == 0.0);
  }
}

TEST_CASE("metric algebra holds on randomized rankings") {
  Xoshiro256 rng(204);
  const std::vector<std::size_t> ks = {1, 2, 3, 5, 10};
  const std::vector<double> taus = {0.3, 0.5, 0.7, 0.9};

  for (int trial = 0; trial < 200; ++trial) {
    const RandomGallery g = random_gallery(rng, 8, 4, 5);
    const auto rankings = all_rankings(g);
    const auto gt = ground_truth_of(g);

    std::vector<std::vector<std::int64_t>> img_rankings;
    std::vector<std::int64_t> gt_images;
    for (std::size_t q = 0; q < rankings.size(); ++q) {
      img_rankings.push_back(image_ranking(rankings[q]));
      gt_images.push_back(gt[q].gt_image_id);
    }

    for (IdentityMode mode : {IdentityMode::kStrict, IdentityMode::kIou}) {
      double prev_k = -1.0;
      for (std::size_t k : ks) {
        const double br = box_recall_at_k(rankings, gt, k, 0.5, mode);
        CHECK(br >= prev_k);  // non-decreasing in k
        prev_k = br;

        double prev_tau = 2.0;
        for (double tau : taus) {
          const double v = box_recall_at_k(rankings, gt, k, tau, mode);
          CHECK(v >= 0.0);
          CHECK(v <= 1.0);
          CHECK(v <= prev_tau);  // non-increasing in tau
          prev_tau = v;
          CHECK(v <= recall_at_k(img_rankings, gt_images, k));  // box recall caps at image recall
        }
      }
    }
  }
}

TEST_CASE("library metrics equal brute enumeration on 100 random galleries") {
  Xoshiro256 rng(205);
  for (int trial = 0; trial < 100; ++trial) {
    const RandomGallery g = random_gallery(rng, 10, 4, 5);
    const auto rankings = all_rankings(g);
    const auto gt = ground_truth_of(g);

    std::vector<std::vector<std::int64_t>> img_rankings;
    std::vector<std::int64_t> gt_images;
    for (std::size_t q = 0; q < rankings.size(); ++q) {
      img_rankings.push_back(image_ranking(rankings[q]));
      gt_images.push_back(gt[q].gt_image_id);
    }

    for (std::size_t k : {std::size_t{1}, std::size_t{3}, std::size_t{10}}) {
      CHECK(recall_at_k(img_rankings, gt_images, k) ==
            oracle::brute_recall(rankings, g.queries, k));
      for (double tau : {0.3, 0.5, 0.7}) {
        CHECK(box_recall_at_k(rankings, gt, k, tau, IdentityMode::kStrict) ==
              oracle::brute_box_recall(rankings, g.queries, k, tau, true));
        CHECK(box_recall_at_k(rankings, gt, k, tau, IdentityMode::kIou) ==
              oracle::brute_box_recall(rankings, g.queries, k, tau, false));
      }
    }
  }
}

TEST_CASE("evaluate_rankings fills the grid cell-by-cell") {
  Xoshiro256 rng(206);
  const RandomGallery g = random_gallery(rng, 10, 4, 5);
  const auto rankings = all_rankings(g);
  const auto gt = ground_truth_of(g);

  // Grounding pairs: best candidate within each query's own image.
  std::vector<std::pair<Box, Box>> grounding;
  for (std::size_t q = 0; q < rankings.size(); ++q) {
    for (const RankedCandidate& c : rankings[q]) {
      if (c.image_id == gt[q].gt_image_id) {
        grounding.emplace_back(c.predicted_box, gt[q].gt_box);
        break;
      }
    }
  }

  EvalSpec spec;
  spec.ks = {1, 5, 10};
  spec.taus = {0.5, 0.7, 0.9};
  spec.identity_mode = IdentityMode::kStrict;
  const MetricReport report = evaluate_rankings(rankings, gt, grounding, spec);

  CHECK(report.n_queries == rankings.size());
  std::vector<std::vector<std::int64_t>> img_rankings;
  std::vector<std::int64_t> gt_images;
  for (std::size_t q = 0; q < rankings.size(); ++q) {
    img_rankings.push_back(image_ranking(rankings[q]));
    gt_images.push_back(gt[q].gt_image_id);
  }
  for (std::size_t k : spec.ks) {
    CHECK(report.recall_at_k.at(k) == recall_at_k(img_rankings, gt_images, k));
    for (double tau : spec.taus) {
      CHECK(report.box_recall.at({k, tau}) ==
            box_recall_at_k(rankings, gt, k, tau, spec.identity_mode));
    }
  }
  for (double tau : spec.taus) {
    CHECK(report.precision_at_iou.at(tau) == precision_at_iou(grounding, tau));
  }
}

TEST_CASE("EvalSpec rejects malformed grids") {
  EvalSpec good;
  good.ks = {1, 5, 10};
  good.taus = {0.5, 0.7, 0.9};
  good.validate();  // must not throw

  EvalSpec empty_ks = good;
  empty_ks.ks.clear();
  CHECK(thrown_kind([&] { empty_ks.validate(); }) == ErrorKind::kInvalidArgument);

  EvalSpec unsorted = good;
  unsorted.ks = {5, 1};
  CHECK(thrown_kind([&] { unsorted.validate(); }) == ErrorKind::kInvalidArgument);

  EvalSpec zero_k = good;
  zero_k.ks = {0, 1};
  CHECK(thrown_kind([&] { zero_k.validate(); }) == ErrorKind::kInvalidArgument);

  EvalSpec tau_high = good;
  tau_high.taus = {0.5, 1.0};
  CHECK(thrown_kind([&] { tau_high.validate(); }) == ErrorKind::kInvalidArgument);

  EvalSpec tau_unsorted = good;
  tau_unsorted.taus = {0.7, 0.5};
  CHECK(thrown_kind([&] { tau_unsorted.validate(); }) == ErrorKind::kInvalidArgument);
}
