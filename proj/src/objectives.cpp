// SPDX-License-Identifier: Apache-2.0

#include "reir/objectives.hpp"

#include <algorithm>
#include <cmath>

namespace reir {

namespace {

double
dot(const Vec& a, const Vec& b) {
  require(a.size() == b.size(), ErrorKind::kDimensionMismatch,
          "objectives: embedding lengths differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    acc += a[i] * b[i];
  }
  return acc;
}

void
axpy(double a, const Vec& x, Vec& y) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] += a * x[i];
  }
}

std::size_t
check_labels(const std::vector<MatchLabel>& labels, std::size_t n_queries,
             const std::vector<std::vector<Vec>>& gallery) {
  require(labels.size() == n_queries, ErrorKind::kInvalidArgument,
          "labels: exactly one positive per query required");
  std::size_t total = 0;
  for (const auto& image : gallery) {
    total += image.size();
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const MatchLabel& m = labels[i];
    require(m.query == i, ErrorKind::kInvalidArgument, "labels: must be ordered by query");
    require(m.image < gallery.size() && m.instance < gallery[m.image].size(),
            ErrorKind::kInvalidArgument, "labels: positive coordinate outside the gallery");
  }
  return total;
}

struct StageShape {
  std::size_t n_instances = 0;
  std::size_t n_focal_pairs = 0;
};

StageShape
check_batch(const StageBatch& batch) {
  const std::size_t k_images = batch.features.size();
  require(batch.pred_boxes.size() == k_images && batch.gt_boxes.size() == k_images,
          ErrorKind::kDimensionMismatch, "batch: box lists must align with features");
  for (std::size_t k = 0; k < k_images; ++k) {
    require(batch.pred_boxes[k].size() == batch.features[k].size() &&
                batch.gt_boxes[k].size() == batch.features[k].size(),
            ErrorKind::kDimensionMismatch, "batch: per-image box counts must align");
  }
  StageShape shape;
  shape.n_instances = check_labels(batch.labels, batch.refined.size(), batch.features);
  require(shape.n_instances > 0 && !batch.refined.empty(), ErrorKind::kInvalidArgument,
          "batch: queries and gallery must be non-empty");
  for (const MatchLabel& m : batch.labels) {
    shape.n_focal_pairs += batch.features[m.image].size();
  }
  return shape;
}

StageGrads
make_zero_stage_grads(const StageBatch& batch) {
  StageGrads g;
  g.d_features.resize(batch.features.size());
  g.d_pred_boxes.resize(batch.features.size());
  for (std::size_t k = 0; k < batch.features.size(); ++k) {
    g.d_features[k].assign(batch.features[k].size(), Vec());
    for (std::size_t l = 0; l < batch.features[k].size(); ++l) {
      g.d_features[k][l].assign(batch.features[k][l].size(), 0.0);
    }
    g.d_pred_boxes[k].assign(batch.features[k].size(), BoxGrad{});
  }
  g.d_refined.resize(batch.refined.size());
  for (std::size_t i = 0; i < batch.refined.size(); ++i) {
    g.d_refined[i].assign(batch.refined[i].size(), 0.0);
  }
  return g;
}

// Focal terms over each query's own image; gradients scaled by `weight`
// (stage weight divided by the pair count).
double
accumulate_focal(const StageBatch& batch, const FocalConfig& cfg, double weight,
                 StageGrads& grads) {
  double sum = 0.0;
  for (std::size_t i = 0; i < batch.refined.size(); ++i) {
    const std::size_t k = batch.labels[i].image;
    for (std::size_t l = 0; l < batch.features[k].size(); ++l) {
      const double s = dot(batch.refined[i], batch.features[k][l]);
      const bool positive = (l == batch.labels[i].instance);
      const FocalResult fr = focal_loss(s, positive, cfg);
      sum += fr.loss;
      axpy(weight * fr.d_s, batch.features[k][l], grads.d_refined[i]);
      axpy(weight * fr.d_s, batch.refined[i], grads.d_features[k][l]);
    }
  }
  return sum;
}

struct BoxTermSums {
  double giou = 0.0;
  double l1 = 0.0;
};

// Box regression over every gallery instance; gradients scaled by `weight`
// (stage weight divided by the instance count).
BoxTermSums
accumulate_box(const StageBatch& batch, const LossWeights& weights, double weight,
               StageGrads& grads) {
  BoxTermSums sums;
  for (std::size_t k = 0; k < batch.features.size(); ++k) {
    for (std::size_t l = 0; l < batch.features[k].size(); ++l) {
      const BoxLossResult r =
          box_loss(batch.pred_boxes[k][l], batch.gt_boxes[k][l], weights.lambda_giou,
                   weights.lambda_l1);
      sums.giou += r.giou_term;
      sums.l1 += r.l1_term;
      BoxGrad& g = grads.d_pred_boxes[k][l];
      g.x += weight * r.d_pred.x;
      g.y += weight * r.d_pred.y;
      g.w += weight * r.d_pred.w;
      g.h += weight * r.d_pred.h;
    }
  }
  return sums;
}

}  // namespace

CliaResult
clia_loss(const std::vector<Vec>& queries, const std::vector<std::vector<Vec>>& gallery,
          const std::vector<MatchLabel>& labels, const CliaParams& p) {
  require(!queries.empty(), ErrorKind::kInvalidArgument, "clia_loss: no queries");
  const std::size_t n_total = check_labels(labels, queries.size(), gallery);
  require(n_total > 0, ErrorKind::kInvalidArgument, "clia_loss: empty gallery");
  require(std::isfinite(p.log_t) && std::isfinite(p.b), ErrorKind::kInvalidArgument,
          "clia_loss: non-finite temperature or bias");

  CliaResult r;
  r.grads.d_queries.resize(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    r.grads.d_queries[i].assign(queries[i].size(), 0.0);
  }
  r.grads.d_instances.resize(gallery.size());
  for (std::size_t k = 0; k < gallery.size(); ++k) {
    r.grads.d_instances[k].resize(gallery[k].size());
    for (std::size_t l = 0; l < gallery[k].size(); ++l) {
      r.grads.d_instances[k][l].assign(gallery[k][l].size(), 0.0);
    }
  }

  const double t = p.temperature();
  // Normalizer B*N with N read as the mean per-image gallery size, so the
  // loss is a per-query mean of per-image pair sums. Normalizing by the
  // total pair count instead would shrink each query's one positive pair
  // (and every hard cross-image negative) by the whole gallery size, making
  // the contrastive gradient vanish against the grounding terms as galleries
  // grow.
  const double mean_per_image = static_cast<double>(n_total) / static_cast<double>(gallery.size());
  const double scale = 1.0 / (static_cast<double>(queries.size()) * mean_per_image);
  double d_t = 0.0;

  for (std::size_t i = 0; i < queries.size(); ++i) {
    const MatchLabel& m = labels[i];
    for (std::size_t k = 0; k < gallery.size(); ++k) {
      for (std::size_t l = 0; l < gallery[k].size(); ++l) {
        const double s = dot(queries[i], gallery[k][l]);
        const double z = (k == m.image && l == m.instance) ? 1.0 : -1.0;
        const double u = z * (p.b - t * s);
        r.loss += scale * softplus(u);
        const double g = scale * sigmoid(u);
        const double d_s = g * (-z * t);
        axpy(d_s, gallery[k][l], r.grads.d_queries[i]);
        axpy(d_s, queries[i], r.grads.d_instances[k][l]);
        d_t += g * (-z * s);
        r.grads.d_b += g * z;
      }
    }
  }
  r.grads.d_log_t = d_t * t;
  return r;
}

FocalResult
focal_loss(double s, bool positive, const FocalConfig& cfg) {
  require(std::isfinite(s), ErrorKind::kInvalidArgument, "focal_loss: non-finite score");
  require(cfg.gamma >= 0.0 && cfg.alpha > 0.0 && cfg.alpha < 1.0, ErrorKind::kInvalidArgument,
          "focal_loss: gamma must be >= 0 and alpha in (0,1)");
  const double alpha_t =
      positive ? cfg.alpha : (cfg.alpha_switching ? 1.0 - cfg.alpha : cfg.alpha);
  // p_t and 1 - p_t via paired sigmoids; log(p_t) via softplus for stability.
  const double p_t = positive ? sigmoid(s) : sigmoid(-s);
  const double q_t = positive ? sigmoid(-s) : sigmoid(s);
  const double log_pt = positive ? -softplus(-s) : -softplus(s);
  const double sign = positive ? 1.0 : -1.0;

  FocalResult r;
  r.loss = -alpha_t * std::pow(q_t, cfg.gamma) * log_pt;
  // d/ds, with dp_t/ds = sign * p_t * (1 - p_t), collapses to a bounded form.
  r.d_s = sign * alpha_t * std::pow(q_t, cfg.gamma) * (cfg.gamma * p_t * log_pt - q_t);
  return r;
}

BoxLossResult
box_loss(const Box& pred, const Box& gt, double lambda_giou, double lambda_l1) {
  require(gt.valid(), ErrorKind::kInvalidArgument, "box_loss: degenerate ground-truth box");
  require(pred.valid(), ErrorKind::kInvalidArgument, "box_loss: degenerate predicted box");
  require(lambda_giou >= 0.0 && lambda_l1 >= 0.0, ErrorKind::kInvalidArgument,
          "box_loss: negative weight");

  const double px1 = pred.x, py1 = pred.y, px2 = pred.x + pred.w, py2 = pred.y + pred.h;
  const double gx1 = gt.x, gy1 = gt.y, gx2 = gt.x + gt.w, gy2 = gt.y + gt.h;

  const double iw = std::min(px2, gx2) - std::max(px1, gx1);
  const double ih = std::min(py2, gy2) - std::max(py1, gy1);
  const bool overlapping = iw > 0.0 && ih > 0.0;
  const double inter = overlapping ? iw * ih : 0.0;
  const double uni = pred.area() + gt.area() - inter;

  const double ew = std::max(px2, gx2) - std::min(px1, gx1);
  const double eh = std::max(py2, gy2) - std::min(py1, gy1);
  const double enclosing = ew * eh;

  BoxLossResult r;
  r.giou_term = 1.0 - inter / uni + (enclosing - uni) / enclosing;
  r.l1_term = std::abs(pred.x - gt.x) + std::abs(pred.y - gt.y) + std::abs(pred.w - gt.w) +
              std::abs(pred.h - gt.h);
  r.loss = lambda_giou * r.giou_term + lambda_l1 * r.l1_term;

  // Gradient over predicted corners (x1, y1, x2, y2), mapped to (x, y, w, h)
  // at the end. Strict comparisons pick one subgradient at boundary ties.
  double d_inter[4] = {0.0, 0.0, 0.0, 0.0};
  if (overlapping) {
    if (px1 > gx1) d_inter[0] = -ih;
    if (py1 > gy1) d_inter[1] = -iw;
    if (px2 < gx2) d_inter[2] = ih;
    if (py2 < gy2) d_inter[3] = iw;
  }
  const double d_area[4] = {-pred.h, -pred.w, pred.h, pred.w};
  const double d_ew[4] = {px1 < gx1 ? -1.0 : 0.0, 0.0, px2 > gx2 ? 1.0 : 0.0, 0.0};
  const double d_eh[4] = {0.0, py1 < gy1 ? -1.0 : 0.0, 0.0, py2 > gy2 ? 1.0 : 0.0};

  double d_corner[4];
  for (int c = 0; c < 4; ++c) {
    const double d_union = d_area[c] - d_inter[c];
    const double d_iou = (d_inter[c] * uni - inter * d_union) / (uni * uni);
    const double d_enc = d_ew[c] * eh + ew * d_eh[c];
    const double d_penalty = (uni * d_enc - d_union * enclosing) / (enclosing * enclosing);
    d_corner[c] = lambda_giou * (-d_iou + d_penalty);
  }

  const auto sgn = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
  r.d_pred.x = d_corner[0] + d_corner[2] + lambda_l1 * sgn(pred.x - gt.x);
  r.d_pred.y = d_corner[1] + d_corner[3] + lambda_l1 * sgn(pred.y - gt.y);
  r.d_pred.w = d_corner[2] + lambda_l1 * sgn(pred.w - gt.w);
  r.d_pred.h = d_corner[3] + lambda_l1 * sgn(pred.h - gt.h);
  return r;
}

StageResult
pretrain_loss(const StageBatch& batch, const FocalConfig& focal_cfg,
              const LossWeights& weights) {
  require(batch.stage == 1, ErrorKind::kInvalidArgument, "pretrain_loss: stage mismatch");
  const StageShape shape = check_batch(batch);

  StageResult r;
  r.grads = make_zero_stage_grads(batch);

  const double focal_sum = accumulate_focal(
      batch, focal_cfg, 1.0 / static_cast<double>(shape.n_focal_pairs), r.grads);
  const BoxTermSums box = accumulate_box(
      batch, weights, 1.0 / static_cast<double>(shape.n_instances), r.grads);

  r.breakdown.clia = 0.0;
  r.breakdown.focal = focal_sum / static_cast<double>(shape.n_focal_pairs);
  r.breakdown.box_giou = box.giou / static_cast<double>(shape.n_instances);
  r.breakdown.box_l1 = box.l1 / static_cast<double>(shape.n_instances);
  r.breakdown.total = r.breakdown.focal + weights.lambda_giou * r.breakdown.box_giou +
                      weights.lambda_l1 * r.breakdown.box_l1;
  return r;
}

StageResult
finetune_loss(const StageBatch& batch, const CliaParams& p, const FocalConfig& focal_cfg,
              const LossWeights& weights, bool use_clia) {
  require(batch.stage == 2, ErrorKind::kInvalidArgument, "finetune_loss: stage mismatch");
  const StageShape shape = check_batch(batch);

  StageResult r;
  r.grads = make_zero_stage_grads(batch);

  const double focal_sum = accumulate_focal(
      batch, focal_cfg, weights.w_retrieve / static_cast<double>(shape.n_focal_pairs), r.grads);
  const BoxTermSums box = accumulate_box(
      batch, weights, weights.w_box / static_cast<double>(shape.n_instances), r.grads);

  r.breakdown.focal = focal_sum / static_cast<double>(shape.n_focal_pairs);
  r.breakdown.box_giou = box.giou / static_cast<double>(shape.n_instances);
  r.breakdown.box_l1 = box.l1 / static_cast<double>(shape.n_instances);

  if (use_clia) {
    const CliaResult clia = clia_loss(batch.refined, batch.features, batch.labels, p);
    r.breakdown.clia = clia.loss;
    for (std::size_t i = 0; i < batch.refined.size(); ++i) {
      axpy(weights.w_retrieve, clia.grads.d_queries[i], r.grads.d_refined[i]);
    }
    for (std::size_t k = 0; k < batch.features.size(); ++k) {
      for (std::size_t l = 0; l < batch.features[k].size(); ++l) {
        axpy(weights.w_retrieve, clia.grads.d_instances[k][l], r.grads.d_features[k][l]);
      }
    }
    r.grads.d_log_t = weights.w_retrieve * clia.grads.d_log_t;
    r.grads.d_b = weights.w_retrieve * clia.grads.d_b;
  }

  r.breakdown.total =
      weights.w_retrieve * (r.breakdown.clia + r.breakdown.focal) +
      weights.w_box * (weights.lambda_giou * r.breakdown.box_giou +
                       weights.lambda_l1 * r.breakdown.box_l1);
  return r;
}

}  // namespace reir
