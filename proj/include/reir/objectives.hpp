// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "reir/box.hpp"
#include "reir/error.hpp"
#include "reir/numerics.hpp"

namespace reir {

// Learnable temperature and bias applied to dot products inside the
// contrastive loss. The temperature is stored as log t so t stays positive.
struct CliaParams {
  double log_t = 0.0;
  double b = 0.0;

  double
  temperature() const {
    return std::exp(log_t);
  }
};

// The unique positive (image, instance) coordinate for one query; every other
// pair in the batch gallery is implicitly a negative.
struct MatchLabel {
  std::size_t query = 0;
  std::size_t image = 0;
  std::size_t instance = 0;
};

struct LossWeights {
  double w_retrieve = 1.0;  // scales contrastive + focal in the finetune total
  double w_box = 5.0;       // scales the box term in the finetune total
  double lambda_giou = 1.0;
  double lambda_l1 = 1.0;
};

struct FocalConfig {
  double gamma = 2.0;
  double alpha = 0.25;  // weight on positive pairs
  // true: negatives weighted 1 - alpha (standard convention); false: constant
  // alpha on both classes (literal single-value reading).
  bool alpha_switching = true;
};

// Per-term values are stored unweighted; `total` is the stage-appropriate
// weighted sum.
struct LossBreakdown {
  double clia = 0.0;
  double focal = 0.0;
  double box_l1 = 0.0;
  double box_giou = 0.0;
  double total = 0.0;
};

// ---------------------------------------------------------------------------
// Contrastive language-instance alignment.
//
//   loss = (1 / (B*N)) sum_{i,k,l} softplus(z * (b - t * <T_i, O_k^l>))
//
// with z = +1 on each query's unique ground-truth pair and -1 elsewhere, B
// queries and N total gallery instances. Gradients are analytic.
struct CliaGrads {
  std::vector<Vec> d_queries;
  std::vector<std::vector<Vec>> d_instances;
  double d_log_t = 0.0;
  double d_b = 0.0;
};

struct CliaResult {
  double loss = 0.0;
  CliaGrads grads;
};

CliaResult clia_loss(const std::vector<Vec>& queries,
                     const std::vector<std::vector<Vec>>& gallery,
                     const std::vector<MatchLabel>& labels, const CliaParams& p);

// Focal binary matching loss on a raw similarity score s, p = sigmoid(s):
//   L = -alpha_t * (1 - p_t)^gamma * log(p_t),  p_t = p or 1-p per class.
struct FocalResult {
  double loss = 0.0;
  double d_s = 0.0;
};

FocalResult focal_loss(double s, bool positive, const FocalConfig& cfg);

// Box regression: lambda_giou * (1 - GIoU) + lambda_l1 * sum |pred_c - gt_c|.
// `giou_term` and `l1_term` are pre-weighting; `d_pred` differentiates the
// weighted `loss`.
struct BoxLossResult {
  double giou_term = 0.0;
  double l1_term = 0.0;
  double loss = 0.0;
  BoxGrad d_pred;
};

BoxLossResult box_loss(const Box& pred, const Box& gt, double lambda_giou, double lambda_l1);

// ---------------------------------------------------------------------------
// Stage objectives. The batch carries forward-computed values only; gradients
// flow back through the encoders outside this module.
struct StageBatch {
  int stage = 1;
  // Batch gallery, image-major: features[k][l] is instance l of image k.
  std::vector<std::vector<Vec>> features;
  std::vector<std::vector<Box>> pred_boxes;
  std::vector<std::vector<Box>> gt_boxes;
  std::vector<Vec> refined;         // one refined expression embedding per query
  std::vector<MatchLabel> labels;   // labels[i].query == i
};

struct StageGrads {
  std::vector<std::vector<Vec>> d_features;
  std::vector<std::vector<BoxGrad>> d_pred_boxes;
  std::vector<Vec> d_refined;
  double d_log_t = 0.0;
  double d_b = 0.0;
};

struct StageResult {
  LossBreakdown breakdown;
  StageGrads grads;
};

// Grounding pretraining: focal + box, contrastive term forced to zero. Focal
// positives are each query's ground-truth instance within its own image,
// negatives the other instances of that image.
StageResult pretrain_loss(const StageBatch& batch, const FocalConfig& focal_cfg,
                          const LossWeights& weights);

// Full finetuning: w_retrieve * (clia + focal) + w_box * box. `use_clia`
// false drops the contrastive term (ablation) while keeping the rest.
StageResult finetune_loss(const StageBatch& batch, const CliaParams& p,
                          const FocalConfig& focal_cfg, const LossWeights& weights,
                          bool use_clia = true);

}  // namespace reir
