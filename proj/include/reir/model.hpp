// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <utility>

#include "reir/box.hpp"
#include "reir/more.hpp"
#include "reir/numerics.hpp"
#include "reir/objectives.hpp"

namespace reir {

// One candidate object. `raw` is the synthetic input feature (appearance
// latent plus neighborhood context), `feature` the encoded embedding scored
// against refined expressions.
struct InstanceRecord {
  std::int64_t image_id = 0;
  std::int64_t instance_id = 0;
  Vec raw;
  Vec feature;
  Box box;     // predicted (or stored) box
  Box gt_box;  // annotation
};

// One referring expression. Exactly one ground-truth instance per query.
struct QueryRecord {
  std::int64_t query_id = 0;
  Vec raw;        // synthetic expression embedding
  Vec f_t;        // expression encoder output
  Vec t_refined;  // refined embedding used for scoring
  std::int64_t gt_image_id = 0;
  std::int64_t gt_instance_id = 0;
  Box gt_box;
  bool relation_dependent = false;
};

struct ModelDims {
  std::size_t d_raw = 32;   // instance raw feature width
  std::size_t d_txt = 32;   // expression raw embedding width
  std::size_t d_embed = 32; // shared scoring dimension D
  std::size_t hidden = 128;
};

// The full toy model: instance encoder standing in for the vision branch,
// expression encoder plus MORE standing in for the text branch, box head on
// top of instance features.
struct ToyModelParams {
  FeedForward instance_encoder;    // d_raw -> D
  FeedForward expression_encoder;  // d_txt -> more dim_in
  MoreParams more;
  FeedForward box_head;  // D -> 4, outputs (x, y, log w, log h)
  CliaParams clia;
};

struct ToyModelGrad {
  FeedForwardGrad instance_encoder;
  FeedForwardGrad expression_encoder;
  MoreGrad more;
  FeedForwardGrad box_head;
  double d_log_t = 0.0;
  double d_b = 0.0;
};

ToyModelParams init_model(const ModelDims& dims, const MoreConfig& more_cfg, Xoshiro256& rng,
                          double clia_log_t, double clia_b);
ToyModelGrad make_zero_grad(const ToyModelParams& p);

// O = instance_encoder(raw); the box head output is read as
// (x, y, log w, log h) so decoded boxes always have positive extent.
struct EncodedInstance {
  Vec feature;
  Box box;
};
EncodedInstance encode_instance(const ToyModelParams& p, const Vec& raw);

// Backward through box head and instance encoder.
// d_feature: dL/dO from similarity terms. d_box: dL/d(decoded box).
void encode_instance_backward(const ToyModelParams& p, const Vec& raw, const Vec& d_feature,
                              const BoxGrad& d_box, ToyModelGrad& grad);

// T = more(expression_encoder(raw)); k_routed == 0 disables the routed bank.
Vec encode_expression(const ToyModelParams& p, const Vec& raw, std::size_t k_routed);
void encode_expression_backward(const ToyModelParams& p, const Vec& raw, std::size_t k_routed,
                                const Vec& d_refined, ToyModelGrad& grad);

// Trace-carrying variants for training: bit-equal to the plain calls, but the
// backward reuses the stored intermediates instead of rerunning the forwards.
struct InstanceTrace {
  FfnTrace encoder;
  FfnTrace box_head;
};
EncodedInstance encode_instance_trace(const ToyModelParams& p, const Vec& raw,
                                      InstanceTrace& trace);
void encode_instance_backward_trace(const ToyModelParams& p, const Vec& raw,
                                    const InstanceTrace& trace, const Vec& d_feature,
                                    const BoxGrad& d_box, ToyModelGrad& grad);

struct ExpressionTrace {
  FfnTrace encoder;
  MoreTrace more;
};
Vec encode_expression_trace(const ToyModelParams& p, const Vec& raw, std::size_t k_routed,
                            ExpressionTrace& trace);
void encode_expression_backward_trace(const ToyModelParams& p, const Vec& raw,
                                      const ExpressionTrace& trace, const Vec& d_refined,
                                      ToyModelGrad& grad);

// Plain dot product; temperature and bias live in the loss, not here.
double similarity(const Vec& t_refined, const Vec& feature);

// Canonical traversal order: instance encoder, expression encoder, MORE,
// box head, then (log_t, b).
void append_values(const ToyModelParams& p, Vec& out);
void append_values(const ToyModelGrad& g, Vec& out);
std::size_t read_values(ToyModelParams& p, const Vec& flat, std::size_t offset);
std::size_t value_count(const ToyModelParams& p);

// Half-open [begin, end) ranges of each component inside the canonical flat
// vector. The ranges tile [0, value_count) in order.
struct ParamSections {
  using Range = std::pair<std::size_t, std::size_t>;
  Range instance_encoder;
  Range expression_encoder;
  Range shared_experts;
  Range routed_experts;
  Range gating;
  Range box_head;
  Range clia;
};
ParamSections param_sections(const ToyModelParams& p);

}  // namespace reir
