// SPDX-License-Identifier: Apache-2.0

#include "reir/model.hpp"

#include <cmath>

namespace reir {

ToyModelParams
init_model(const ModelDims& dims, const MoreConfig& more_cfg, Xoshiro256& rng, double clia_log_t,
           double clia_b) {
  require(more_cfg.dim_out == dims.d_embed, ErrorKind::kInvalidArgument,
          "init_model: MORE output dimension must equal the embedding dimension");
  ToyModelParams p;
  p.instance_encoder = init_ffn(dims.d_raw, dims.hidden, dims.d_embed, rng);
  p.expression_encoder = init_ffn(dims.d_txt, dims.hidden, more_cfg.dim_in, rng);
  p.more = init_more(more_cfg, rng);
  p.box_head = init_ffn(dims.d_embed, dims.hidden, 4, rng);
  p.clia.log_t = clia_log_t;
  p.clia.b = clia_b;
  return p;
}

ToyModelGrad
make_zero_grad(const ToyModelParams& p) {
  ToyModelGrad g;
  g.instance_encoder = make_zero_grad(p.instance_encoder);
  g.expression_encoder = make_zero_grad(p.expression_encoder);
  g.more = make_zero_grad(p.more);
  g.box_head = make_zero_grad(p.box_head);
  return g;
}

EncodedInstance
encode_instance(const ToyModelParams& p, const Vec& raw) {
  EncodedInstance out;
  out.feature = ffn_forward(p.instance_encoder, raw);
  const Vec head = ffn_forward(p.box_head, out.feature);
  out.box = Box{head[0], head[1], std::exp(head[2]), std::exp(head[3])};
  return out;
}

void
encode_instance_backward(const ToyModelParams& p, const Vec& raw, const Vec& d_feature,
                         const BoxGrad& d_box, ToyModelGrad& grad) {
  const Vec feature = ffn_forward(p.instance_encoder, raw);
  const Vec head = ffn_forward(p.box_head, feature);
  // chain through the positivity map: w = exp(head[2]), h = exp(head[3])
  const Vec d_head = {d_box.x, d_box.y, d_box.w * std::exp(head[2]), d_box.h * std::exp(head[3])};
  Vec d_feat_total = ffn_backward(p.box_head, feature, d_head, grad.box_head);
  for (std::size_t i = 0; i < d_feat_total.size(); ++i) {
    d_feat_total[i] += d_feature[i];
  }
  ffn_backward(p.instance_encoder, raw, d_feat_total, grad.instance_encoder);
}

Vec
encode_expression(const ToyModelParams& p, const Vec& raw, std::size_t k_routed) {
  return more_forward(p.more, ffn_forward(p.expression_encoder, raw), k_routed);
}

void
encode_expression_backward(const ToyModelParams& p, const Vec& raw, std::size_t k_routed,
                           const Vec& d_refined, ToyModelGrad& grad) {
  const Vec f_t = ffn_forward(p.expression_encoder, raw);
  const Vec d_f_t = more_backward(p.more, f_t, k_routed, d_refined, grad.more);
  ffn_backward(p.expression_encoder, raw, d_f_t, grad.expression_encoder);
}

EncodedInstance
encode_instance_trace(const ToyModelParams& p, const Vec& raw, InstanceTrace& trace) {
  trace.encoder = ffn_forward_trace(p.instance_encoder, raw);
  trace.box_head = ffn_forward_trace(p.box_head, trace.encoder.out);
  const Vec& head = trace.box_head.out;
  EncodedInstance out;
  out.feature = trace.encoder.out;
  out.box = Box{head[0], head[1], std::exp(head[2]), std::exp(head[3])};
  return out;
}

void
encode_instance_backward_trace(const ToyModelParams& p, const Vec& raw, const InstanceTrace& trace,
                               const Vec& d_feature, const BoxGrad& d_box, ToyModelGrad& grad) {
  const Vec& head = trace.box_head.out;
  const Vec d_head = {d_box.x, d_box.y, d_box.w * std::exp(head[2]), d_box.h * std::exp(head[3])};
  Vec d_feat_total =
      ffn_backward_trace(p.box_head, trace.encoder.out, trace.box_head, d_head, grad.box_head);
  for (std::size_t i = 0; i < d_feat_total.size(); ++i) {
    d_feat_total[i] += d_feature[i];
  }
  ffn_backward_trace(p.instance_encoder, raw, trace.encoder, d_feat_total, grad.instance_encoder);
}

Vec
encode_expression_trace(const ToyModelParams& p, const Vec& raw, std::size_t k_routed,
                        ExpressionTrace& trace) {
  trace.encoder = ffn_forward_trace(p.expression_encoder, raw);
  trace.more = more_forward_trace(p.more, trace.encoder.out, k_routed);
  return trace.more.out;
}

void
encode_expression_backward_trace(const ToyModelParams& p, const Vec& raw,
                                 const ExpressionTrace& trace, const Vec& d_refined,
                                 ToyModelGrad& grad) {
  const Vec d_f_t = more_backward_trace(p.more, trace.encoder.out, trace.more, d_refined,
                                        grad.more);
  ffn_backward_trace(p.expression_encoder, raw, trace.encoder, d_f_t, grad.expression_encoder);
}

double
similarity(const Vec& t_refined, const Vec& feature) {
  require(t_refined.size() == feature.size(), ErrorKind::kDimensionMismatch,
          "similarity: embedding lengths differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < t_refined.size(); ++i) {
    acc += t_refined[i] * feature[i];
  }
  return acc;
}

void
append_values(const ToyModelParams& p, Vec& out) {
  append_values(p.instance_encoder, out);
  append_values(p.expression_encoder, out);
  append_values(p.more, out);
  append_values(p.box_head, out);
  out.push_back(p.clia.log_t);
  out.push_back(p.clia.b);
}

void
append_values(const ToyModelGrad& g, Vec& out) {
  append_values(g.instance_encoder, out);
  append_values(g.expression_encoder, out);
  append_values(g.more, out);
  append_values(g.box_head, out);
  out.push_back(g.d_log_t);
  out.push_back(g.d_b);
}

std::size_t
read_values(ToyModelParams& p, const Vec& flat, std::size_t offset) {
  offset = read_values(p.instance_encoder, flat, offset);
  offset = read_values(p.expression_encoder, flat, offset);
  offset = read_values(p.more, flat, offset);
  offset = read_values(p.box_head, flat, offset);
  p.clia.log_t = flat[offset++];
  p.clia.b = flat[offset++];
  return offset;
}

std::size_t
value_count(const ToyModelParams& p) {
  return value_count(p.instance_encoder) + value_count(p.expression_encoder) +
         value_count(p.more) + value_count(p.box_head) + 2;
}

ParamSections
param_sections(const ToyModelParams& p) {
  ParamSections s;
  std::size_t off = 0;
  const auto take = [&off](std::size_t n) {
    const ParamSections::Range r{off, off + n};
    off += n;
    return r;
  };
  s.instance_encoder = take(value_count(p.instance_encoder));
  s.expression_encoder = take(value_count(p.expression_encoder));
  std::size_t shared = 0;
  for (const auto& e : p.more.shared_experts) {
    shared += value_count(e);
  }
  s.shared_experts = take(shared);
  std::size_t routed = 0;
  for (const auto& e : p.more.routed_experts) {
    routed += value_count(e);
  }
  s.routed_experts = take(routed);
  s.gating = take(value_count(p.more.gating));
  s.box_head = take(value_count(p.box_head));
  s.clia = take(2);
  return s;
}

}  // namespace reir
