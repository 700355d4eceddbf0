// SPDX-License-Identifier: Apache-2.0

#include "reir/more.hpp"

#include <algorithm>
#include <numeric>

namespace reir {

void
MoreConfig::validate() const {
  require(n_shared >= 1, ErrorKind::kInvalidArgument, "MoreConfig: n_shared must be positive");
  require(k_routed <= n_routed, ErrorKind::kInvalidArgument,
          "MoreConfig: k_routed exceeds n_routed");
  require(dim_in > 0 && dim_hidden > 0 && dim_out > 0, ErrorKind::kInvalidArgument,
          "MoreConfig: dimensions must be positive");
}

MoreParams
init_more(const MoreConfig& cfg, Xoshiro256& rng) {
  cfg.validate();
  MoreParams p;
  p.shared_experts.reserve(cfg.n_shared);
  for (std::size_t i = 0; i < cfg.n_shared; ++i) {
    p.shared_experts.push_back(init_ffn(cfg.dim_in, cfg.dim_hidden, cfg.dim_out, rng));
  }
  p.routed_experts.reserve(cfg.n_routed);
  for (std::size_t i = 0; i < cfg.n_routed; ++i) {
    p.routed_experts.push_back(init_routed_expert(cfg, rng));
  }
  p.gating = init_affine(cfg.dim_in, cfg.n_routed, rng);
  return p;
}

FeedForward
init_routed_expert(const MoreConfig& cfg, Xoshiro256& rng) {
  FeedForward f = init_ffn(cfg.dim_in, cfg.dim_hidden, cfg.dim_out, rng);
  for (double& w : f.layer2.weight.data) {
    w *= 0.1;
  }
  for (double& b : f.layer2.bias) {
    b *= 0.1;
  }
  return f;
}

MoreGrad
make_zero_grad(const MoreParams& p) {
  MoreGrad g;
  for (const auto& e : p.shared_experts) {
    g.shared_experts.push_back(make_zero_grad(e));
  }
  for (const auto& e : p.routed_experts) {
    g.routed_experts.push_back(make_zero_grad(e));
  }
  g.gating = make_zero_grad(p.gating);
  return g;
}

GateVector
gate_forward(const MoreParams& p, const Vec& f_t, std::size_t k_routed) {
  GateVector gate;
  const std::size_t n_routed = p.routed_experts.size();
  if (n_routed == 0) {
    return gate;  // shared-only mode
  }
  gate.raw = softmax(affine_forward(p.gating, f_t));
  gate.masked.assign(n_routed, 0.0);

  const std::size_t k = std::min(k_routed, n_routed);
  std::vector<std::size_t> order(n_routed);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (gate.raw[a] != gate.raw[b]) {
      return gate.raw[a] > gate.raw[b];
    }
    return a < b;  // ties go to the lower expert index
  });
  gate.active.assign(order.begin(), order.begin() + k);
  std::sort(gate.active.begin(), gate.active.end());
  for (std::size_t idx : gate.active) {
    gate.masked[idx] = gate.raw[idx];
  }
  return gate;
}

Vec
more_forward(const MoreParams& p, const Vec& f_t, std::size_t k_routed) {
  require(!p.shared_experts.empty(), ErrorKind::kInvalidArgument,
          "more_forward: at least one shared expert required");
  Vec out = ffn_forward(p.shared_experts[0], f_t);
  for (std::size_t j = 1; j < p.shared_experts.size(); ++j) {
    const Vec y = ffn_forward(p.shared_experts[j], f_t);
    for (std::size_t d = 0; d < out.size(); ++d) {
      out[d] += y[d];
    }
  }
  const GateVector gate = gate_forward(p, f_t, k_routed);
  for (std::size_t idx : gate.active) {
    if (gate.masked[idx] == 0.0) {
      continue;  // a zero gate contributes exactly zero; skip the expert entirely
    }
    const Vec y = ffn_forward(p.routed_experts[idx], f_t);
    for (std::size_t d = 0; d < out.size(); ++d) {
      out[d] += gate.masked[idx] * y[d];
    }
  }
  return out;
}

MoreTrace
more_forward_trace(const MoreParams& p, const Vec& f_t, std::size_t k_routed) {
  require(!p.shared_experts.empty(), ErrorKind::kInvalidArgument,
          "more_forward: at least one shared expert required");
  MoreTrace t;
  t.shared.reserve(p.shared_experts.size());
  t.shared.push_back(ffn_forward_trace(p.shared_experts[0], f_t));
  t.out = t.shared[0].out;
  for (std::size_t j = 1; j < p.shared_experts.size(); ++j) {
    t.shared.push_back(ffn_forward_trace(p.shared_experts[j], f_t));
    const Vec& y = t.shared[j].out;
    for (std::size_t d = 0; d < t.out.size(); ++d) {
      t.out[d] += y[d];
    }
  }
  t.gate = gate_forward(p, f_t, k_routed);
  t.routed.reserve(t.gate.active.size());
  for (std::size_t idx : t.gate.active) {
    // The trace is kept even for a zero gate: the backward still needs the
    // expert output to form the gating gradient.
    t.routed.push_back(ffn_forward_trace(p.routed_experts[idx], f_t));
    if (t.gate.masked[idx] == 0.0) {
      continue;
    }
    const Vec& y = t.routed.back().out;
    for (std::size_t d = 0; d < t.out.size(); ++d) {
      t.out[d] += t.gate.masked[idx] * y[d];
    }
  }
  return t;
}

Vec
more_backward(const MoreParams& p, const Vec& f_t, std::size_t k_routed, const Vec& upstream,
              MoreGrad& grad) {
  require(upstream.size() == p.shared_experts.at(0).out_dim(), ErrorKind::kDimensionMismatch,
          "more_backward: upstream dimension mismatch");
  Vec d_input(f_t.size(), 0.0);

  for (std::size_t j = 0; j < p.shared_experts.size(); ++j) {
    const Vec dx = ffn_backward(p.shared_experts[j], f_t, upstream, grad.shared_experts[j]);
    for (std::size_t d = 0; d < d_input.size(); ++d) {
      d_input[d] += dx[d];
    }
  }

  const std::size_t n_routed = p.routed_experts.size();
  if (n_routed == 0) {
    return d_input;  // gating gradient stays zero; there is no routed path
  }

  const GateVector gate = gate_forward(p, f_t, k_routed);
  Vec d_raw(n_routed, 0.0);
  for (std::size_t idx : gate.active) {
    const Vec y = ffn_forward(p.routed_experts[idx], f_t);
    // d loss / d gate value is the projection of upstream onto the expert output
    for (std::size_t d = 0; d < upstream.size(); ++d) {
      d_raw[idx] += upstream[d] * y[d];
    }
    Vec scaled(upstream.size());
    for (std::size_t d = 0; d < upstream.size(); ++d) {
      scaled[d] = gate.masked[idx] * upstream[d];
    }
    const Vec dx = ffn_backward(p.routed_experts[idx], f_t, scaled, grad.routed_experts[idx]);
    for (std::size_t d = 0; d < d_input.size(); ++d) {
      d_input[d] += dx[d];
    }
  }

  const Vec d_logits = softmax_backward(gate.raw, d_raw);
  const Vec dx_gate = affine_backward(p.gating, f_t, d_logits, grad.gating);
  for (std::size_t d = 0; d < d_input.size(); ++d) {
    d_input[d] += dx_gate[d];
  }
  return d_input;
}

Vec
more_backward_trace(const MoreParams& p, const Vec& f_t, const MoreTrace& trace,
                    const Vec& upstream, MoreGrad& grad) {
  require(upstream.size() == p.shared_experts.at(0).out_dim(), ErrorKind::kDimensionMismatch,
          "more_backward: upstream dimension mismatch");
  Vec d_input(f_t.size(), 0.0);

  for (std::size_t j = 0; j < p.shared_experts.size(); ++j) {
    const Vec dx =
        ffn_backward_trace(p.shared_experts[j], f_t, trace.shared[j], upstream,
                           grad.shared_experts[j]);
    for (std::size_t d = 0; d < d_input.size(); ++d) {
      d_input[d] += dx[d];
    }
  }

  const std::size_t n_routed = p.routed_experts.size();
  if (n_routed == 0) {
    return d_input;  // gating gradient stays zero; there is no routed path
  }

  const GateVector& gate = trace.gate;
  Vec d_raw(n_routed, 0.0);
  for (std::size_t i = 0; i < gate.active.size(); ++i) {
    const std::size_t idx = gate.active[i];
    const Vec& y = trace.routed[i].out;
    // d loss / d gate value is the projection of upstream onto the expert output
    for (std::size_t d = 0; d < upstream.size(); ++d) {
      d_raw[idx] += upstream[d] * y[d];
    }
    Vec scaled(upstream.size());
    for (std::size_t d = 0; d < upstream.size(); ++d) {
      scaled[d] = gate.masked[idx] * upstream[d];
    }
    const Vec dx = ffn_backward_trace(p.routed_experts[idx], f_t, trace.routed[i], scaled,
                                      grad.routed_experts[idx]);
    for (std::size_t d = 0; d < d_input.size(); ++d) {
      d_input[d] += dx[d];
    }
  }

  const Vec d_logits = softmax_backward(gate.raw, d_raw);
  const Vec dx_gate = affine_backward(p.gating, f_t, d_logits, grad.gating);
  for (std::size_t d = 0; d < d_input.size(); ++d) {
    d_input[d] += dx_gate[d];
  }
  return d_input;
}

void
append_values(const MoreParams& p, Vec& out) {
  for (const auto& e : p.shared_experts) {
    append_values(e, out);
  }
  for (const auto& e : p.routed_experts) {
    append_values(e, out);
  }
  append_values(p.gating, out);
}

void
append_values(const MoreGrad& g, Vec& out) {
  for (const auto& e : g.shared_experts) {
    append_values(e, out);
  }
  for (const auto& e : g.routed_experts) {
    append_values(e, out);
  }
  append_values(g.gating, out);
}

std::size_t
read_values(MoreParams& p, const Vec& flat, std::size_t offset) {
  for (auto& e : p.shared_experts) {
    offset = read_values(e, flat, offset);
  }
  for (auto& e : p.routed_experts) {
    offset = read_values(e, flat, offset);
  }
  return read_values(p.gating, flat, offset);
}

std::size_t
value_count(const MoreParams& p) {
  std::size_t n = value_count(p.gating);
  for (const auto& e : p.shared_experts) {
    n += value_count(e);
  }
  for (const auto& e : p.routed_experts) {
    n += value_count(e);
  }
  return n;
}

}  // namespace reir
