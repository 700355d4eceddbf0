// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "reir/numerics.hpp"

namespace reir {

struct MoreConfig {
  std::size_t n_shared = 1;   // always-active experts
  std::size_t n_routed = 4;   // gated specialist bank
  std::size_t k_routed = 2;   // active routed experts per query
  std::size_t dim_in = 32;
  std::size_t dim_hidden = 64;
  std::size_t dim_out = 32;

  void validate() const;
};

// Shared experts run unconditionally; routed experts are weighted by the
// top-k masked gate. The gate is a single affine layer followed by softmax.
struct MoreParams {
  std::vector<FeedForward> shared_experts;
  std::vector<FeedForward> routed_experts;
  Affine gating;  // [n_routed x dim_in]
};

struct MoreGrad {
  std::vector<FeedForwardGrad> shared_experts;
  std::vector<FeedForwardGrad> routed_experts;
  AffineGrad gating;
};

struct GateVector {
  Vec raw;                         // softmax over gating logits, sums to 1
  Vec masked;                      // raw with everything outside the active set zeroed
  std::vector<std::size_t> active; // indices of the k largest raw values, ascending
};

MoreParams init_more(const MoreConfig& cfg, Xoshiro256& rng);

// Fresh routed expert with a damped output layer: the refinement starts near
// a no-op so newly introduced experts perturb nothing until gradient grows
// them into the residual the shared path cannot express.
FeedForward init_routed_expert(const MoreConfig& cfg, Xoshiro256& rng);
MoreGrad make_zero_grad(const MoreParams& p);

// Top-k selection keeps the raw softmax values on the active set and zeroes
// the rest; there is no renormalization afterwards. Ties are broken toward
// the lower expert index. k == 0 (or an empty routed bank) yields an empty
// active set.
GateVector gate_forward(const MoreParams& p, const Vec& f_t, std::size_t k_routed);

Vec more_forward(const MoreParams& p, const Vec& f_t, std::size_t k_routed);

// Forward intermediates retained for the backward pass: the gate decision,
// one trace per shared expert, and one per active routed expert (parallel to
// gate.active). Trace-based calls are bit-equal to the plain ones; they exist
// because training touches every record once forward and once backward.
struct MoreTrace {
  GateVector gate;
  std::vector<FfnTrace> shared;
  std::vector<FfnTrace> routed;  // parallel to gate.active
  Vec out;
};
MoreTrace more_forward_trace(const MoreParams& p, const Vec& f_t, std::size_t k_routed);
Vec more_backward_trace(const MoreParams& p, const Vec& f_t, const MoreTrace& trace,
                        const Vec& upstream, MoreGrad& grad);

// Accumulates expert and gating gradients into `grad`; returns dL/d f_t.
// Inactive gate entries carry zero gradient: the hard mask is locally
// constant away from ties, so only active entries feed the softmax jacobian.
Vec more_backward(const MoreParams& p, const Vec& f_t, std::size_t k_routed, const Vec& upstream,
                  MoreGrad& grad);

void append_values(const MoreParams& p, Vec& out);
void append_values(const MoreGrad& g, Vec& out);
std::size_t read_values(MoreParams& p, const Vec& flat, std::size_t offset);
std::size_t value_count(const MoreParams& p);

}  // namespace reir
