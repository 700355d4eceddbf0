// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "common.hpp"
#include "reir/more.hpp"

using namespace reir;
using testutil::max_rel_err;
using testutil::random_vec;
using testutil::thrown_kind;

namespace {

MoreConfig
small_config() {
  MoreConfig cfg;
  cfg.n_shared = 1;
  cfg.n_routed = 4;
  cfg.k_routed = 2;
  cfg.dim_in = 3;
  cfg.dim_hidden = 5;
  cfg.dim_out = 3;
  return cfg;
}

// Identity-map expert: both layers identity, pass-through activation.
FeedForward
identity_expert(std::size_t dim) {
  FeedForward f;
  f.layer1.weight = Mat::identity(dim);
  f.layer1.bias.assign(dim, 0.0);
  f.layer2.weight = Mat::identity(dim);
  f.layer2.bias.assign(dim, 0.0);
  f.activation = Activation::kIdentity;
  return f;
}

Vec
flat_grad(const MoreGrad& g) {
  Vec v;
  append_values(g, v);
  return v;
}

}  // namespace

TEST_CASE("gate keeps the top-k raw values and zeroes the rest, no renormalization") {
  // Gating logits chosen so softmax yields raw = [0.1, 0.4, 0.3, 0.2].
  MoreParams p;
  p.shared_experts.push_back(identity_expert(4));
  for (int i = 0; i < 4; ++i) {
    p.routed_experts.push_back(identity_expert(4));
  }
  p.gating.weight = Mat(4, 4);
  const Vec target = {0.1, 0.4, 0.3, 0.2};
  p.gating.bias.resize(4);
  for (std::size_t i = 0; i < 4; ++i) {
    p.gating.bias[i] = std::log(target[i]);
  }

  const GateVector gate = gate_forward(p, Vec(4, 0.0), 2);
  CHECK(gate.raw.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(gate.raw[i] == doctest::Approx(target[i]).epsilon(1e-12));
  }
  CHECK(gate.active == std::vector<std::size_t>{1, 2});
  CHECK(gate.masked[0] == 0.0);
  CHECK(gate.masked[3] == 0.0);
  // masked values equal raw values exactly: no renormalization
  CHECK(gate.masked[1] == gate.raw[1]);
  CHECK(gate.masked[2] == gate.raw[2]);

  SUBCASE("k equal to the bank size keeps every gate") {
    const GateVector full = gate_forward(p, Vec(4, 0.0), 4);
    CHECK(full.masked == full.raw);
  }

  SUBCASE("uniform logits: ties resolved toward lower expert indices") {
    p.gating.bias.assign(4, 0.7);
    const GateVector tied = gate_forward(p, Vec(4, 0.0), 2);
    CHECK(tied.active == std::vector<std::size_t>{0, 1});
  }
}

TEST_CASE("gating contract: exactly min(k, n) nonzero gates on tie-free inputs") {
  Xoshiro256 rng(77);
  const MoreConfig cfg = small_config();
  for (int trial = 0; trial < 100; ++trial) {
    const MoreParams p = init_more(cfg, rng);
    const Vec f_t = random_vec(rng, cfg.dim_in);
    for (std::size_t k = 0; k <= cfg.n_routed + 1; ++k) {
      const GateVector gate = gate_forward(p, f_t, k);
      const std::size_t nonzero = static_cast<std::size_t>(
          std::count_if(gate.masked.begin(), gate.masked.end(), [](double g) { return g != 0.0; }));
      CHECK(nonzero == std::min(k, cfg.n_routed));
      for (std::size_t idx : gate.active) {
        CHECK(gate.masked[idx] == gate.raw[idx]);
      }
      double sum = std::accumulate(gate.raw.begin(), gate.raw.end(), 0.0);
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("monotone gate consistency: raising a logit never evicts that expert") {
  Xoshiro256 rng(78);
  const MoreConfig cfg = small_config();
  for (int trial = 0; trial < 50; ++trial) {
    MoreParams p = init_more(cfg, rng);
    const Vec f_t = random_vec(rng, cfg.dim_in);
    const GateVector before = gate_forward(p, f_t, cfg.k_routed);
    for (std::size_t idx : before.active) {
      MoreParams boosted = p;
      boosted.gating.bias[idx] += 0.5 + rng.uniform();
      const GateVector after = gate_forward(boosted, f_t, cfg.k_routed);
      CHECK(std::find(after.active.begin(), after.active.end(), idx) != after.active.end());
    }
  }
}

TEST_CASE("more_forward composes shared and gated routed experts") {
  SUBCASE("shared-only identity map with all gates inactive") {
    MoreParams p;
    p.shared_experts.push_back(identity_expert(3));
    const Vec f_t = {0.4, -1.2, 2.0};
    CHECK(more_forward(p, f_t, 0) == f_t);  // n_routed = 0: shared sum only
  }

  SUBCASE("routed bank present but k = 0 equals the shared-only sum bitwise") {
    Xoshiro256 rng(79);
    const MoreConfig cfg = small_config();
    const MoreParams p = init_more(cfg, rng);
    const Vec f_t = random_vec(rng, cfg.dim_in);
    MoreParams shared_only = p;
    shared_only.routed_experts.clear();
    CHECK(more_forward(p, f_t, 0) == more_forward(shared_only, f_t, 0));
  }

  SUBCASE("random config matches term-by-term re-evaluation") {
    Xoshiro256 rng(80);
    const MoreConfig cfg = small_config();
    const MoreParams p = init_more(cfg, rng);
    const Vec f_t = random_vec(rng, cfg.dim_in);
    const Vec got = more_forward(p, f_t, cfg.k_routed);

    const GateVector gate = gate_forward(p, f_t, cfg.k_routed);
    Vec expect(cfg.dim_out, 0.0);
    for (const auto& e : p.shared_experts) {
      const Vec y = ffn_forward(e, f_t);
      for (std::size_t d = 0; d < expect.size(); ++d) {
        expect[d] += y[d];
      }
    }
    for (std::size_t idx = 0; idx < p.routed_experts.size(); ++idx) {
      const Vec y = ffn_forward(p.routed_experts[idx], f_t);
      for (std::size_t d = 0; d < expect.size(); ++d) {
        expect[d] += gate.masked[idx] * y[d];
      }
    }
    for (std::size_t d = 0; d < expect.size(); ++d) {
      CHECK(got[d] == doctest::Approx(expect[d]).epsilon(1e-13));
    }
  }
}

TEST_CASE("permuting routed experts with their gate rows leaves the output unchanged") {
  Xoshiro256 rng(81);
  const MoreConfig cfg = small_config();
  for (int trial = 0; trial < 20; ++trial) {
    const MoreParams p = init_more(cfg, rng);
    const Vec f_t = random_vec(rng, cfg.dim_in);
    const Vec base = more_forward(p, f_t, cfg.k_routed);

    std::vector<std::size_t> perm(cfg.n_routed);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size(); i > 1; --i) {
      std::swap(perm[i - 1], perm[rng.below(i)]);
    }
    MoreParams q = p;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      q.routed_experts[i] = p.routed_experts[perm[i]];
      for (std::size_t c = 0; c < q.gating.weight.cols; ++c) {
        q.gating.weight.at(i, c) = p.gating.weight.at(perm[i], c);
      }
      q.gating.bias[i] = p.gating.bias[perm[i]];
    }
    const Vec permuted = more_forward(q, f_t, cfg.k_routed);
    for (std::size_t d = 0; d < base.size(); ++d) {
      CHECK(std::abs(base[d] - permuted[d]) < 1e-12);
    }
  }
}

TEST_CASE("more_backward matches central differences over all parameters and the input") {
  Xoshiro256 rng(82);
  const MoreConfig cfg = small_config();
  for (int seed_trial = 0; seed_trial < 5; ++seed_trial) {
    const MoreParams p = init_more(cfg, rng);
    const Vec f_t = random_vec(rng, cfg.dim_in);
    const Vec up = random_vec(rng, cfg.dim_out);

    MoreGrad grad = make_zero_grad(p);
    const Vec d_input = more_backward(p, f_t, cfg.k_routed, up, grad);

    const auto project = [&](const MoreParams& params, const Vec& input) {
      const Vec y = more_forward(params, input, cfg.k_routed);
      double acc = 0.0;
      for (std::size_t d = 0; d < y.size(); ++d) {
        acc += up[d] * y[d];
      }
      return acc;
    };

    const Vec fd_input =
        central_diff_grad([&](const Vec& v) { return project(p, v); }, f_t, 1e-5);
    CHECK(max_rel_err(d_input, fd_input) < 1e-4);

    Vec theta;
    append_values(p, theta);
    const Vec fd_theta = central_diff_grad(
        [&](const Vec& v) {
          MoreParams copy = p;
          read_values(copy, v, 0);
          return project(copy, f_t);
        },
        theta, 1e-5);
    CHECK(max_rel_err(flat_grad(grad), fd_theta) < 1e-4);
  }
}

TEST_CASE("more_backward edge cases") {
  Xoshiro256 rng(83);
  const MoreConfig cfg = small_config();
  const MoreParams p = init_more(cfg, rng);
  const Vec f_t = random_vec(rng, cfg.dim_in);

  SUBCASE("no routed bank leaves the gating gradient at zero") {
    MoreParams shared_only = p;
    shared_only.routed_experts.clear();
    shared_only.gating.weight = Mat(0, cfg.dim_in);
    shared_only.gating.bias.clear();
    MoreGrad grad = make_zero_grad(shared_only);
    more_backward(shared_only, f_t, 0, random_vec(rng, cfg.dim_out), grad);
    CHECK(grad.gating.weight.data.empty());
    CHECK(grad.gating.bias.empty());
  }

  SUBCASE("zero upstream produces all-zero gradients") {
    MoreGrad grad = make_zero_grad(p);
    const Vec d_input = more_backward(p, f_t, cfg.k_routed, Vec(cfg.dim_out, 0.0), grad);
    for (double v : d_input) {
      CHECK(v == 0.0);
    }
    for (double v : flat_grad(grad)) {
      CHECK(v == 0.0);
    }
  }

  SUBCASE("inactive experts receive zero gradient") {
    MoreGrad grad = make_zero_grad(p);
    const GateVector gate = gate_forward(p, f_t, cfg.k_routed);
    more_backward(p, f_t, cfg.k_routed, random_vec(rng, cfg.dim_out), grad);
    for (std::size_t idx = 0; idx < cfg.n_routed; ++idx) {
      const bool active =
          std::find(gate.active.begin(), gate.active.end(), idx) != gate.active.end();
      Vec flat;
      append_values(grad.routed_experts[idx], flat);
      const bool any = std::any_of(flat.begin(), flat.end(), [](double v) { return v != 0.0; });
      CHECK(any == active);
    }
  }

  SUBCASE("shape mismatch is rejected") {
    MoreGrad grad = make_zero_grad(p);
    CHECK(thrown_kind([&] {
            more_backward(p, f_t, cfg.k_routed, Vec(cfg.dim_out + 1, 1.0), grad);
          }) == ErrorKind::kDimensionMismatch);
  }
}

TEST_CASE("trace-based MORE calls are bit-equal to the plain ones") {
  Xoshiro256 rng(84);
  const MoreConfig cfg = small_config();
  for (int trial = 0; trial < 20; ++trial) {
    const MoreParams p = init_more(cfg, rng);
    const Vec f_t = random_vec(rng, cfg.dim_in);
    const Vec up = random_vec(rng, cfg.dim_out);
    for (std::size_t k : {std::size_t{0}, cfg.k_routed, cfg.n_routed}) {
      const Vec plain = more_forward(p, f_t, k);
      const MoreTrace trace = more_forward_trace(p, f_t, k);
      CHECK(plain == trace.out);

      MoreGrad ga = make_zero_grad(p);
      MoreGrad gb = make_zero_grad(p);
      const Vec da = more_backward(p, f_t, k, up, ga);
      const Vec db = more_backward_trace(p, f_t, trace, up, gb);
      CHECK(da == db);
      CHECK(flat_grad(ga) == flat_grad(gb));
    }
  }
}

TEST_CASE("routed expert init starts damped so refinement begins near a no-op") {
  Xoshiro256 rng(85);
  MoreConfig cfg = small_config();
  const MoreParams p = init_more(cfg, rng);
  const Vec f_t = random_vec(rng, cfg.dim_in);
  // The routed contribution is an order of magnitude smaller than the gate
  // weight alone would suggest; compare against the shared path.
  const Vec with = more_forward(p, f_t, cfg.k_routed);
  const Vec without = more_forward(p, f_t, 0);
  double diff = 0.0;
  double base = 0.0;
  for (std::size_t d = 0; d < with.size(); ++d) {
    diff += std::abs(with[d] - without[d]);
    base += std::abs(without[d]);
  }
  CHECK(diff < 0.2 * base);
}
