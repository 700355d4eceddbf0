// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "reir/error.hpp"
#include "reir/rng.hpp"

namespace reir {

using Vec = std::vector<double>;

// Dense row-major matrix. All training math runs in 64-bit; persistence
// narrows to 32-bit in the file writers.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // rows * cols, row-major

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double&
  at(std::size_t r, std::size_t c) {
    return data[r * cols + c];
  }

  double
  at(std::size_t r, std::size_t c) const {
    return data[r * cols + c];
  }

  static Mat
  identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      m.at(i, i) = 1.0;
    }
    return m;
  }
};

enum class Activation {
  kTanh,      // default everywhere the trainer builds a network
  kIdentity,  // exact pass-through, used to express identity maps
};

// y = weight * x + bias
struct Affine {
  Mat weight;  // [out x in]
  Vec bias;    // [out]

  std::size_t
  in_dim() const {
    return weight.cols;
  }

  std::size_t
  out_dim() const {
    return weight.rows;
  }
};

// Two-layer perceptron: layer2(act(layer1(x))).
struct FeedForward {
  Affine layer1;
  Affine layer2;
  Activation activation = Activation::kTanh;

  std::size_t
  in_dim() const {
    return layer1.in_dim();
  }

  std::size_t
  out_dim() const {
    return layer2.out_dim();
  }
};

// Gradient containers mirror the parameter containers shape for shape.
struct AffineGrad {
  Mat weight;
  Vec bias;
};

struct FeedForwardGrad {
  AffineGrad layer1;
  AffineGrad layer2;
};

AffineGrad make_zero_grad(const Affine& p);
FeedForwardGrad make_zero_grad(const FeedForward& p);

void check_finite(const Vec& v, const std::string& context);

Vec affine_forward(const Affine& p, const Vec& x);

// Accumulates weight/bias gradients into `grad` and returns dL/dx.
Vec affine_backward(const Affine& p, const Vec& x, const Vec& upstream, AffineGrad& grad);

Vec ffn_forward(const FeedForward& p, const Vec& x);
Vec ffn_backward(const FeedForward& p, const Vec& x, const Vec& upstream, FeedForwardGrad& grad);

// Forward pass that retains the post-activation hidden layer so the matching
// backward can skip recomputing layer1. Trace-based calls produce bit-equal
// results to the plain ones; they exist because training touches every
// record once forward and once backward per step.
struct FfnTrace {
  Vec hidden;  // act(layer1(x))
  Vec out;     // layer2(hidden)
};

FfnTrace ffn_forward_trace(const FeedForward& p, const Vec& x);
Vec ffn_backward_trace(const FeedForward& p, const Vec& x, const FfnTrace& trace,
                       const Vec& upstream, FeedForwardGrad& grad);

// Max-subtracted, output sums to 1.
Vec softmax(const Vec& x);

// Maps upstream d/d(softmax output) back to d/d(logits).
Vec softmax_backward(const Vec& softmax_out, const Vec& upstream);

double sigmoid(double x);

// log(1 + exp(x)), overflow-safe
double softplus(double x);

// Central finite differences: [f(theta + eps e_i) - f(theta - eps e_i)] / (2 eps).
// This harness is the reference every hand-derived gradient is checked against.
Vec central_diff_grad(const std::function<double(const Vec&)>& f, const Vec& theta, double eps);

// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] for weights and bias.
Affine init_affine(std::size_t in_dim, std::size_t out_dim, Xoshiro256& rng);
FeedForward init_ffn(std::size_t in_dim, std::size_t hidden_dim, std::size_t out_dim, Xoshiro256& rng);

// Canonical parameter traversal order: weight row-major, then bias;
// layer1 before layer2. Flatten/unflatten and the optimizer all rely on it.
void append_values(const Affine& p, Vec& out);
void append_values(const FeedForward& p, Vec& out);
void append_values(const AffineGrad& g, Vec& out);
void append_values(const FeedForwardGrad& g, Vec& out);
std::size_t read_values(Affine& p, const Vec& flat, std::size_t offset);
std::size_t read_values(FeedForward& p, const Vec& flat, std::size_t offset);
std::size_t value_count(const Affine& p);
std::size_t value_count(const FeedForward& p);

}  // namespace reir
