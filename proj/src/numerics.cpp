// SPDX-License-Identifier: Apache-2.0

#include "reir/numerics.hpp"

#include <algorithm>
#include <cmath>

namespace reir {

AffineGrad
make_zero_grad(const Affine& p) {
  AffineGrad g;
  g.weight = Mat(p.weight.rows, p.weight.cols);
  g.bias.assign(p.bias.size(), 0.0);
  return g;
}

FeedForwardGrad
make_zero_grad(const FeedForward& p) {
  FeedForwardGrad g;
  g.layer1 = make_zero_grad(p.layer1);
  g.layer2 = make_zero_grad(p.layer2);
  return g;
}

void
check_finite(const Vec& v, const std::string& context) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      fail(ErrorKind::kNumeric, context + ": non-finite entry at index " + std::to_string(i));
    }
  }
}

Vec
affine_forward(const Affine& p, const Vec& x) {
  require(x.size() == p.in_dim(), ErrorKind::kDimensionMismatch,
          "affine_forward: input has " + std::to_string(x.size()) + " entries, expected " +
              std::to_string(p.in_dim()));
  Vec y(p.out_dim());
  for (std::size_t r = 0; r < p.out_dim(); ++r) {
    double acc = p.bias[r];
    const double* row = p.weight.data.data() + r * p.weight.cols;
    for (std::size_t c = 0; c < p.weight.cols; ++c) {
      acc += row[c] * x[c];
    }
    y[r] = acc;
  }
  check_finite(y, "affine_forward");
  return y;
}

Vec
affine_backward(const Affine& p, const Vec& x, const Vec& upstream, AffineGrad& grad) {
  require(x.size() == p.in_dim() && upstream.size() == p.out_dim(), ErrorKind::kDimensionMismatch,
          "affine_backward: shape mismatch");
  Vec dx(p.in_dim(), 0.0);
  for (std::size_t r = 0; r < p.out_dim(); ++r) {
    const double u = upstream[r];
    grad.bias[r] += u;
    double* grow = grad.weight.data.data() + r * grad.weight.cols;
    const double* wrow = p.weight.data.data() + r * p.weight.cols;
    for (std::size_t c = 0; c < p.weight.cols; ++c) {
      grow[c] += u * x[c];
      dx[c] += wrow[c] * u;
    }
  }
  return dx;
}

namespace {

Vec
apply_activation(Activation act, const Vec& z) {
  if (act == Activation::kIdentity) {
    return z;
  }
  Vec h(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    h[i] = std::tanh(z[i]);
  }
  return h;
}

}  // namespace

Vec
ffn_forward(const FeedForward& p, const Vec& x) {
  require(p.layer1.out_dim() == p.layer2.in_dim(), ErrorKind::kDimensionMismatch,
          "ffn_forward: hidden dimensions disagree");
  const Vec z = affine_forward(p.layer1, x);
  const Vec h = apply_activation(p.activation, z);
  return affine_forward(p.layer2, h);
}

Vec
ffn_backward(const FeedForward& p, const Vec& x, const Vec& upstream, FeedForwardGrad& grad) {
  const Vec z = affine_forward(p.layer1, x);
  const Vec h = apply_activation(p.activation, z);
  Vec dh = affine_backward(p.layer2, h, upstream, grad.layer2);
  if (p.activation == Activation::kTanh) {
    for (std::size_t i = 0; i < dh.size(); ++i) {
      dh[i] *= 1.0 - h[i] * h[i];  // tanh'(z) = 1 - tanh(z)^2
    }
  }
  return affine_backward(p.layer1, x, dh, grad.layer1);
}

FfnTrace
ffn_forward_trace(const FeedForward& p, const Vec& x) {
  FfnTrace t;
  t.hidden = apply_activation(p.activation, affine_forward(p.layer1, x));
  t.out = affine_forward(p.layer2, t.hidden);
  return t;
}

Vec
ffn_backward_trace(const FeedForward& p, const Vec& x, const FfnTrace& trace,
                   const Vec& upstream, FeedForwardGrad& grad) {
  Vec dh = affine_backward(p.layer2, trace.hidden, upstream, grad.layer2);
  if (p.activation == Activation::kTanh) {
    for (std::size_t i = 0; i < dh.size(); ++i) {
      dh[i] *= 1.0 - trace.hidden[i] * trace.hidden[i];
    }
  }
  return affine_backward(p.layer1, x, dh, grad.layer1);
}

Vec
softmax(const Vec& x) {
  require(!x.empty(), ErrorKind::kInvalidArgument, "softmax: empty input");
  check_finite(x, "softmax input");
  const double m = *std::max_element(x.begin(), x.end());
  Vec y(x.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = std::exp(x[i] - m);
    sum += y[i];
  }
  for (auto& v : y) {
    v /= sum;
  }
  return y;
}

Vec
softmax_backward(const Vec& softmax_out, const Vec& upstream) {
  double dot = 0.0;
  for (std::size_t i = 0; i < softmax_out.size(); ++i) {
    dot += upstream[i] * softmax_out[i];
  }
  Vec dlogits(softmax_out.size());
  for (std::size_t i = 0; i < softmax_out.size(); ++i) {
    dlogits[i] = softmax_out[i] * (upstream[i] - dot);
  }
  return dlogits;
}

double
sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double
softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

Vec
central_diff_grad(const std::function<double(const Vec&)>& f, const Vec& theta, double eps) {
  require(eps >= 1e-7 && eps <= 1e-3, ErrorKind::kInvalidArgument,
          "central_diff_grad: eps must lie in [1e-7, 1e-3]");
  Vec g(theta.size());
  Vec probe = theta;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    probe[i] = theta[i] + eps;
    const double fp = f(probe);
    probe[i] = theta[i] - eps;
    const double fm = f(probe);
    probe[i] = theta[i];
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      fail(ErrorKind::kNumeric,
           "central_diff_grad: non-finite evaluation at coordinate " + std::to_string(i));
    }
    g[i] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

Affine
init_affine(std::size_t in_dim, std::size_t out_dim, Xoshiro256& rng) {
  Affine p;
  p.weight = Mat(out_dim, in_dim);
  p.bias.assign(out_dim, 0.0);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
  for (auto& w : p.weight.data) {
    w = rng.uniform(-bound, bound);
  }
  for (auto& b : p.bias) {
    b = rng.uniform(-bound, bound);
  }
  return p;
}

FeedForward
init_ffn(std::size_t in_dim, std::size_t hidden_dim, std::size_t out_dim, Xoshiro256& rng) {
  FeedForward p;
  p.layer1 = init_affine(in_dim, hidden_dim, rng);
  p.layer2 = init_affine(hidden_dim, out_dim, rng);
  p.activation = Activation::kTanh;
  return p;
}

void
append_values(const Affine& p, Vec& out) {
  out.insert(out.end(), p.weight.data.begin(), p.weight.data.end());
  out.insert(out.end(), p.bias.begin(), p.bias.end());
}

void
append_values(const FeedForward& p, Vec& out) {
  append_values(p.layer1, out);
  append_values(p.layer2, out);
}

void
append_values(const AffineGrad& g, Vec& out) {
  out.insert(out.end(), g.weight.data.begin(), g.weight.data.end());
  out.insert(out.end(), g.bias.begin(), g.bias.end());
}

void
append_values(const FeedForwardGrad& g, Vec& out) {
  append_values(g.layer1, out);
  append_values(g.layer2, out);
}

std::size_t
read_values(Affine& p, const Vec& flat, std::size_t offset) {
  for (auto& w : p.weight.data) {
    w = flat[offset++];
  }
  for (auto& b : p.bias) {
    b = flat[offset++];
  }
  return offset;
}

std::size_t
read_values(FeedForward& p, const Vec& flat, std::size_t offset) {
  offset = read_values(p.layer1, flat, offset);
  return read_values(p.layer2, flat, offset);
}

std::size_t
value_count(const Affine& p) {
  return p.weight.data.size() + p.bias.size();
}

std::size_t
value_count(const FeedForward& p) {
  return value_count(p.layer1) + value_count(p.layer2);
}

}  // namespace reir
