// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <doctest.h>

#include <optional>
#include <utility>

#include "reir/error.hpp"
#include "reir/numerics.hpp"
#include "reir/rng.hpp"

namespace reir::testutil {

// Runs f, expecting it to throw Error; returns the kind (empty if nothing
// was thrown, which the caller should CHECK against).
template <typename F>
std::optional<ErrorKind>
thrown_kind(F&& f) {
  try {
    std::forward<F>(f)();
  } catch (const Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

inline Vec
random_vec(Xoshiro256& rng, std::size_t n, double scale = 1.0) {
  Vec v(n);
  for (double& x : v) {
    x = scale * rng.normal();
  }
  return v;
}

// Max |a-b| / max(1, |a|, |b|) over two flat vectors; the gradient-check
// criterion used across the suite.
inline double
max_rel_err(const Vec& a, const Vec& b) {
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({1.0, std::abs(a[i]), std::abs(b[i])});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace reir::testutil
