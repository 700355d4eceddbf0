// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>

namespace reir {

// Axis-aligned box in scene units: top-left corner plus extent.
struct Box {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  bool
  valid() const {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(w) && std::isfinite(h) &&
           w > 0.0 && h > 0.0;
  }

  double
  area() const {
    return w * h;
  }
};

// Gradient of a loss with respect to a decoded box (x, y, w, h).
struct BoxGrad {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;
};

}  // namespace reir
