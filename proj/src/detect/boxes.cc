// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "msfnet/boxes.h"

#include <algorithm>
#include <sstream>

#include "msfnet/error.h"

namespace msf {

double iou(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) {
    std::ostringstream os;
    const Box& bad = a.valid() ? b : a;
    os << "iou: degenerate box (" << bad.x1 << ", " << bad.y1 << ", " << bad.x2
       << ", " << bad.y2 << ")";
    throw ShapeError(os.str());
  }
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

}  // namespace msf
