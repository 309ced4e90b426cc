// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MSFNET_BOXES_H_
#define MSFNET_BOXES_H_

namespace msf {

/// Axis-aligned box in pixels, (x1, y1) top-left, (x2, y2) bottom-right.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  bool valid() const { return x1 < x2 && y1 < y2; }
};

struct Detection {
  Box box;
  double confidence = 0;
  int class_id = 0;
};

struct GroundTruth {
  Box box;
  int class_id = 0;
};

/// Intersection over union; throws ShapeError when either box has zero or
/// negative area.
double iou(const Box& a, const Box& b);

}  // namespace msf

#endif  // MSFNET_BOXES_H_
