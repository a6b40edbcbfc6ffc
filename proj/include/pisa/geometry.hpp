#pragma once

#include <cmath>

namespace pisa {

// Axis-aligned box in corner form. Width and height are x2 - x1 and
// y2 - y1 (continuous coordinates, no +1 convention).
struct BBox {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  bool valid() const { return x1 <= x2 && y1 <= y2; }

  friend bool operator==(const BBox&, const BBox&) = default;
};

// Regression offsets: center shift normalized by source extent and log
// scale ratios.
struct Delta {
  double dx = 0.0;
  double dy = 0.0;
  double dw = 0.0;
  double dh = 0.0;

  friend bool operator==(const Delta&, const Delta&) = default;
};

// Upper bound applied to dw/dh before exponentiation in apply_delta.
inline double max_log_scale() { return std::log(1000.0 / 16.0); }

// Intersection over union. Zero when the union is empty or the boxes are
// disjoint.
double iou(const BBox& a, const BBox& b);

// Offsets that map `src` onto `target`. Throws std::invalid_argument when
// src has non-positive width or height.
Delta encode_delta(const BBox& src, const BBox& target);

// Inverse of encode_delta. dw and dh are clamped to max_log_scale().
BBox apply_delta(const BBox& src, const Delta& d);

double smooth_l1(double x);
double smooth_l1_grad(double x);

}  // namespace pisa
