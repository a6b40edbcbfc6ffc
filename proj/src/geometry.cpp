#include "pisa/geometry.hpp"

#include <algorithm>
#include <stdexcept>

namespace pisa {

double iou(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

Delta encode_delta(const BBox& src, const BBox& target) {
  const double sw = src.width();
  const double sh = src.height();
  if (!(sw > 0.0) || !(sh > 0.0)) {
    throw std::invalid_argument("encode_delta: source box must have positive extent");
  }
  const double tw = target.width();
  const double th = target.height();
  if (!(tw > 0.0) || !(th > 0.0)) {
    throw std::invalid_argument("encode_delta: target box must have positive extent");
  }
  const double scx = src.x1 + 0.5 * sw;
  const double scy = src.y1 + 0.5 * sh;
  const double tcx = target.x1 + 0.5 * tw;
  const double tcy = target.y1 + 0.5 * th;
  return {(tcx - scx) / sw, (tcy - scy) / sh, std::log(tw / sw), std::log(th / sh)};
}

BBox apply_delta(const BBox& src, const Delta& d) {
  const double sw = src.width();
  const double sh = src.height();
  if (!(sw > 0.0) || !(sh > 0.0)) {
    throw std::invalid_argument("apply_delta: source box must have positive extent");
  }
  const double limit = max_log_scale();
  const double dw = std::min(d.dw, limit);
  const double dh = std::min(d.dh, limit);
  const double cx = src.x1 + 0.5 * sw + d.dx * sw;
  const double cy = src.y1 + 0.5 * sh + d.dy * sh;
  const double w = sw * std::exp(dw);
  const double h = sh * std::exp(dh);
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

double smooth_l1(double x) {
  const double ax = std::abs(x);
  return ax < 1.0 ? 0.5 * x * x : ax - 0.5;
}

double smooth_l1_grad(double x) {
  if (x >= 1.0) return 1.0;
  if (x <= -1.0) return -1.0;
  return x;
}

}  // namespace pisa
