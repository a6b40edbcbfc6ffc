#include "pisa/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

namespace pisa {

namespace {

std::vector<std::size_t> score_order(std::size_t n, auto&& score) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score(a) > score(b); });
  return order;
}

}  // namespace

std::vector<bool> match(std::span<const Detection> dets, std::span<const BBox> gts, double theta) {
  std::vector<bool> flags(dets.size(), false);
  std::vector<bool> taken(gts.size(), false);
  const auto order = score_order(dets.size(), [&](std::size_t i) { return dets[i].score; });
  for (std::size_t d : order) {
    double best = -1.0;
    std::optional<std::size_t> best_gt;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g]) continue;
      const double v = iou(dets[d].box, gts[g]);
      if (v > best) {
        best = v;
        best_gt = g;
      }
    }
    if (best_gt && best >= theta) {
      taken[*best_gt] = true;
      flags[d] = true;
    }
  }
  return flags;
}

PrCurve pr_curve(const std::vector<bool>& flags, std::span<const double> scores, std::size_t n_gt) {
  if (flags.size() != scores.size()) throw std::invalid_argument("pr_curve: flags/scores size mismatch");
  PrCurve out;
  out.n_gt = n_gt;
  const auto order = score_order(scores.size(), [&](std::size_t i) { return scores[i]; });
  double tp = 0.0;
  double fp = 0.0;
  for (std::size_t i : order) {
    (flags[i] ? tp : fp) += 1.0;
    out.scores.push_back(scores[i]);
    out.precision.push_back(tp / (tp + fp));
    out.recall.push_back(n_gt > 0 ? tp / static_cast<double>(n_gt) : 0.0);
  }
  if (n_gt == 0) return out;

  // Right-to-left running maximum gives the interpolated envelope.
  std::vector<double> envelope = out.precision;
  for (std::size_t i = envelope.size(); i-- > 1;) {
    envelope[i - 1] = std::max(envelope[i - 1], envelope[i]);
  }
  out.interpolated.assign(kRecallPoints, 0.0);
  for (int r = 0; r < kRecallPoints; ++r) {
    const double level = static_cast<double>(r) / (kRecallPoints - 1);
    const auto it = std::lower_bound(out.recall.begin(), out.recall.end(), level);
    if (it != out.recall.end()) {
      out.interpolated[static_cast<std::size_t>(r)] =
          envelope[static_cast<std::size_t>(it - out.recall.begin())];
    }
  }
  out.ap = std::accumulate(out.interpolated.begin(), out.interpolated.end(), 0.0) / kRecallPoints;
  return out;
}

std::optional<double> average_precision(const std::vector<bool>& flags, std::span<const double> scores,
                                        std::size_t n_gt) {
  return pr_curve(flags, scores, n_gt).ap;
}

std::vector<double> coco_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back((50.0 + 5.0 * i) / 100.0);
  return t;
}

std::optional<double> EvalReport::ap(int class_id, std::size_t theta_index) const {
  const auto it = std::find(classes.begin(), classes.end(), class_id);
  if (it == classes.end() || theta_index >= thetas.size()) return std::nullopt;
  const auto ci = static_cast<std::size_t>(it - classes.begin());
  return curves[ci * thetas.size() + theta_index].ap;
}

std::optional<double> EvalReport::ap_at(double theta) const {
  for (std::size_t t = 0; t < thetas.size(); ++t) {
    if (std::abs(thetas[t] - theta) < 1e-9) return ap_by_theta[t];
  }
  return std::nullopt;
}

EvalReport coco_map(std::span<const ImageRecord> images, std::span<const double> thetas) {
  EvalReport report;
  report.thetas = thetas.empty() ? coco_thresholds() : std::vector<double>(thetas.begin(), thetas.end());

  std::set<int> class_set;
  for (const auto& im : images) {
    for (const auto& g : im.gts) class_set.insert(g.class_id);
    for (const auto& d : im.dets) {
      if (!d.box.valid() || !std::isfinite(d.score)) {
        throw std::invalid_argument("coco_map: invalid detection");
      }
      class_set.insert(d.class_id);
    }
  }
  report.classes.assign(class_set.begin(), class_set.end());

  for (int cls : report.classes) {
    for (double theta : report.thetas) {
      std::vector<bool> flags;
      std::vector<double> scores;
      std::size_t n_gt = 0;
      for (const auto& im : images) {
        std::vector<Detection> dets;
        std::vector<BBox> gts;
        for (const auto& d : im.dets) {
          if (d.class_id == cls) dets.push_back(d);
        }
        for (const auto& g : im.gts) {
          if (g.class_id == cls) gts.push_back(g.box);
        }
        n_gt += gts.size();
        const auto f = match(dets, gts, theta);
        // Per-image descending order, then a stable global sort in pr_curve.
        const auto order = score_order(dets.size(), [&](std::size_t i) { return dets[i].score; });
        for (std::size_t i : order) {
          flags.push_back(f[i]);
          scores.push_back(dets[i].score);
        }
      }
      PrCurve c = pr_curve(flags, scores, n_gt);
      c.class_id = cls;
      c.theta = theta;
      report.curves.push_back(std::move(c));
    }
  }

  double total = 0.0;
  std::size_t count = 0;
  report.ap_by_theta.assign(report.thetas.size(), std::nullopt);
  for (std::size_t t = 0; t < report.thetas.size(); ++t) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t ci = 0; ci < report.classes.size(); ++ci) {
      const auto& ap = report.curves[ci * report.thetas.size() + t].ap;
      if (!ap) continue;
      sum += *ap;
      ++n;
    }
    if (n > 0) report.ap_by_theta[t] = sum / static_cast<double>(n);
    total += sum;
    count += n;
  }
  if (count > 0) report.map = total / static_cast<double>(count);
  return report;
}

std::vector<std::size_t> nms_indices(std::span<const Detection> dets, double iou_thr) {
  const auto order = score_order(dets.size(), [&](std::size_t i) { return dets[i].score; });
  std::vector<std::size_t> kept;
  for (std::size_t i : order) {
    bool keep = true;
    for (std::size_t k : kept) {
      if (iou(dets[i].box, dets[k].box) > iou_thr) {
        keep = false;
        break;
      }
    }
    if (keep) kept.push_back(i);
  }
  return kept;
}

std::vector<Detection> nms(std::span<const Detection> dets, double iou_thr) {
  std::vector<Detection> out;
  for (std::size_t i : nms_indices(dets, iou_thr)) out.push_back(dets[i]);
  return out;
}

}  // namespace pisa
