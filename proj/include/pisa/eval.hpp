#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "pisa/assignment.hpp"
#include "pisa/geometry.hpp"

namespace pisa {

struct Detection {
  BBox box;
  int class_id = 0;
  double score = 0.0;
};

// Ground truths and detections of one image.
struct ImageRecord {
  int image_id = 0;
  std::vector<GroundTruth> gts;
  std::vector<Detection> dets;
};

// Greedy TP/FP assignment for one class in one image. Detections are visited
// by descending score (ties by index); a detection is a TP when its best
// still-unmatched ground truth has IoU >= theta. Flags are aligned with
// `dets`.
std::vector<bool> match(std::span<const Detection> dets, std::span<const BBox> gts, double theta);

inline constexpr int kRecallPoints = 101;

struct PrCurve {
  int class_id = 0;
  double theta = 0.0;
  std::size_t n_gt = 0;
  std::vector<double> scores;     // descending
  std::vector<double> precision;  // raw, aligned with scores
  std::vector<double> recall;     // raw, non-decreasing
  std::vector<double> interpolated;  // at recall = 0, 0.01, ..., 1
  std::optional<double> ap;       // empty when n_gt == 0
};

// Precision/recall sweep over the score-sorted detections, integrated with
// 101-point interpolation: at each recall level r the precision is the
// maximum precision reached at any recall >= r (0 if r is never reached).
PrCurve pr_curve(const std::vector<bool>& flags, std::span<const double> scores, std::size_t n_gt);

// Area under the interpolated PR curve. Empty when n_gt == 0, in which case
// the class does not contribute to a mean.
std::optional<double> average_precision(const std::vector<bool>& flags, std::span<const double> scores,
                                        std::size_t n_gt);

// IoU thresholds 0.50, 0.55, ..., 0.95.
std::vector<double> coco_thresholds();

struct EvalReport {
  std::vector<double> thetas;
  std::vector<int> classes;
  std::vector<PrCurve> curves;  // class-major, theta-minor
  std::vector<std::optional<double>> ap_by_theta;  // mean over classes with ground truth
  std::optional<double> map;    // empty when there is no ground truth at all

  // AP for (class, theta index); empty if the class had no ground truth.
  std::optional<double> ap(int class_id, std::size_t theta_index) const;
  std::optional<double> ap_at(double theta) const;
};

// Per-class, per-threshold AP over a set of images and their mean.
EvalReport coco_map(std::span<const ImageRecord> images,
                    std::span<const double> thetas = {});

// Greedy NMS for one class: highest score first (ties by index); a
// detection is dropped when its IoU with an already kept one exceeds
// iou_thr. Returns kept indices in visiting order.
std::vector<std::size_t> nms_indices(std::span<const Detection> dets, double iou_thr = 0.5);
std::vector<Detection> nms(std::span<const Detection> dets, double iou_thr = 0.5);

}  // namespace pisa
