#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "pisa/geometry.hpp"

namespace pisa {

struct GroundTruth {
  BBox box;
  int class_id = 0;
  int image_id = 0;
};

enum class SampleLabel { kPositive, kNegative, kIgnored };

struct ProposalAssignment {
  std::optional<std::size_t> matched_gt;  // set for positives only
  double max_iou = 0.0;
  SampleLabel label = SampleLabel::kNegative;
  int target_class = 0;  // num_classes means background
};

using Assignment = std::vector<ProposalAssignment>;

struct AssignerParams {
  double pos_thr = 0.5;
  double neg_thr = 0.5;
};

// Max-IoU assignment. Each proposal is compared against every ground truth
// of the same image (`proposal_images` may be empty, in which case image ids
// are ignored). IoU >= pos_thr is positive, IoU < neg_thr is negative and the
// band in between is ignored. Ties on IoU go to the lower GT index.
Assignment assign(std::span<const BBox> proposals, std::span<const int> proposal_images,
                  std::span<const GroundTruth> gts, int num_classes,
                  const AssignerParams& params = {});

Assignment assign(std::span<const BBox> proposals, std::span<const GroundTruth> gts,
                  int num_classes, const AssignerParams& params = {});

// Proposals of one mini-batch (possibly spanning several images) together
// with their assignment and the current head outputs.
struct SampleBatch {
  int num_classes = 0;
  std::vector<GroundTruth> gts;
  std::vector<BBox> proposals;
  std::vector<int> image_ids;
  Assignment assignment;
  Eigen::MatrixXd logits;        // n x (num_classes + 1)
  Eigen::MatrixXd class_scores;  // row-wise softmax of logits
  std::vector<Delta> reg_delta;
  std::vector<BBox> regressed_box;
  std::vector<Delta> reg_target;  // zero for non-positives

  std::size_t size() const { return proposals.size(); }
  int background() const { return num_classes; }
  bool is_positive(std::size_t i) const { return assignment[i].label == SampleLabel::kPositive; }
  bool is_negative(std::size_t i) const { return assignment[i].label == SampleLabel::kNegative; }
  std::vector<std::size_t> positives() const;
  std::vector<std::size_t> negatives() const;

  // Largest foreground-class probability of sample i.
  double max_foreground_score(std::size_t i) const;
  // IoU of the regressed box with the matched ground truth (positives only).
  double regressed_iou(std::size_t i) const;

  // Stores logits / deltas and refreshes class_scores and regressed_box.
  void set_predictions(const Eigen::MatrixXd& new_logits, std::vector<Delta> deltas);

  // Batch restricted to `indices`, in the given order. Ground truths are kept.
  SampleBatch subset(std::span<const std::size_t> indices) const;
};

// Builds a batch with zero logits and zero deltas from raw proposals.
SampleBatch make_batch(std::vector<BBox> proposals, std::vector<int> image_ids,
                       std::vector<GroundTruth> gts, int num_classes,
                       const AssignerParams& params = {});

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits);

struct SamplerParams {
  std::size_t n_total = 512;
  double pos_fraction = 0.25;
};

// Uniform sampling without replacement of at most floor(pos_fraction *
// n_total) positives, the remaining quota filled with negatives. Indices are
// returned in ascending order.
std::vector<std::size_t> sample_random(const SampleBatch& batch, const SamplerParams& params,
                                       std::uint64_t rng_seed);
std::vector<std::size_t> sample_random(const SampleBatch& batch, const SamplerParams& params,
                                       std::mt19937_64& rng);

// Same quotas as sample_random, filled with the highest-loss positives and
// negatives. Equal losses prefer the lower index.
std::vector<std::size_t> sample_hard(const SampleBatch& batch,
                                     std::span<const double> per_sample_cls_loss,
                                     const SamplerParams& params);

}  // namespace pisa
