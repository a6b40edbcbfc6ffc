#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pisa/assignment.hpp"

namespace pisa {

struct HlrEntry {
  std::size_t sample = 0;  // index into the batch
  int group_id = 0;
  int local_rank = 0;
  int hlr = 0;
  double key = 0.0;  // IoU for positives, max foreground score for negatives
};

// Entries are stored in ascending sample order. An empty result means there
// was nothing to rank; failures are reported by exception.
struct HlrResult {
  std::vector<HlrEntry> entries;

  bool empty() const { return entries.empty(); }
  std::size_t size() const { return entries.size(); }
  // Sample indices ordered by hierarchical rank (rank 0 first).
  std::vector<std::size_t> by_rank() const;
};

// Two-step hierarchical local rank. Items are first ranked inside their
// group by key (descending), then every block of equal local rank is sorted
// by key and the blocks are concatenated in local-rank order. Equal keys are
// ordered by ascending sample index.
HlrResult hierarchical_rank(std::span<const std::size_t> samples, std::span<const int> groups,
                            std::span<const double> keys);

// IoU-HLR over the positives of the batch. Groups are matched ground truths
// and keys are IoUs of the regressed boxes.
HlrResult iou_hlr(const SampleBatch& batch);
// Same, restricted to the positives listed in `samples`.
HlrResult iou_hlr(const SampleBatch& batch, std::span<const std::size_t> samples);

struct NegClustering {
  std::vector<std::size_t> samples;         // negatives that were clustered
  std::vector<int> cluster_id;              // aligned with samples
  std::vector<std::size_t> representative;  // batch index of each cluster's kept box
};

// Greedy NMS over the negatives by descending max foreground score. A kept
// box opens a cluster; each suppressed box joins the cluster of the kept box
// that suppressed it. Boxes of different images never interact.
NegClustering nms_cluster(const SampleBatch& batch, double iou_thr = 0.7);

// Score-HLR over the clustered negatives, key = max foreground score.
HlrResult score_hlr(const SampleBatch& batch, const NegClustering& clustering);

}  // namespace pisa
