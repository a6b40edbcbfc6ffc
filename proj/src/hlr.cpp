#include "pisa/hlr.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <stdexcept>

namespace pisa {

std::vector<std::size_t> HlrResult::by_rank() const {
  std::vector<std::size_t> out(entries.size());
  for (const auto& e : entries) out[static_cast<std::size_t>(e.hlr)] = e.sample;
  return out;
}

HlrResult hierarchical_rank(std::span<const std::size_t> samples, std::span<const int> groups,
                            std::span<const double> keys) {
  const std::size_t n = samples.size();
  if (groups.size() != n || keys.size() != n) {
    throw std::invalid_argument("hierarchical_rank: input sizes differ");
  }
  // Positions are sorted, so ties on key resolve by sample index.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return samples[a] < samples[b];
  });
  auto key_desc = [&](std::size_t a, std::size_t b) {
    if (keys[a] != keys[b]) return keys[a] > keys[b];
    return samples[a] < samples[b];
  };

  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t pos : order) members[groups[pos]].push_back(pos);

  std::vector<int> local_rank(n, 0);
  std::size_t depth = 0;
  for (auto& [group, list] : members) {
    std::sort(list.begin(), list.end(), key_desc);
    for (std::size_t r = 0; r < list.size(); ++r) local_rank[list[r]] = static_cast<int>(r);
    depth = std::max(depth, list.size());
  }

  std::vector<std::vector<std::size_t>> blocks(depth);
  for (std::size_t pos : order) blocks[static_cast<std::size_t>(local_rank[pos])].push_back(pos);

  std::vector<int> hlr(n, 0);
  int next = 0;
  for (auto& block : blocks) {
    std::sort(block.begin(), block.end(), key_desc);
    for (std::size_t pos : block) hlr[pos] = next++;
  }

  HlrResult result;
  result.entries.reserve(n);
  for (std::size_t pos : order) {
    result.entries.push_back({samples[pos], groups[pos], local_rank[pos], hlr[pos], keys[pos]});
  }
  return result;
}

HlrResult iou_hlr(const SampleBatch& batch, std::span<const std::size_t> samples) {
  std::vector<std::size_t> ids;
  std::vector<int> groups;
  std::vector<double> keys;
  for (std::size_t i : samples) {
    if (i >= batch.size()) throw std::out_of_range("iou_hlr: sample index out of range");
    if (!batch.is_positive(i)) continue;
    ids.push_back(i);
    groups.push_back(static_cast<int>(*batch.assignment[i].matched_gt));
    keys.push_back(batch.regressed_iou(i));
  }
  return hierarchical_rank(ids, groups, keys);
}

HlrResult iou_hlr(const SampleBatch& batch) {
  const auto pos = batch.positives();
  return iou_hlr(batch, pos);
}

NegClustering nms_cluster(const SampleBatch& batch, double iou_thr) {
  NegClustering out;
  out.samples = batch.negatives();
  const std::size_t n = out.samples.size();
  std::vector<double> score(n);
  for (std::size_t k = 0; k < n; ++k) score[k] = batch.max_foreground_score(out.samples[k]);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (score[a] != score[b]) return score[a] > score[b];
    return out.samples[a] < out.samples[b];
  });

  out.cluster_id.assign(n, -1);
  for (std::size_t oi = 0; oi < n; ++oi) {
    const std::size_t k = order[oi];
    if (out.cluster_id[k] >= 0) continue;
    const int cid = static_cast<int>(out.representative.size());
    out.representative.push_back(out.samples[k]);
    out.cluster_id[k] = cid;
    const std::size_t ki = out.samples[k];
    for (std::size_t oj = oi + 1; oj < n; ++oj) {
      const std::size_t m = order[oj];
      if (out.cluster_id[m] >= 0) continue;
      const std::size_t mi = out.samples[m];
      if (batch.image_ids[mi] != batch.image_ids[ki]) continue;
      if (iou(batch.regressed_box[ki], batch.regressed_box[mi]) > iou_thr) out.cluster_id[m] = cid;
    }
  }
  return out;
}

HlrResult score_hlr(const SampleBatch& batch, const NegClustering& clustering) {
  if (clustering.cluster_id.size() != clustering.samples.size()) {
    throw std::invalid_argument("score_hlr: malformed clustering");
  }
  std::vector<double> keys(clustering.samples.size());
  for (std::size_t k = 0; k < keys.size(); ++k) {
    keys[k] = batch.max_foreground_score(clustering.samples[k]);
  }
  return hierarchical_rank(clustering.samples, clustering.cluster_id, keys);
}

}  // namespace pisa
