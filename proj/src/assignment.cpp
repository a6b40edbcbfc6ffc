#include "pisa/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace pisa {

namespace {

void check_params(const AssignerParams& p) {
  if (!(p.pos_thr > 0.0 && p.pos_thr <= 1.0) || !(p.neg_thr > 0.0 && p.neg_thr <= 1.0)) {
    throw std::invalid_argument("assign: thresholds must lie in (0, 1]");
  }
  if (p.pos_thr < p.neg_thr) {
    throw std::invalid_argument("assign: pos_thr must be >= neg_thr");
  }
}

struct Quota {
  std::size_t pos;
  std::size_t neg;
};

Quota quota(const SamplerParams& p, std::size_t n_pos_avail, std::size_t n_neg_avail) {
  if (p.n_total == 0) throw std::invalid_argument("sampler: n_total must be positive");
  if (!(p.pos_fraction >= 0.0 && p.pos_fraction <= 1.0)) {
    throw std::invalid_argument("sampler: pos_fraction must lie in [0, 1]");
  }
  const auto pos_cap = static_cast<std::size_t>(std::floor(p.pos_fraction * static_cast<double>(p.n_total)));
  const std::size_t n_pos = std::min(pos_cap, n_pos_avail);
  const std::size_t n_neg = std::min(p.n_total - n_pos, n_neg_avail);
  return {n_pos, n_neg};
}

// Partial Fisher-Yates: the first k entries become a uniform draw.
void draw_prefix(std::vector<std::size_t>& pool, std::size_t k, std::mt19937_64& rng) {
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(k);
}

}  // namespace

Assignment assign(std::span<const BBox> proposals, std::span<const int> proposal_images,
                  std::span<const GroundTruth> gts, int num_classes,
                  const AssignerParams& params) {
  check_params(params);
  if (num_classes <= 0) throw std::invalid_argument("assign: num_classes must be positive");
  if (!proposal_images.empty() && proposal_images.size() != proposals.size()) {
    throw std::invalid_argument("assign: proposal_images size mismatch");
  }
  for (const auto& gt : gts) {
    if (gt.class_id < 0 || gt.class_id >= num_classes) {
      throw std::invalid_argument("assign: ground truth class out of range: " +
                                  std::to_string(gt.class_id));
    }
    if (!gt.box.valid()) throw std::invalid_argument("assign: invalid ground-truth box");
  }

  Assignment out(proposals.size());
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    double best = 0.0;
    std::optional<std::size_t> best_gt;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (!proposal_images.empty() && gts[g].image_id != proposal_images[i]) continue;
      const double v = iou(proposals[i], gts[g].box);
      if (!best_gt || v > best) {
        best = v;
        best_gt = g;
      }
    }
    auto& a = out[i];
    a.max_iou = best;
    a.target_class = num_classes;
    if (best_gt && best >= params.pos_thr) {
      a.label = SampleLabel::kPositive;
      a.matched_gt = best_gt;
      a.target_class = gts[*best_gt].class_id;
    } else if (best < params.neg_thr) {
      a.label = SampleLabel::kNegative;
    } else {
      a.label = SampleLabel::kIgnored;
    }
  }
  return out;
}

Assignment assign(std::span<const BBox> proposals, std::span<const GroundTruth> gts,
                  int num_classes, const AssignerParams& params) {
  return assign(proposals, {}, gts, num_classes, params);
}

std::vector<std::size_t> SampleBatch::positives() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size(); ++i) {
    if (is_positive(i)) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> SampleBatch::negatives() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size(); ++i) {
    if (is_negative(i)) out.push_back(i);
  }
  return out;
}

double SampleBatch::max_foreground_score(std::size_t i) const {
  return class_scores.row(static_cast<Eigen::Index>(i)).head(num_classes).maxCoeff();
}

double SampleBatch::regressed_iou(std::size_t i) const {
  const auto& m = assignment[i].matched_gt;
  if (!m) return 0.0;
  return iou(regressed_box[i], gts[*m].box);
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    double total = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      out(r, c) = std::exp(logits(r, c) - m);
      total += out(r, c);
    }
    out.row(r) /= total;
  }
  return out;
}

void SampleBatch::set_predictions(const Eigen::MatrixXd& new_logits, std::vector<Delta> deltas) {
  if (new_logits.rows() != static_cast<Eigen::Index>(size()) ||
      new_logits.cols() != num_classes + 1 || deltas.size() != size()) {
    throw std::invalid_argument("SampleBatch::set_predictions: shape mismatch");
  }
  logits = new_logits;
  class_scores = softmax_rows(logits);
  reg_delta = std::move(deltas);
  regressed_box.resize(size());
  for (std::size_t i = 0; i < size(); ++i) {
    regressed_box[i] = apply_delta(proposals[i], reg_delta[i]);
  }
}

SampleBatch SampleBatch::subset(std::span<const std::size_t> indices) const {
  SampleBatch out;
  out.num_classes = num_classes;
  out.gts = gts;
  const auto n = static_cast<Eigen::Index>(indices.size());
  out.logits.resize(n, logits.cols());
  out.class_scores.resize(n, class_scores.cols());
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto src = indices[static_cast<std::size_t>(r)];
    if (src >= size()) throw std::out_of_range("SampleBatch::subset: index out of range");
    out.proposals.push_back(proposals[src]);
    out.image_ids.push_back(image_ids[src]);
    out.assignment.push_back(assignment[src]);
    out.logits.row(r) = logits.row(static_cast<Eigen::Index>(src));
    out.class_scores.row(r) = class_scores.row(static_cast<Eigen::Index>(src));
    out.reg_delta.push_back(reg_delta[src]);
    out.regressed_box.push_back(regressed_box[src]);
    out.reg_target.push_back(reg_target[src]);
  }
  return out;
}

SampleBatch make_batch(std::vector<BBox> proposals, std::vector<int> image_ids,
                       std::vector<GroundTruth> gts, int num_classes,
                       const AssignerParams& params) {
  if (image_ids.empty()) image_ids.assign(proposals.size(), 0);
  SampleBatch b;
  b.num_classes = num_classes;
  b.assignment = assign(proposals, image_ids, gts, num_classes, params);
  b.proposals = std::move(proposals);
  b.image_ids = std::move(image_ids);
  b.gts = std::move(gts);
  b.reg_target.assign(b.size(), Delta{});
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (b.is_positive(i)) {
      b.reg_target[i] = encode_delta(b.proposals[i], b.gts[*b.assignment[i].matched_gt].box);
    }
  }
  b.set_predictions(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(b.size()), num_classes + 1),
                    std::vector<Delta>(b.size()));
  return b;
}

std::vector<std::size_t> sample_random(const SampleBatch& batch, const SamplerParams& params,
                                       std::mt19937_64& rng) {
  auto pos = batch.positives();
  auto neg = batch.negatives();
  const Quota q = quota(params, pos.size(), neg.size());
  draw_prefix(pos, q.pos, rng);
  draw_prefix(neg, q.neg, rng);
  pos.insert(pos.end(), neg.begin(), neg.end());
  std::sort(pos.begin(), pos.end());
  return pos;
}

std::vector<std::size_t> sample_random(const SampleBatch& batch, const SamplerParams& params,
                                       std::uint64_t rng_seed) {
  std::mt19937_64 rng(rng_seed);
  return sample_random(batch, params, rng);
}

std::vector<std::size_t> sample_hard(const SampleBatch& batch,
                                     std::span<const double> per_sample_cls_loss,
                                     const SamplerParams& params) {
  if (per_sample_cls_loss.size() != batch.size()) {
    throw std::invalid_argument("sample_hard: loss vector not aligned with batch");
  }
  auto pos = batch.positives();
  auto neg = batch.negatives();
  const Quota q = quota(params, pos.size(), neg.size());
  auto by_loss = [&](std::size_t a, std::size_t b) {
    if (per_sample_cls_loss[a] != per_sample_cls_loss[b]) {
      return per_sample_cls_loss[a] > per_sample_cls_loss[b];
    }
    return a < b;
  };
  std::partial_sort(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(q.pos), pos.end(), by_loss);
  std::partial_sort(neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(q.neg), neg.end(), by_loss);
  pos.resize(q.pos);
  neg.resize(q.neg);
  pos.insert(pos.end(), neg.begin(), neg.end());
  std::sort(pos.begin(), pos.end());
  return pos;
}

}  // namespace pisa
