#include "pisa/isr.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pisa/hlr.hpp"

namespace pisa {

std::vector<std::vector<double>> rank_to_importance(const std::vector<std::vector<int>>& ranks_by_class) {
  std::size_t n_max = 0;
  for (const auto& ranks : ranks_by_class) n_max = std::max(n_max, ranks.size());
  std::vector<std::vector<double>> out(ranks_by_class.size());
  if (n_max == 0) return out;
  const double denom = static_cast<double>(n_max);
  for (std::size_t c = 0; c < ranks_by_class.size(); ++c) {
    const auto& ranks = ranks_by_class[c];
    out[c].reserve(ranks.size());
    for (int r : ranks) {
      if (r < 0 || static_cast<std::size_t>(r) >= ranks.size()) {
        throw std::invalid_argument("rank_to_importance: rank outside [0, n_j)");
      }
      out[c].push_back((denom - r) / denom);
    }
  }
  return out;
}

double importance_to_weight(double u, double gamma, double beta) {
  if (!(gamma > 0.0)) throw std::invalid_argument("importance_to_weight: gamma must be > 0");
  if (!(beta >= 0.0 && beta < 1.0)) {
    throw std::invalid_argument("importance_to_weight: beta must lie in [0, 1)");
  }
  return std::pow((1.0 - beta) * u + beta, gamma);
}

std::vector<double> normalize_weights(std::span<const double> w, std::span<const double> ce) {
  if (w.size() != ce.size()) throw std::invalid_argument("normalize_weights: size mismatch");
  double ce_sum = 0.0;
  double weighted_sum = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (ce[i] < 0.0) throw std::invalid_argument("normalize_weights: negative loss");
    ce_sum += ce[i];
    weighted_sum += w[i] * ce[i];
  }
  std::vector<double> out(w.begin(), w.end());
  if (weighted_sum == 0.0) return out;
  const double scale = ce_sum / weighted_sum;
  for (double& v : out) v *= scale;
  return out;
}

namespace {

double weight_or_limit(double u, double gamma, double beta) {
  if (gamma == 0.0) return 1.0;
  return importance_to_weight(u, gamma, beta);
}

}  // namespace

WeightSet isr_weights(const SampleBatch& batch, std::span<const double> ce, const IsrParams& params) {
  const std::size_t n = batch.size();
  if (ce.size() != n) throw std::invalid_argument("isr_weights: loss vector not aligned with batch");
  const int n_cls = batch.num_classes;

  WeightSet ws;
  ws.u.assign(n, 0.0);
  ws.w.assign(n, 0.0);
  ws.w_norm.assign(n, 0.0);
  ws.class_id.assign(n, -1);

  // One rank list per class; index n_cls is background.
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(n_cls) + 1);
  std::vector<std::vector<int>> ranks(static_cast<std::size_t>(n_cls) + 1);

  std::vector<std::vector<std::size_t>> pos_by_class(static_cast<std::size_t>(n_cls));
  for (std::size_t i : batch.positives()) {
    pos_by_class[static_cast<std::size_t>(batch.assignment[i].target_class)].push_back(i);
  }
  for (int c = 0; c < n_cls; ++c) {
    const HlrResult r = iou_hlr(batch, pos_by_class[static_cast<std::size_t>(c)]);
    for (const auto& e : r.entries) {
      members[static_cast<std::size_t>(c)].push_back(e.sample);
      ranks[static_cast<std::size_t>(c)].push_back(e.hlr);
    }
  }
  {
    const NegClustering clusters = nms_cluster(batch, params.cluster_iou_thr);
    const HlrResult r = score_hlr(batch, clusters);
    for (const auto& e : r.entries) {
      members[static_cast<std::size_t>(n_cls)].push_back(e.sample);
      ranks[static_cast<std::size_t>(n_cls)].push_back(e.hlr);
    }
  }

  const auto importance = rank_to_importance(ranks);
  for (std::size_t c = 0; c < members.size(); ++c) {
    const bool background = c == static_cast<std::size_t>(n_cls);
    const bool enabled = background ? params.enable_neg : params.enable_pos;
    const double gamma = background ? params.gamma_neg : params.gamma_pos;
    const double beta = background ? params.beta_neg : params.beta_pos;
    for (std::size_t k = 0; k < members[c].size(); ++k) {
      const std::size_t i = members[c][k];
      ws.class_id[i] = static_cast<int>(c);
      if (enabled) {
        ws.u[i] = importance[c][k];
        ws.w[i] = weight_or_limit(ws.u[i], gamma, beta);
      } else {
        ws.u[i] = 1.0;
        ws.w[i] = 1.0;
      }
    }
  }

  auto normalize_side = [&](const std::vector<std::size_t>& idx, bool enabled) {
    std::vector<double> w, l;
    for (std::size_t i : idx) {
      w.push_back(ws.w[i]);
      l.push_back(ce[i]);
    }
    const auto wn = enabled ? normalize_weights(w, l) : w;
    for (std::size_t k = 0; k < idx.size(); ++k) ws.w_norm[idx[k]] = wn[k];
  };
  normalize_side(batch.positives(), params.enable_pos);
  normalize_side(batch.negatives(), params.enable_neg);
  return ws;
}

}  // namespace pisa
