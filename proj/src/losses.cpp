#include "pisa/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "pisa/geometry.hpp"

namespace pisa {

namespace {

std::array<double, 4> as_array(const Delta& d) { return {d.dx, d.dy, d.dw, d.dh}; }

Delta as_delta(const std::array<double, 4>& a) { return {a[0], a[1], a[2], a[3]}; }

}  // namespace

CeResult weighted_ce(const Eigen::MatrixXd& logits, std::span<const int> targets,
                     std::span<const double> weights) {
  const auto n = static_cast<std::size_t>(logits.rows());
  if (targets.size() != n || weights.size() != n) {
    throw std::invalid_argument("weighted_ce: inputs not aligned");
  }
  if (!logits.allFinite()) throw std::invalid_argument("weighted_ce: non-finite logits");
  CeResult out;
  out.grad_logits = Eigen::MatrixXd::Zero(logits.rows(), logits.cols());
  out.per_sample.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const int t = targets[i];
    if (t < 0 || t >= logits.cols()) throw std::invalid_argument("weighted_ce: target out of range");
    if (!std::isfinite(weights[i])) throw std::invalid_argument("weighted_ce: non-finite weight");
    const double m = logits.row(r).maxCoeff();
    double z = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) z += std::exp(logits(r, c) - m);
    const double log_z = m + std::log(z);
    const double ce = log_z - logits(r, t);
    out.per_sample[i] = ce;
    out.loss += weights[i] * ce;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      const double p = std::exp(logits(r, c) - log_z);
      out.grad_logits(r, c) = weights[i] * (p - (c == t ? 1.0 : 0.0));
    }
  }
  return out;
}

CarlResult carl(std::span<const double> p, std::span<const double> reg_losses, double k, double b) {
  if (p.size() != reg_losses.size()) throw std::invalid_argument("carl: inputs not aligned");
  if (!(k > 0.0)) throw std::invalid_argument("carl: k must be > 0");
  if (!(b >= 0.0 && b < 1.0)) throw std::invalid_argument("carl: b must lie in [0, 1)");
  CarlResult out;
  const std::size_t n = p.size();
  if (n == 0) return out;
  const double nd = static_cast<double>(n);

  out.v.resize(n);
  std::vector<double> dv(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double base = (1.0 - b) * p[i] + b;
    out.v[i] = std::pow(base, k);
    dv[i] = (1.0 - b) * k * std::pow(base, k - 1.0);
    out.v_sum += out.v[i];
  }
  const double s = out.v_sum;
  if (!(s > 0.0)) throw std::domain_error("carl: sum of v is zero");

  double vl = 0.0;
  for (std::size_t i = 0; i < n; ++i) vl += out.v[i] * reg_losses[i];

  out.c.resize(n);
  out.grad_p.resize(n);
  out.grad_p_direct.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.c[i] = nd * out.v[i] / s;
    out.loss += out.c[i] * reg_losses[i];
    out.grad_p[i] = nd / s * (reg_losses[i] - vl / s) * dv[i];
    out.grad_p_direct[i] = nd / s * (1.0 - out.v[i] / s) * dv[i] * reg_losses[i];
  }
  return out;
}

std::vector<double> carl_grad_approx(std::span<const double> p, std::span<const double> reg_losses,
                                     double k, double b) {
  if (p.size() < 2) {
    throw std::domain_error("carl_grad_approx: needs at least two samples (v_i << S fails for n = 1)");
  }
  const CarlResult exact = carl(p, reg_losses, k, b);
  const double nd = static_cast<double>(p.size());
  std::vector<double> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double dv = (1.0 - b) * k * std::pow((1.0 - b) * p[i] + b, k - 1.0);
    out[i] = nd / exact.v_sum * dv * reg_losses[i];
  }
  return out;
}

double regression_loss(const Delta& pred, const Delta& target, const std::array<double, 4>& stds) {
  const auto pa = as_array(pred);
  const auto ta = as_array(target);
  double total = 0.0;
  for (std::size_t c = 0; c < 4; ++c) total += smooth_l1((pa[c] - ta[c]) / stds[c]);
  return total;
}

LossBundle total_loss(const SampleBatch& batch, const WeightSet* weights, const LossConfig& config) {
  const std::size_t n = batch.size();
  const auto cols = static_cast<Eigen::Index>(batch.num_classes + 1);
  if (batch.logits.rows() != static_cast<Eigen::Index>(n) || batch.logits.cols() != cols ||
      batch.reg_delta.size() != n || batch.reg_target.size() != n) {
    throw std::invalid_argument("total_loss: inconsistent batch");
  }
  if (weights && weights->w_norm.size() != n) {
    throw std::invalid_argument("total_loss: weight set not aligned with batch");
  }
  LossBundle out;
  out.grad_logits = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), cols);
  out.grad_deltas.assign(n, Delta{});

  std::vector<int> targets(n);
  std::vector<double> cls_w(n, 0.0);
  std::size_t n_valid = 0;
  for (std::size_t i = 0; i < n; ++i) {
    targets[i] = batch.assignment[i].target_class;
    if (batch.assignment[i].label == SampleLabel::kIgnored) continue;
    ++n_valid;
    cls_w[i] = weights ? weights->w_norm[i] : 1.0;
  }
  if (n_valid > 0) {
    const CeResult ce = weighted_ce(batch.logits, targets, cls_w);
    const double scale = 1.0 / static_cast<double>(n_valid);
    out.cls_loss = ce.loss * scale;
    out.grad_logits += ce.grad_logits * scale;
  }

  const auto pos = batch.positives();
  if (pos.empty()) return out;
  const double inv_pos = 1.0 / static_cast<double>(pos.size());
  const auto& stds = config.delta_stds;

  std::vector<double> reg_l(pos.size());
  std::vector<std::array<double, 4>> reg_g(pos.size());
  for (std::size_t k = 0; k < pos.size(); ++k) {
    const std::size_t i = pos[k];
    const auto pa = as_array(batch.reg_delta[i]);
    const auto ta = as_array(batch.reg_target[i]);
    for (std::size_t c = 0; c < 4; ++c) {
      const double r = (pa[c] - ta[c]) / stds[c];
      reg_l[k] += smooth_l1(r);
      reg_g[k][c] = smooth_l1_grad(r) / stds[c];
    }
  }

  const bool use_carl = config.carl.enable;
  const bool use_reg = !(use_carl && config.carl.replace_reg);
  std::vector<std::array<double, 4>> gd(pos.size(), std::array<double, 4>{});
  if (use_reg) {
    for (std::size_t k = 0; k < pos.size(); ++k) {
      out.reg_loss += reg_l[k];
      for (std::size_t c = 0; c < 4; ++c) gd[k][c] += config.reg_weight * reg_g[k][c] * inv_pos;
    }
    out.reg_loss *= config.reg_weight * inv_pos;
  }

  if (use_carl) {
    std::vector<double> p(pos.size());
    for (std::size_t k = 0; k < pos.size(); ++k) {
      p[k] = batch.class_scores(static_cast<Eigen::Index>(pos[k]), batch.assignment[pos[k]].target_class);
    }
    const CarlResult cr = carl(p, reg_l, config.carl.k, config.carl.b);
    const double scale = config.carl.weight * inv_pos;
    out.carl_loss = cr.loss * scale;
    for (std::size_t k = 0; k < pos.size(); ++k) {
      const auto r = static_cast<Eigen::Index>(pos[k]);
      const int t = batch.assignment[pos[k]].target_class;
      const double gp = cr.grad_p[k] * scale;
      for (Eigen::Index c = 0; c < cols; ++c) {
        const double jac = p[k] * ((c == t ? 1.0 : 0.0) - batch.class_scores(r, c));
        out.grad_logits(r, c) += gp * jac;
      }
      for (std::size_t c = 0; c < 4; ++c) gd[k][c] += scale * cr.c[k] * reg_g[k][c];
    }
  }

  for (std::size_t k = 0; k < pos.size(); ++k) out.grad_deltas[pos[k]] = as_delta(gd[k]);
  return out;
}

}  // namespace pisa
