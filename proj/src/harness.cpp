#include "pisa/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace pisa {

namespace {

constexpr std::array<double, 4> kFeatureStds{0.1, 0.1, 0.2, 0.2};
constexpr double kCoverageIou = 0.7;
constexpr double kMinBoxSide = 2.0;

BBox clip_box(const BBox& b, double extent) {
  return {std::clamp(b.x1, 0.0, extent), std::clamp(b.y1, 0.0, extent),
          std::clamp(b.x2, 0.0, extent), std::clamp(b.y2, 0.0, extent)};
}

// Sorts corners and enforces a minimal side so the box can act as a delta
// source.
BBox tidy_box(double ax, double ay, double bx, double by, double extent) {
  BBox b{std::min(ax, bx), std::min(ay, by), std::max(ax, bx), std::max(ay, by)};
  b = clip_box(b, extent);
  if (b.width() < kMinBoxSide) {
    const double c = std::clamp(0.5 * (b.x1 + b.x2), kMinBoxSide / 2, extent - kMinBoxSide / 2);
    b.x1 = c - kMinBoxSide / 2;
    b.x2 = c + kMinBoxSide / 2;
  }
  if (b.height() < kMinBoxSide) {
    const double c = std::clamp(0.5 * (b.y1 + b.y2), kMinBoxSide / 2, extent - kMinBoxSide / 2);
    b.y1 = c - kMinBoxSide / 2;
    b.y2 = c + kMinBoxSide / 2;
  }
  return b;
}

void validate_generator(const GeneratorConfig& g) {
  auto fail = [](const std::string& m) { throw std::invalid_argument("data: " + m); };
  if (g.num_classes < 1) fail("num_classes must be >= 1");
  if (!(g.extent > 0.0)) fail("extent must be positive");
  if (g.gts_min < 1 || g.gts_max < g.gts_min) fail("need 1 <= gts_min <= gts_max");
  if (!(g.gt_size_min >= kMinBoxSide) || g.gt_size_max < g.gt_size_min) {
    fail("need 2 <= gt_size_min <= gt_size_max");
  }
  if (g.gt_size_max > g.extent) fail("gt_size_max does not fit inside the image extent");
  if (g.proposals_per_gt < 1) fail("proposals_per_gt must be >= 1");
  if (g.background_proposals < 0) fail("background_proposals must be >= 0");
  if (g.proposals_per_distractor < 0) fail("proposals_per_distractor must be >= 0");
  if (g.background_cluster_size < 1) fail("background_cluster_size must be >= 1");
  if (!(g.background_cluster_jitter >= 0.0)) fail("background_cluster_jitter must be non-negative");
  if (g.distractors_min < 0 || g.distractors_max < g.distractors_min) {
    fail("need 0 <= distractors_min <= distractors_max");
  }
  if (!(g.distractor_gain >= 0.0)) fail("distractor_gain must be non-negative");
  if (g.objectness_noise < 0.0) fail("objectness_noise must be non-negative");
  if (g.jitter_scales.empty()) fail("jitter_scales must not be empty");
  for (double s : g.jitter_scales) {
    if (!(s >= 0.0)) fail("jitter_scales must be non-negative");
  }
  if (!(g.jitter >= 0.0)) fail("jitter must be non-negative");
  if (g.evidence_noise < 0.0 || g.iou_cue_noise < 0.0 || g.quality_cue_noise < 0.0) {
    fail("noise levels must be non-negative");
  }
  if (g.loc_noise_min < 0.0 || g.loc_noise_max < g.loc_noise_min) {
    fail("need 0 <= loc_noise_min <= loc_noise_max");
  }
}

double normal(std::mt19937_64& rng, double sigma) {
  if (sigma == 0.0) return 0.0;
  return std::normal_distribution<double>(0.0, sigma)(rng);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  if (hi <= lo) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

void fill_features(SyntheticScene& scene, const GeneratorConfig& g, std::mt19937_64& rng) {
  const int c_count = g.num_classes;
  const auto n = static_cast<Eigen::Index>(scene.proposals.size());
  scene.features = Eigen::MatrixXd::Zero(n, feature_dim(c_count));
  for (Eigen::Index i = 0; i < n; ++i) {
    const BBox& p = scene.proposals[static_cast<std::size_t>(i)];
    // Nearest object-like region, labeled or not, drives the cues.
    double q = 0.0;
    const GroundTruth* nearest = nullptr;
    double gain = 0.0;
    double sign = 0.0;
    auto scan = [&](const std::vector<GroundTruth>& objs, double obj_gain, double obj_sign) {
      for (const auto& o : objs) {
        const double v = iou(p, o.box);
        if (!nearest || v > q) {
          q = v;
          nearest = &o;
          gain = obj_gain;
          sign = obj_sign;
        }
      }
    };
    scan(scene.gts, g.evidence_gain, 1.0);
    scan(scene.distractors, g.distractor_gain, -1.0);
    std::array<double, 4> t{};
    int cls = -1;
    if (nearest && q > 0.0) {
      cls = nearest->class_id;
      const Delta d = encode_delta(p, nearest->box);
      t = {d.dx, d.dy, d.dw, d.dh};
      for (std::size_t j = 0; j < 4; ++j) t[j] = std::clamp(t[j] / kFeatureStds[j], -5.0, 5.0);
    }
    for (int c = 0; c < c_count; ++c) {
      scene.features(i, c) = (c == cls ? gain * q : 0.0) + normal(rng, g.evidence_noise);
    }
    const double sigma = uniform(rng, g.loc_noise_min, g.loc_noise_max);
    for (int j = 0; j < 4; ++j) {
      scene.features(i, c_count + j) = t[static_cast<std::size_t>(j)] + normal(rng, sigma);
    }
    scene.features(i, c_count + 4) = q + normal(rng, g.iou_cue_noise);
    scene.features(i, c_count + 5) = sigma + normal(rng, g.quality_cue_noise);
    scene.features(i, c_count + 6) = sign * g.objectness_shift * q + std::pow(1.0 - q, 4) * g.background_objectness +
                                      normal(rng, g.objectness_noise);
  }
}

}  // namespace

std::vector<SyntheticScene> gen_scenes(const GeneratorConfig& g, int count, std::uint64_t seed,
                                       int first_image_id) {
  validate_generator(g);
  if (count < 0) throw std::invalid_argument("gen_scenes: negative scene count");
  std::mt19937_64 rng(seed);
  std::vector<SyntheticScene> scenes;
  scenes.reserve(static_cast<std::size_t>(count));
  for (int s = 0; s < count; ++s) {
    SyntheticScene scene;
    scene.image_id = first_image_id + s;
    scene.extent = g.extent;
    const int n_gt = std::uniform_int_distribution<int>(g.gts_min, g.gts_max)(rng);
    for (int k = 0; k < n_gt; ++k) {
      const double w = uniform(rng, g.gt_size_min, g.gt_size_max);
      const double h = uniform(rng, g.gt_size_min, g.gt_size_max);
      const double x = uniform(rng, 0.0, g.extent - w);
      const double y = uniform(rng, 0.0, g.extent - h);
      const int cls = std::uniform_int_distribution<int>(0, g.num_classes - 1)(rng);
      scene.gts.push_back({{x, y, x + w, y + h}, cls, scene.image_id});
    }
    const int n_distractors = std::uniform_int_distribution<int>(g.distractors_min, g.distractors_max)(rng);
    for (int k = 0; k < n_distractors; ++k) {
      const double w = uniform(rng, g.gt_size_min, g.gt_size_max);
      const double h = uniform(rng, g.gt_size_min, g.gt_size_max);
      const double x = uniform(rng, 0.0, g.extent - w);
      const double y = uniform(rng, 0.0, g.extent - h);
      const int cls = std::uniform_int_distribution<int>(0, g.num_classes - 1)(rng);
      scene.distractors.push_back({{x, y, x + w, y + h}, cls, scene.image_id});
    }
    auto jittered = [&](const BBox& box, int count) {
      const double w = box.width();
      const double h = box.height();
      for (int j = 0; j < count; ++j) {
        const double s = g.jitter * g.jitter_scales[static_cast<std::size_t>(j) % g.jitter_scales.size()];
        scene.proposals.push_back(tidy_box(box.x1 + normal(rng, s * w), box.y1 + normal(rng, s * h),
                                           box.x2 + normal(rng, s * w), box.y2 + normal(rng, s * h),
                                           g.extent));
      }
    };
    for (const auto& gt : scene.gts) {
      const std::size_t first = scene.proposals.size();
      jittered(gt.box, g.proposals_per_gt);
      bool covered = false;
      for (std::size_t i = first; i < scene.proposals.size(); ++i) {
        covered = covered || iou(scene.proposals[i], gt.box) >= kCoverageIou;
      }
      if (!covered) scene.proposals[first] = gt.box;
    }
    for (const auto& d : scene.distractors) jittered(d.box, g.proposals_per_distractor);
    // Background proposals come in clumps around random anchor boxes.
    BBox anchor;
    for (int j = 0; j < g.background_proposals; ++j) {
      if (j % g.background_cluster_size == 0) {
        const double w = uniform(rng, g.gt_size_min / 2, g.gt_size_max);
        const double h = uniform(rng, g.gt_size_min / 2, g.gt_size_max);
        const double x = uniform(rng, 0.0, g.extent - w);
        const double y = uniform(rng, 0.0, g.extent - h);
        anchor = {x, y, x + w, y + h};
        scene.proposals.push_back(anchor);
        continue;
      }
      const double sw = g.background_cluster_jitter * anchor.width();
      const double sh = g.background_cluster_jitter * anchor.height();
      scene.proposals.push_back(tidy_box(anchor.x1 + normal(rng, sw), anchor.y1 + normal(rng, sh),
                                         anchor.x2 + normal(rng, sw), anchor.y2 + normal(rng, sh), g.extent));
    }
    fill_features(scene, g, rng);
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

DetectorHead DetectorHead::zeros(int num_classes, int features) {
  DetectorHead h;
  h.cls_w = Eigen::MatrixXd::Zero(num_classes + 1, features);
  h.cls_b = Eigen::VectorXd::Zero(num_classes + 1);
  h.reg_w = Eigen::MatrixXd::Zero(4, features);
  h.reg_b = Eigen::VectorXd::Zero(4);
  return h;
}

std::size_t DetectorHead::num_params() const {
  return static_cast<std::size_t>(cls_w.size() + cls_b.size() + reg_w.size() + reg_b.size());
}

Eigen::VectorXd DetectorHead::flatten() const {
  Eigen::VectorXd v(static_cast<Eigen::Index>(num_params()));
  Eigen::Index o = 0;
  for (Eigen::Index r = 0; r < cls_w.rows(); ++r)
    for (Eigen::Index c = 0; c < cls_w.cols(); ++c) v(o++) = cls_w(r, c);
  for (Eigen::Index r = 0; r < cls_b.size(); ++r) v(o++) = cls_b(r);
  for (Eigen::Index r = 0; r < reg_w.rows(); ++r)
    for (Eigen::Index c = 0; c < reg_w.cols(); ++c) v(o++) = reg_w(r, c);
  for (Eigen::Index r = 0; r < reg_b.size(); ++r) v(o++) = reg_b(r);
  return v;
}

void DetectorHead::unflatten(const Eigen::VectorXd& v) {
  if (v.size() != static_cast<Eigen::Index>(num_params())) {
    throw std::invalid_argument("DetectorHead::unflatten: size mismatch");
  }
  Eigen::Index o = 0;
  for (Eigen::Index r = 0; r < cls_w.rows(); ++r)
    for (Eigen::Index c = 0; c < cls_w.cols(); ++c) cls_w(r, c) = v(o++);
  for (Eigen::Index r = 0; r < cls_b.size(); ++r) cls_b(r) = v(o++);
  for (Eigen::Index r = 0; r < reg_w.rows(); ++r)
    for (Eigen::Index c = 0; c < reg_w.cols(); ++c) reg_w(r, c) = v(o++);
  for (Eigen::Index r = 0; r < reg_b.size(); ++r) reg_b(r) = v(o++);
}

bool DetectorHead::finite() const {
  return cls_w.allFinite() && cls_b.allFinite() && reg_w.allFinite() && reg_b.allFinite();
}

Eigen::MatrixXd DetectorHead::logits(const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd z = x * cls_w.transpose();
  z.rowwise() += cls_b.transpose();
  return z;
}

std::vector<Delta> DetectorHead::deltas(const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd r = x * reg_w.transpose();
  r.rowwise() += reg_b.transpose();
  std::vector<Delta> out(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    out[static_cast<std::size_t>(i)] = {r(i, 0) * delta_stds[0], r(i, 1) * delta_stds[1],
                                        r(i, 2) * delta_stds[2], r(i, 3) * delta_stds[3]};
  }
  return out;
}

Strategy parse_strategy(const std::string& s) {
  if (s == "R") return Strategy::kRandom;
  if (s == "H") return Strategy::kHard;
  if (s == "P") return Strategy::kPrime;
  throw std::invalid_argument("unknown sampling strategy '" + s + "' (expected R, H or P)");
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kRandom: return "R";
    case Strategy::kHard: return "H";
    case Strategy::kPrime: return "P";
  }
  return "?";
}

void ExperimentConfig::validate() const {
  validate_generator(data.generator);
  auto fail = [](const std::string& m) { throw std::invalid_argument(m); };
  if (data.n_train < 1 || data.n_eval < 1) fail("data: n_train and n_eval must be >= 1");
  for (double s : model.delta_stds) {
    if (!(s > 0.0)) fail("model: delta_stds must be positive");
  }
  if (train.epochs < 0) fail("train: epochs must be >= 0");
  if (!(train.lr > 0.0)) fail("train: lr must be positive");
  if (train.batch_images < 1) fail("train: batch_images must be >= 1");
  if (!(train.grad_clip > 0.0)) fail("train: grad_clip must be positive");
  if (!(train.momentum >= 0.0 && train.momentum < 1.0)) fail("train: momentum must lie in [0, 1)");
  for (double f : train.lr_steps) {
    if (!(f >= 0.0 && f <= 1.0)) fail("train: lr_steps must be epoch fractions in [0, 1]");
  }
  if (sampling.rois_per_image < 1) fail("sampling: rois_per_image must be >= 1");
  if (!(sampling.pos_fraction >= 0.0 && sampling.pos_fraction <= 1.0)) {
    fail("sampling: pos_fraction must lie in [0, 1]");
  }
  if (!(sampling.pos_thr > 0.0 && sampling.pos_thr <= 1.0 && sampling.neg_thr > 0.0 &&
        sampling.neg_thr <= sampling.pos_thr)) {
    fail("sampling: need 0 < neg_thr <= pos_thr <= 1");
  }
  if (!(isr.gamma_pos >= 0.0) || !(isr.gamma_neg >= 0.0)) fail("isr: gamma must be >= 0");
  if (!(isr.beta_pos >= 0.0 && isr.beta_pos < 1.0) || !(isr.beta_neg >= 0.0 && isr.beta_neg < 1.0)) {
    fail("isr: beta must lie in [0, 1)");
  }
  if (!(isr.cluster_iou_thr > 0.0 && isr.cluster_iou_thr <= 1.0)) fail("isr: cluster_iou_thr must lie in (0, 1]");
  if (!(carl.k > 0.0)) fail("carl: k must be > 0");
  if (!(carl.b >= 0.0 && carl.b < 1.0)) fail("carl: b must lie in [0, 1)");
  if (!(carl.weight >= 0.0)) fail("carl: weight must be >= 0");
  if (!(reg_weight >= 0.0)) fail("reg_weight must be >= 0");
  if (eval.thetas.empty()) fail("eval: thetas must not be empty");
  for (double t : eval.thetas) {
    if (!(t > 0.0 && t <= 1.0)) fail("eval: thetas must lie in (0, 1]");
  }
  if (!(eval.nms_thr > 0.0 && eval.nms_thr <= 1.0)) fail("eval: nms_thr must lie in (0, 1]");
  if (!(eval.score_thr >= 0.0 && eval.score_thr < 1.0)) fail("eval: score_thr must lie in [0, 1)");
  if (eval.max_dets < 1) fail("eval: max_dets must be >= 1");
}

std::string ExperimentConfig::strategy_label() const {
  std::string s = to_string(sampling.pos) + "/" + to_string(sampling.neg);
  if (isr.enable_pos && sampling.pos != Strategy::kPrime) s += "+isr_p";
  if (isr.enable_neg && sampling.neg != Strategy::kPrime) s += "+isr_n";
  if (carl.enable) s += "+carl";
  return s;
}

double EvalSummary::ap_at(double theta) const {
  for (std::size_t t = 0; t < thetas.size(); ++t) {
    if (std::abs(thetas[t] - theta) < 1e-9) return ap_by_theta[t];
  }
  throw std::out_of_range("EvalSummary::ap_at: threshold not evaluated");
}

EvalSummary summarize(const EvalReport& report) {
  EvalSummary s;
  s.thetas = report.thetas;
  for (const auto& ap : report.ap_by_theta) s.ap_by_theta.push_back(ap.value_or(0.0));
  s.map = report.map.value_or(0.0);
  return s;
}

Eigen::MatrixXd stack_features(std::span<const SyntheticScene> scenes) {
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  for (const auto& s : scenes) {
    rows += s.features.rows();
    cols = s.features.cols();
  }
  Eigen::MatrixXd x(rows, cols);
  Eigen::Index o = 0;
  for (const auto& s : scenes) {
    x.middleRows(o, s.features.rows()) = s.features;
    o += s.features.rows();
  }
  return x;
}

SampleBatch scene_batch(std::span<const SyntheticScene> scenes, const DetectorHead& head,
                        const ExperimentConfig& config) {
  std::vector<BBox> proposals;
  std::vector<int> images;
  std::vector<GroundTruth> gts;
  for (const auto& s : scenes) {
    proposals.insert(proposals.end(), s.proposals.begin(), s.proposals.end());
    images.insert(images.end(), s.proposals.size(), s.image_id);
    gts.insert(gts.end(), s.gts.begin(), s.gts.end());
  }
  SampleBatch batch = make_batch(std::move(proposals), std::move(images), std::move(gts),
                                 config.data.generator.num_classes,
                                 {config.sampling.pos_thr, config.sampling.neg_thr});
  const Eigen::MatrixXd x = stack_features(scenes);
  batch.set_predictions(head.logits(x), head.deltas(x));
  return batch;
}

std::vector<ImageRecord> detect(const SampleBatch& batch, std::span<const SyntheticScene> scenes,
                                const ExperimentConfig::Eval& params) {
  std::vector<ImageRecord> out;
  std::map<int, std::size_t> slot;
  for (const auto& s : scenes) {
    slot[s.image_id] = out.size();
    out.push_back({s.image_id, s.gts, {}});
  }
  // image -> class -> candidate detections
  std::map<int, std::map<int, std::vector<Detection>>> pending;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const int image = batch.image_ids[i];
    const auto it = slot.find(image);
    if (it == slot.end()) throw std::invalid_argument("detect: batch image missing from scene list");
    const BBox box = clip_box(batch.regressed_box[i], scenes[it->second].extent);
    if (!(box.width() > 0.0) || !(box.height() > 0.0)) continue;
    for (int c = 0; c < batch.num_classes; ++c) {
      const double score = batch.class_scores(static_cast<Eigen::Index>(i), c);
      if (score < params.score_thr) continue;
      pending[image][c].push_back({box, c, score});
    }
  }
  for (auto& [image, per_class] : pending) {
    auto& rec = out[slot[image]];
    for (auto& [cls, dets] : per_class) {
      const auto kept = nms(dets, params.nms_thr);
      rec.dets.insert(rec.dets.end(), kept.begin(), kept.end());
    }
    std::stable_sort(rec.dets.begin(), rec.dets.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    if (rec.dets.size() > static_cast<std::size_t>(params.max_dets)) {
      rec.dets.resize(static_cast<std::size_t>(params.max_dets));
    }
  }
  return out;
}

EvalReport evaluate(const DetectorHead& head, std::span<const SyntheticScene> scenes,
                    const ExperimentConfig& config) {
  const SampleBatch batch = scene_batch(scenes, head, config);
  const auto images = detect(batch, scenes, config.eval);
  return coco_map(images, config.eval.thetas);
}

std::vector<std::size_t> select_samples(const SampleBatch& batch, const ExperimentConfig& config,
                                        std::mt19937_64& rng) {
  const std::set<int> images(batch.image_ids.begin(), batch.image_ids.end());
  const SamplerParams sp{static_cast<std::size_t>(config.sampling.rois_per_image) * images.size(),
                         config.sampling.pos_fraction};
  const auto random = sample_random(batch, sp, rng);
  const bool hard_pos = config.sampling.pos == Strategy::kHard;
  const bool hard_neg = config.sampling.neg == Strategy::kHard;
  if (!hard_pos && !hard_neg) return random;

  std::vector<int> targets(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) targets[i] = batch.assignment[i].target_class;
  const std::vector<double> ones(batch.size(), 1.0);
  const auto ce = weighted_ce(batch.logits, targets, ones).per_sample;
  const auto hard = sample_hard(batch, ce, sp);

  std::vector<std::size_t> out;
  for (std::size_t i : hard_pos ? hard : random) {
    if (batch.is_positive(i)) out.push_back(i);
  }
  for (std::size_t i : hard_neg ? hard : random) {
    if (batch.is_negative(i)) out.push_back(i);
  }
  std::sort(out.begin(), out.end());
  return out;
}

StepOutput head_gradient(const DetectorHead& head, const SampleBatch& batch, const Eigen::MatrixXd& x,
                         std::span<const std::size_t> selected, const ExperimentConfig& config) {
  const SampleBatch sub = batch.subset(selected);
  Eigen::MatrixXd xs(static_cast<Eigen::Index>(selected.size()), x.cols());
  for (std::size_t k = 0; k < selected.size(); ++k) {
    xs.row(static_cast<Eigen::Index>(k)) = x.row(static_cast<Eigen::Index>(selected[k]));
  }

  std::optional<WeightSet> weights;
  if (config.isr_pos_active() || config.isr_neg_active()) {
    std::vector<int> targets(sub.size());
    for (std::size_t i = 0; i < sub.size(); ++i) targets[i] = sub.assignment[i].target_class;
    const std::vector<double> ones(sub.size(), 1.0);
    const auto ce = weighted_ce(sub.logits, targets, ones).per_sample;
    IsrParams p = config.isr;
    p.enable_pos = config.isr_pos_active();
    p.enable_neg = config.isr_neg_active();
    weights = isr_weights(sub, ce, p);
  }

  LossConfig lc;
  lc.carl = config.carl;
  lc.reg_weight = config.reg_weight;
  lc.delta_stds = head.delta_stds;

  StepOutput out;
  out.loss = total_loss(sub, weights ? &*weights : nullptr, lc);

  Eigen::MatrixXd g_reg(xs.rows(), 4);
  for (Eigen::Index i = 0; i < xs.rows(); ++i) {
    const Delta& d = out.loss.grad_deltas[static_cast<std::size_t>(i)];
    g_reg(i, 0) = d.dx * head.delta_stds[0];
    g_reg(i, 1) = d.dy * head.delta_stds[1];
    g_reg(i, 2) = d.dw * head.delta_stds[2];
    g_reg(i, 3) = d.dh * head.delta_stds[3];
  }
  DetectorHead grad = DetectorHead::zeros(static_cast<int>(head.cls_b.size()) - 1, static_cast<int>(x.cols()));
  grad.cls_w = out.loss.grad_logits.transpose() * xs;
  grad.cls_b = out.loss.grad_logits.colwise().sum().transpose();
  grad.reg_w = g_reg.transpose() * xs;
  grad.reg_b = g_reg.colwise().sum().transpose();
  out.grad = grad.flatten();
  return out;
}

TrainResult train(std::span<const SyntheticScene> train_scenes,
                  std::span<const SyntheticScene> eval_scenes, const ExperimentConfig& config,
                  std::uint64_t seed) {
  config.validate();
  if (train_scenes.empty()) throw std::invalid_argument("train: no training scenes");
  const auto start = std::chrono::steady_clock::now();
  const int n_cls = config.data.generator.num_classes;
  const int n_feat = static_cast<int>(train_scenes.front().features.cols());

  TrainResult result;
  result.head = DetectorHead::zeros(n_cls, n_feat);
  result.head.delta_stds = config.model.delta_stds;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x7261696eu};
  std::mt19937_64 rng(seq);

  std::vector<std::size_t> order(train_scenes.size());
  std::iota(order.begin(), order.end(), 0);
  const auto per_batch = static_cast<std::size_t>(config.train.batch_images);

  Eigen::VectorXd velocity = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(result.head.num_params()));
  for (int epoch = 0; epoch < config.train.epochs; ++epoch) {
    double lr = config.train.lr;
    for (double f : config.train.lr_steps) {
      if (epoch >= static_cast<int>(std::ceil(f * config.train.epochs))) lr *= 0.1;
    }
    std::shuffle(order.begin(), order.end(), rng);
    EpochStats stats;
    std::size_t steps = 0;
    for (std::size_t s = 0; s < order.size(); s += per_batch) {
      std::vector<SyntheticScene> chunk;
      for (std::size_t j = s; j < std::min(order.size(), s + per_batch); ++j) {
        chunk.push_back(train_scenes[order[j]]);
      }
      const SampleBatch batch = scene_batch(chunk, result.head, config);
      const Eigen::MatrixXd x = stack_features(chunk);
      const auto selected = select_samples(batch, config, rng);
      if (selected.empty()) continue;
      const StepOutput step = head_gradient(result.head, batch, x, selected, config);
      if (!std::isfinite(step.loss.total()) || !step.grad.allFinite()) {
        std::ostringstream msg;
        msg << "training diverged at epoch " << epoch << " step " << steps << " (loss "
            << step.loss.total() << ")";
        throw NumericalError(msg.str());
      }
      Eigen::VectorXd g = step.grad;
      const double norm = g.norm();
      if (norm > config.train.grad_clip) g *= config.train.grad_clip / norm;
      velocity = config.train.momentum * velocity + g;
      result.head.unflatten(result.head.flatten() - lr * velocity);
      stats.cls_loss += step.loss.cls_loss;
      stats.reg_loss += step.loss.reg_loss;
      stats.carl_loss += step.loss.carl_loss;
      ++steps;
    }
    if (steps > 0) {
      const double inv = 1.0 / static_cast<double>(steps);
      stats.cls_loss *= inv;
      stats.reg_loss *= inv;
      stats.carl_loss *= inv;
    }
    stats.total = stats.cls_loss + stats.reg_loss + stats.carl_loss;
    result.record.epochs.push_back(stats);
  }
  if (!result.head.finite()) throw NumericalError("training produced non-finite parameters");

  result.record.config = config;
  result.record.strategy = config.strategy_label();
  result.record.seed = seed;
  result.record.eval = summarize(evaluate(result.head, eval_scenes, config));
  result.record.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

TrainResult run_experiment(const ExperimentConfig& config, std::uint64_t seed) {
  config.validate();
  const auto& d = config.data;
  const auto train_scenes = gen_scenes(d.generator, d.n_train, seed, 0);
  const auto eval_scenes = gen_scenes(d.generator, d.n_eval, seed ^ 0x9e3779b97f4a7c15ULL, d.n_train);
  return train(train_scenes, eval_scenes, config, seed);
}

namespace {

double positive_ce(const SampleBatch& batch, const std::vector<std::size_t>& pos,
                   const std::vector<std::size_t>& boosted, double boost) {
  double total = 0.0;
  std::set<std::size_t> lifted(boosted.begin(), boosted.end());
  for (std::size_t i : pos) {
    const auto r = static_cast<Eigen::Index>(i);
    const int t = batch.assignment[i].target_class;
    Eigen::RowVectorXd z = batch.logits.row(r);
    if (lifted.count(i)) z(t) += boost;
    const double m = z.maxCoeff();
    const double lse = m + std::log((z.array() - m).exp().sum());
    total += lse - z(t);
  }
  return total;
}

EvalSummary eval_batch(const SampleBatch& batch, std::span<const SyntheticScene> scenes,
                       const ExperimentConfig& config) {
  return summarize(coco_map(detect(batch, scenes, config.eval), config.eval.thetas));
}

}  // namespace

BoostResult simulate_boost(const SampleBatch& batch, std::span<const SyntheticScene> scenes,
                           const ExperimentConfig& config, std::size_t k, double budget,
                           BoostSelection selection, std::uint64_t seed) {
  if (!(budget >= 0.0 && budget < 1.0)) throw std::invalid_argument("simulate_boost: budget must lie in [0, 1)");
  BoostResult out;
  out.selection = selection;
  out.k = k;
  out.budget = budget;
  out.baseline = eval_batch(batch, scenes, config);

  // k samples per image: IoU-HLR is a per-image ranking.
  const auto pos = batch.positives();
  std::map<int, std::vector<std::size_t>> pos_by_image;
  for (std::size_t i : pos) pos_by_image[batch.image_ids[i]].push_back(i);
  std::mt19937_64 rng(seed);
  for (auto& [image, members] : pos_by_image) {
    const std::size_t take = std::min(k, members.size());
    if (selection == BoostSelection::kTopHlr) {
      const auto ranked = iou_hlr(batch, members).by_rank();
      out.boosted.insert(out.boosted.end(), ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(take));
    } else {
      for (std::size_t i = 0; i < take; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, members.size() - 1);
        std::swap(members[i], members[pick(rng)]);
      }
      out.boosted.insert(out.boosted.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
    }
  }
  std::sort(out.boosted.begin(), out.boosted.end());

  const double base_loss = positive_ce(batch, pos, out.boosted, 0.0);
  out.requested_reduction = budget * base_loss;
  constexpr double kMaxBoost = 60.0;
  double boost = 0.0;
  if (out.requested_reduction > 0.0 && !out.boosted.empty()) {
    const double best = base_loss - positive_ce(batch, pos, out.boosted, kMaxBoost);
    if (best < out.requested_reduction) {
      out.reachable = false;
      boost = kMaxBoost;
    } else {
      double lo = 0.0;
      double hi = kMaxBoost;
      for (int it = 0; it < 200; ++it) {
        boost = 0.5 * (lo + hi);
        const double red = base_loss - positive_ce(batch, pos, out.boosted, boost);
        if (std::abs(red - out.requested_reduction) <= 1e-6 * out.requested_reduction) break;
        (red < out.requested_reduction ? lo : hi) = boost;
      }
    }
  } else if (out.requested_reduction > 0.0) {
    out.reachable = false;
  }
  out.boost = boost;
  out.achieved_reduction = base_loss - positive_ce(batch, pos, out.boosted, boost);

  SampleBatch lifted = batch;
  Eigen::MatrixXd z = batch.logits;
  for (std::size_t i : out.boosted) z(static_cast<Eigen::Index>(i), batch.assignment[i].target_class) += boost;
  lifted.set_predictions(z, batch.reg_delta);
  out.boosted_eval = eval_batch(lifted, scenes, config);
  for (std::size_t t = 0; t < out.baseline.ap_by_theta.size(); ++t) {
    out.ap_delta.push_back(out.boosted_eval.ap_by_theta[t] - out.baseline.ap_by_theta[t]);
  }
  return out;
}

namespace {

double regressed_overlap(const SampleBatch& batch, std::size_t i) {
  if (batch.is_positive(i)) return batch.regressed_iou(i);
  double best = 0.0;
  for (const auto& g : batch.gts) {
    if (g.image_id == batch.image_ids[i]) best = std::max(best, iou(batch.regressed_box[i], g.box));
  }
  return best;
}

}  // namespace

DistributionReport distribution_report(const SampleBatch& batch, std::span<const double> cls_losses,
                                       const HlrResult& pos_hlr, const HlrResult& neg_hlr,
                                       const DistributionParams& params) {
  if (cls_losses.size() != batch.size()) {
    throw std::invalid_argument("distribution_report: loss vector not aligned with batch");
  }
  if (params.hlr_bucket_width < 1) throw std::invalid_argument("distribution_report: bucket width must be >= 1");
  DistributionReport rep;
  std::mt19937_64 rng(params.seed);

  auto emit = [&](const std::string& side, const HlrResult& hlr) {
    std::map<int, std::vector<const HlrEntry*>> by_image;
    for (const auto& e : hlr.entries) by_image[batch.image_ids[e.sample]].push_back(&e);
    for (auto& [image, entries] : by_image) {
      const std::size_t take = std::min(params.per_image, entries.size());
      auto add = [&](const std::string& cat, const std::vector<const HlrEntry*>& list) {
        for (std::size_t j = 0; j < take; ++j) {
          const std::size_t i = list[j]->sample;
          rep.scatter.push_back({cat, side, i, image, regressed_overlap(batch, i), cls_losses[i]});
        }
      };
      auto shuffled = entries;
      for (std::size_t j = 0; j < take; ++j) {
        std::uniform_int_distribution<std::size_t> pick(j, shuffled.size() - 1);
        std::swap(shuffled[j], shuffled[pick(rng)]);
      }
      add("random", shuffled);
      auto hard = entries;
      std::stable_sort(hard.begin(), hard.end(), [&](const HlrEntry* a, const HlrEntry* b) {
        return cls_losses[a->sample] > cls_losses[b->sample];
      });
      add("hard", hard);
      auto prime = entries;
      std::stable_sort(prime.begin(), prime.end(),
                       [](const HlrEntry* a, const HlrEntry* b) { return a->hlr < b->hlr; });
      add("prime", prime);
    }

    std::map<int, std::pair<std::size_t, double>> buckets;
    for (const auto& e : hlr.entries) {
      const double score = side == "pos"
                               ? batch.class_scores(static_cast<Eigen::Index>(e.sample),
                                                    batch.assignment[e.sample].target_class)
                               : batch.max_foreground_score(e.sample);
      auto& b = buckets[e.hlr / params.hlr_bucket_width];
      b.first += 1;
      b.second += score;
    }
    for (const auto& [bucket, acc] : buckets) {
      const double lo = static_cast<double>(bucket * params.hlr_bucket_width);
      rep.hlr_buckets.push_back({side, bucket, lo, lo + params.hlr_bucket_width, acc.first,
                                 acc.second / static_cast<double>(acc.first)});
    }
  };
  emit("pos", pos_hlr);
  emit("neg", neg_hlr);

  const auto& edges = params.iou_edges;
  for (std::size_t b = 0; b + 1 < edges.size(); ++b) {
    std::size_t count = 0;
    double sum = 0.0;
    const bool last = b + 2 == edges.size();
    for (const auto& e : pos_hlr.entries) {
      const double v = batch.regressed_iou(e.sample);
      if (v >= edges[b] && (v < edges[b + 1] || (last && v <= edges[b + 1]))) {
        ++count;
        sum += batch.class_scores(static_cast<Eigen::Index>(e.sample), batch.assignment[e.sample].target_class);
      }
    }
    if (count > 0) {
      rep.iou_buckets.push_back({"pos", static_cast<int>(b), edges[b], edges[b + 1], count,
                                 sum / static_cast<double>(count)});
    }
  }
  return rep;
}

}  // namespace pisa
