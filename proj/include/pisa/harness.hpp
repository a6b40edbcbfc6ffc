#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pisa/assignment.hpp"
#include "pisa/eval.hpp"
#include "pisa/hlr.hpp"
#include "pisa/isr.hpp"
#include "pisa/losses.hpp"

namespace pisa {

// Raised when training produces a non-finite loss or parameter.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GeneratorConfig {
  int num_classes = 3;
  double extent = 256.0;
  int gts_min = 1;
  int gts_max = 4;
  double gt_size_min = 32.0;
  double gt_size_max = 96.0;
  int proposals_per_gt = 12;
  // Corner jitter standard deviations relative to the GT size, cycled over
  // the proposals of each GT. `jitter` scales all of them.
  std::vector<double> jitter_scales{0.04, 0.08, 0.16, 0.30};
  double jitter = 1.0;
  int background_proposals = 48;
  int background_cluster_size = 12;
  double background_cluster_jitter = 0.1;
  // Unlabeled object-like regions: their proposals carry weaker class
  // evidence but are negatives.
  int distractors_min = 0;
  int distractors_max = 2;
  double distractor_gain = 3.0;
  int proposals_per_distractor = 4;
  // Objectness cue: +shift*IoU near real objects, -shift*IoU near
  // distractors, drifting to background_objectness as overlap vanishes.
  double objectness_shift = 1.5;
  double objectness_noise = 1.0;
  double background_objectness = 4.0;
  double evidence_gain = 3.0;
  double evidence_noise = 0.6;
  double iou_cue_noise = 0.15;
  double loc_noise_min = 0.02;
  double loc_noise_max = 0.8;
  double quality_cue_noise = 0.05;
};

inline int feature_dim(int num_classes) { return num_classes + 7; }

struct SyntheticScene {
  int image_id = 0;
  double extent = 0.0;
  std::vector<GroundTruth> gts;
  std::vector<GroundTruth> distractors;
  std::vector<BBox> proposals;
  Eigen::MatrixXd features;  // proposals x feature_dim
};

// Scenes are a pure function of (config, count, seed).
std::vector<SyntheticScene> gen_scenes(const GeneratorConfig& config, int count, std::uint64_t seed,
                                       int first_image_id = 0);

// Linear classification and class-agnostic regression branches. The
// regression branch predicts offsets divided by `delta_stds`.
struct DetectorHead {
  Eigen::MatrixXd cls_w;  // (C+1) x F
  Eigen::VectorXd cls_b;
  Eigen::MatrixXd reg_w;  // 4 x F
  Eigen::VectorXd reg_b;
  std::array<double, 4> delta_stds{0.1, 0.1, 0.2, 0.2};

  static DetectorHead zeros(int num_classes, int features);
  std::size_t num_params() const;
  Eigen::VectorXd flatten() const;
  void unflatten(const Eigen::VectorXd& v);
  bool finite() const;

  Eigen::MatrixXd logits(const Eigen::MatrixXd& x) const;
  std::vector<Delta> deltas(const Eigen::MatrixXd& x) const;
};

enum class Strategy { kRandom, kHard, kPrime };

Strategy parse_strategy(const std::string& s);
std::string to_string(Strategy s);

struct ExperimentConfig {
  struct Data {
    GeneratorConfig generator;
    int n_train = 200;
    int n_eval = 50;
  } data;
  struct Model {
    std::array<double, 4> delta_stds{0.1, 0.1, 0.2, 0.2};
  } model;
  struct Train {
    int epochs = 20;
    double lr = 0.1;
    int batch_images = 4;
    double momentum = 0.0;
    // Epoch fractions at which the learning rate drops tenfold.
    std::vector<double> lr_steps{0.67, 0.89};
    double grad_clip = 10.0;
    std::uint64_t seed = 0;
  } train;
  struct Sampling {
    Strategy pos = Strategy::kRandom;
    Strategy neg = Strategy::kRandom;
    int rois_per_image = 32;
    double pos_fraction = 0.25;
    double pos_thr = 0.5;
    double neg_thr = 0.5;
  } sampling;
  IsrParams isr{.enable_pos = false, .enable_neg = false};
  CarlParams carl{.enable = false};
  double reg_weight = 1.0;
  struct Eval {
    std::vector<double> thetas = coco_thresholds();
    double nms_thr = 0.5;
    double score_thr = 0.01;
    int max_dets = 100;
  } eval;

  bool isr_pos_active() const { return isr.enable_pos || sampling.pos == Strategy::kPrime; }
  bool isr_neg_active() const { return isr.enable_neg || sampling.neg == Strategy::kPrime; }
  // Throws std::invalid_argument describing the first invalid field.
  void validate() const;
  // Short tag such as "P/P+carl".
  std::string strategy_label() const;
};

struct EpochStats {
  double cls_loss = 0.0;
  double reg_loss = 0.0;
  double carl_loss = 0.0;
  double total = 0.0;

  friend bool operator==(const EpochStats&, const EpochStats&) = default;
};

struct EvalSummary {
  std::vector<double> thetas;
  std::vector<double> ap_by_theta;  // NaN-free; classes without GT excluded
  double map = 0.0;

  double ap_at(double theta) const;
  friend bool operator==(const EvalSummary&, const EvalSummary&) = default;
};

EvalSummary summarize(const EvalReport& report);

struct RunRecord {
  ExperimentConfig config;
  std::string strategy;
  std::uint64_t seed = 0;
  std::vector<EpochStats> epochs;
  EvalSummary eval;
  double wall_time_s = 0.0;  // not part of the serialized record
};

struct TrainResult {
  RunRecord record;
  DetectorHead head;
};

// Builds the assigned batch for a set of scenes and fills in head outputs.
SampleBatch scene_batch(std::span<const SyntheticScene> scenes, const DetectorHead& head,
                        const ExperimentConfig& config);
Eigen::MatrixXd stack_features(std::span<const SyntheticScene> scenes);

// Inference: per-class detections above score_thr, per-class NMS, top
// max_dets per image.
std::vector<ImageRecord> detect(const SampleBatch& batch, std::span<const SyntheticScene> scenes,
                                const ExperimentConfig::Eval& params);
EvalReport evaluate(const DetectorHead& head, std::span<const SyntheticScene> scenes,
                    const ExperimentConfig& config);

struct StepOutput {
  LossBundle loss;
  Eigen::VectorXd grad;  // flattened like DetectorHead::flatten
};

// Loss and parameter gradient of the head on the selected samples of a batch.
StepOutput head_gradient(const DetectorHead& head, const SampleBatch& batch, const Eigen::MatrixXd& x,
                         std::span<const std::size_t> selected, const ExperimentConfig& config);

// Indices selected by the configured pos/neg strategies. Always consumes the
// same random draws regardless of strategy.
std::vector<std::size_t> select_samples(const SampleBatch& batch, const ExperimentConfig& config,
                                        std::mt19937_64& rng);

TrainResult train(std::span<const SyntheticScene> train_scenes,
                  std::span<const SyntheticScene> eval_scenes, const ExperimentConfig& config,
                  std::uint64_t seed);

// Generates data from config.data with `seed` and trains on it.
TrainResult run_experiment(const ExperimentConfig& config, std::uint64_t seed);

enum class BoostSelection { kTopHlr, kRandom };

struct BoostResult {
  BoostSelection selection = BoostSelection::kTopHlr;
  std::size_t k = 0;
  double budget = 0.0;
  double boost = 0.0;               // shared logit increase
  double requested_reduction = 0.0;  // budget * baseline loss
  double achieved_reduction = 0.0;
  bool reachable = true;
  std::vector<std::size_t> boosted;  // batch indices
  EvalSummary baseline;
  EvalSummary boosted_eval;
  std::vector<double> ap_delta;      // boosted - baseline per theta
};

// Raises the target-class logit of k positives per image (top IoU-HLR or
// uniformly random) by a shared amount found by bisection so that the summed
// positive CE drops by `budget` of its value, then re-evaluates AP per
// threshold on the batch's images.
BoostResult simulate_boost(const SampleBatch& batch, std::span<const SyntheticScene> scenes,
                           const ExperimentConfig& config, std::size_t k, double budget,
                           BoostSelection selection, std::uint64_t seed = 0);

struct ScatterRow {
  std::string category;  // random, hard, prime
  std::string side;      // pos, neg
  std::size_t sample = 0;
  int image_id = 0;
  double iou = 0.0;
  double cls_loss = 0.0;
};

struct BucketRow {
  std::string side;
  int bucket = 0;   // HLR bucket index or IoU interval index
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  double mean_score = 0.0;
};

struct DistributionReport {
  std::vector<ScatterRow> scatter;
  std::vector<BucketRow> hlr_buckets;
  std::vector<BucketRow> iou_buckets;
};

struct DistributionParams {
  std::size_t per_image = 3;
  int hlr_bucket_width = 8;
  std::vector<double> iou_edges{0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::uint64_t seed = 0;
};

// Sample-category scatter (IoU vs CE, per image top-k by loss, top-k by HLR
// and a uniform draw) and mean score per HLR bucket and per IoU interval.
DistributionReport distribution_report(const SampleBatch& batch, std::span<const double> cls_losses,
                                       const HlrResult& pos_hlr, const HlrResult& neg_hlr,
                                       const DistributionParams& params = {});

}  // namespace pisa
