#include "pisa/config.hpp"
#include "pisa/io.hpp"

#include <set>
#include <sstream>

namespace pisa {

using nlohmann::json;

namespace {

// Reads fields out of one JSON object and rejects keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError("expected a boolean");
      } else if constexpr (std::is_arithmetic_v<T>) {
        if (!it->is_number()) throw ConfigError("expected a number");
        if constexpr (std::is_integral_v<T>) {
          if (!it->is_number_integer()) throw ConfigError("expected an integer");
        }
      }
      out = it->get<T>();
    } catch (const std::exception& e) {
      throw ConfigError(where() + "." + key + ": " + e.what());
    }
  }

  void read_strategy(const char* key, Strategy& out) {
    std::string s = to_string(out);
    read(key, s);
    try {
      out = parse_strategy(s);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(where() + "." + key + ": " + e.what());
    }
  }

  Section child(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    static const json empty = json::object();
    return Section(it == j_.end() ? empty : *it, path_.empty() ? key : path_ + "." + key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + (path_.empty() ? k : path_ + "." + k) + "'");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

json to_json(const ExperimentConfig& c) {
  const auto& g = c.data.generator;
  json j;
  j["data"] = {{"num_classes", g.num_classes},
               {"extent", g.extent},
               {"gts_min", g.gts_min},
               {"gts_max", g.gts_max},
               {"gt_size_min", g.gt_size_min},
               {"gt_size_max", g.gt_size_max},
               {"proposals_per_gt", g.proposals_per_gt},
               {"jitter_scales", g.jitter_scales},
               {"jitter", g.jitter},
               {"background_proposals", g.background_proposals},
               {"background_cluster_size", g.background_cluster_size},
               {"background_cluster_jitter", g.background_cluster_jitter},
               {"distractors_min", g.distractors_min},
               {"distractors_max", g.distractors_max},
               {"distractor_gain", g.distractor_gain},
               {"proposals_per_distractor", g.proposals_per_distractor},
               {"objectness_shift", g.objectness_shift},
               {"objectness_noise", g.objectness_noise},
               {"background_objectness", g.background_objectness},
               {"evidence_gain", g.evidence_gain},
               {"evidence_noise", g.evidence_noise},
               {"iou_cue_noise", g.iou_cue_noise},
               {"loc_noise_min", g.loc_noise_min},
               {"loc_noise_max", g.loc_noise_max},
               {"quality_cue_noise", g.quality_cue_noise},
               {"n_train", c.data.n_train},
               {"n_eval", c.data.n_eval}};
  j["model"] = {{"delta_stds", c.model.delta_stds}};
  j["train"] = {{"epochs", c.train.epochs},
                {"lr", c.train.lr},
                {"batch_images", c.train.batch_images},
                {"momentum", c.train.momentum},
                {"lr_steps", c.train.lr_steps},
                {"grad_clip", c.train.grad_clip},
                {"seed", c.train.seed}};
  j["sampling"] = {{"pos", to_string(c.sampling.pos)},
                   {"neg", to_string(c.sampling.neg)},
                   {"rois_per_image", c.sampling.rois_per_image},
                   {"pos_fraction", c.sampling.pos_fraction},
                   {"pos_thr", c.sampling.pos_thr},
                   {"neg_thr", c.sampling.neg_thr}};
  j["isr"] = {{"gamma_pos", c.isr.gamma_pos},   {"beta_pos", c.isr.beta_pos},
              {"gamma_neg", c.isr.gamma_neg},   {"beta_neg", c.isr.beta_neg},
              {"enable_pos", c.isr.enable_pos}, {"enable_neg", c.isr.enable_neg},
              {"cluster_iou_thr", c.isr.cluster_iou_thr}};
  j["carl"] = {{"k", c.carl.k},
               {"b", c.carl.b},
               {"enable", c.carl.enable},
               {"weight", c.carl.weight},
               {"replace_reg", c.carl.replace_reg}};
  j["loss"] = {{"reg_weight", c.reg_weight}};
  j["eval"] = {{"thetas", c.eval.thetas},
               {"nms_thr", c.eval.nms_thr},
               {"score_thr", c.eval.score_thr},
               {"max_dets", c.eval.max_dets}};
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  Section root(j, "");
  {
    auto s = root.child("data");
    auto& g = c.data.generator;
    s.read("num_classes", g.num_classes);
    s.read("extent", g.extent);
    s.read("gts_min", g.gts_min);
    s.read("gts_max", g.gts_max);
    s.read("gt_size_min", g.gt_size_min);
    s.read("gt_size_max", g.gt_size_max);
    s.read("proposals_per_gt", g.proposals_per_gt);
    s.read("jitter_scales", g.jitter_scales);
    s.read("jitter", g.jitter);
    s.read("background_proposals", g.background_proposals);
    s.read("background_cluster_size", g.background_cluster_size);
    s.read("background_cluster_jitter", g.background_cluster_jitter);
    s.read("distractors_min", g.distractors_min);
    s.read("distractors_max", g.distractors_max);
    s.read("distractor_gain", g.distractor_gain);
    s.read("proposals_per_distractor", g.proposals_per_distractor);
    s.read("objectness_shift", g.objectness_shift);
    s.read("objectness_noise", g.objectness_noise);
    s.read("background_objectness", g.background_objectness);
    s.read("evidence_gain", g.evidence_gain);
    s.read("evidence_noise", g.evidence_noise);
    s.read("iou_cue_noise", g.iou_cue_noise);
    s.read("loc_noise_min", g.loc_noise_min);
    s.read("loc_noise_max", g.loc_noise_max);
    s.read("quality_cue_noise", g.quality_cue_noise);
    s.read("n_train", c.data.n_train);
    s.read("n_eval", c.data.n_eval);
    s.finish();
  }
  {
    auto s = root.child("model");
    s.read("delta_stds", c.model.delta_stds);
    s.finish();
  }
  {
    auto s = root.child("train");
    s.read("epochs", c.train.epochs);
    s.read("lr", c.train.lr);
    s.read("batch_images", c.train.batch_images);
    s.read("momentum", c.train.momentum);
    s.read("lr_steps", c.train.lr_steps);
    s.read("grad_clip", c.train.grad_clip);
    s.read("seed", c.train.seed);
    s.finish();
  }
  {
    auto s = root.child("sampling");
    s.read_strategy("pos", c.sampling.pos);
    s.read_strategy("neg", c.sampling.neg);
    s.read("rois_per_image", c.sampling.rois_per_image);
    s.read("pos_fraction", c.sampling.pos_fraction);
    s.read("pos_thr", c.sampling.pos_thr);
    s.read("neg_thr", c.sampling.neg_thr);
    s.finish();
  }
  {
    auto s = root.child("isr");
    s.read("gamma_pos", c.isr.gamma_pos);
    s.read("beta_pos", c.isr.beta_pos);
    s.read("gamma_neg", c.isr.gamma_neg);
    s.read("beta_neg", c.isr.beta_neg);
    s.read("enable_pos", c.isr.enable_pos);
    s.read("enable_neg", c.isr.enable_neg);
    s.read("cluster_iou_thr", c.isr.cluster_iou_thr);
    s.finish();
  }
  {
    auto s = root.child("carl");
    s.read("k", c.carl.k);
    s.read("b", c.carl.b);
    s.read("enable", c.carl.enable);
    s.read("weight", c.carl.weight);
    s.read("replace_reg", c.carl.replace_reg);
    s.finish();
  }
  {
    auto s = root.child("loss");
    s.read("reg_weight", c.reg_weight);
    s.finish();
  }
  {
    auto s = root.child("eval");
    s.read("thetas", c.eval.thetas);
    s.read("nms_thr", c.eval.nms_thr);
    s.read("score_thr", c.eval.score_thr);
    s.read("max_dets", c.eval.max_dets);
    s.finish();
  }
  root.finish();
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  const std::string text = read_text(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return config_from_json(j);
}

void apply_override(json& config, std::string_view dotted_key, const json& value) {
  json* node = &config;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted_key.find('.', start);
    const std::string part(dotted_key.substr(start, dot == std::string_view::npos ? dotted_key.npos : dot - start));
    if (part.empty()) throw ConfigError("malformed override key '" + std::string(dotted_key) + "'");
    if (dot == std::string_view::npos) {
      (*node)[part] = value;
      return;
    }
    if (!node->contains(part)) (*node)[part] = json::object();
    node = &(*node)[part];
    if (!node->is_object()) throw ConfigError("override key '" + std::string(dotted_key) + "' crosses a non-object");
    start = dot + 1;
  }
}

std::string config_hash(const ExperimentConfig& config) {
  json j = to_json(config);
  j["train"].erase("seed");
  return sha256_hex(j.dump()).substr(0, 16);
}

json to_json(const EvalSummary& s) {
  return {{"thetas", s.thetas}, {"ap_by_theta", s.ap_by_theta}, {"map", s.map}};
}

EvalSummary eval_summary_from_json(const json& j) {
  EvalSummary s;
  j.at("thetas").get_to(s.thetas);
  j.at("ap_by_theta").get_to(s.ap_by_theta);
  j.at("map").get_to(s.map);
  return s;
}

json to_json(const RunRecord& r) {
  json epochs = json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"cls_loss", e.cls_loss}, {"reg_loss", e.reg_loss}, {"carl_loss", e.carl_loss}, {"total", e.total}});
  }
  return {{"config", to_json(r.config)},
          {"strategy", r.strategy},
          {"seed", r.seed},
          {"epochs", epochs},
          {"eval", to_json(r.eval)}};
}

RunRecord run_record_from_json(const json& j) {
  RunRecord r;
  r.config = config_from_json(j.at("config"));
  j.at("strategy").get_to(r.strategy);
  j.at("seed").get_to(r.seed);
  for (const auto& e : j.at("epochs")) {
    r.epochs.push_back({e.at("cls_loss").get<double>(), e.at("reg_loss").get<double>(),
                        e.at("carl_loss").get<double>(), e.at("total").get<double>()});
  }
  r.eval = eval_summary_from_json(j.at("eval"));
  return r;
}

json to_json(const EvalReport& r) {
  json per_class = json::array();
  for (std::size_t ci = 0; ci < r.classes.size(); ++ci) {
    json aps = json::array();
    for (std::size_t t = 0; t < r.thetas.size(); ++t) {
      const auto& ap = r.curves[ci * r.thetas.size() + t].ap;
      aps.push_back(ap ? json(*ap) : json(nullptr));
    }
    per_class.push_back({{"class", r.classes[ci]},
                         {"n_gt", r.curves[ci * r.thetas.size()].n_gt},
                         {"ap", aps}});
  }
  json by_theta = json::array();
  for (const auto& ap : r.ap_by_theta) by_theta.push_back(ap ? json(*ap) : json(nullptr));
  return {{"thetas", r.thetas},
          {"classes", per_class},
          {"ap_by_theta", by_theta},
          {"map", r.map ? json(*r.map) : json(nullptr)},
          {"defined", r.map.has_value()}};
}

json to_json(const std::vector<SyntheticScene>& scenes) {
  json out = json::array();
  for (const auto& s : scenes) {
    json gts = json::array();
    for (const auto& g : s.gts) gts.push_back({{"box", {g.box.x1, g.box.y1, g.box.x2, g.box.y2}}, {"class", g.class_id}});
    json props = json::array();
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(s.proposals.size()); ++i) {
      const auto& b = s.proposals[static_cast<std::size_t>(i)];
      std::vector<double> f(static_cast<std::size_t>(s.features.cols()));
      for (Eigen::Index k = 0; k < s.features.cols(); ++k) f[static_cast<std::size_t>(k)] = s.features(i, k);
      props.push_back({{"box", {b.x1, b.y1, b.x2, b.y2}}, {"features", f}});
    }
    json distractors = json::array();
    for (const auto& d : s.distractors) {
      distractors.push_back({{"box", {d.box.x1, d.box.y1, d.box.x2, d.box.y2}}, {"class", d.class_id}});
    }
    out.push_back({{"image_id", s.image_id},
                   {"extent", s.extent},
                   {"gts", gts},
                   {"distractors", distractors},
                   {"proposals", props}});
  }
  return out;
}

std::vector<SyntheticScene> scenes_from_json(const json& j) {
  std::vector<SyntheticScene> out;
  for (const auto& js : j) {
    SyntheticScene s;
    js.at("image_id").get_to(s.image_id);
    js.at("extent").get_to(s.extent);
    for (const auto& g : js.at("gts")) {
      const auto b = g.at("box").get<std::array<double, 4>>();
      s.gts.push_back({{b[0], b[1], b[2], b[3]}, g.at("class").get<int>(), s.image_id});
    }
    if (js.contains("distractors")) {
      for (const auto& d : js.at("distractors")) {
        const auto b = d.at("box").get<std::array<double, 4>>();
        s.distractors.push_back({{b[0], b[1], b[2], b[3]}, d.at("class").get<int>(), s.image_id});
      }
    }
    const auto& props = js.at("proposals");
    std::size_t dim = props.empty() ? 0 : props.front().at("features").size();
    s.features.resize(static_cast<Eigen::Index>(props.size()), static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < props.size(); ++i) {
      const auto b = props[i].at("box").get<std::array<double, 4>>();
      s.proposals.push_back({b[0], b[1], b[2], b[3]});
      const auto f = props[i].at("features").get<std::vector<double>>();
      if (f.size() != dim) throw std::invalid_argument("scenes_from_json: ragged feature rows");
      for (std::size_t k = 0; k < dim; ++k) {
        s.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = f[k];
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

}  // namespace pisa
