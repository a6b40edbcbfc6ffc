#include "pisa/cli.hpp"

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include "pisa/config.hpp"
#include "pisa/harness.hpp"
#include "pisa/io.hpp"
#include "pisa/losses.hpp"
#include "pisa/svg.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace pisa {

namespace {

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  std::string out;
  std::string dets;
  std::string gts;
  std::size_t k = 5;
  double budget = 0.10;
  std::string grid;
  std::string seeds;
  int jobs = 1;
  bool svg = false;
};

fs::path output_root(const Options& o) {
  if (!o.out.empty()) return o.out;
  if (const char* env = std::getenv("PISA_OUT_ROOT"); env && *env) return env;
  return "runs";
}

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return text;
  }
}

json config_json(const Options& o) {
  json j = json::object();
  if (!o.config_path.empty()) {
    try {
      j = json::parse(read_text(o.config_path));
    } catch (const json::parse_error& e) {
      throw ConfigError(o.config_path + ": " + e.what());
    }
  }
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_override(j, kv.substr(0, eq), parse_value(kv.substr(eq + 1)));
  }
  return j;
}

ExperimentConfig load(const Options& o) {
  ExperimentConfig c = config_from_json(config_json(o));
  c.train.seed = o.seed;
  return c;
}

// A run directory plus the list of files written into it. The manifest is
// written last; a directory with a manifest is never touched again.
class RunDir {
 public:
  RunDir(const fs::path& root, const std::string& name, std::string command)
      : command_(std::move(command)), start_(std::chrono::steady_clock::now()) {
    dir_ = root / name;
    for (int attempt = 2; fs::exists(dir_ / "manifest.json"); ++attempt) {
      dir_ = root / (name + "-r" + std::to_string(attempt));
    }
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create run directory " + dir_.string() + ": " + ec.message());
  }

  const fs::path& path() const { return dir_; }

  void write(const std::string& name, const std::string& text) {
    write_text(dir_ / name, text);
    files_.push_back({name, text.size(), sha256_hex(text)});
  }

  void finish(json extra = json::object()) {
    json files = json::array();
    for (const auto& f : files_) files.push_back({{"path", f.path}, {"bytes", f.bytes}, {"sha256", f.sha}});
    extra["command"] = command_;
    extra["files"] = files;
    extra["wall_time_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write_text(dir_ / "manifest.json", dump(extra));
  }

 private:
  struct File {
    std::string path;
    std::size_t bytes;
    std::string sha;
  };
  fs::path dir_;
  std::string command_;
  std::chrono::steady_clock::time_point start_;
  std::vector<File> files_;
};

std::string run_name(const ExperimentConfig& c, std::uint64_t seed) {
  return config_hash(c) + "-s" + std::to_string(seed);
}

json manifest_header(const ExperimentConfig& c, std::uint64_t seed) {
  return {{"config_hash", config_hash(c)}, {"seed", seed}};
}

std::string ap_header(double theta) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ap%02d", static_cast<int>(std::lround(theta * 100)));
  return buf;
}

CsvWriter ap_table(const EvalSummary& e) {
  CsvWriter csv({"theta", "ap"});
  for (std::size_t t = 0; t < e.thetas.size(); ++t) {
    csv.row({format_number(e.thetas[t]), format_number(e.ap_by_theta[t])});
  }
  return csv;
}

CsvWriter epoch_table(const RunRecord& r) {
  CsvWriter csv({"epoch", "cls_loss", "reg_loss", "carl_loss", "total"});
  for (std::size_t i = 0; i < r.epochs.size(); ++i) {
    const auto& e = r.epochs[i];
    csv.row({std::to_string(i), format_number(e.cls_loss), format_number(e.reg_loss),
             format_number(e.carl_loss), format_number(e.total)});
  }
  return csv;
}

json head_json(const DetectorHead& h) {
  auto rows = [](const Eigen::MatrixXd& m) {
    json out = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      std::vector<double> row(static_cast<std::size_t>(m.cols()));
      for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
      out.push_back(row);
    }
    return out;
  };
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  return {{"cls_w", rows(h.cls_w)}, {"cls_b", vec(h.cls_b)}, {"reg_w", rows(h.reg_w)},
          {"reg_b", vec(h.reg_b)}, {"delta_stds", h.delta_stds}};
}

struct Trained {
  ExperimentConfig config;
  TrainResult result;
  std::vector<SyntheticScene> eval_scenes;
};

Trained train_for(const Options& o) {
  Trained t;
  t.config = load(o);
  const auto& d = t.config.data;
  const auto train_scenes = gen_scenes(d.generator, d.n_train, o.seed, 0);
  t.eval_scenes = gen_scenes(d.generator, d.n_eval, o.seed ^ 0x9e3779b97f4a7c15ULL, d.n_train);
  t.result = train(train_scenes, t.eval_scenes, t.config, o.seed);
  return t;
}

int cmd_generate(const Options& o) {
  const ExperimentConfig c = load(o);
  const auto& d = c.data;
  const auto train_scenes = gen_scenes(d.generator, d.n_train, o.seed, 0);
  const auto eval_scenes = gen_scenes(d.generator, d.n_eval, o.seed ^ 0x9e3779b97f4a7c15ULL, d.n_train);
  RunDir dir(output_root(o), "scenes-" + run_name(c, o.seed), "generate");
  dir.write("config.json", dump(to_json(c)));
  dir.write("train_scenes.json", dump(to_json(train_scenes)));
  dir.write("eval_scenes.json", dump(to_json(eval_scenes)));
  dir.finish(manifest_header(c, o.seed));
  std::cout << dir.path().string() << "\n";
  return kExitOk;
}

void write_train_outputs(RunDir& dir, const TrainResult& r, bool svg) {
  dir.write("config.json", dump(to_json(r.record.config)));
  dir.write("record.json", dump(to_json(r.record)));
  dir.write("head.json", dump(head_json(r.head)));
  dir.write("epochs.csv", epoch_table(r.record).str());
  dir.write("ap.csv", ap_table(r.record.eval).str());
  if (svg) {
    const auto& e = r.record.eval;
    dir.write("ap.svg", svg_line_plot({"AP by IoU threshold (" + r.record.strategy + ")", "IoU threshold", "AP"},
                                      {{r.record.strategy, e.thetas, e.ap_by_theta}}));
  }
}

int cmd_train(const Options& o) {
  const Trained t = train_for(o);
  RunDir dir(output_root(o), run_name(t.config, o.seed), "train");
  write_train_outputs(dir, t.result, o.svg);
  json extra = manifest_header(t.config, o.seed);
  extra["train_wall_time_s"] = t.result.record.wall_time_s;
  dir.finish(extra);
  std::cout << dir.path().string() << "\n";
  std::cout << "mAP " << format_number(t.result.record.eval.map) << "\n";
  return kExitOk;
}

CsvWriter hlr_table(const HlrResult& r) {
  CsvWriter csv({"sample_id", "group_id", "local_rank", "hlr", "key"});
  for (const auto& e : r.entries) {
    csv.row({std::to_string(e.sample), std::to_string(e.group_id), std::to_string(e.local_rank),
             std::to_string(e.hlr), format_number(e.key)});
  }
  return csv;
}

// First mini-batch of held-out scenes scored by the trained head.
SampleBatch probe_batch(const Trained& t, std::vector<SyntheticScene>& scenes) {
  const auto n = std::min<std::size_t>(t.eval_scenes.size(), static_cast<std::size_t>(t.config.train.batch_images));
  scenes.assign(t.eval_scenes.begin(), t.eval_scenes.begin() + static_cast<std::ptrdiff_t>(n));
  return scene_batch(scenes, t.result.head, t.config);
}

int cmd_rank(const Options& o) {
  const Trained t = train_for(o);
  std::vector<SyntheticScene> scenes;
  const SampleBatch batch = probe_batch(t, scenes);
  RunDir dir(output_root(o), "rank-" + run_name(t.config, o.seed), "rank");
  dir.write("config.json", dump(to_json(t.config)));
  dir.write("iou_hlr.csv", hlr_table(iou_hlr(batch)).str());
  dir.write("score_hlr.csv", hlr_table(score_hlr(batch, nms_cluster(batch, t.config.isr.cluster_iou_thr))).str());
  dir.finish(manifest_header(t.config, o.seed));
  std::cout << dir.path().string() << "\n";
  return kExitOk;
}

int cmd_eval(const Options& o) {
  if (o.dets.empty()) throw ConfigError("eval needs --dets");
  const std::string dets_text = read_text(o.dets);
  const std::string gts_text = o.gts.empty() ? std::string() : read_text(o.gts);
  auto parse = [](const std::string& text, const std::string& path) {
    try {
      return image_records_from_json(json::parse(text));
    } catch (const json::parse_error& e) {
      throw IoError(path + ": " + e.what());
    }
  };
  std::vector<ImageRecord> images = parse(dets_text, o.dets);
  if (!o.gts.empty()) {
    auto gts = parse(gts_text, o.gts);
    for (auto& im : images) im.gts.clear();
    for (auto& g : gts) g.dets.clear();
    images = merge_records(gts, images);
  }
  std::vector<double> thetas = coco_thresholds();
  if (!o.config_path.empty() || !o.overrides.empty()) thetas = load(o).eval.thetas;
  const EvalReport report = coco_map(images, thetas);

  CsvWriter curves({"class", "theta", "recall", "precision"});
  CsvWriter aps({"class", "theta", "n_gt", "ap"});
  for (const auto& c : report.curves) {
    aps.row({std::to_string(c.class_id), format_number(c.theta), std::to_string(c.n_gt),
             c.ap ? format_number(*c.ap) : std::string()});
    for (std::size_t r = 0; r < c.interpolated.size(); ++r) {
      curves.row({std::to_string(c.class_id), format_number(c.theta),
                  format_number(static_cast<double>(r) / (kRecallPoints - 1)), format_number(c.interpolated[r])});
    }
  }
  const std::string name = "eval-" + sha256_hex(dets_text + '\0' + gts_text).substr(0, 16);
  RunDir dir(output_root(o), name, "eval");
  dir.write("report.json", dump(to_json(report)));
  dir.write("ap.csv", aps.str());
  dir.write("curves.csv", curves.str());
  if (o.svg) {
    std::vector<PlotSeries> series;
    for (const auto& c : report.curves) {
      if (!c.ap || (std::abs(c.theta - 0.5) > 1e-9 && std::abs(c.theta - 0.75) > 1e-9)) continue;
      PlotSeries s{"class " + std::to_string(c.class_id) + " @" + format_number(c.theta), {}, c.interpolated};
      for (int r = 0; r < kRecallPoints; ++r) s.x.push_back(r / double(kRecallPoints - 1));
      series.push_back(std::move(s));
    }
    dir.write("curves.svg", svg_line_plot({"Interpolated precision-recall", "recall", "precision"}, series));
  }
  dir.finish({{"dets", o.dets}, {"gts", o.gts}});
  std::cout << dir.path().string() << "\n";
  std::cout << "mAP " << (report.map ? format_number(*report.map) : std::string("undefined")) << "\n";
  return kExitOk;
}

int cmd_simulate(const Options& o) {
  if (!(o.budget >= 0.0 && o.budget < 1.0)) throw ConfigError("--budget must lie in [0, 1)");
  if (o.k == 0) throw ConfigError("--k must be positive");
  const Trained t = train_for(o);
  const SampleBatch batch = scene_batch(t.eval_scenes, t.result.head, t.config);
  const auto top = simulate_boost(batch, t.eval_scenes, t.config, o.k, o.budget, BoostSelection::kTopHlr, o.seed);
  const auto wide = simulate_boost(batch, t.eval_scenes, t.config, 5 * o.k, o.budget, BoostSelection::kTopHlr, o.seed);
  const auto rnd = simulate_boost(batch, t.eval_scenes, t.config, o.k, o.budget, BoostSelection::kRandom, o.seed);

  CsvWriter csv({"theta", "baseline", "top_k", "top_5k", "random_k"});
  const auto& th = top.baseline.thetas;
  for (std::size_t i = 0; i < th.size(); ++i) {
    csv.row({format_number(th[i]), format_number(top.baseline.ap_by_theta[i]),
             format_number(top.boosted_eval.ap_by_theta[i]), format_number(wide.boosted_eval.ap_by_theta[i]),
             format_number(rnd.boosted_eval.ap_by_theta[i])});
  }
  auto boost_json = [](const char* name, const BoostResult& b) {
    return json{{"name", name},
                {"k_per_image", b.k},
                {"boosted_samples", b.boosted.size()},
                {"boost", b.boost},
                {"requested_reduction", b.requested_reduction},
                {"achieved_reduction", b.achieved_reduction},
                {"reachable", b.reachable},
                {"map", b.boosted_eval.map}};
  };
  json summary = {{"budget", o.budget},
                  {"baseline_map", top.baseline.map},
                  {"runs", json::array({boost_json("top_k", top), boost_json("top_5k", wide),
                                        boost_json("random_k", rnd)})}};
  RunDir dir(output_root(o), "simulate-" + run_name(t.config, o.seed) + "-k" + std::to_string(o.k) + "-b" +
                                 format_number(o.budget),
             "simulate");
  dir.write("config.json", dump(to_json(t.config)));
  dir.write("simulate.csv", csv.str());
  dir.write("simulate.json", dump(summary));
  if (o.svg) {
    dir.write("simulate.svg",
              svg_line_plot({"AP after a budgeted score boost", "IoU threshold", "AP"},
                            {{"baseline", th, top.baseline.ap_by_theta},
                             {"top-" + std::to_string(o.k), th, top.boosted_eval.ap_by_theta},
                             {"top-" + std::to_string(5 * o.k), th, wide.boosted_eval.ap_by_theta},
                             {"random-" + std::to_string(o.k), th, rnd.boosted_eval.ap_by_theta}}));
  }
  dir.finish(manifest_header(t.config, o.seed));
  std::cout << dir.path().string() << "\n";
  return kExitOk;
}

int cmd_report(const Options& o) {
  const Trained t = train_for(o);
  const SampleBatch batch = scene_batch(t.eval_scenes, t.result.head, t.config);
  std::vector<int> targets(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) targets[i] = batch.assignment[i].target_class;
  const std::vector<double> ones(batch.size(), 1.0);
  const auto ce = weighted_ce(batch.logits, targets, ones).per_sample;
  DistributionParams params;
  params.seed = o.seed;
  const auto rep = distribution_report(batch, ce, iou_hlr(batch),
                                       score_hlr(batch, nms_cluster(batch, t.config.isr.cluster_iou_thr)), params);

  CsvWriter scatter({"category", "side", "sample_id", "image_id", "iou", "cls_loss"});
  for (const auto& r : rep.scatter) {
    scatter.row({r.category, r.side, std::to_string(r.sample), std::to_string(r.image_id), format_number(r.iou),
                 format_number(r.cls_loss)});
  }
  auto buckets = [](const std::vector<BucketRow>& rows) {
    CsvWriter csv({"side", "bucket", "lower", "upper", "count", "mean_score"});
    for (const auto& r : rows) {
      csv.row({r.side, std::to_string(r.bucket), format_number(r.lower), format_number(r.upper),
               std::to_string(r.count), format_number(r.mean_score)});
    }
    return csv;
  };
  RunDir dir(output_root(o), "report-" + run_name(t.config, o.seed), "report");
  dir.write("config.json", dump(to_json(t.config)));
  dir.write("scatter.csv", scatter.str());
  dir.write("hlr_buckets.csv", buckets(rep.hlr_buckets).str());
  dir.write("iou_buckets.csv", buckets(rep.iou_buckets).str());
  if (o.svg) {
    std::map<std::string, PlotSeries> by_cat;
    for (const auto& r : rep.scatter) {
      auto& s = by_cat[r.side + " " + r.category];
      s.label = r.side + " " + r.category;
      s.x.push_back(r.iou);
      s.y.push_back(r.cls_loss);
    }
    std::vector<PlotSeries> series;
    for (auto& [k, s] : by_cat) series.push_back(std::move(s));
    dir.write("scatter.svg", svg_scatter_plot({"Sample categories", "IoU", "classification loss"}, series));
    auto bucket_series = [](const std::vector<BucketRow>& rows, const std::string& side, bool mid) {
      PlotSeries s{side, {}, {}};
      for (const auto& r : rows) {
        if (r.side != side || r.count == 0) continue;
        s.x.push_back(mid ? 0.5 * (r.lower + r.upper) : r.lower);
        s.y.push_back(r.mean_score);
      }
      return s;
    };
    dir.write("hlr_buckets.svg", svg_line_plot({"Mean score by HLR bucket", "HLR", "mean score"},
                                               {bucket_series(rep.hlr_buckets, "pos", false),
                                                bucket_series(rep.hlr_buckets, "neg", false)}));
    dir.write("iou_buckets.svg", svg_line_plot({"Mean positive score by IoU interval", "IoU", "mean score"},
                                               {bucket_series(rep.iou_buckets, "pos", true)}));
  }
  dir.finish(manifest_header(t.config, o.seed));
  std::cout << dir.path().string() << "\n";
  return kExitOk;
}

std::vector<std::uint64_t> parse_seeds(const Options& o) {
  if (o.seeds.empty()) return {o.seed};
  std::vector<std::uint64_t> out;
  const auto dash = o.seeds.find('-');
  try {
    if (o.seeds.find(',') == std::string::npos && dash != std::string::npos && dash > 0) {
      const auto lo = std::stoull(o.seeds.substr(0, dash));
      const auto hi = std::stoull(o.seeds.substr(dash + 1));
      if (hi < lo) throw ConfigError("--seeds range is empty");
      for (auto s = lo; s <= hi; ++s) out.push_back(s);
      return out;
    }
    std::stringstream ss(o.seeds);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) out.push_back(std::stoull(item));
    }
  } catch (const std::logic_error&) {
    throw ConfigError("--seeds expects 'a-b' or a comma list, got '" + o.seeds + "'");
  }
  if (out.empty()) throw ConfigError("--seeds is empty");
  return out;
}

struct GridPoint {
  std::string label;
  json overrides;  // dotted key -> value
};

std::vector<GridPoint> load_grid(const std::string& path) {
  json g;
  try {
    g = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  if (!g.is_object()) throw ConfigError("grid must be an object with 'points' or 'axes'");
  for (const auto& [k, v] : g.items()) {
    if (k != "points" && k != "axes" && k != "name") throw ConfigError("unknown grid key '" + k + "'");
  }
  auto label_of = [](const json& ov) {
    std::string s;
    for (const auto& [k, v] : ov.items()) {
      if (!s.empty()) s += ' ';
      s += k + "=" + (v.is_string() ? v.get<std::string>() : v.dump());
    }
    return s.empty() ? std::string("base") : s;
  };
  std::vector<GridPoint> out;
  if (g.contains("points")) {
    for (const auto& p : g.at("points")) {
      if (!p.is_object()) throw ConfigError("grid points must be objects");
      GridPoint gp;
      gp.overrides = json::object();
      for (const auto& [k, v] : p.items()) {
        if (k == "label") {
          gp.label = v.get<std::string>();
        } else {
          gp.overrides[k] = v;
        }
      }
      if (gp.label.empty()) gp.label = label_of(gp.overrides);
      out.push_back(std::move(gp));
    }
  }
  if (g.contains("axes")) {
    std::vector<json> combos{json::object()};
    for (const auto& [k, values] : g.at("axes").items()) {
      if (!values.is_array() || values.empty()) throw ConfigError("grid axis '" + k + "' needs a non-empty list");
      std::vector<json> next;
      for (const auto& c : combos) {
        for (const auto& v : values) {
          json n = c;
          n[k] = v;
          next.push_back(n);
        }
      }
      combos = std::move(next);
    }
    for (auto& c : combos) out.push_back({label_of(c), c});
  }
  if (out.empty()) throw ConfigError("grid has no points");
  return out;
}

struct SweepRow {
  std::size_t point = 0;
  std::string label;
  std::uint64_t seed = 0;
  std::string hash;
  std::string status;
  std::string error;
  std::string run_dir;
  std::optional<EvalSummary> eval;
  bool cached = false;
};

int cmd_sweep(const Options& o) {
  if (o.grid.empty()) throw ConfigError("sweep needs --grid");
  if (o.jobs < 1) throw ConfigError("--jobs must be >= 1");
  const json base = config_json(o);
  const auto points = load_grid(o.grid);
  const auto seeds = parse_seeds(o);
  const fs::path root = output_root(o);

  // Validate every point before running anything.
  std::vector<ExperimentConfig> configs;
  for (const auto& p : points) {
    json j = base;
    for (const auto& [k, v] : p.overrides.items()) apply_override(j, k, v);
    try {
      configs.push_back(config_from_json(j));
    } catch (const ConfigError& e) {
      throw ConfigError("grid point '" + p.label + "': " + e.what());
    }
  }

  std::vector<SweepRow> rows;
  for (std::size_t p = 0; p < points.size(); ++p) {
    for (auto s : seeds) {
      SweepRow r;
      r.point = p;
      r.label = points[p].label;
      r.seed = s;
      ExperimentConfig c = configs[p];
      c.train.seed = s;
      r.hash = config_hash(c);
      rows.push_back(std::move(r));
    }
  }

  std::mutex dir_mutex;
  std::set<std::string> claimed;
  auto run_row = [&](SweepRow& r) {
    ExperimentConfig c = configs[r.point];
    c.train.seed = r.seed;
    const std::string name = r.hash + "-s" + std::to_string(r.seed);
    const fs::path existing = root / name;
    if (fs::exists(existing / "manifest.json") && fs::exists(existing / "record.json")) {
      try {
        r.eval = run_record_from_json(read_json(existing / "record.json")).eval;
        r.status = "ok";
        r.cached = true;
        r.run_dir = existing.string();
        return;
      } catch (const std::exception&) {
        // unreadable record: fall through and rerun into a fresh directory
      }
    }
    {
      std::lock_guard<std::mutex> lock(dir_mutex);
      if (!claimed.insert(name).second) {
        r.status = "duplicate";
        return;
      }
    }
    try {
      const TrainResult t = run_experiment(c, r.seed);
      std::lock_guard<std::mutex> lock(dir_mutex);
      RunDir dir(root, name, "sweep");
      write_train_outputs(dir, t, false);
      json extra = manifest_header(c, r.seed);
      extra["train_wall_time_s"] = t.record.wall_time_s;
      dir.finish(extra);
      r.eval = t.record.eval;
      r.status = "ok";
      r.run_dir = dir.path().string();
    } catch (const NumericalError& e) {
      r.status = "numerical_error";
      r.error = e.what();
    } catch (const IoError& e) {
      r.status = "io_error";
      r.error = e.what();
    } catch (const std::exception& e) {
      r.status = "error";
      r.error = e.what();
    }
  };

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < rows.size(); i = next++) run_row(rows[i]);
  };
  if (o.jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < o.jobs; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  // Identical configs inside one sweep share a run.
  for (auto& r : rows) {
    if (r.status != "duplicate") continue;
    for (const auto& other : rows) {
      if (&other != &r && other.hash == r.hash && other.seed == r.seed && other.status != "duplicate") {
        r.status = other.status;
        r.eval = other.eval;
        r.error = other.error;
        r.run_dir = other.run_dir;
        break;
      }
    }
  }

  const std::vector<double> thetas = configs.front().eval.thetas;
  std::vector<std::string> header{"point", "label", "seed", "config_hash", "status", "map"};
  for (double t : thetas) header.push_back(ap_header(t));
  header.push_back("error");
  CsvWriter runs(header);
  for (const auto& r : rows) {
    std::vector<std::string> f{std::to_string(r.point), r.label, std::to_string(r.seed), r.hash, r.status};
    f.push_back(r.eval ? format_number(r.eval->map) : std::string());
    for (std::size_t t = 0; t < thetas.size(); ++t) {
      f.push_back(r.eval && t < r.eval->ap_by_theta.size() ? format_number(r.eval->ap_by_theta[t]) : std::string());
    }
    f.push_back(r.error);
    runs.row(f);
  }

  std::vector<std::string> sheader{"point", "label", "runs_ok", "map"};
  for (double t : thetas) sheader.push_back(ap_header(t));
  CsvWriter summary(sheader);
  for (std::size_t p = 0; p < points.size(); ++p) {
    std::size_t ok = 0;
    double map = 0.0;
    std::vector<double> ap(thetas.size(), 0.0);
    for (const auto& r : rows) {
      if (r.point != p || !r.eval) continue;
      ++ok;
      map += r.eval->map;
      for (std::size_t t = 0; t < thetas.size() && t < r.eval->ap_by_theta.size(); ++t) ap[t] += r.eval->ap_by_theta[t];
    }
    std::vector<std::string> f{std::to_string(p), points[p].label, std::to_string(ok)};
    f.push_back(ok ? format_number(map / static_cast<double>(ok)) : std::string());
    for (double v : ap) f.push_back(ok ? format_number(v / static_cast<double>(ok)) : std::string());
    summary.row(f);
  }

  const std::string grid_text = read_text(o.grid);
  std::string seed_list;
  for (auto s : seeds) seed_list += std::to_string(s) + ",";
  const std::string sweep_name = "sweep-" + sha256_hex(base.dump() + '\0' + grid_text + '\0' + seed_list).substr(0, 16);
  RunDir dir(root, sweep_name, "sweep");
  dir.write("grid.json", grid_text);
  dir.write("runs.csv", runs.str());
  dir.write("summary.csv", summary.str());
  std::size_t cached = 0, failed = 0;
  for (const auto& r : rows) {
    cached += r.cached;
    failed += r.status != "ok";
  }
  dir.finish({{"rows", rows.size()}, {"cached_rows", cached}, {"failed_rows", failed}});
  std::cout << dir.path().string() << "\n";
  std::cout << rows.size() << " rows, " << cached << " reused, " << failed << " failed\n";
  return failed == 0 ? kExitOk : kExitFailure;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Prime-sample attention experiments on a synthetic detection task", "pisa"};
  app.require_subcommand(1);
  Options o;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "experiment config (JSON)");
    sub->add_option("--set", o.overrides, "override a config key, e.g. --set isr.gamma_pos=1");
    sub->add_option("--seed", o.seed, "random seed");
    sub->add_option("--out", o.out, "output root (default: $PISA_OUT_ROOT or ./runs)");
    sub->add_flag("--svg", o.svg, "also render SVG plots");
  };
  auto* gen = app.add_subcommand("generate", "generate synthetic scenes");
  add_config(gen);
  auto* trn = app.add_subcommand("train", "train the head and evaluate it");
  add_config(trn);
  auto* rnk = app.add_subcommand("rank", "IoU-HLR and Score-HLR of a trained batch");
  add_config(rnk);
  auto* evl = app.add_subcommand("eval", "COCO-style evaluation of detection files");
  add_config(evl);
  evl->add_option("--dets", o.dets, "per-image detections (JSON)")->required();
  evl->add_option("--gts", o.gts, "per-image ground truths (JSON); default: taken from --dets");
  auto* sim = app.add_subcommand("simulate", "budgeted score-boost simulation");
  add_config(sim);
  sim->add_option("--k", o.k, "samples boosted per image");
  sim->add_option("--budget", o.budget, "fraction of the positive classification loss to remove");
  auto* rep = app.add_subcommand("report", "sample distribution tables");
  add_config(rep);
  auto* swp = app.add_subcommand("sweep", "run a grid of configs");
  add_config(swp);
  swp->add_option("--grid", o.grid, "grid file (JSON: points or axes)")->required();
  swp->add_option("--seeds", o.seeds, "seed list 'a-b' or 'a,b,c' (default: --seed)");
  swp->add_option("--jobs", o.jobs, "parallel runs");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_generate(o);
    if (trn->parsed()) return cmd_train(o);
    if (rnk->parsed()) return cmd_rank(o);
    if (evl->parsed()) return cmd_eval(o);
    if (sim->parsed()) return cmd_simulate(o);
    if (rep->parsed()) return cmd_report(o);
    if (swp->parsed()) return cmd_sweep(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace pisa
