#include <doctest.h>

#include <filesystem>
#include <random>

#include "pisa/config.hpp"
#include "pisa/io.hpp"
#include "pisa/svg.hpp"

using namespace pisa;
using nlohmann::json;

namespace {

// Every (json pointer, leaf) of a config document.
void leaves(const json& j, const std::string& at, std::vector<std::string>& out) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) leaves(it.value(), at + "/" + it.key(), out);
  } else {
    out.push_back(at);
  }
}

std::vector<json> mutations(const json& v) {
  if (v.is_boolean()) return {!v.get<bool>()};
  if (v.is_string()) return {"R", "H", "P"};
  if (v.is_number_integer() || v.is_number_unsigned()) return {v.get<long long>() + 1, v.get<long long>() - 1};
  if (v.is_number_float()) {
    const double x = v.get<double>();
    return {x * 0.9, x * 1.1, x + 0.05, x - 0.05};
  }
  if (v.is_array() && !v.empty()) {
    std::vector<json> out;
    for (const auto& m : mutations(v[0])) {
      json c = v;
      c[0] = m;
      out.push_back(c);
    }
    return out;
  }
  return {};
}

}  // namespace

TEST_CASE("config JSON round trip and defaults") {
  ExperimentConfig c;
  c.isr.gamma_pos = 1.5;
  c.sampling.neg = Strategy::kHard;
  c.train.lr_steps = {0.5};
  const json j = to_json(c);
  const auto back = config_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(dump(to_json(back)) == dump(j));
  CHECK(config_hash(back) == config_hash(c));

  const auto partial = config_from_json(json::parse(R"({"isr": {"gamma_pos": 1.0}})"));
  CHECK(partial.isr.gamma_pos == 1.0);
  CHECK(partial.isr.gamma_neg == 0.5);
  CHECK(partial.carl.k == 1.0);
  CHECK(partial.carl.b == 0.2);
  CHECK(partial.sampling.pos_fraction == 0.25);
}

TEST_CASE("config rejects unknown keys, wrong types and invalid values") {
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"isr": {"gama_pos": 1.0}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"extra": 1})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"train": {"epochs": "ten"}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"carl": {"b": 1.5}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"sampling": {"pos": "Q"}})")), ConfigError);
}

TEST_CASE("config hash changes iff a field changes") {
  const ExperimentConfig base;
  const json j = to_json(base);
  const std::string h0 = config_hash(base);
  std::vector<std::string> paths;
  leaves(j, "", paths);
  CHECK(paths.size() > 40);
  for (const auto& p : paths) {
    const json::json_pointer ptr(p);
    bool changed = false;
    for (const auto& m : mutations(j[ptr])) {
      if (m == j[ptr]) continue;
      json k = j;
      k[ptr] = m;
      ExperimentConfig c;
      try {
        c = config_from_json(k);
      } catch (const ConfigError&) {
        continue;
      }
      if (p == "/train/seed") {
        CHECK(config_hash(c) == h0);
      } else {
        CHECK_MESSAGE(config_hash(c) != h0, p);
      }
      changed = true;
      break;
    }
    CHECK_MESSAGE(changed, p);
  }
  auto same = base;
  same.train.seed = 99;
  CHECK(config_hash(same) == h0);
  CHECK(h0.size() == 16);
}

TEST_CASE("apply_override") {
  json j = json::object();
  apply_override(j, "isr.gamma_pos", 1.0);
  apply_override(j, "train.epochs", 3);
  CHECK(j["isr"]["gamma_pos"] == 1.0);
  CHECK(config_from_json(j).train.epochs == 3);
  CHECK_THROWS_AS(apply_override(j, "isr..x", 1), ConfigError);
  CHECK_THROWS_AS(apply_override(j, "train.epochs.x", 1), ConfigError);
}

TEST_CASE("run record and eval summary round trip") {
  RunRecord r;
  r.strategy = "P/P+carl";
  r.seed = 12;
  r.epochs = {{0.5, 0.25, 0.125, 0.875}, {0.1 + 0.2, 1e-17, 3.0, 1.0 / 3.0}};
  r.eval.thetas = coco_thresholds();
  r.eval.ap_by_theta.assign(10, 0.0);
  for (std::size_t i = 0; i < 10; ++i) r.eval.ap_by_theta[i] = 1.0 / (3.0 + static_cast<double>(i));
  r.eval.map = 0.123456789012345678;
  const std::string text = dump(to_json(r));
  const RunRecord back = run_record_from_json(json::parse(text));
  CHECK(back.epochs == r.epochs);
  CHECK(back.eval == r.eval);
  CHECK(back.seed == r.seed);
  CHECK(back.strategy == r.strategy);
  CHECK(dump(to_json(back)) == text);
  CHECK(eval_summary_from_json(to_json(r.eval)) == r.eval);
}

TEST_CASE("scenes round trip") {
  GeneratorConfig g;
  const auto scenes = gen_scenes(g, 3, 6);
  const auto back = scenes_from_json(json::parse(dump(to_json(scenes))));
  REQUIRE(back.size() == scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    CHECK(back[i].proposals == scenes[i].proposals);
    CHECK(back[i].features == scenes[i].features);
    CHECK(back[i].gts.size() == scenes[i].gts.size());
    CHECK(back[i].distractors.size() == scenes[i].distractors.size());
  }
}

TEST_CASE("image records round trip and merge") {
  std::vector<ImageRecord> recs{{3, {{{0, 0, 1.5, 2}, 1, 3}}, {{{0.1, 0, 1, 2}, 1, 0.75}}}, {5, {}, {}}};
  const auto back = image_records_from_json(json::parse(to_json(recs).dump()));
  REQUIRE(back.size() == 2);
  CHECK(back[0].image_id == 3);
  CHECK(back[0].gts[0].box == recs[0].gts[0].box);
  CHECK(back[0].dets[0].score == 0.75);
  CHECK(to_json(back) == to_json(recs));
  CHECK(image_records_from_json(json{{"images", to_json(recs)}}).size() == 2);
  CHECK_THROWS_AS(image_records_from_json(json::parse(R"([{"image_id": 1, "gts": [{"box": [0, 0, 1]}]}])")), IoError);

  std::vector<ImageRecord> g{{1, {{{0, 0, 1, 1}, 0, 1}}, {}}};
  std::vector<ImageRecord> d{{1, {}, {{{0, 0, 1, 1}, 0, 0.5}}}, {2, {}, {{{0, 0, 1, 1}, 0, 0.5}}}};
  const auto m = merge_records(g, d);
  REQUIRE(m.size() == 2);
  CHECK(m[0].gts.size() == 1);
  CHECK(m[0].dets.size() == 1);
}

TEST_CASE("CSV writer round trip") {
  CsvWriter w({"a", "b,c", "d"});
  w.row({"1", "x\"y", "line\nbreak"});
  w.row({"", "plain", format_number(0.1)});
  CHECK(w.rows() == 2);
  CHECK(w.str().find("\r\n") != std::string::npos);
  CHECK(CsvWriter::escape("a,b") == "\"a,b\"");
  CHECK(CsvWriter::escape("q\"") == "\"q\"\"\"");
  const auto rows = parse_csv(w.str());
  REQUIRE(rows.size() == 3);
  CHECK(rows[0] == std::vector<std::string>{"a", "b,c", "d"});
  CHECK(rows[1] == std::vector<std::string>{"1", "x\"y", "line\nbreak"});
  CHECK(rows[2][2] == "0.1");
  CHECK_THROWS(w.row({"too", "few"}));
}

TEST_CASE("format_number round trips doubles") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 1000; ++i) {
    const double v = u(rng) / 7.0;
    CHECK(std::stod(format_number(v)) == v);
  }
  CHECK(format_number(0.5) == "0.5");
  CHECK(format_number(3) == "3");
}

TEST_CASE("sha256 and file helpers") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  const auto dir = std::filesystem::temp_directory_path() / "pisa_io_test";
  std::filesystem::create_directories(dir);
  write_text(dir / "x.json", "{\"a\": 1}");
  CHECK(read_json(dir / "x.json")["a"] == 1);
  CHECK_THROWS_AS(read_text(dir / "missing.json"), IoError);
  write_text(dir / "bad.json", "{nope");
  CHECK_THROWS_AS(read_json(dir / "bad.json"), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("svg plots are well-formed documents") {
  const std::string s = svg_line_plot({"t", "x", "y"}, {{"a", {0, 1, 2}, {0.1, 0.5, 0.2}}, {"b&c", {0, 2}, {1, 0}}});
  CHECK(s.rfind("<svg", 0) == 0);
  CHECK(s.find("</svg>") != std::string::npos);
  CHECK(s.find("b&amp;c") != std::string::npos);
  CHECK(s.find("<polyline") != std::string::npos);
  const std::string sc = svg_scatter_plot({"s", "x", "y"}, {{"p", {0.5}, {0.5}}});
  CHECK(sc.find("<circle") != std::string::npos);
  CHECK(svg_line_plot({"empty", "x", "y"}, {}).find("</svg>") != std::string::npos);
}
