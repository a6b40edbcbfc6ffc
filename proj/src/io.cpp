#include "pisa/io.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

namespace pisa {

using nlohmann::json;

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path.string());
  return ss.str();
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.close();
  if (!out) throw IoError("write failed: " + path.string());
}

json read_json(const std::filesystem::path& path) {
  const std::string text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 15]);
  }
  return out;
}

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

CsvWriter::CsvWriter(std::vector<std::string> header) : columns_(header.size()) {
  if (header.empty()) throw std::invalid_argument("CsvWriter: empty header");
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i) text_ += ',';
    text_ += escape(header[i]);
  }
  text_ += "\r\n";
}

CsvWriter& CsvWriter::row(const std::vector<std::string>& fields) {
  if (fields.size() != columns_) throw std::invalid_argument("CsvWriter: row width differs from header");
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) text_ += ',';
    text_ += escape(fields[i]);
  }
  text_ += "\r\n";
  ++rows_;
  return *this;
}

std::string CsvWriter::escape(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\r' || c == '\n') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (quoted) throw IoError("csv: unterminated quoted field");
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

json box_json(const BBox& b) { return {b.x1, b.y1, b.x2, b.y2}; }

BBox box_from(const json& j) {
  if (!j.is_array() || j.size() != 4) throw IoError("box must be [x1, y1, x2, y2]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

}  // namespace

json to_json(const std::vector<ImageRecord>& images) {
  json out = json::array();
  for (const auto& im : images) {
    json gts = json::array();
    for (const auto& g : im.gts) gts.push_back({{"box", box_json(g.box)}, {"class", g.class_id}});
    json dets = json::array();
    for (const auto& d : im.dets) {
      dets.push_back({{"box", box_json(d.box)}, {"class", d.class_id}, {"score", d.score}});
    }
    out.push_back({{"image_id", im.image_id}, {"gts", gts}, {"dets", dets}});
  }
  return out;
}

std::vector<ImageRecord> image_records_from_json(const json& j) {
  const json* list = &j;
  if (j.is_object() && j.contains("images")) list = &j.at("images");
  if (!list->is_array()) throw IoError("expected an array of per-image objects");
  std::vector<ImageRecord> out;
  try {
    for (const auto& im : *list) {
      ImageRecord r;
      r.image_id = im.at("image_id").get<int>();
      if (im.contains("gts")) {
        for (const auto& g : im.at("gts")) {
          r.gts.push_back({box_from(g.at("box")), g.at("class").get<int>(), r.image_id});
        }
      }
      if (im.contains("dets")) {
        for (const auto& d : im.at("dets")) {
          r.dets.push_back({box_from(d.at("box")), d.at("class").get<int>(), d.at("score").get<double>()});
        }
      }
      out.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed image record: ") + e.what());
  }
  return out;
}

std::vector<ImageRecord> merge_records(const std::vector<ImageRecord>& gts,
                                       const std::vector<ImageRecord>& dets) {
  std::map<int, ImageRecord> by_id;
  for (const auto& r : gts) {
    auto& slot = by_id[r.image_id];
    slot.image_id = r.image_id;
    slot.gts.insert(slot.gts.end(), r.gts.begin(), r.gts.end());
  }
  for (const auto& r : dets) {
    auto& slot = by_id[r.image_id];
    slot.image_id = r.image_id;
    slot.dets.insert(slot.dets.end(), r.dets.begin(), r.dets.end());
  }
  std::vector<ImageRecord> out;
  for (auto& [id, r] : by_id) out.push_back(std::move(r));
  return out;
}

}  // namespace pisa
