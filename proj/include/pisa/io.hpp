#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>
#include "pisa/eval.hpp"

namespace pisa {

// File-system and input-format failures.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);
nlohmann::json read_json(const std::filesystem::path& path);

// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

// Shortest text that parses back to the same double.
std::string format_number(double v);

// RFC-4180 table: CRLF line ends, fields quoted when they contain a comma,
// quote or line break.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header);

  CsvWriter& row(const std::vector<std::string>& fields);
  std::size_t rows() const { return rows_; }
  const std::string& str() const { return text_; }

  static std::string escape(std::string_view field);

 private:
  std::size_t columns_;
  std::size_t rows_ = 0;
  std::string text_;
};

// Parses RFC-4180 text into rows of fields (header included).
std::vector<std::vector<std::string>> parse_csv(std::string_view text);

// Per-image records: [{image_id, gts:[{box:[x1,y1,x2,y2], class}], dets:[{box, class, score}]}].
nlohmann::json to_json(const std::vector<ImageRecord>& images);
std::vector<ImageRecord> image_records_from_json(const nlohmann::json& j);
// Joins ground truths and detections kept in separate files by image_id.
std::vector<ImageRecord> merge_records(const std::vector<ImageRecord>& gts,
                                       const std::vector<ImageRecord>& dets);

}  // namespace pisa
