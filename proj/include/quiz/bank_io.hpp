#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "quiz/bank.hpp"

namespace quiz {

/// Malformed bank or log file. Carries the 1-based line (0 when the whole
/// document is at fault) and the field that failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(std::string source, std::size_t line, std::string field, const std::string& what);

  const std::string& source() const { return source_; }
  std::size_t line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  std::string source_;
  std::size_t line_;
  std::string field_;
};

// ISO-8601 UTC, millisecond precision: 2011-09-05T13:45:00.000Z. Parsing also
// accepts whole seconds.
std::string format_timestamp(Timestamp ts);
Timestamp parse_timestamp(std::string_view text);
Timestamp now_utc();

ItemBank bank_from_json(const nlohmann::json& doc, const std::string& source = "<bank>");
nlohmann::json bank_to_json(const ItemBank& bank);
/// Reads and validates a bank document; counters start at zero.
ItemBank load_bank_file(const std::filesystem::path& path);
void save_bank_file(const ItemBank& bank, const std::filesystem::path& path);

nlohmann::json record_to_json(const ResponseRecord& rec);
ResponseRecord record_from_json(const nlohmann::json& obj, const std::string& source = "<log>",
                                std::size_t line = 0);
/// Single JSON-lines row, without the trailing newline.
std::string record_to_line(const ResponseRecord& rec);

std::vector<ResponseRecord> read_log(std::istream& in, const std::string& source = "<log>");
/// Missing file reads as an empty log.
std::vector<ResponseRecord> read_log_file(const std::filesystem::path& path);
void write_log(std::ostream& out, const std::vector<ResponseRecord>& log);

}  // namespace quiz
