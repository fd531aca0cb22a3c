#include "quiz/bank_io.hpp"

#include <cstdio>
#include <ctime>
#include <fstream>
#include <istream>
#include <ostream>

namespace quiz {

using nlohmann::json;

FormatError::FormatError(std::string source, std::size_t line, std::string field,
                         const std::string& what)
    : std::runtime_error(source + (line ? ":" + std::to_string(line) : std::string()) +
                         (field.empty() ? std::string() : " [" + field + "]") + ": " + what),
      source_(std::move(source)),
      line_(line),
      field_(std::move(field)) {}

std::string format_timestamp(Timestamp ts) {
  using namespace std::chrono;
  const auto secs = floor<seconds>(ts);
  const auto millis = (ts - secs).count();
  const std::time_t t = system_clock::to_time_t(secs);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(millis));
  return buf;
}

Timestamp parse_timestamp(std::string_view text) {
  std::tm tm{};
  int millis = 0;
  int consumed = 0;
  const std::string s(text);
  const int n = std::sscanf(s.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%n", &tm.tm_year, &tm.tm_mon,
                            &tm.tm_mday, &tm.tm_hour, &tm.tm_min, &tm.tm_sec, &consumed);
  if (n != 6) throw std::invalid_argument("bad timestamp '" + s + "'");
  std::string_view rest = std::string_view(s).substr(static_cast<std::size_t>(consumed));
  if (!rest.empty() && rest.front() == '.') {
    rest.remove_prefix(1);
    int digits = 0;
    while (!rest.empty() && rest.front() >= '0' && rest.front() <= '9') {
      if (digits < 3) millis = millis * 10 + (rest.front() - '0');
      ++digits;
      rest.remove_prefix(1);
    }
    if (digits == 0) throw std::invalid_argument("bad timestamp '" + s + "'");
    for (int d = digits; d < 3; ++d) millis *= 10;
  }
  if (rest != "Z") throw std::invalid_argument("timestamp '" + s + "' is not UTC (missing 'Z')");
  tm.tm_year -= 1900;
  tm.tm_mon -= 1;
  const std::time_t t = timegm(&tm);
  return std::chrono::time_point_cast<std::chrono::milliseconds>(std::chrono::system_clock::from_time_t(t)) +
         std::chrono::milliseconds(millis);
}

Timestamp now_utc() {
  return std::chrono::time_point_cast<std::chrono::milliseconds>(std::chrono::system_clock::now());
}

namespace {

template <typename T>
T require(const json& obj, const char* key, const std::string& source, std::size_t line,
          const std::string& context) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw FormatError(source, line, context + key, "missing field");
  }
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(source, line, context + key, std::string("wrong type: ") + e.what());
  }
}

}  // namespace

ItemBank bank_from_json(const json& doc, const std::string& source) {
  ItemBank bank;
  bank.bank_id = require<std::string>(doc, "bank_id", source, 0, "");
  bank.title = doc.value("title", std::string());
  const auto& items = doc.contains("items") ? doc.at("items") : json();
  if (!items.is_array()) throw FormatError(source, 0, "items", "missing or not an array");
  for (std::size_t k = 0; k < items.size(); ++k) {
    const auto& node = items[k];
    const std::string ctx = "items[" + std::to_string(k) + "].";
    Item item;
    item.item_id = require<std::string>(node, "item_id", source, 0, ctx);
    item.stem = require<std::string>(node, "stem", source, 0, ctx);
    item.shuffle = node.value("shuffle", false);
    const auto& answers = node.contains("answers") ? node.at("answers") : json();
    if (!answers.is_array()) throw FormatError(source, 0, ctx + "answers", "missing or not an array");
    for (std::size_t a = 0; a < answers.size(); ++a) {
      const std::string actx = ctx + "answers[" + std::to_string(a) + "].";
      item.answers.push_back({require<std::string>(answers[a], "text", source, 0, actx),
                              require<bool>(answers[a], "correct", source, 0, actx)});
    }
    bank.items.push_back(std::move(item));
  }
  try {
    validate_bank(bank);
  } catch (const BankError& e) {
    throw FormatError(source, 0, "", e.what());
  }
  return bank;
}

json bank_to_json(const ItemBank& bank) {
  nlohmann::ordered_json doc;
  doc["bank_id"] = bank.bank_id;
  doc["title"] = bank.title;
  auto items = nlohmann::ordered_json::array();
  for (const auto& item : bank.items) {
    nlohmann::ordered_json node;
    node["item_id"] = item.item_id;
    node["stem"] = item.stem;
    auto answers = nlohmann::ordered_json::array();
    for (const auto& a : item.answers) answers.push_back({{"text", a.text}, {"correct", a.correct}});
    node["answers"] = std::move(answers);
    node["shuffle"] = item.shuffle;
    items.push_back(std::move(node));
  }
  doc["items"] = std::move(items);
  return json::parse(doc.dump());
}

ItemBank load_bank_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path.string(), 0, "", "cannot open bank file");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string(), 0, "", std::string("invalid JSON: ") + e.what());
  }
  return bank_from_json(doc, path.string());
}

void save_bank_file(const ItemBank& bank, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write bank file " + path.string());
  out << bank_to_json(bank).dump(2) << '\n';
}

json record_to_json(const ResponseRecord& rec) {
  return json{{"student_id", rec.student_id}, {"bank_id", rec.bank_id},
              {"item_id", rec.item_id},       {"seq", rec.seq},
              {"chosen_index", rec.chosen_index}, {"correct", rec.correct},
              {"grade_after", rec.grade_after}, {"timestamp", format_timestamp(rec.timestamp)}};
}

std::string record_to_line(const ResponseRecord& rec) {
  // Field order follows the record type so lines are stable and readable.
  nlohmann::ordered_json row;
  row["student_id"] = rec.student_id;
  row["bank_id"] = rec.bank_id;
  row["item_id"] = rec.item_id;
  row["seq"] = rec.seq;
  row["chosen_index"] = rec.chosen_index;
  row["correct"] = rec.correct;
  row["grade_after"] = rec.grade_after;
  row["timestamp"] = format_timestamp(rec.timestamp);
  return row.dump();
}

ResponseRecord record_from_json(const json& obj, const std::string& source, std::size_t line) {
  ResponseRecord rec;
  rec.student_id = require<std::string>(obj, "student_id", source, line, "");
  rec.bank_id = require<std::string>(obj, "bank_id", source, line, "");
  rec.item_id = require<std::string>(obj, "item_id", source, line, "");
  rec.seq = require<std::uint64_t>(obj, "seq", source, line, "");
  rec.chosen_index = require<std::size_t>(obj, "chosen_index", source, line, "");
  rec.correct = require<bool>(obj, "correct", source, line, "");
  rec.grade_after = require<double>(obj, "grade_after", source, line, "");
  if (!(rec.grade_after >= 0.0 && rec.grade_after <= 1.0)) {
    throw FormatError(source, line, "grade_after", "outside [0, 1]");
  }
  if (rec.seq == 0) throw FormatError(source, line, "seq", "must be positive");
  try {
    rec.timestamp = parse_timestamp(require<std::string>(obj, "timestamp", source, line, ""));
  } catch (const std::invalid_argument& e) {
    throw FormatError(source, line, "timestamp", e.what());
  }
  return rec;
}

std::vector<ResponseRecord> read_log(std::istream& in, const std::string& source) {
  std::vector<ResponseRecord> log;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(text);
    } catch (const json::parse_error& e) {
      throw FormatError(source, line, "", std::string("invalid JSON: ") + e.what());
    }
    log.push_back(record_from_json(obj, source, line));
  }
  return log;
}

std::vector<ResponseRecord> read_log_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return {};
  std::ifstream in(path);
  if (!in) throw FormatError(path.string(), 0, "", "cannot open log file");
  return read_log(in, path.string());
}

void write_log(std::ostream& out, const std::vector<ResponseRecord>& log) {
  for (const auto& rec : log) out << record_to_line(rec) << '\n';
}

}  // namespace quiz
