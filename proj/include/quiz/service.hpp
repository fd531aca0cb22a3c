#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "quiz/allocation.hpp"
#include "quiz/bank.hpp"
#include "quiz/rng.hpp"

namespace httplib {
class Server;
}

namespace quiz::service {

/// Request-level failure; `status` is the HTTP status the wire layer uses.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, const std::string& what) : std::runtime_error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path bank_dir;
  std::filesystem::path log_path = "responses.jsonl";
  /// Registrations; defaults to "<log_path>.students".
  std::optional<std::filesystem::path> students_path;
  AllocationPolicy policy;
  bool legacy_uniform = false;
  /// 0 draws a seed from the OS.
  std::uint64_t seed = 0;

  /// QUIZ_LOG_PATH, when set, overrides log_path.
  static ServiceConfig from_json(const nlohmann::json& doc);
  static ServiceConfig load(const std::filesystem::path& path);
  std::filesystem::path registry_path() const;
};

/// Append-only JSON-lines file. Every append is flushed and fsync'ed before
/// it returns.
class ResponseLog {
 public:
  explicit ResponseLog(std::filesystem::path path);
  ~ResponseLog();
  ResponseLog(const ResponseLog&) = delete;
  ResponseLog& operator=(const ResponseLog&) = delete;

  void append_line(const std::string& line);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  int fd_ = -1;
};

struct BankSummary {
  std::string bank_id;
  std::string title;
  std::size_t item_count = 0;
};

struct Question {
  std::string item_id;
  std::string stem;
  std::vector<std::string> answers;  // presented order
  std::string question_token;
};

struct AnswerResult {
  bool correct = false;
  double raw_score = 0.0;
  double grade = 0.0;
};

struct GradeView {
  double raw_score = 0.0;
  double grade = 0.0;
  std::size_t answered_count = 0;
};

/// The quiz loop. All state is a fold over the response log: constructing
/// the service replays the existing log, and each answer is appended to the
/// log before the in-memory state changes.
class QuizService {
 public:
  explicit QuizService(ServiceConfig config);
  ~QuizService();

  /// Loads and validates a bank file and rebuilds its counters from the log.
  std::string load_bank(const std::filesystem::path& path);
  /// Registers an in-memory bank (tests, simulation replay).
  std::string add_bank(ItemBank bank);
  std::vector<BankSummary> banks() const;

  std::string register_student(std::string_view name);
  bool is_registered(std::string_view student_id) const;

  Question next_question(std::string_view student_id, std::string_view bank_id);
  AnswerResult submit_answer(std::string_view student_id, std::string_view bank_id,
                             std::string_view question_token, std::size_t presented_index);
  GradeView get_grade(std::string_view student_id, std::string_view bank_id) const;

  /// The allocation vector the next draw for this student would use, by
  /// difficulty rank.
  std::vector<double> current_pmf(std::string_view student_id, std::string_view bank_id) const;

  /// Lines [offset, offset + limit) of the log; limit 0 means to the end.
  void export_log(std::ostream& out, std::size_t offset = 0, std::size_t limit = 0) const;
  std::vector<ResponseRecord> records() const;

  /// Folds records into student state and item counters, checking seq and
  /// grade_after along the way. Records are not re-appended to the log.
  void replay(std::span<const ResponseRecord> records);

  const ServiceConfig& config() const { return config_; }

 private:
  struct Pending {
    std::string item_id;
    AnswerPermutation permutation;
    std::string token;
    Timestamp issued_at{};
  };
  struct StudentEntry {
    std::string name;
    StudentState state;
    std::map<std::string, Pending, std::less<>> pending;  // by bank
    mutable std::mutex mutex;
  };
  struct BankEntry {
    ItemBank bank;
    mutable std::mutex mutex;
  };

  StudentEntry& student(std::string_view student_id) const;
  BankEntry& bank(std::string_view bank_id) const;
  Question present(const BankEntry& bank, const Pending& pending) const;
  std::string make_token();
  void replay_one(const ResponseRecord& rec);

  ServiceConfig config_;
  mutable std::shared_mutex registry_mutex_;
  std::map<std::string, std::unique_ptr<StudentEntry>, std::less<>> students_;
  std::map<std::string, std::unique_ptr<BankEntry>, std::less<>> banks_;
  std::vector<ResponseRecord> history_;  // guarded by log_mutex_

  mutable std::mutex log_mutex_;
  std::unique_ptr<ResponseLog> log_;
  std::unique_ptr<ResponseLog> registry_;

  std::mutex rng_mutex_;
  Rng rng_;
};

/// Wires the HTTP endpoints onto `server`:
///   POST /students                {name}                       -> {student_id, consent}
///   GET  /banks                                                -> [{bank_id, title, item_count}]
///   POST /banks/{id}/question     {student_id}                 -> {item_id, stem, answers, question_token}
///   POST /banks/{id}/answer       {student_id, question_token, presented_index}
///                                                              -> {correct, raw_score, grade}
///   GET  /banks/{id}/grade?student_id=...                      -> {raw_score, grade, answered_count}
///   GET  /admin/export?offset=&limit=                          -> JSON lines
void mount_routes(httplib::Server& server, QuizService& service);

}  // namespace quiz::service
