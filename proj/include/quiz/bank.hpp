#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace quiz {

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;

/// Raised when an item bank violates its invariants. The message names the
/// offending item where there is one.
class BankError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Answer {
  std::string text;
  bool correct = false;
};

struct Item {
  std::string item_id;
  std::string stem;
  std::vector<Answer> answers;
  bool shuffle = false;
  // Derived from the response log; never persisted with the bank.
  std::uint64_t times_answered = 0;
  std::uint64_t times_correct = 0;

  std::size_t correct_index() const;
};

/// At least two answers, exactly one correct, counters consistent.
void validate_item(const Item& item);

struct ItemBank {
  std::string bank_id;
  std::string title;
  std::vector<Item> items;

  const Item* find(std::string_view item_id) const;
  Item* find(std::string_view item_id);
  std::size_t size() const { return items.size(); }
};

void validate_bank(const ItemBank& bank);

struct ResponseRecord {
  std::string student_id;
  std::string bank_id;
  std::string item_id;
  std::uint64_t seq = 0;
  std::size_t chosen_index = 0;  // canonical (unshuffled) answer order
  bool correct = false;
  double grade_after = 0.0;
  Timestamp timestamp{};

  bool operator==(const ResponseRecord&) const = default;
};

struct Attempt {
  std::string item_id;
  bool correct = false;
};

// Grading rule: +1 for a correct answer, -1/2 for a wrong one, over the most
// recent kGradeWindow answers; the normalized grade divides by the window
// maximum even when fewer answers exist.
inline constexpr std::size_t kGradeWindow = 8;
inline constexpr double kCorrectPoints = 1.0;
inline constexpr double kWrongPoints = -0.5;

struct GradeSummary {
  double raw_score = 0.0;
  double grade = 0.0;  // clamp(raw_score / 8, 0, 1)

  bool operator==(const GradeSummary&) const = default;
};

GradeSummary lecture_grade(std::span<const Attempt> history);

struct BankProgress {
  std::vector<Attempt> history;
  GradeSummary grade;
  std::uint64_t last_seq = 0;
};

struct StudentState {
  std::string student_id;
  std::map<std::string, BankProgress, std::less<>> banks;

  const BankProgress* progress(std::string_view bank_id) const;
};

/// Appends one answer to the student's history for `bank_id`, bumps the item
/// counters and recomputes the grade. Throws std::out_of_range for an invalid
/// answer index.
ResponseRecord record_response(StudentState& state, std::string_view bank_id, Item& item,
                               std::size_t chosen_index, Timestamp timestamp);

/// 1 - correct/answered, or 0.5 for an item nobody has answered yet.
double empirical_difficulty(const Item& item);

/// Items ordered from easiest (rank 1) to hardest (rank I). Ties on
/// difficulty are broken by item_id so the order is total and deterministic.
class DifficultyRanking {
 public:
  DifficultyRanking() = default;
  explicit DifficultyRanking(std::vector<std::string> easiest_first);

  std::size_t size() const { return by_rank_.size(); }
  /// 1-based rank.
  const std::string& item_at(std::size_t rank) const { return by_rank_.at(rank - 1); }
  std::size_t rank_of(std::string_view item_id) const;
  const std::vector<std::string>& items() const { return by_rank_; }

 private:
  std::vector<std::string> by_rank_;
};

DifficultyRanking rank_by_difficulty(const ItemBank& bank);

/// Keeps only the first response of each student to each item. Input must be
/// in per-student order: for every (student, bank) pair the seq values appear
/// strictly increasing. Different students may interleave.
std::vector<ResponseRecord> first_exposure_filter(std::span<const ResponseRecord> log);

/// Presented order of an item's answers. presented[k] is the canonical index
/// shown at position k.
class AnswerPermutation {
 public:
  AnswerPermutation() = default;
  explicit AnswerPermutation(std::vector<std::size_t> presented_to_canonical);

  static AnswerPermutation identity(std::size_t n);

  std::size_t size() const { return presented_.size(); }
  std::size_t canonical_index(std::size_t presented_index) const;
  std::size_t presented_index(std::size_t canonical_index) const;
  const std::vector<std::size_t>& presented_order() const { return presented_; }

  bool operator==(const AnswerPermutation&) const = default;

 private:
  std::vector<std::size_t> presented_;
};

/// Uniformly random permutation when item.shuffle is set, identity otherwise.
AnswerPermutation shuffle_answers(const Item& item, std::uint64_t seed);

/// Rebuilds n_i / c_i of every bank item from a response log. Records for
/// other banks or unknown items are ignored.
void apply_counters(ItemBank& bank, std::span<const ResponseRecord> log);

}  // namespace quiz
