#include "quiz/bank.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <tuple>
#include <unordered_map>
#include <unordered_set>
#include <utility>

#include "quiz/rng.hpp"

namespace quiz {

std::size_t Item::correct_index() const {
  for (std::size_t k = 0; k < answers.size(); ++k) {
    if (answers[k].correct) return k;
  }
  throw BankError("item '" + item_id + "' has no correct answer");
}

void validate_item(const Item& item) {
  if (item.item_id.empty()) throw BankError("item with empty item_id");
  if (item.answers.size() < 2) {
    throw BankError("item '" + item.item_id + "' needs at least 2 answers, has " +
                    std::to_string(item.answers.size()));
  }
  const auto n_correct = std::count_if(item.answers.begin(), item.answers.end(),
                                       [](const Answer& a) { return a.correct; });
  if (n_correct != 1) {
    throw BankError("item '" + item.item_id + "' must have exactly one correct answer, has " +
                    std::to_string(n_correct));
  }
  if (item.times_correct > item.times_answered) {
    throw BankError("item '" + item.item_id + "' has more correct answers than answers");
  }
}

const Item* ItemBank::find(std::string_view item_id) const {
  auto it = std::find_if(items.begin(), items.end(),
                         [&](const Item& item) { return item.item_id == item_id; });
  return it == items.end() ? nullptr : &*it;
}

Item* ItemBank::find(std::string_view item_id) {
  return const_cast<Item*>(std::as_const(*this).find(item_id));
}

void validate_bank(const ItemBank& bank) {
  if (bank.bank_id.empty()) throw BankError("bank with empty bank_id");
  if (bank.items.empty()) throw BankError("bank '" + bank.bank_id + "' has no items");
  std::unordered_set<std::string> seen;
  for (const auto& item : bank.items) {
    validate_item(item);
    if (!seen.insert(item.item_id).second) {
      throw BankError("bank '" + bank.bank_id + "' has duplicate item_id '" + item.item_id + "'");
    }
  }
}

GradeSummary lecture_grade(std::span<const Attempt> history) {
  const auto window = history.last(std::min(kGradeWindow, history.size()));
  double raw = 0.0;
  for (const auto& attempt : window) raw += attempt.correct ? kCorrectPoints : kWrongPoints;
  const double grade = std::clamp(raw / static_cast<double>(kGradeWindow), 0.0, 1.0);
  return {raw, grade};
}

const BankProgress* StudentState::progress(std::string_view bank_id) const {
  auto it = banks.find(bank_id);
  return it == banks.end() ? nullptr : &it->second;
}

ResponseRecord record_response(StudentState& state, std::string_view bank_id, Item& item,
                               std::size_t chosen_index, Timestamp timestamp) {
  if (chosen_index >= item.answers.size()) {
    throw std::out_of_range("answer index " + std::to_string(chosen_index) + " out of range for item '" +
                            item.item_id + "' with " + std::to_string(item.answers.size()) +
                            " answers");
  }
  const bool correct = item.answers[chosen_index].correct;

  auto it = state.banks.find(bank_id);
  if (it == state.banks.end()) it = state.banks.emplace(std::string(bank_id), BankProgress{}).first;
  auto& progress = it->second;
  progress.history.push_back({item.item_id, correct});
  progress.grade = lecture_grade(progress.history);
  ++progress.last_seq;

  ++item.times_answered;
  if (correct) ++item.times_correct;

  ResponseRecord record;
  record.student_id = state.student_id;
  record.bank_id = std::string(bank_id);
  record.item_id = item.item_id;
  record.seq = progress.last_seq;
  record.chosen_index = chosen_index;
  record.correct = correct;
  record.grade_after = progress.grade.grade;
  record.timestamp = timestamp;
  return record;
}

double empirical_difficulty(const Item& item) {
  if (item.times_answered == 0) return 0.5;
  return 1.0 - static_cast<double>(item.times_correct) / static_cast<double>(item.times_answered);
}

DifficultyRanking::DifficultyRanking(std::vector<std::string> easiest_first)
    : by_rank_(std::move(easiest_first)) {}

std::size_t DifficultyRanking::rank_of(std::string_view item_id) const {
  auto it = std::find(by_rank_.begin(), by_rank_.end(), item_id);
  if (it == by_rank_.end()) throw std::out_of_range("item '" + std::string(item_id) + "' not ranked");
  return static_cast<std::size_t>(it - by_rank_.begin()) + 1;
}

DifficultyRanking rank_by_difficulty(const ItemBank& bank) {
  if (bank.items.empty()) throw BankError("cannot rank an empty bank");
  std::vector<std::pair<double, const std::string*>> keyed;
  keyed.reserve(bank.items.size());
  for (const auto& item : bank.items) keyed.emplace_back(empirical_difficulty(item), &item.item_id);
  std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
    return std::tie(a.first, *a.second) < std::tie(b.first, *b.second);
  });
  std::vector<std::string> ids;
  ids.reserve(keyed.size());
  for (const auto& [difficulty, id] : keyed) ids.push_back(*id);
  return DifficultyRanking(std::move(ids));
}

std::vector<ResponseRecord> first_exposure_filter(std::span<const ResponseRecord> log) {
  std::map<std::pair<std::string, std::string>, std::uint64_t> last_seq;
  std::set<std::tuple<std::string, std::string, std::string>> seen;
  std::vector<ResponseRecord> out;
  for (std::size_t k = 0; k < log.size(); ++k) {
    const auto& rec = log[k];
    auto [it, inserted] = last_seq.try_emplace({rec.student_id, rec.bank_id}, rec.seq);
    if (!inserted) {
      if (rec.seq <= it->second) {
        throw std::invalid_argument("response log not in per-student order at record " +
                                    std::to_string(k) + " (student '" + rec.student_id +
                                    "', seq " + std::to_string(rec.seq) + " after " +
                                    std::to_string(it->second) + ")");
      }
      it->second = rec.seq;
    }
    if (seen.emplace(rec.student_id, rec.bank_id, rec.item_id).second) out.push_back(rec);
  }
  return out;
}

AnswerPermutation::AnswerPermutation(std::vector<std::size_t> presented_to_canonical)
    : presented_(std::move(presented_to_canonical)) {
  std::vector<bool> hit(presented_.size(), false);
  for (auto c : presented_) {
    if (c >= presented_.size() || hit[c]) throw std::invalid_argument("not a permutation");
    hit[c] = true;
  }
}

AnswerPermutation AnswerPermutation::identity(std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  return AnswerPermutation(std::move(order));
}

std::size_t AnswerPermutation::canonical_index(std::size_t presented_index) const {
  if (presented_index >= presented_.size()) {
    throw std::out_of_range("presented index " + std::to_string(presented_index) + " out of range");
  }
  return presented_[presented_index];
}

std::size_t AnswerPermutation::presented_index(std::size_t canonical_index) const {
  auto it = std::find(presented_.begin(), presented_.end(), canonical_index);
  if (it == presented_.end()) {
    throw std::out_of_range("canonical index " + std::to_string(canonical_index) + " out of range");
  }
  return static_cast<std::size_t>(it - presented_.begin());
}

AnswerPermutation shuffle_answers(const Item& item, std::uint64_t seed) {
  auto perm = AnswerPermutation::identity(item.answers.size());
  if (!item.shuffle) return perm;
  std::vector<std::size_t> order = perm.presented_order();
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng.engine());
  return AnswerPermutation(std::move(order));
}

void apply_counters(ItemBank& bank, std::span<const ResponseRecord> log) {
  std::unordered_map<std::string_view, Item*> by_id;
  for (auto& item : bank.items) {
    item.times_answered = 0;
    item.times_correct = 0;
    by_id.emplace(item.item_id, &item);
  }
  for (const auto& rec : log) {
    if (rec.bank_id != bank.bank_id) continue;
    auto it = by_id.find(rec.item_id);
    if (it == by_id.end()) continue;
    ++it->second->times_answered;
    if (rec.correct) ++it->second->times_correct;
  }
}

}  // namespace quiz
