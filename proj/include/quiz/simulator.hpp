#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "quiz/allocation.hpp"
#include "quiz/bank.hpp"
#include "quiz/crossover.hpp"
#include "quiz/irt.hpp"
#include "quiz/rng.hpp"

namespace quiz::sim {

struct SimStudent {
  std::string student_id;
  double ability = 0.0;
  double learning_rate = 0.0;  // ability gained per answered question
  bool guesser = false;        // answers uniformly at random
};

/// Ground truth for the crossover exam generator, on the treatment-coded
/// scale used by the analysis (reference: traditional, weak, exam 1).
struct CrossoverTruth {
  double intercept = 4.0;
  double treatment = 0.0;
  double math = 1.5;
  double interaction = 0.0;
  std::vector<double> exam{0.0, 0.4, -0.2, 0.3};  // exam 1 must be 0
};

struct CrossoverConfig {
  std::size_t n_exams = 4;
  CrossoverTruth truth;
  double sigma_b = 1.0;
  double sigma = 1.2;
  double score_scale = 10.0;  // fixture convention, scores live on 0..scale
  bool clamp_scores = false;
  double strong_fraction = 0.55;
  double missing_rate = 0.0;
};

struct SimConfig {
  std::uint64_t seed = 1;
  std::size_t n_students = 100;

  // Bank: an existing file, or a synthetic bank of n_items with generated
  // item parameters.
  std::optional<std::filesystem::path> bank_path;
  std::size_t n_items = 70;
  std::size_t n_answers = 4;
  irt::Variant variant = irt::Variant::m1;
  std::vector<double> beta;      // empty: beta ~ N(0, 1)
  std::vector<double> alpha;     // empty: 1
  std::vector<double> guessing;  // empty: 0

  AllocationPolicy policy;
  std::size_t questions_per_student = 40;
  double learning_rate = 0.0;
  double guesser_fraction = 0.0;

  std::optional<CrossoverConfig> crossover;

  static SimConfig from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
};

/// Abilities N(0, 1), guessers Bernoulli(guesser_fraction); ids s0001.. .
std::vector<SimStudent> generate_population(const SimConfig& config);

/// One answer; guessers are right with probability 1 / n_answers.
bool simulate_response(const SimStudent& student, const irt::IrtModel& truth, std::size_t item,
                       std::size_t n_answers, Rng& rng);

/// Item parameters for the synthetic bank (or for the loaded bank's items,
/// in bank order).
irt::IrtModel generating_model(const SimConfig& config, std::size_t item_count);

/// Synthetic bank "sim" with items q001.. , `n_answers` answers each, the
/// first one correct, shuffling enabled.
ItemBank make_synthetic_bank(std::size_t n_items, std::size_t n_answers, const std::string& bank_id = "sim");

/// Bank named by config.bank_path, or a synthetic one.
ItemBank resolve_bank(const SimConfig& config);

/// Quiz loop for the whole cohort. Students advance in lockstep, one
/// question per round in student order; every draw ranks the bank on the
/// live counters, builds the allocation vector from the student's grade and
/// samples from it. Mutates the bank's counters. Timestamps are synthetic
/// (one second per answer from a fixed epoch) so equal configs give equal
/// bytes.
std::vector<ResponseRecord> run_sessions(const SimConfig& config, ItemBank& bank, const irt::IrtModel& truth);

/// Every student answers every item exactly once (no allocation).
irt::ResponseMatrix simulate_full_matrix(const irt::IrtModel& truth, std::size_t n_students, Rng& rng);

/// Crossover exam records from the config's crossover block.
std::vector<crossover::ExamRecord> simulate_crossover(const SimConfig& config);

}  // namespace quiz::sim
