#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "quiz/rng.hpp"

namespace quiz::crossover {

enum class Treatment { traditional, tutorweb };
enum class MathBackground { weak, strong };

std::string_view to_string(Treatment t);
std::string_view to_string(MathBackground m);
Treatment treatment_from_string(std::string_view text);
MathBackground math_from_string(std::string_view text);

struct ExamRecord {
  std::string student_id;
  int exam = 1;  // 1..4
  Treatment treatment = Treatment::traditional;
  MathBackground math = MathBackground::weak;
  double score = 0.0;
};

/// Throws std::invalid_argument on a duplicate (student, exam) or an exam
/// outside 1..4.
void validate_records(std::span<const ExamRecord> records);

std::vector<ExamRecord> read_exams_csv(std::istream& in, const std::string& source = "<exams>");
std::vector<ExamRecord> read_exams_csv_file(const std::filesystem::path& path);
void write_exams_csv(std::ostream& out, std::span<const ExamRecord> records);

// ---------------------------------------------------------------------------
// Randomized two-group crossover: group A gets tutor-web on exams 1 and 3,
// group B on exams 2 and 4.

inline constexpr int kExamCount = 4;

struct ScheduleEntry {
  std::string student_id;
  char group = 'A';
  std::vector<Treatment> periods;  // index k-1 -> treatment before exam k
};

struct CrossoverSchedule {
  std::vector<ScheduleEntry> students;

  std::size_t group_size(char group) const;
  const ScheduleEntry* find(std::string_view student_id) const;
};

/// Throws std::invalid_argument for fewer than two students.
CrossoverSchedule randomize_crossover(std::span<const std::string> student_ids, Rng& rng);

// ---------------------------------------------------------------------------
// Random-intercept linear mixed model
//   y = X b + Z u + e,  u ~ N(0, sigma_b2 I),  e ~ N(0, sigma2 I)
// with treatment coding against (traditional, weak, exam 1).

enum class Term { treatment, math, interaction, exam };

std::string_view to_string(Term t);
Term term_from_string(std::string_view text);

struct Design {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  std::vector<std::size_t> group;  // student index of each row
  std::size_t n_groups = 0;
  std::vector<std::string> column_names;
  std::vector<std::string> student_ids;
  std::vector<Term> terms;

  /// Dense student indicator matrix, one column per student.
  Eigen::MatrixXd z() const;
};

/// Exam columns are only created for exams present in the records.
Design design_matrix(std::span<const ExamRecord> records, std::span<const Term> terms);

struct LmmFit {
  std::vector<std::string> names;
  std::vector<Term> terms;
  Eigen::VectorXd beta;
  Eigen::MatrixXd cov_fixed;
  double sigma_b2 = 0.0;
  double sigma2 = 0.0;
  double lambda = 0.0;  // sigma_b2 / sigma2
  double loglik = 0.0;
  std::size_t n_obs = 0;

  std::optional<std::size_t> index_of(std::string_view name) const;
  double coefficient(std::string_view name) const;
  double std_error(std::string_view name) const;
};

inline constexpr double kMaxVarianceRatio = 1e4;

/// Maximum likelihood (not REML). The variance ratio is profiled out: for a
/// fixed ratio, GLS gives the fixed effects and residual variance in closed
/// form; the ratio itself is searched on [0, 1e4].
LmmFit fit_lmm(const Design& design);
/// The same estimates with the ratio sigma_b2 / sigma2 held at `lambda`;
/// lambda = 0 is ordinary least squares.
LmmFit fit_lmm_at(const Design& design, double lambda);
/// Same model from an explicit student indicator matrix (one 1 per row).
LmmFit fit_lmm(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z, const Eigen::VectorXd& y);

/// Likelihood-ratio p-value of the terms in `full` missing from `reduced`.
double lrt_term(const LmmFit& full, const LmmFit& reduced);

struct EliminationStep {
  Term term;
  double p_value = 1.0;
  bool dropped = false;
};

struct EliminationResult {
  LmmFit final_fit;
  std::vector<EliminationStep> trace;
  /// The last fit that still contained the treatment term; the treatment
  /// interval is read from it.
  LmmFit treatment_fit;
};

/// Interaction is tested first; if dropped, treatment is tested next. Math
/// and exam stay in the model throughout.
EliminationResult backward_eliminate(std::span<const ExamRecord> records, double alpha = 0.05);

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
};

/// Wald interval for the tutor-web minus traditional contrast.
Interval treatment_ci(const LmmFit& fit, double level = 0.95);

}  // namespace quiz::crossover
