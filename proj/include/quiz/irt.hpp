#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "quiz/bank.hpp"

namespace quiz::irt {

/// The four nested logistic response models:
///   m1  logistic(z - beta_i)
///   m2  logistic(alpha (z - beta_i))          common discrimination
///   m3  logistic(alpha_i (z - beta_i))        per-item discrimination
///   m4  c_i + (1 - c_i) logistic(alpha_i (z - beta_i))
enum class Variant { m1 = 1, m2 = 2, m3 = 3, m4 = 4 };

std::string_view to_string(Variant v);
Variant variant_from_string(std::string_view text);

inline constexpr double kBetaBound = 6.0;
inline constexpr double kAlphaMin = 0.05;
inline constexpr double kAlphaMax = 10.0;
inline constexpr double kGuessingMax = 0.5;

struct ResponseCell {
  std::size_t student = 0;
  std::size_t item = 0;
  bool correct = false;

  bool operator==(const ResponseCell&) const = default;
};

/// Sparse binary student-by-item matrix; a cell exists only where the
/// student gave a first-exposure answer.
class ResponseMatrix {
 public:
  struct Entry {
    std::size_t item;
    bool correct;
  };

  ResponseMatrix() = default;
  /// Validates: indices in range, at most one cell per (student, item), and
  /// every student and item referenced by some cell.
  ResponseMatrix(std::vector<std::string> students, std::vector<std::string> items,
                 std::vector<ResponseCell> cells);

  /// Builds the matrix from already-filtered first-exposure records. When a
  /// bank is given, only its records are used and items keep bank order
  /// (unanswered items are left out); otherwise items appear in order of
  /// first occurrence. Students appear in order of first occurrence.
  static ResponseMatrix from_records(std::span<const ResponseRecord> records,
                                     const ItemBank* bank = nullptr);

  std::size_t n_students() const { return students_.size(); }
  std::size_t n_items() const { return items_.size(); }
  std::size_t n_cells() const { return cells_.size(); }
  bool empty() const { return cells_.empty(); }

  const std::vector<std::string>& students() const { return students_; }
  const std::vector<std::string>& items() const { return items_; }
  const std::vector<ResponseCell>& cells() const { return cells_; }
  const std::vector<Entry>& row(std::size_t student) const { return rows_.at(student); }

  /// (answered, correct) per item.
  std::vector<std::pair<std::size_t, std::size_t>> item_totals() const;

  bool operator==(const ResponseMatrix& other) const {
    return students_ == other.students_ && items_ == other.items_ && cells_ == other.cells_;
  }

 private:
  std::vector<std::string> students_;
  std::vector<std::string> items_;
  std::vector<ResponseCell> cells_;
  std::vector<std::vector<Entry>> rows_;
};

struct ItemFlags {
  bool degenerate = false;  // all answers correct or all wrong
  bool beta_at_bound = false;
  bool alpha_at_bound = false;
  bool guessing_at_bound = false;

  bool unreliable() const { return degenerate || beta_at_bound || alpha_at_bound; }
};

struct IrtModel {
  Variant variant = Variant::m1;
  std::vector<std::string> item_ids;
  std::vector<double> beta;
  std::vector<double> alpha;     // empty (m1), one value (m2), one per item (m3, m4)
  std::vector<double> guessing;  // one per item (m4), empty otherwise
  double loglik = 0.0;
  std::size_t quadrature_nodes = 21;
  bool converged = true;
  int iterations = 0;
  std::vector<ItemFlags> flags;

  /// Parameter arrays sized for the variant with the given values; alpha and
  /// guessing are ignored where the variant has none.
  static IrtModel make(Variant variant, std::vector<double> beta, std::vector<double> alpha = {},
                       std::vector<double> guessing = {});

  std::size_t item_count() const { return beta.size(); }
  std::size_t n_params() const;
  double discrimination(std::size_t item) const;
  double guessing_of(std::size_t item) const;

  /// beta..., alpha..., guessing... in that order.
  std::vector<double> parameters() const;
  void set_parameters(std::span<const double> values);
};

/// P(correct | z) for one item. Throws std::out_of_range for a bad index.
double prob_correct(const IrtModel& model, std::size_t item, double z);

struct FitConfig {
  std::size_t quadrature_nodes = 21;
  double tol = 1e-8;  // on successive log-likelihoods
  int max_iter = 2000;
};

/// Quadrature for E[f(Z)], Z ~ N(0, 1): sum_k weights[k] f(nodes[k]).
struct Quadrature {
  std::vector<double> nodes;
  std::vector<double> weights;
};
Quadrature gauss_hermite(std::size_t n);

/// Marginal maximum likelihood over a standard-normal ability. `start`, when
/// given, seeds the optimizer (its parameters are mapped into the target
/// variant); otherwise beta starts at the logit of the empirical difficulty
/// clamped to +-4, alpha at 1 and c at 0.1.
IrtModel fit(const ResponseMatrix& matrix, Variant variant, const FitConfig& config = {},
             const IrtModel* start = nullptr);

/// Marginal log-likelihood with `nodes` quadrature points (0 = the model's
/// own node count). Throws std::invalid_argument on item mismatch.
double log_likelihood(const IrtModel& model, const ResponseMatrix& matrix, std::size_t nodes = 0);

/// Analytic score with respect to parameters() in natural units.
std::vector<double> log_likelihood_gradient(const IrtModel& model, const ResponseMatrix& matrix,
                                            std::size_t nodes = 0);

/// Upper tail of the chi-square distribution. x >= 0, df >= 1.
double chi_square_sf(double x, double df);

struct LrtResult {
  double stat = 0.0;
  double df = 0.0;
  double p_value = 1.0;
};

/// smaller must precede larger in the chain m1 < m2 < m3 < m4 and both must
/// cover the same items.
LrtResult lrt_compare(const IrtModel& smaller, const IrtModel& larger);

/// All four variants fitted with warm starts along the nested chain. Each
/// returned log-likelihood is at least that of the previous variant.
std::array<IrtModel, 4> fit_nested_chain(const ResponseMatrix& matrix, const FitConfig& config = {});

struct ModelComparison {
  Variant smaller;
  Variant larger;
  LrtResult lrt;
  bool accepted = false;
};

struct ModelSelection {
  IrtModel selected;
  std::array<IrtModel, 4> fits;
  std::vector<ModelComparison> table;
};

/// Walks m2, m3, m4 in turn, testing each against the currently accepted
/// model and accepting it when the LRT p-value is below alpha.
ModelSelection select_model(const ResponseMatrix& matrix, double alpha = 0.05,
                            const FitConfig& config = {});

struct AverageStudentReport {
  std::vector<std::string> item_ids;
  std::vector<double> p_average;  // P(correct | z = 0)
  std::vector<bool> unreliable;
  std::array<std::size_t, 10> histogram{};  // bins of width 0.1 over [0, 1]
  std::size_t easy = 0;  // p > 0.5
  std::size_t hard = 0;  // p < 0.5
  /// Sign-test z for easy vs hard; |z| <= 1.96 reads as balanced.
  double imbalance_z = 0.0;
  bool balanced = true;
  /// Every item is answered correctly by the average student more than half
  /// the time.
  bool all_easy = false;
};

AverageStudentReport average_student_report(const IrtModel& model);

}  // namespace quiz::irt
