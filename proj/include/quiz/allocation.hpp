#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "quiz/bank.hpp"
#include "quiz/rng.hpp"

namespace quiz {

enum class AllocationMode { uniform, grade_adaptive };

std::string_view to_string(AllocationMode mode);
AllocationMode allocation_mode_from_string(std::string_view text);

/// Grade-dependent item allocation.
///
/// Items are ranked from easiest (r = 1) to hardest (r = I). Below the pivot
/// grade `m` the mass is a geometric decay q^r over the ranks mixed with a
/// uniform component whose weight grows with the grade; at g = m the vector is
/// exactly uniform; above the pivot the geometric part is mirrored onto the
/// hard end:
///
///   g <  m:  p(r) = q^r       / sum q^r       * (m - g)/m     + g / (I m)
///   g >= m:  p(r) = q^(I-r+1) / sum q^(I-r+1) * (g - m)/(1-m) + (1 - g) / (I (1-m))
///
/// q = 0 puts the whole geometric part on the first (or last) rank; q = 1
/// makes it flat.
struct AllocationPolicy {
  double q = 0.85;
  double m = 0.5;
  AllocationMode mode = AllocationMode::grade_adaptive;

  /// Throws std::invalid_argument unless 0 <= q <= 1 and 0 < m < 1.
  void validate() const;
};

std::vector<double> allocation_pmf(const AllocationPolicy& policy, std::size_t item_count, double grade);

std::vector<double> uniform_pmf(std::size_t item_count);

/// Inverse-CDF draw; returns a 1-based rank. `p` must be non-negative and sum
/// to one within 1e-9.
std::size_t draw_rank(std::span<const double> p, Rng& rng);

const std::string& draw_item(std::span<const double> p, const DifficultyRanking& ranking, Rng& rng);

}  // namespace quiz
