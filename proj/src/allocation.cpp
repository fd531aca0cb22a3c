#include "quiz/allocation.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace quiz {

std::string_view to_string(AllocationMode mode) {
  return mode == AllocationMode::uniform ? "uniform" : "grade-adaptive";
}

AllocationMode allocation_mode_from_string(std::string_view text) {
  if (text == "uniform") return AllocationMode::uniform;
  if (text == "grade-adaptive" || text == "grade_adaptive" || text == "adaptive") {
    return AllocationMode::grade_adaptive;
  }
  throw std::invalid_argument("unknown allocation mode '" + std::string(text) + "'");
}

void AllocationPolicy::validate() const {
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("q must lie in [0, 1]");
  if (!(m > 0.0 && m < 1.0)) throw std::invalid_argument("m must lie in (0, 1)");
}

namespace {

// Normalized geometric weights q^(r-1) / sum, r = 1..I. Dividing by q^1
// cancels in the ratio and keeps q = 0 well defined (0^0 = 1).
std::vector<double> geometric_weights(double q, std::size_t n) {
  std::vector<double> w(n);
  double term = 1.0;
  for (std::size_t r = 0; r < n; ++r) {
    w[r] = term;
    term *= q;
  }
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& x : w) x /= total;
  return w;
}

}  // namespace

std::vector<double> uniform_pmf(std::size_t item_count) {
  if (item_count == 0) throw std::invalid_argument("allocation over an empty bank");
  return std::vector<double>(item_count, 1.0 / static_cast<double>(item_count));
}

std::vector<double> allocation_pmf(const AllocationPolicy& policy, std::size_t item_count, double grade) {
  if (item_count == 0) throw std::invalid_argument("allocation over an empty bank");
  if (!(grade >= 0.0 && grade <= 1.0)) throw std::invalid_argument("grade must lie in [0, 1]");
  policy.validate();
  if (policy.mode == AllocationMode::uniform) return uniform_pmf(item_count);

  const double n = static_cast<double>(item_count);
  const double q = policy.q;
  const double m = policy.m;
  const auto geo = geometric_weights(q, item_count);
  std::vector<double> p(item_count);
  if (grade < m) {
    const double mix = (m - grade) / m;
    const double flat = grade / (n * m);
    for (std::size_t r = 0; r < item_count; ++r) p[r] = geo[r] * mix + flat;
  } else {
    const double mix = (grade - m) / (1.0 - m);
    const double flat = (1.0 - grade) / (n * (1.0 - m));
    for (std::size_t r = 0; r < item_count; ++r) p[r] = geo[item_count - 1 - r] * mix + flat;
  }
  return p;
}

std::size_t draw_rank(std::span<const double> p, Rng& rng) {
  if (p.empty()) throw std::invalid_argument("empty probability vector");
  double total = 0.0;
  for (double x : p) {
    if (!(x >= 0.0) || !std::isfinite(x)) throw std::invalid_argument("probabilities must be finite and non-negative");
    total += x;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("probabilities do not sum to 1");

  const double u = rng.uniform();
  double cumulative = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t r = 0; r < p.size(); ++r) {
    if (p[r] <= 0.0) continue;
    last_positive = r;
    cumulative += p[r];
    if (u < cumulative) return r + 1;
  }
  // Rounding left u beyond the accumulated total.
  return last_positive + 1;
}

const std::string& draw_item(std::span<const double> p, const DifficultyRanking& ranking, Rng& rng) {
  if (p.size() != ranking.size()) throw std::invalid_argument("probability vector does not match ranking");
  return ranking.item_at(draw_rank(p, rng));
}

}  // namespace quiz
