#include "quiz/irt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <unordered_map>

#include <Eigen/Dense>
#include <boost/math/special_functions/gamma.hpp>
#include <ceres/ceres.h>

namespace quiz::irt {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::m1: return "m1";
    case Variant::m2: return "m2";
    case Variant::m3: return "m3";
    case Variant::m4: return "m4";
  }
  return "?";
}

Variant variant_from_string(std::string_view text) {
  if (text == "m1" || text == "M1") return Variant::m1;
  if (text == "m2" || text == "M2") return Variant::m2;
  if (text == "m3" || text == "M3") return Variant::m3;
  if (text == "m4" || text == "M4") return Variant::m4;
  throw std::invalid_argument("unknown IRT variant '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// ResponseMatrix

ResponseMatrix::ResponseMatrix(std::vector<std::string> students, std::vector<std::string> items,
                               std::vector<ResponseCell> cells)
    : students_(std::move(students)), items_(std::move(items)), cells_(std::move(cells)) {
  rows_.resize(students_.size());
  std::vector<bool> item_seen(items_.size(), false);
  std::vector<std::vector<bool>> taken(students_.size());
  for (const auto& cell : cells_) {
    if (cell.student >= students_.size() || cell.item >= items_.size()) {
      throw std::invalid_argument("response cell index out of range");
    }
    auto& row_taken = taken[cell.student];
    if (row_taken.empty()) row_taken.assign(items_.size(), false);
    if (row_taken[cell.item]) {
      throw std::invalid_argument("duplicate response for student '" + students_[cell.student] +
                                  "' on item '" + items_[cell.item] + "'");
    }
    row_taken[cell.item] = true;
    item_seen[cell.item] = true;
    rows_[cell.student].push_back({cell.item, cell.correct});
  }
  for (std::size_t m = 0; m < students_.size(); ++m) {
    if (rows_[m].empty()) throw std::invalid_argument("student '" + students_[m] + "' has no responses");
  }
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (!item_seen[i]) throw std::invalid_argument("item '" + items_[i] + "' has no responses");
  }
}

ResponseMatrix ResponseMatrix::from_records(std::span<const ResponseRecord> records, const ItemBank* bank) {
  std::vector<std::string> items;
  std::unordered_map<std::string, std::size_t> item_index;
  if (bank) {
    std::unordered_map<std::string, bool> answered;
    for (const auto& rec : records) {
      if (rec.bank_id == bank->bank_id) answered[rec.item_id] = true;
    }
    for (const auto& item : bank->items) {
      if (answered.count(item.item_id)) {
        item_index.emplace(item.item_id, items.size());
        items.push_back(item.item_id);
      }
    }
  }
  std::vector<std::string> students;
  std::unordered_map<std::string, std::size_t> student_index;
  std::vector<ResponseCell> cells;
  for (const auto& rec : records) {
    if (bank && rec.bank_id != bank->bank_id) continue;
    auto it = item_index.find(rec.item_id);
    if (it == item_index.end()) {
      if (bank) continue;  // not a bank item
      it = item_index.emplace(rec.item_id, items.size()).first;
      items.push_back(rec.item_id);
    }
    auto [sit, fresh] = student_index.try_emplace(rec.student_id, students.size());
    if (fresh) students.push_back(rec.student_id);
    cells.push_back({sit->second, it->second, rec.correct});
  }
  return ResponseMatrix(std::move(students), std::move(items), std::move(cells));
}

std::vector<std::pair<std::size_t, std::size_t>> ResponseMatrix::item_totals() const {
  std::vector<std::pair<std::size_t, std::size_t>> totals(items_.size(), {0, 0});
  for (const auto& cell : cells_) {
    ++totals[cell.item].first;
    if (cell.correct) ++totals[cell.item].second;
  }
  return totals;
}

// ---------------------------------------------------------------------------
// IrtModel

IrtModel IrtModel::make(Variant variant, std::vector<double> beta, std::vector<double> alpha,
                        std::vector<double> guessing) {
  IrtModel model;
  model.variant = variant;
  const std::size_t n = beta.size();
  model.beta = std::move(beta);
  switch (variant) {
    case Variant::m1:
      break;
    case Variant::m2:
      model.alpha = {alpha.empty() ? 1.0 : alpha.front()};
      break;
    case Variant::m3:
    case Variant::m4:
      if (alpha.empty()) alpha.assign(n, 1.0);
      if (alpha.size() == 1) alpha.assign(n, alpha.front());
      if (alpha.size() != n) throw std::invalid_argument("alpha size does not match item count");
      model.alpha = std::move(alpha);
      break;
  }
  if (variant == Variant::m4) {
    if (guessing.empty()) guessing.assign(n, 0.0);
    if (guessing.size() != n) throw std::invalid_argument("guessing size does not match item count");
    model.guessing = std::move(guessing);
  }
  model.flags.assign(n, {});
  return model;
}

std::size_t IrtModel::n_params() const { return beta.size() + alpha.size() + guessing.size(); }

double IrtModel::discrimination(std::size_t item) const {
  if (alpha.empty()) return 1.0;
  if (alpha.size() == 1) return alpha.front();
  return alpha.at(item);
}

double IrtModel::guessing_of(std::size_t item) const { return guessing.empty() ? 0.0 : guessing.at(item); }

std::vector<double> IrtModel::parameters() const {
  std::vector<double> out(beta);
  out.insert(out.end(), alpha.begin(), alpha.end());
  out.insert(out.end(), guessing.begin(), guessing.end());
  return out;
}

void IrtModel::set_parameters(std::span<const double> values) {
  if (values.size() != n_params()) throw std::invalid_argument("parameter vector has wrong size");
  auto it = values.begin();
  std::copy_n(it, beta.size(), beta.begin());
  it += static_cast<std::ptrdiff_t>(beta.size());
  std::copy_n(it, alpha.size(), alpha.begin());
  it += static_cast<std::ptrdiff_t>(alpha.size());
  std::copy_n(it, guessing.size(), guessing.begin());
}

namespace {

double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + e^x)
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

double prob_correct(const IrtModel& model, std::size_t item, double z) {
  if (item >= model.item_count()) throw std::out_of_range("item index out of range");
  const double c = model.guessing_of(item);
  return c + (1.0 - c) * logistic(model.discrimination(item) * (z - model.beta[item]));
}

// ---------------------------------------------------------------------------
// Quadrature

Quadrature gauss_hermite(std::size_t n) {
  if (n == 0) throw std::invalid_argument("quadrature needs at least one node");
  // Golub-Welsch on the Jacobi matrix of the probabilists' Hermite
  // polynomials; weights come out normalized to the N(0, 1) mass.
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t k = 1; k < n; ++k) {
    const double off = std::sqrt(static_cast<double>(k));
    jacobi(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k - 1)) = off;
    jacobi(static_cast<Eigen::Index>(k - 1), static_cast<Eigen::Index>(k)) = off;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
  Quadrature quad;
  quad.nodes.resize(n);
  quad.weights.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    quad.nodes[k] = eig.eigenvalues()(kk);
    const double v = eig.eigenvectors()(0, kk);
    quad.weights[k] = v * v;
  }
  // Symmetrize to remove eigen-solver noise.
  for (std::size_t k = 0; k < n / 2; ++k) {
    const double x = 0.5 * (quad.nodes[n - 1 - k] - quad.nodes[k]);
    const double w = 0.5 * (quad.weights[n - 1 - k] + quad.weights[k]);
    quad.nodes[k] = -x;
    quad.nodes[n - 1 - k] = x;
    quad.weights[k] = quad.weights[n - 1 - k] = w;
  }
  if (n % 2 == 1) quad.nodes[n / 2] = 0.0;
  const double total = std::accumulate(quad.weights.begin(), quad.weights.end(), 0.0);
  for (auto& w : quad.weights) w /= total;
  return quad;
}

// ---------------------------------------------------------------------------
// Marginal likelihood engine

namespace {

// Per-item natural parameters, whatever the variant.
struct ItemParams {
  std::vector<double> beta;
  std::vector<double> slope;
  std::vector<double> guess;
};

struct ItemGradient {
  std::vector<double> beta;
  std::vector<double> slope;
  std::vector<double> guess;
};

ItemParams expand(const IrtModel& model) {
  const std::size_t n = model.item_count();
  ItemParams p{model.beta, std::vector<double>(n), std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    p.slope[i] = model.discrimination(i);
    p.guess[i] = model.guessing_of(i);
  }
  return p;
}

class MarginalLikelihood {
 public:
  MarginalLikelihood(const ResponseMatrix& matrix, std::size_t nodes)
      : matrix_(matrix), quad_(gauss_hermite(nodes)) {
    log_weights_.resize(quad_.weights.size());
    std::transform(quad_.weights.begin(), quad_.weights.end(), log_weights_.begin(),
                   [](double w) { return std::log(w); });
  }

  const Quadrature& quadrature() const { return quad_; }

  // Students are reduced in index order so the sum is reproducible bit for bit.
  double evaluate(const ItemParams& params, ItemGradient* grad) const {
    const std::size_t n_items = matrix_.n_items();
    const std::size_t n_nodes = quad_.nodes.size();
    prob_.assign(n_items * n_nodes, 0.0);
    logistic_.assign(n_items * n_nodes, 0.0);
    log_p_.assign(n_items * n_nodes, 0.0);
    log_q_.assign(n_items * n_nodes, 0.0);
    for (std::size_t i = 0; i < n_items; ++i) {
      const double c = params.guess[i];
      for (std::size_t q = 0; q < n_nodes; ++q) {
        const std::size_t k = i * n_nodes + q;
        const double eta = params.slope[i] * (quad_.nodes[q] - params.beta[i]);
        const double l = logistic(eta);
        logistic_[k] = l;
        prob_[k] = c + (1.0 - c) * l;
        if (c == 0.0) {
          log_p_[k] = -softplus(-eta);
          log_q_[k] = -softplus(eta);
        } else {
          log_p_[k] = std::log(prob_[k]);
          log_q_[k] = std::log1p(-c) - softplus(eta);
        }
      }
    }

    if (grad) {
      expected_n_.assign(n_items * n_nodes, 0.0);
      expected_r_.assign(n_items * n_nodes, 0.0);
    }
    std::vector<double> s(n_nodes);
    double total = 0.0;
    for (std::size_t m = 0; m < matrix_.n_students(); ++m) {
      std::copy(log_weights_.begin(), log_weights_.end(), s.begin());
      for (const auto& entry : matrix_.row(m)) {
        const double* table = (entry.correct ? log_p_.data() : log_q_.data()) + entry.item * n_nodes;
        for (std::size_t q = 0; q < n_nodes; ++q) s[q] += table[q];
      }
      const double peak = *std::max_element(s.begin(), s.end());
      double sum = 0.0;
      for (std::size_t q = 0; q < n_nodes; ++q) {
        s[q] = std::exp(s[q] - peak);
        sum += s[q];
      }
      total += peak + std::log(sum);
      if (grad) {
        for (std::size_t q = 0; q < n_nodes; ++q) s[q] /= sum;  // posterior over nodes
        for (const auto& entry : matrix_.row(m)) {
          double* n_row = expected_n_.data() + entry.item * n_nodes;
          for (std::size_t q = 0; q < n_nodes; ++q) n_row[q] += s[q];
          if (entry.correct) {
            double* r_row = expected_r_.data() + entry.item * n_nodes;
            for (std::size_t q = 0; q < n_nodes; ++q) r_row[q] += s[q];
          }
        }
      }
    }

    if (grad) {
      grad->beta.assign(n_items, 0.0);
      grad->slope.assign(n_items, 0.0);
      grad->guess.assign(n_items, 0.0);
      for (std::size_t i = 0; i < n_items; ++i) {
        const double c = params.guess[i];
        for (std::size_t q = 0; q < n_nodes; ++q) {
          const std::size_t k = i * n_nodes + q;
          const double resid = expected_r_[k] - expected_n_[k] * prob_[k];
          // d loglik / d eta = (r - nP) L / P
          const double d_eta = resid * logistic_[k] / prob_[k];
          grad->beta[i] -= d_eta * params.slope[i];
          grad->slope[i] += d_eta * (quad_.nodes[q] - params.beta[i]);
          grad->guess[i] += resid / (prob_[k] * (1.0 - c));
        }
      }
    }
    return total;
  }

 private:
  const ResponseMatrix& matrix_;
  Quadrature quad_;
  std::vector<double> log_weights_;
  mutable std::vector<double> prob_, logistic_, log_p_, log_q_, expected_n_, expected_r_;
};

void check_alignment(const IrtModel& model, const ResponseMatrix& matrix) {
  if (model.item_count() != matrix.n_items()) {
    throw std::invalid_argument("model has " + std::to_string(model.item_count()) +
                                " items, matrix has " + std::to_string(matrix.n_items()));
  }
  if (!model.item_ids.empty() && model.item_ids != matrix.items()) {
    throw std::invalid_argument("model items do not match matrix items");
  }
}

std::vector<double> natural_gradient(const IrtModel& model, const ItemGradient& g) {
  std::vector<double> out(g.beta);
  switch (model.variant) {
    case Variant::m1:
      break;
    case Variant::m2:
      out.push_back(std::accumulate(g.slope.begin(), g.slope.end(), 0.0));
      break;
    case Variant::m3:
      out.insert(out.end(), g.slope.begin(), g.slope.end());
      break;
    case Variant::m4:
      out.insert(out.end(), g.slope.begin(), g.slope.end());
      out.insert(out.end(), g.guess.begin(), g.guess.end());
      break;
  }
  return out;
}

// Box constraints through x = lo + (hi - lo)(sin u + 1)/2: every bound is
// reachable and the map is smooth, so the optimizer runs unconstrained.
struct Box {
  double lo;
  double hi;

  double to_natural(double u) const { return lo + 0.5 * (hi - lo) * (std::sin(u) + 1.0); }
  double derivative(double u) const { return 0.5 * (hi - lo) * std::cos(u); }
  double to_internal(double x) const {
    return std::asin(std::clamp(2.0 * (x - lo) / (hi - lo) - 1.0, -1.0, 1.0));
  }
};

constexpr Box kBetaBox{-kBetaBound, kBetaBound};
constexpr Box kAlphaBox{kAlphaMin, kAlphaMax};
constexpr Box kGuessBox{0.0, kGuessingMax};

const Box& box_for(const IrtModel& model, std::size_t param) {
  const std::size_t n = model.item_count();
  if (param < n) return kBetaBox;
  if (param < n + model.alpha.size()) return kAlphaBox;
  return kGuessBox;
}

class NegativeLogLikelihood final : public ceres::FirstOrderFunction {
 public:
  NegativeLogLikelihood(const MarginalLikelihood& engine, IrtModel shape)
      : engine_(engine), shape_(std::move(shape)) {}

  bool Evaluate(const double* u, double* cost, double* gradient) const override {
    const int n = NumParameters();
    std::vector<double> x(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) x[static_cast<std::size_t>(k)] = box_for(shape_, static_cast<std::size_t>(k)).to_natural(u[k]);
    shape_.set_parameters(x);
    ItemGradient g;
    const double ll = engine_.evaluate(expand(shape_), gradient ? &g : nullptr);
    if (!std::isfinite(ll)) return false;
    *cost = -ll;
    if (gradient) {
      const auto dx = natural_gradient(shape_, g);
      for (int k = 0; k < n; ++k) {
        const auto kk = static_cast<std::size_t>(k);
        gradient[k] = -dx[kk] * box_for(shape_, kk).derivative(u[k]);
      }
    }
    return true;
  }

  int NumParameters() const override { return static_cast<int>(shape_.n_params()); }

 private:
  const MarginalLikelihood& engine_;
  mutable IrtModel shape_;
};

class LoglikConvergence final : public ceres::IterationCallback {
 public:
  explicit LoglikConvergence(double tol) : tol_(tol) {}

  ceres::CallbackReturnType operator()(const ceres::IterationSummary& s) override {
    if (s.iteration > 0 && s.step_is_successful && std::abs(s.cost_change) < tol_) {
      return ceres::SOLVER_TERMINATE_SUCCESSFULLY;
    }
    return ceres::SOLVER_CONTINUE;
  }

 private:
  double tol_;
};

IrtModel initial_model(const ResponseMatrix& matrix, Variant variant, const IrtModel* start) {
  const std::size_t n = matrix.n_items();
  std::vector<double> beta(n), alpha, guessing;
  if (start) {
    if (start->item_count() != n) throw std::invalid_argument("start model does not match matrix");
    beta = start->beta;
    if (start->alpha.size() == 1) {
      alpha = start->alpha;
    } else if (!start->alpha.empty()) {
      if (variant == Variant::m2) {
        alpha = {std::accumulate(start->alpha.begin(), start->alpha.end(), 0.0) / static_cast<double>(n)};
      } else {
        alpha = start->alpha;
      }
    }
    guessing = start->guessing;
    if (variant == Variant::m4 && guessing.empty()) guessing.assign(n, 0.1);
  } else {
    const auto totals = matrix.item_totals();
    for (std::size_t i = 0; i < n; ++i) {
      const double p = static_cast<double>(totals[i].second) / static_cast<double>(totals[i].first);
      // logit of the empirical difficulty 1 - p
      const double b = (p <= 0.0) ? 4.0 : (p >= 1.0) ? -4.0 : std::log((1.0 - p) / p);
      beta[i] = std::clamp(b, -4.0, 4.0);
    }
    alpha = {1.0};
    if (variant == Variant::m4) guessing.assign(n, 0.1);
  }
  IrtModel model = IrtModel::make(variant, std::move(beta), std::move(alpha), std::move(guessing));
  model.item_ids = matrix.items();
  return model;
}

void set_flags(IrtModel& model, const ResponseMatrix& matrix) {
  constexpr double kBoundTol = 1e-4;
  const auto totals = matrix.item_totals();
  model.flags.assign(model.item_count(), {});
  for (std::size_t i = 0; i < model.item_count(); ++i) {
    auto& f = model.flags[i];
    f.degenerate = totals[i].second == 0 || totals[i].second == totals[i].first;
    f.beta_at_bound = std::abs(model.beta[i]) > kBetaBound - kBoundTol;
    const double a = model.discrimination(i);
    f.alpha_at_bound = !model.alpha.empty() && (a < kAlphaMin + kBoundTol || a > kAlphaMax - kBoundTol);
    const double c = model.guessing_of(i);
    f.guessing_at_bound = !model.guessing.empty() && (c < kBoundTol || c > kGuessingMax - kBoundTol);
  }
}

}  // namespace

double log_likelihood(const IrtModel& model, const ResponseMatrix& matrix, std::size_t nodes) {
  if (matrix.empty() && model.item_count() == 0) return 0.0;
  check_alignment(model, matrix);
  const MarginalLikelihood engine(matrix, nodes ? nodes : model.quadrature_nodes);
  return engine.evaluate(expand(model), nullptr);
}

std::vector<double> log_likelihood_gradient(const IrtModel& model, const ResponseMatrix& matrix,
                                            std::size_t nodes) {
  check_alignment(model, matrix);
  const MarginalLikelihood engine(matrix, nodes ? nodes : model.quadrature_nodes);
  ItemGradient g;
  engine.evaluate(expand(model), &g);
  return natural_gradient(model, g);
}

IrtModel fit(const ResponseMatrix& matrix, Variant variant, const FitConfig& config, const IrtModel* start) {
  if (matrix.empty()) throw std::invalid_argument("cannot fit an empty response matrix");
  if (config.quadrature_nodes < 2) throw std::invalid_argument("need at least 2 quadrature nodes");

  IrtModel model = initial_model(matrix, variant, start);
  model.quadrature_nodes = config.quadrature_nodes;
  const MarginalLikelihood engine(matrix, config.quadrature_nodes);

  const auto x0 = model.parameters();
  std::vector<double> u(x0.size());
  for (std::size_t k = 0; k < u.size(); ++k) u[k] = box_for(model, k).to_internal(x0[k]);

  ceres::GradientProblem problem(new NegativeLogLikelihood(engine, model));
  ceres::GradientProblemSolver::Options options;
  options.logging_type = ceres::SILENT;
  options.max_num_iterations = config.max_iter;
  options.function_tolerance = 1e-15;
  options.gradient_tolerance = 1e-12;
  options.parameter_tolerance = 1e-15;
  LoglikConvergence callback(config.tol);
  options.callbacks.push_back(&callback);
  ceres::GradientProblemSolver::Summary summary;
  ceres::Solve(options, problem, u.data(), &summary);

  std::vector<double> x(u.size());
  for (std::size_t k = 0; k < u.size(); ++k) x[k] = box_for(model, k).to_natural(u[k]);
  model.set_parameters(x);
  model.loglik = engine.evaluate(expand(model), nullptr);
  model.iterations = static_cast<int>(summary.iterations.size());
  switch (summary.termination_type) {
    case ceres::CONVERGENCE:
    case ceres::USER_SUCCESS:
      model.converged = true;
      break;
    case ceres::FAILURE: {
      // Line search gave up; accept when the score has essentially vanished.
      ItemGradient g;
      engine.evaluate(expand(model), &g);
      const auto dx = natural_gradient(model, g);
      double worst = 0.0;
      for (std::size_t k = 0; k < dx.size(); ++k) {
        worst = std::max(worst, std::abs(dx[k] * box_for(model, k).derivative(u[k])));
      }
      model.converged = worst < 1e-3;
      break;
    }
    default:
      model.converged = false;
  }
  set_flags(model, matrix);
  return model;
}

namespace {

// The smaller model's optimum, written as a point of the larger variant.
IrtModel embed(const IrtModel& smaller, Variant variant, const ResponseMatrix& matrix) {
  std::vector<double> alpha = smaller.alpha;
  if (alpha.empty()) alpha = {1.0};
  IrtModel model = IrtModel::make(variant, smaller.beta, alpha, std::vector<double>(smaller.item_count(), 0.0));
  model.item_ids = smaller.item_ids;
  model.quadrature_nodes = smaller.quadrature_nodes;
  model.loglik = log_likelihood(model, matrix);
  model.converged = smaller.converged;
  model.iterations = 0;
  set_flags(model, matrix);
  return model;
}

IrtModel best_of(IrtModel a, IrtModel b) { return a.loglik >= b.loglik ? std::move(a) : std::move(b); }

}  // namespace

std::array<IrtModel, 4> fit_nested_chain(const ResponseMatrix& matrix, const FitConfig& config) {
  IrtModel m1 = fit(matrix, Variant::m1, config);
  IrtModel m2 = best_of(fit(matrix, Variant::m2, config, &m1), embed(m1, Variant::m2, matrix));
  IrtModel m3 = best_of(fit(matrix, Variant::m3, config, &m2), embed(m2, Variant::m3, matrix));

  IrtModel seeded = IrtModel::make(Variant::m4, m3.beta, m3.alpha, std::vector<double>(m3.item_count(), 0.05));
  IrtModel m4 = best_of(fit(matrix, Variant::m4, config), fit(matrix, Variant::m4, config, &seeded));
  m4 = best_of(std::move(m4), embed(m3, Variant::m4, matrix));
  return {std::move(m1), std::move(m2), std::move(m3), std::move(m4)};
}

double chi_square_sf(double x, double df) {
  if (!(df >= 1.0) || !std::isfinite(df)) throw std::invalid_argument("chi-square df must be >= 1");
  if (!(x >= 0.0)) throw std::invalid_argument("chi-square statistic must be >= 0");
  if (x == 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  return boost::math::gamma_q(0.5 * df, 0.5 * x);
}

LrtResult lrt_compare(const IrtModel& smaller, const IrtModel& larger) {
  if (static_cast<int>(smaller.variant) >= static_cast<int>(larger.variant)) {
    throw std::invalid_argument(std::string("models not nested: ") + std::string(to_string(smaller.variant)) +
                                " is not contained in " + std::string(to_string(larger.variant)));
  }
  if (smaller.item_count() != larger.item_count() ||
      (!smaller.item_ids.empty() && !larger.item_ids.empty() && smaller.item_ids != larger.item_ids)) {
    throw std::invalid_argument("models fitted to different items");
  }
  LrtResult r;
  r.stat = std::max(0.0, 2.0 * (larger.loglik - smaller.loglik));
  r.df = static_cast<double>(larger.n_params() - smaller.n_params());
  r.p_value = chi_square_sf(r.stat, r.df);
  return r;
}

ModelSelection select_model(const ResponseMatrix& matrix, double alpha, const FitConfig& config) {
  ModelSelection out;
  out.fits = fit_nested_chain(matrix, config);
  std::size_t current = 0;
  for (std::size_t k = 1; k < out.fits.size(); ++k) {
    ModelComparison cmp;
    cmp.smaller = out.fits[current].variant;
    cmp.larger = out.fits[k].variant;
    cmp.lrt = lrt_compare(out.fits[current], out.fits[k]);
    cmp.accepted = cmp.lrt.p_value < alpha;
    if (cmp.accepted) current = k;
    out.table.push_back(cmp);
  }
  out.selected = out.fits[current];
  return out;
}

AverageStudentReport average_student_report(const IrtModel& model) {
  AverageStudentReport report;
  const std::size_t n = model.item_count();
  report.item_ids = model.item_ids;
  if (report.item_ids.empty()) {
    for (std::size_t i = 0; i < n; ++i) report.item_ids.push_back(std::to_string(i + 1));
  }
  report.p_average.resize(n);
  report.unreliable.resize(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = prob_correct(model, i, 0.0);
    report.p_average[i] = p;
    if (i < model.flags.size()) report.unreliable[i] = model.flags[i].unreliable();
    const auto bin = std::min<std::size_t>(9, static_cast<std::size_t>(p * 10.0));
    ++report.histogram[bin];
    if (p > 0.5) ++report.easy;
    if (p < 0.5) ++report.hard;
  }
  const double decided = static_cast<double>(report.easy + report.hard);
  report.imbalance_z =
      decided > 0 ? (static_cast<double>(report.easy) - static_cast<double>(report.hard)) / std::sqrt(decided) : 0.0;
  report.balanced = std::abs(report.imbalance_z) <= 1.96;
  report.all_easy = n > 0 && report.easy == n;
  return report;
}

}  // namespace quiz::irt
