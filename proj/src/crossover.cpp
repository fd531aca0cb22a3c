#include "quiz/crossover.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/tools/toms748_solve.hpp>

#include "quiz/irt.hpp"

namespace quiz::crossover {

std::string_view to_string(Treatment t) { return t == Treatment::tutorweb ? "tutorweb" : "traditional"; }
std::string_view to_string(MathBackground m) { return m == MathBackground::strong ? "strong" : "weak"; }

Treatment treatment_from_string(std::string_view text) {
  if (text == "tutorweb" || text == "tutor-web") return Treatment::tutorweb;
  if (text == "traditional") return Treatment::traditional;
  throw std::invalid_argument("unknown treatment '" + std::string(text) + "'");
}

MathBackground math_from_string(std::string_view text) {
  if (text == "strong") return MathBackground::strong;
  if (text == "weak") return MathBackground::weak;
  throw std::invalid_argument("unknown math background '" + std::string(text) + "'");
}

std::string_view to_string(Term t) {
  switch (t) {
    case Term::treatment: return "treatment";
    case Term::math: return "math";
    case Term::interaction: return "interaction";
    case Term::exam: return "exam";
  }
  return "?";
}

Term term_from_string(std::string_view text) {
  if (text == "treatment") return Term::treatment;
  if (text == "math") return Term::math;
  if (text == "interaction") return Term::interaction;
  if (text == "exam") return Term::exam;
  throw std::invalid_argument("unknown model term '" + std::string(text) + "'");
}

void validate_records(std::span<const ExamRecord> records) {
  std::set<std::pair<std::string, int>> seen;
  for (const auto& r : records) {
    if (r.exam < 1 || r.exam > kExamCount) {
      throw std::invalid_argument("exam " + std::to_string(r.exam) + " outside 1.." + std::to_string(kExamCount));
    }
    if (!std::isfinite(r.score)) throw std::invalid_argument("non-finite score for '" + r.student_id + "'");
    if (!seen.emplace(r.student_id, r.exam).second) {
      throw std::invalid_argument("duplicate record for student '" + r.student_id + "' exam " +
                                  std::to_string(r.exam));
    }
  }
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) {
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    fields.push_back(b == std::string::npos ? std::string() : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

}  // namespace

std::vector<ExamRecord> read_exams_csv(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) return {};
  ++line_no;
  const auto header = split_csv_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t k = 0; k < header.size(); ++k) col[header[k]] = k;
  for (const char* name : {"student_id", "exam", "treatment", "math", "score"}) {
    if (!col.count(name)) throw std::invalid_argument(source + ": missing column '" + name + "'");
  }
  std::vector<ExamRecord> records;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = split_csv_line(line);
    if (f.size() < header.size()) {
      throw std::invalid_argument(source + ":" + std::to_string(line_no) + ": expected " +
                                  std::to_string(header.size()) + " fields");
    }
    try {
      ExamRecord r;
      r.student_id = f[col["student_id"]];
      r.exam = std::stoi(f[col["exam"]]);
      r.treatment = treatment_from_string(f[col["treatment"]]);
      r.math = math_from_string(f[col["math"]]);
      r.score = std::stod(f[col["score"]]);
      records.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw std::invalid_argument(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  validate_records(records);
  return records;
}

std::vector<ExamRecord> read_exams_csv_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_exams_csv(in, path.string());
}

void write_exams_csv(std::ostream& out, std::span<const ExamRecord> records) {
  out << "student_id,exam,treatment,math,score\n";
  const auto old_precision = out.precision(17);
  for (const auto& r : records) {
    out << r.student_id << ',' << r.exam << ',' << to_string(r.treatment) << ',' << to_string(r.math) << ','
        << r.score << '\n';
  }
  out.precision(old_precision);
}

// ---------------------------------------------------------------------------
// Schedule

std::size_t CrossoverSchedule::group_size(char group) const {
  return static_cast<std::size_t>(
      std::count_if(students.begin(), students.end(), [&](const ScheduleEntry& e) { return e.group == group; }));
}

const ScheduleEntry* CrossoverSchedule::find(std::string_view student_id) const {
  auto it = std::find_if(students.begin(), students.end(),
                         [&](const ScheduleEntry& e) { return e.student_id == student_id; });
  return it == students.end() ? nullptr : &*it;
}

CrossoverSchedule randomize_crossover(std::span<const std::string> student_ids, Rng& rng) {
  if (student_ids.size() < 2) throw std::invalid_argument("crossover needs at least two students");
  std::vector<std::size_t> order(student_ids.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng.engine());
  const std::size_t group_a = (student_ids.size() + 1) / 2;
  std::vector<char> group(student_ids.size());
  for (std::size_t k = 0; k < order.size(); ++k) group[order[k]] = k < group_a ? 'A' : 'B';

  CrossoverSchedule schedule;
  for (std::size_t s = 0; s < student_ids.size(); ++s) {
    ScheduleEntry e{student_ids[s], group[s], {}};
    for (int k = 0; k < kExamCount; ++k) {
      const bool tutor_first = (k % 2 == 0);
      e.periods.push_back((group[s] == 'A') == tutor_first ? Treatment::tutorweb : Treatment::traditional);
    }
    schedule.students.push_back(std::move(e));
  }
  return schedule;
}

// ---------------------------------------------------------------------------
// Design

Eigen::MatrixXd Design::z() const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(group.size()),
                                              static_cast<Eigen::Index>(n_groups));
  for (std::size_t r = 0; r < group.size(); ++r) out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(group[r])) = 1.0;
  return out;
}

Design design_matrix(std::span<const ExamRecord> records, std::span<const Term> terms) {
  if (records.empty()) throw std::invalid_argument("no exam records");
  validate_records(records);
  const std::set<Term> wanted(terms.begin(), terms.end());

  std::set<int> exams;
  for (const auto& r : records) exams.insert(r.exam);
  std::vector<int> exam_columns(std::next(exams.begin()), exams.end());  // first present exam is reference

  Design d;
  d.column_names.push_back("(Intercept)");
  for (Term t : {Term::treatment, Term::math, Term::interaction, Term::exam}) {
    if (!wanted.count(t)) continue;
    d.terms.push_back(t);
    switch (t) {
      case Term::treatment: d.column_names.push_back("treatment:tutorweb"); break;
      case Term::math: d.column_names.push_back("math:strong"); break;
      case Term::interaction: d.column_names.push_back("treatment:tutorweb*math:strong"); break;
      case Term::exam:
        for (int k : exam_columns) d.column_names.push_back("exam" + std::to_string(k));
        break;
    }
  }

  const auto n = static_cast<Eigen::Index>(records.size());
  d.x = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(d.column_names.size()));
  d.y.resize(n);
  std::unordered_map<std::string, std::size_t> student_index;
  for (Eigen::Index row = 0; row < n; ++row) {
    const auto& r = records[static_cast<std::size_t>(row)];
    auto [it, fresh] = student_index.try_emplace(r.student_id, d.student_ids.size());
    if (fresh) d.student_ids.push_back(r.student_id);
    d.group.push_back(it->second);
    d.y(row) = r.score;

    const double tutor = r.treatment == Treatment::tutorweb ? 1.0 : 0.0;
    const double strong = r.math == MathBackground::strong ? 1.0 : 0.0;
    Eigen::Index c = 0;
    d.x(row, c++) = 1.0;
    for (Term t : d.terms) {
      switch (t) {
        case Term::treatment: d.x(row, c++) = tutor; break;
        case Term::math: d.x(row, c++) = strong; break;
        case Term::interaction: d.x(row, c++) = tutor * strong; break;
        case Term::exam:
          for (int k : exam_columns) d.x(row, c++) = r.exam == k ? 1.0 : 0.0;
          break;
      }
    }
  }
  d.n_groups = d.student_ids.size();
  return d;
}

// ---------------------------------------------------------------------------
// Profile-likelihood ML fit

std::optional<std::size_t> LmmFit::index_of(std::string_view name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) return std::nullopt;
  return static_cast<std::size_t>(it - names.begin());
}

double LmmFit::coefficient(std::string_view name) const {
  const auto k = index_of(name);
  if (!k) throw std::out_of_range("no coefficient '" + std::string(name) + "'");
  return beta(static_cast<Eigen::Index>(*k));
}

double LmmFit::std_error(std::string_view name) const {
  const auto k = index_of(name);
  if (!k) throw std::out_of_range("no coefficient '" + std::string(name) + "'");
  const auto kk = static_cast<Eigen::Index>(*k);
  return std::sqrt(std::max(0.0, cov_fixed(kk, kk)));
}

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// Sufficient statistics; every profile evaluation is O(groups * p^2).
class ProfileLikelihood {
 public:
  explicit ProfileLikelihood(const Design& d)
      : n_(static_cast<double>(d.y.size())),
        xtx_(d.x.transpose() * d.x),
        xty_(d.x.transpose() * d.y),
        yty_(d.y.squaredNorm()),
        count_(d.n_groups, 0.0),
        col_sum_(d.n_groups, Eigen::VectorXd::Zero(d.x.cols())),
        y_sum_(d.n_groups, 0.0) {
    for (Eigen::Index r = 0; r < d.y.size(); ++r) {
      const std::size_t g = d.group[static_cast<std::size_t>(r)];
      count_[g] += 1.0;
      col_sum_[g] += d.x.row(r).transpose();
      y_sum_[g] += d.y(r);
    }
  }

  struct Point {
    Eigen::VectorXd beta;
    Eigen::MatrixXd a;  // X' V^-1 X
    double rss = 0.0;   // (y - Xb)' V^-1 (y - Xb)
    double loglik = 0.0;
    double score = 0.0;  // d loglik / d lambda
  };

  Point at(double lambda) const {
    Point pt;
    pt.a = xtx_;
    Eigen::VectorXd b = xty_;
    double c = yty_;
    for (std::size_t g = 0; g < count_.size(); ++g) {
      if (count_[g] == 0.0) continue;
      const double w = lambda / (1.0 + count_[g] * lambda);
      pt.a.noalias() -= w * col_sum_[g] * col_sum_[g].transpose();
      b -= w * y_sum_[g] * col_sum_[g];
      c -= w * y_sum_[g] * y_sum_[g];
    }
    pt.beta = pt.a.ldlt().solve(b);
    pt.rss = std::max(c - b.dot(pt.beta), std::numeric_limits<double>::min());

    double logdet = 0.0;
    double d_rss = 0.0;
    double d_logdet = 0.0;
    for (std::size_t g = 0; g < count_.size(); ++g) {
      if (count_[g] == 0.0) continue;
      const double denom = 1.0 + count_[g] * lambda;
      const double resid_sum = y_sum_[g] - col_sum_[g].dot(pt.beta);
      logdet += std::log(denom);
      d_rss -= resid_sum * resid_sum / (denom * denom);
      d_logdet += count_[g] / denom;
    }
    pt.loglik = -0.5 * n_ * (std::log(kTwoPi * pt.rss / n_) + 1.0) - 0.5 * logdet;
    pt.score = -0.5 * n_ * d_rss / pt.rss - 0.5 * d_logdet;
    return pt;
  }

  bool separable() const {
    return std::any_of(count_.begin(), count_.end(), [](double n) { return n > 1.0; });
  }

 private:
  double n_;
  Eigen::MatrixXd xtx_;
  Eigen::VectorXd xty_;
  double yty_;
  std::vector<double> count_;
  std::vector<Eigen::VectorXd> col_sum_;
  std::vector<double> y_sum_;
};

double maximize_ratio(const ProfileLikelihood& profile) {
  // Without repeated measures the ratio is not identified: the profile is
  // flat and the boundary is reported.
  if (!profile.separable()) return 0.0;

  std::vector<double> grid{0.0};
  for (int k = -60; k <= 40; ++k) grid.push_back(std::pow(10.0, k / 10.0));
  std::vector<double> ll(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) ll[k] = profile.at(grid[k]).loglik;
  const auto best = static_cast<std::size_t>(std::max_element(ll.begin(), ll.end()) - ll.begin());
  if (ll[0] >= ll[best] - 1e-12 * std::max(1.0, std::abs(ll[best]))) {
    if (profile.at(0.0).score <= 0.0) return 0.0;
  }

  const double lo = grid[best == 0 ? 0 : best - 1];
  const double hi = grid[std::min(best + 1, grid.size() - 1)];
  const auto score = [&](double lambda) { return profile.at(lambda).score; };
  const double s_lo = score(lo);
  const double s_hi = score(hi);
  if (s_lo > 0.0 && s_hi < 0.0) {
    std::uintmax_t max_iter = 200;
    const auto bracket = boost::math::tools::toms748_solve(score, lo, hi, s_lo, s_hi,
                                                           boost::math::tools::eps_tolerance<double>(50), max_iter);
    return 0.5 * (bracket.first + bracket.second);
  }
  if (best == grid.size() - 1 && s_hi >= 0.0) return kMaxVarianceRatio;
  return grid[best];
}

void check_estimable(const Design& design) {
  const auto n = design.x.rows();
  const auto p = design.x.cols();
  if (n < p) {
    throw std::invalid_argument("fewer observations (" + std::to_string(n) + ") than fixed parameters (" +
                                std::to_string(p) + ")");
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design.x);
  if (qr.rank() < p) throw std::invalid_argument("fixed-effect design is rank deficient");
}

LmmFit evaluate(const Design& design, const ProfileLikelihood& profile, double lambda) {
  const auto n = design.x.rows();
  const auto p = design.x.cols();
  const auto pt = profile.at(lambda);

  // Final residual variance from explicit residuals rather than the
  // cancellation-prone sufficient statistics.
  const Eigen::VectorXd resid = design.y - design.x * pt.beta;
  std::vector<double> resid_sum(design.n_groups, 0.0), count(design.n_groups, 0.0);
  for (Eigen::Index r = 0; r < n; ++r) {
    resid_sum[design.group[static_cast<std::size_t>(r)]] += resid(r);
    count[design.group[static_cast<std::size_t>(r)]] += 1.0;
  }
  double rss = resid.squaredNorm();
  double logdet = 0.0;
  for (std::size_t g = 0; g < design.n_groups; ++g) {
    const double denom = 1.0 + count[g] * lambda;
    rss -= lambda / denom * resid_sum[g] * resid_sum[g];
    logdet += std::log(denom);
  }
  const double nd = static_cast<double>(n);

  LmmFit fit;
  fit.names = design.column_names;
  fit.terms = design.terms;
  fit.beta = pt.beta;
  fit.lambda = lambda;
  fit.sigma2 = rss / nd;
  fit.sigma_b2 = lambda * fit.sigma2;
  fit.cov_fixed = fit.sigma2 * pt.a.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
  fit.cov_fixed = 0.5 * (fit.cov_fixed + fit.cov_fixed.transpose()).eval();
  fit.loglik = -0.5 * nd * (std::log(kTwoPi * fit.sigma2) + 1.0) - 0.5 * logdet;
  fit.n_obs = static_cast<std::size_t>(n);
  return fit;
}

}  // namespace

LmmFit fit_lmm(const Design& design) {
  check_estimable(design);
  const ProfileLikelihood profile(design);
  return evaluate(design, profile, maximize_ratio(profile));
}

LmmFit fit_lmm_at(const Design& design, double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("variance ratio must be finite and >= 0");
  check_estimable(design);
  return evaluate(design, ProfileLikelihood(design), lambda);
}

LmmFit fit_lmm(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z, const Eigen::VectorXd& y) {
  if (x.rows() != y.size() || z.rows() != y.size()) throw std::invalid_argument("X, Z and y row counts differ");
  Design d;
  d.x = x;
  d.y = y;
  d.n_groups = static_cast<std::size_t>(z.cols());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    Eigen::Index hit = -1;
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
      if (z(r, c) == 1.0) {
        if (hit >= 0) throw std::invalid_argument("Z row " + std::to_string(r) + " assigns two students");
        hit = c;
      } else if (z(r, c) != 0.0) {
        throw std::invalid_argument("Z must be a 0/1 indicator matrix");
      }
    }
    if (hit < 0) throw std::invalid_argument("Z row " + std::to_string(r) + " assigns no student");
    d.group.push_back(static_cast<std::size_t>(hit));
  }
  for (Eigen::Index c = 0; c < x.cols(); ++c) d.column_names.push_back("x" + std::to_string(c));
  return fit_lmm(d);
}

double lrt_term(const LmmFit& full, const LmmFit& reduced) {
  if (full.n_obs != reduced.n_obs) throw std::invalid_argument("fits use different data");
  for (const auto& name : reduced.names) {
    if (!full.index_of(name)) throw std::invalid_argument("models not nested: '" + name + "' missing from full model");
  }
  const auto df = full.beta.size() - reduced.beta.size();
  if (df == 0) return 1.0;
  const double stat = std::max(0.0, 2.0 * (full.loglik - reduced.loglik));
  return irt::chi_square_sf(stat, static_cast<double>(df));
}

EliminationResult backward_eliminate(std::span<const ExamRecord> records, double alpha) {
  std::vector<Term> terms{Term::treatment, Term::math, Term::interaction, Term::exam};
  const auto fit_terms = [&](const std::vector<Term>& t) { return fit_lmm(design_matrix(records, t)); };

  EliminationResult out;
  LmmFit current = fit_terms(terms);
  out.treatment_fit = current;

  for (Term candidate : {Term::interaction, Term::treatment}) {
    std::vector<Term> smaller;
    std::copy_if(terms.begin(), terms.end(), std::back_inserter(smaller), [&](Term t) { return t != candidate; });
    LmmFit reduced = fit_terms(smaller);
    EliminationStep step{candidate, lrt_term(current, reduced), false};
    step.dropped = step.p_value >= alpha;
    out.trace.push_back(step);
    if (!step.dropped) break;
    terms = std::move(smaller);
    current = std::move(reduced);
    if (candidate == Term::interaction) out.treatment_fit = current;
  }
  out.final_fit = std::move(current);
  return out;
}

Interval treatment_ci(const LmmFit& fit, double level) {
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("confidence level must lie in (0, 1)");
  const auto k = fit.index_of("treatment:tutorweb");
  if (!k) throw std::invalid_argument("fit has no treatment term");
  const double est = fit.beta(static_cast<Eigen::Index>(*k));
  const double se = fit.std_error("treatment:tutorweb");
  const double z = boost::math::quantile(boost::math::normal_distribution<double>(), 0.5 * (1.0 + level));
  return {est - z * se, est + z * se};
}

}  // namespace quiz::crossover
