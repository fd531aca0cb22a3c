#include "quiz/simulator.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include "quiz/bank_io.hpp"

namespace quiz::sim {

using nlohmann::json;

namespace {

// Independent generator streams under one seed.
constexpr std::uint64_t kPopulationStream = 1;
constexpr std::uint64_t kSessionStream = 2;
constexpr std::uint64_t kItemStream = 3;
constexpr std::uint64_t kCrossoverStream = 4;

void reject_unknown_keys(const json& obj, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [key, value] : obj.items()) {
    if (!known.count(key)) throw std::invalid_argument("unknown key '" + key + "' in " + where);
  }
}

std::string student_name(std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%04zu", k + 1);
  return buf;
}

}  // namespace

SimConfig SimConfig::from_json(const json& doc) {
  reject_unknown_keys(doc,
                      {"seed", "n_students", "bank_path", "n_items", "n_answers", "variant", "beta", "alpha",
                       "guessing", "policy", "questions_per_student", "learning_rate", "guesser_fraction",
                       "crossover"},
                      "simulation config");
  SimConfig c;
  c.seed = doc.value("seed", c.seed);
  c.n_students = doc.value("n_students", c.n_students);
  if (doc.contains("bank_path") && !doc.at("bank_path").is_null()) {
    c.bank_path = doc.at("bank_path").get<std::string>();
  }
  c.n_items = doc.value("n_items", c.n_items);
  c.n_answers = doc.value("n_answers", c.n_answers);
  c.variant = irt::variant_from_string(doc.value("variant", std::string("m1")));
  c.beta = doc.value("beta", c.beta);
  c.alpha = doc.value("alpha", c.alpha);
  c.guessing = doc.value("guessing", c.guessing);
  if (doc.contains("policy")) {
    const auto& p = doc.at("policy");
    reject_unknown_keys(p, {"q", "m", "mode"}, "policy");
    c.policy.q = p.value("q", c.policy.q);
    c.policy.m = p.value("m", c.policy.m);
    c.policy.mode = allocation_mode_from_string(p.value("mode", std::string(to_string(c.policy.mode))));
  }
  c.questions_per_student = doc.value("questions_per_student", c.questions_per_student);
  c.learning_rate = doc.value("learning_rate", c.learning_rate);
  c.guesser_fraction = doc.value("guesser_fraction", c.guesser_fraction);
  if (doc.contains("crossover") && !doc.at("crossover").is_null()) {
    const auto& x = doc.at("crossover");
    reject_unknown_keys(x, {"n_exams", "truth", "sigma_b", "sigma", "score_scale", "clamp_scores",
                            "strong_fraction", "missing_rate"},
                        "crossover");
    CrossoverConfig cc;
    cc.n_exams = x.value("n_exams", cc.n_exams);
    if (x.contains("truth")) {
      const auto& t = x.at("truth");
      reject_unknown_keys(t, {"intercept", "treatment", "math", "interaction", "exam"}, "crossover.truth");
      cc.truth.intercept = t.value("intercept", cc.truth.intercept);
      cc.truth.treatment = t.value("treatment", cc.truth.treatment);
      cc.truth.math = t.value("math", cc.truth.math);
      cc.truth.interaction = t.value("interaction", cc.truth.interaction);
      cc.truth.exam = t.value("exam", cc.truth.exam);
    }
    cc.sigma_b = x.value("sigma_b", cc.sigma_b);
    cc.sigma = x.value("sigma", cc.sigma);
    cc.score_scale = x.value("score_scale", cc.score_scale);
    cc.clamp_scores = x.value("clamp_scores", cc.clamp_scores);
    cc.strong_fraction = x.value("strong_fraction", cc.strong_fraction);
    cc.missing_rate = x.value("missing_rate", cc.missing_rate);
    c.crossover = cc;
  }
  c.policy.validate();
  if (c.guesser_fraction < 0.0 || c.guesser_fraction > 1.0) throw std::invalid_argument("guesser_fraction outside [0, 1]");
  if (c.learning_rate < 0.0) throw std::invalid_argument("learning_rate must be >= 0");
  if (c.n_answers < 2) throw std::invalid_argument("n_answers must be >= 2");
  if (c.crossover) {
    const auto& cc = *c.crossover;
    if (cc.n_exams < 1 || cc.n_exams > static_cast<std::size_t>(crossover::kExamCount)) {
      throw std::invalid_argument("crossover.n_exams must lie in 1..4");
    }
    if (cc.truth.exam.size() < cc.n_exams) throw std::invalid_argument("crossover.truth.exam too short");
    if (cc.sigma_b < 0.0 || cc.sigma < 0.0) throw std::invalid_argument("crossover standard deviations must be >= 0");
    if (cc.missing_rate < 0.0 || cc.missing_rate > 1.0 || cc.strong_fraction < 0.0 || cc.strong_fraction > 1.0) {
      throw std::invalid_argument("crossover fractions outside [0, 1]");
    }
  }
  return c;
}

json SimConfig::to_json() const {
  json doc{{"seed", seed},
           {"n_students", n_students},
           {"n_items", n_items},
           {"n_answers", n_answers},
           {"variant", std::string(irt::to_string(variant))},
           {"beta", beta},
           {"alpha", alpha},
           {"guessing", guessing},
           {"policy", {{"q", policy.q}, {"m", policy.m}, {"mode", std::string(quiz::to_string(policy.mode))}}},
           {"questions_per_student", questions_per_student},
           {"learning_rate", learning_rate},
           {"guesser_fraction", guesser_fraction}};
  if (bank_path) doc["bank_path"] = bank_path->string();
  if (crossover) {
    const auto& cc = *crossover;
    doc["crossover"] = {{"n_exams", cc.n_exams},
                        {"truth",
                         {{"intercept", cc.truth.intercept},
                          {"treatment", cc.truth.treatment},
                          {"math", cc.truth.math},
                          {"interaction", cc.truth.interaction},
                          {"exam", cc.truth.exam}}},
                        {"sigma_b", cc.sigma_b},
                        {"sigma", cc.sigma},
                        {"score_scale", cc.score_scale},
                        {"clamp_scores", cc.clamp_scores},
                        {"strong_fraction", cc.strong_fraction},
                        {"missing_rate", cc.missing_rate}};
  }
  return doc;
}

std::vector<SimStudent> generate_population(const SimConfig& config) {
  const Rng streams = Rng(config.seed).split(kPopulationStream);
  std::vector<SimStudent> students;
  students.reserve(config.n_students);
  for (std::size_t k = 0; k < config.n_students; ++k) {
    Rng rng = streams.split(k);
    SimStudent s;
    s.student_id = student_name(k);
    s.ability = rng.normal();
    s.learning_rate = config.learning_rate;
    s.guesser = rng.bernoulli(config.guesser_fraction);
    students.push_back(std::move(s));
  }
  return students;
}

bool simulate_response(const SimStudent& student, const irt::IrtModel& truth, std::size_t item,
                       std::size_t n_answers, Rng& rng) {
  if (student.guesser) return rng.bernoulli(1.0 / static_cast<double>(n_answers));
  return rng.bernoulli(irt::prob_correct(truth, item, student.ability));
}

irt::IrtModel generating_model(const SimConfig& config, std::size_t item_count) {
  std::vector<double> beta = config.beta;
  if (beta.empty()) {
    Rng rng = Rng(config.seed).split(kItemStream);
    beta.resize(item_count);
    for (auto& b : beta) b = rng.normal();
  }
  if (beta.size() != item_count) {
    throw std::invalid_argument("beta has " + std::to_string(beta.size()) + " entries for " +
                                std::to_string(item_count) + " items");
  }
  auto model = irt::IrtModel::make(config.variant, std::move(beta), config.alpha, config.guessing);
  return model;
}

ItemBank make_synthetic_bank(std::size_t n_items, std::size_t n_answers, const std::string& bank_id) {
  ItemBank bank;
  bank.bank_id = bank_id;
  bank.title = "Synthetic bank";
  for (std::size_t i = 0; i < n_items; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "q%03zu", i + 1);
    Item item;
    item.item_id = id;
    item.stem = "Synthetic question " + std::to_string(i + 1);
    for (std::size_t a = 0; a < n_answers; ++a) {
      item.answers.push_back({"answer " + std::string(1, static_cast<char>('A' + a % 26)), a == 0});
    }
    item.shuffle = true;
    bank.items.push_back(std::move(item));
  }
  validate_bank(bank);
  return bank;
}

ItemBank resolve_bank(const SimConfig& config) {
  if (config.bank_path) return load_bank_file(*config.bank_path);
  return make_synthetic_bank(config.n_items, config.n_answers);
}

std::vector<ResponseRecord> run_sessions(const SimConfig& config, ItemBank& bank, const irt::IrtModel& truth) {
  if (bank.items.empty()) throw std::invalid_argument("cannot simulate sessions on an empty bank");
  if (truth.item_count() != bank.items.size()) throw std::invalid_argument("generating model does not match bank");
  config.policy.validate();

  auto students = generate_population(config);
  const Rng session_streams = Rng(config.seed).split(kSessionStream);
  std::vector<Rng> rngs;
  std::vector<StudentState> states;
  for (std::size_t k = 0; k < students.size(); ++k) {
    rngs.push_back(session_streams.split(k));
    states.push_back(StudentState{students[k].student_id, {}});
  }
  std::unordered_map<std::string, std::size_t> index_of;
  for (std::size_t i = 0; i < bank.items.size(); ++i) index_of.emplace(bank.items[i].item_id, i);

  // 2011-01-10T09:00:00Z
  const Timestamp epoch{std::chrono::milliseconds(1294650000000LL)};
  std::uint64_t tick = 0;
  std::vector<ResponseRecord> log;
  log.reserve(students.size() * config.questions_per_student);
  for (std::size_t round = 0; round < config.questions_per_student; ++round) {
    for (std::size_t k = 0; k < students.size(); ++k) {
      auto& rng = rngs[k];
      const auto ranking = rank_by_difficulty(bank);
      const auto* progress = states[k].progress(bank.bank_id);
      const double grade = progress ? progress->grade.grade : 0.0;
      const auto p = allocation_pmf(config.policy, bank.items.size(), grade);
      const std::size_t item_index = index_of.at(draw_item(p, ranking, rng));
      Item& item = bank.items[item_index];

      const bool correct = simulate_response(students[k], truth, item_index, item.answers.size(), rng);
      std::size_t chosen = item.correct_index();
      if (!correct) {
        std::size_t wrong = rng.index(item.answers.size() - 1);
        chosen = wrong < chosen ? wrong : wrong + 1;
      }
      log.push_back(record_response(states[k], bank.bank_id, item, chosen, epoch + std::chrono::seconds(tick++)));
      students[k].ability += students[k].learning_rate;
    }
  }
  return log;
}

irt::ResponseMatrix simulate_full_matrix(const irt::IrtModel& truth, std::size_t n_students, Rng& rng) {
  const std::size_t n_items = truth.item_count();
  std::vector<std::string> students, items;
  for (std::size_t m = 0; m < n_students; ++m) students.push_back(student_name(m));
  for (std::size_t i = 0; i < n_items; ++i) items.push_back(truth.item_ids.empty() ? "q" + std::to_string(i + 1) : truth.item_ids[i]);
  std::vector<irt::ResponseCell> cells;
  cells.reserve(n_students * n_items);
  for (std::size_t m = 0; m < n_students; ++m) {
    const SimStudent student{students[m], rng.normal(), 0.0, false};
    for (std::size_t i = 0; i < n_items; ++i) {
      cells.push_back({m, i, simulate_response(student, truth, i, 4, rng)});
    }
  }
  return irt::ResponseMatrix(std::move(students), std::move(items), std::move(cells));
}

std::vector<crossover::ExamRecord> simulate_crossover(const SimConfig& config) {
  if (!config.crossover) throw std::invalid_argument("simulation config has no crossover block");
  const auto& cc = *config.crossover;
  Rng rng = Rng(config.seed).split(kCrossoverStream);

  std::vector<std::string> ids;
  for (std::size_t k = 0; k < config.n_students; ++k) ids.push_back(student_name(k));
  const auto schedule = crossover::randomize_crossover(ids, rng);

  std::vector<crossover::ExamRecord> records;
  for (const auto& entry : schedule.students) {
    const bool strong = rng.bernoulli(cc.strong_fraction);
    const double intercept = rng.normal(0.0, cc.sigma_b);
    for (std::size_t k = 1; k <= cc.n_exams; ++k) {
      const double noise = rng.normal(0.0, cc.sigma);
      if (cc.missing_rate > 0.0 && rng.bernoulli(cc.missing_rate)) continue;
      const auto treatment = entry.periods[k - 1];
      const double t = treatment == crossover::Treatment::tutorweb ? 1.0 : 0.0;
      const double s = strong ? 1.0 : 0.0;
      double y = cc.truth.intercept + cc.truth.treatment * t + cc.truth.math * s + cc.truth.interaction * t * s +
                 cc.truth.exam[k - 1] + intercept + noise;
      if (cc.clamp_scores) y = std::clamp(y, 0.0, cc.score_scale);
      records.push_back({entry.student_id, static_cast<int>(k), treatment,
                         strong ? crossover::MathBackground::strong : crossover::MathBackground::weak, y});
    }
  }
  return records;
}

}  // namespace quiz::sim
