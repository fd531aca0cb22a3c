#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "quiz/bank_io.hpp"
#include "quiz/simulator.hpp"

using namespace quiz;
using namespace quiz::sim;

namespace {

std::string log_bytes(const std::vector<ResponseRecord>& log) {
  std::ostringstream out;
  write_log(out, log);
  return out.str();
}

std::vector<ResponseRecord> run(const SimConfig& config) {
  auto bank = resolve_bank(config);
  return run_sessions(config, bank, generating_model(config, bank.items.size()));
}

}  // namespace

TEST_CASE("population moments and guesser share") {
  SimConfig c;
  c.n_students = 10000;
  c.guesser_fraction = 0.17;
  const auto pop = generate_population(c);
  REQUIRE(pop.size() == 10000);
  double sum = 0, sum2 = 0;
  std::size_t guessers = 0;
  for (const auto& s : pop) {
    sum += s.ability;
    sum2 += s.ability * s.ability;
    guessers += s.guesser;
  }
  const double mean = sum / pop.size();
  CHECK(std::abs(mean) < 0.05);
  CHECK(std::abs(sum2 / pop.size() - mean * mean - 1.0) < 0.05);
  CHECK(std::abs(guessers / 10000.0 - 0.17) < 0.02);
  CHECK(pop.front().student_id == "s0001");

  const auto again = generate_population(c);
  for (std::size_t k = 0; k < pop.size(); ++k) CHECK(again[k].ability == pop[k].ability);
}

TEST_CASE("simulate_response rates") {
  auto model = irt::IrtModel::make(irt::Variant::m1, {0.7});
  Rng rng(3);
  const int n = 100000;
  SimStudent guesser{"g", 0.0, 0.0, true};
  SimStudent at_beta{"b", 0.7, 0.0, false};
  SimStudent strong{"s", 10.0, 0.0, false};
  auto zero = irt::IrtModel::make(irt::Variant::m1, {0.0});
  int g = 0, b = 0, s = 0;
  for (int k = 0; k < n; ++k) {
    g += simulate_response(guesser, model, 0, 4, rng);
    b += simulate_response(at_beta, model, 0, 4, rng);
    s += simulate_response(strong, zero, 0, 4, rng);
  }
  CHECK(std::abs(g / double(n) - 0.25) < 0.01);
  CHECK(std::abs(b / double(n) - 0.5) < 0.01);
  CHECK(s / double(n) > 0.999);
}

TEST_CASE("run_sessions produces consistent, reproducible logs") {
  SimConfig c;
  c.n_students = 30;
  c.n_items = 20;
  c.questions_per_student = 25;
  c.seed = 99;
  const auto a = run(c);
  const auto b = run(c);
  CHECK(a.size() == 750);
  CHECK(log_bytes(a) == log_bytes(b));

  c.seed = 100;
  CHECK(log_bytes(run(c)) != log_bytes(a));

  // Replaying the log reproduces every recorded grade.
  std::map<std::string, std::vector<Attempt>> hist;
  std::map<std::string, std::uint64_t> seq;
  auto bank = make_synthetic_bank(20, 4);
  for (const auto& r : a) {
    const auto* item = bank.find(r.item_id);
    REQUIRE(item != nullptr);
    CHECK(item->answers.at(r.chosen_index).correct == r.correct);
    CHECK(r.seq == ++seq[r.student_id]);
    hist[r.student_id].push_back({r.item_id, r.correct});
    CHECK(lecture_grade(hist[r.student_id]).grade == r.grade_after);
  }
  CHECK_NOTHROW(first_exposure_filter(a));

  std::istringstream in(log_bytes(a));
  CHECK(read_log(in) == a);

  c.questions_per_student = 0;
  CHECK(run(c).empty());
}

TEST_CASE("adaptive allocation moves able students to harder items") {
  SimConfig c;
  c.n_students = 200;
  c.n_items = 40;
  c.questions_per_student = 40;
  c.seed = 5;
  c.policy.mode = AllocationMode::grade_adaptive;
  // A cohort centred at z = 2 is the same as shifting every difficulty by -2.
  Rng rng(8);
  for (std::size_t i = 0; i < c.n_items; ++i) c.beta.push_back(rng.normal() - 2.0);

  auto bank = resolve_bank(c);
  const auto log = run_sessions(c, bank, generating_model(c, bank.items.size()));

  // Difficulty of each allocated item as ranked at the moment of the draw.
  auto replay = make_synthetic_bank(c.n_items, c.n_answers);
  std::map<std::string, std::size_t> position;
  double first = 0, last = 0;
  std::size_t n_first = 0, n_last = 0;
  for (const auto& r : log) {
    Item* item = replay.find(r.item_id);
    const double d = empirical_difficulty(*item);
    const auto k = position[r.student_id]++;
    if (k < c.questions_per_student / 4) {
      first += d;
      ++n_first;
    } else if (k >= 3 * c.questions_per_student / 4) {
      last += d;
      ++n_last;
    }
    ++item->times_answered;
    if (r.correct) ++item->times_correct;
  }
  CHECK(last / n_last > first / n_first);
}

TEST_CASE("learning raises success on a fixed probe item") {
  SimConfig c;
  c.n_students = 4000;
  c.n_items = 1;
  c.questions_per_student = 16;
  c.learning_rate = 0.15;
  c.beta = {0.5};
  c.policy.mode = AllocationMode::uniform;
  const auto log = run(c);
  std::vector<int> correct(c.questions_per_student, 0);
  for (const auto& r : log) correct[r.seq - 1] += r.correct;
  for (std::size_t q = 0; q + 4 < c.questions_per_student; q += 4) {
    int a = 0, b = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      a += correct[q + k];
      b += correct[q + 4 + k];
    }
    CHECK(b > a);
  }
}

TEST_CASE("crossover generator") {
  SimConfig c;
  c.n_students = 157;
  CrossoverConfig cc;
  c.crossover = cc;
  auto exams = simulate_crossover(c);
  CHECK(exams.size() == 628);
  CHECK_NOTHROW(crossover::validate_records(exams));

  c.crossover->sigma = 0;
  c.crossover->sigma_b = 0;
  exams = simulate_crossover(c);
  for (const auto& r : exams) {
    const auto& t = c.crossover->truth;
    const double t_on = r.treatment == crossover::Treatment::tutorweb;
    const double s_on = r.math == crossover::MathBackground::strong;
    const double mean =
        t.intercept + t.treatment * t_on + t.math * s_on + t.interaction * t_on * s_on + t.exam[r.exam - 1];
    CHECK(r.score == doctest::Approx(mean).epsilon(1e-15));
  }

  c.crossover->missing_rate = 0.25;
  exams = simulate_crossover(c);
  CHECK(exams.size() < 628);
  CHECK(exams.size() > 400);

  SimConfig none;
  CHECK_THROWS(simulate_crossover(none));
}

TEST_CASE("config parsing") {
  const auto doc = nlohmann::json::parse(R"({"seed": 4, "n_students": 12, "policy": {"mode": "uniform"},
    "crossover": {"sigma": 0.5}})");
  const auto c = SimConfig::from_json(doc);
  CHECK(c.seed == 4);
  CHECK(c.n_students == 12);
  CHECK(c.policy.mode == AllocationMode::uniform);
  CHECK(c.crossover->sigma == 0.5);
  const auto round = SimConfig::from_json(c.to_json());
  CHECK(round.to_json() == c.to_json());

  CHECK_THROWS(SimConfig::from_json(nlohmann::json::parse(R"({"sede": 4})")));
  CHECK_THROWS(SimConfig::from_json(nlohmann::json::parse(R"({"guesser_fraction": 1.5})")));
  CHECK_THROWS(SimConfig::from_json(nlohmann::json::parse(R"({"learning_rate": -1})")));
  CHECK_THROWS(SimConfig::from_json(nlohmann::json::parse(R"({"policy": {"q": 2}})")));
}

TEST_CASE("full matrix simulation") {
  auto truth = irt::IrtModel::make(irt::Variant::m1, {0.0, 1.0, -1.0});
  Rng rng(1);
  const auto x = simulate_full_matrix(truth, 50, rng);
  CHECK(x.n_cells() == 150);
  CHECK(x.n_items() == 3);
}
