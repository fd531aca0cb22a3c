// quiz: command-line front end for the adaptive quiz engine.

#include <atomic>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>

#include "quiz/allocation.hpp"
#include "quiz/bank.hpp"
#include "quiz/bank_io.hpp"
#include "quiz/crossover.hpp"
#include "quiz/irt.hpp"
#include "quiz/service.hpp"
#include "quiz/simulator.hpp"

// After the Eigen users: <resolv.h> defines a _res macro.
#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

httplib::Server* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return json::parse(in);
}

// serve ----------------------------------------------------------------------

int run_serve(const std::string& config_path) {
  auto config = quiz::service::ServiceConfig::load(config_path);
  quiz::service::QuizService service(config);
  httplib::Server server;
  quiz::service::mount_routes(server, service);
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cerr << "serving " << service.banks().size() << " bank(s) on " << config.host << ':' << config.port
            << ", log " << config.log_path << '\n';
  if (!server.listen(config.host, config.port)) {
    std::cerr << "error: cannot listen on " << config.host << ':' << config.port << '\n';
    return 1;
  }
  return 0;
}

// simulate -------------------------------------------------------------------

int run_simulate(const std::string& config_path, const std::string& out_path, const std::string& exams_path,
                 const std::string& bank_out) {
  const auto config = quiz::sim::SimConfig::from_json(read_json_file(config_path));
  auto bank = quiz::sim::resolve_bank(config);
  const auto truth = quiz::sim::generating_model(config, bank.items.size());
  const auto log = quiz::sim::run_sessions(config, bank, truth);
  {
    auto out = open_out(out_path);
    quiz::write_log(out, log);
  }
  if (!bank_out.empty()) quiz::save_bank_file(bank, bank_out);
  if (!exams_path.empty()) {
    if (!config.crossover) throw std::runtime_error("--exams requires a crossover block in the config");
    const auto exams = quiz::sim::simulate_crossover(config);
    auto out = open_out(exams_path);
    quiz::crossover::write_exams_csv(out, exams);
  }
  std::cerr << "wrote " << log.size() << " responses to " << out_path << '\n';
  return 0;
}

// calibrate ------------------------------------------------------------------

ordered_json model_to_json(const quiz::irt::IrtModel& model) {
  ordered_json flags = ordered_json::array();
  for (std::size_t i = 0; i < model.flags.size(); ++i) {
    const auto& f = model.flags[i];
    flags.push_back({{"item_id", model.item_ids[i]},
                     {"degenerate", f.degenerate},
                     {"beta_at_bound", f.beta_at_bound},
                     {"alpha_at_bound", f.alpha_at_bound},
                     {"guessing_at_bound", f.guessing_at_bound}});
  }
  return {{"variant", quiz::irt::to_string(model.variant)},
          {"item_ids", model.item_ids},
          {"beta", model.beta},
          {"alpha", model.alpha},
          {"guessing", model.guessing},
          {"loglik", model.loglik},
          {"n_params", model.n_params()},
          {"quadrature_nodes", model.quadrature_nodes},
          {"converged", model.converged},
          {"iterations", model.iterations},
          {"flags", flags}};
}

void write_report(std::ostream& out, const quiz::irt::IrtModel& model) {
  const auto report = quiz::irt::average_student_report(model);
  out << std::setprecision(10);
  out << "item_id,beta,alpha,c,p_avg,unreliable\n";
  for (std::size_t i = 0; i < model.item_count(); ++i) {
    out << model.item_ids[i] << ',' << model.beta[i] << ',' << model.discrimination(i) << ','
        << model.guessing_of(i) << ',' << report.p_average[i] << ',' << (report.unreliable[i] ? 1 : 0) << '\n';
  }
  out << "\nbin_lower,bin_upper,count\n";
  for (std::size_t b = 0; b < report.histogram.size(); ++b) {
    out << b / 10.0 << ',' << (b + 1) / 10.0 << ',' << report.histogram[b] << '\n';
  }
  out << "\neasy,hard,imbalance_z,balanced,all_easy\n"
      << report.easy << ',' << report.hard << ',' << report.imbalance_z << ',' << report.balanced << ','
      << report.all_easy << '\n';
}

int run_calibrate(const std::string& log_path, const std::string& bank_path, const std::string& variant,
                  const std::string& out_path, const std::string& report_path, double alpha, std::size_t nodes) {
  const auto bank = quiz::load_bank_file(bank_path);
  std::ifstream in(log_path);
  if (!in) throw std::runtime_error("cannot open " + log_path);
  const auto log = quiz::read_log(in, log_path);
  const auto first = quiz::first_exposure_filter(log);
  const auto matrix = quiz::irt::ResponseMatrix::from_records(first, &bank);
  if (matrix.empty()) throw std::runtime_error("no responses for bank '" + bank.bank_id + "' in " + log_path);

  quiz::irt::FitConfig fit_config;
  fit_config.quadrature_nodes = nodes;
  ordered_json doc;
  quiz::irt::IrtModel model;
  if (variant == "auto") {
    const auto selection = quiz::irt::select_model(matrix, alpha, fit_config);
    model = selection.selected;
    doc = model_to_json(model);
    ordered_json table = ordered_json::array();
    for (const auto& row : selection.table) {
      table.push_back({{"smaller", quiz::irt::to_string(row.smaller)},
                       {"larger", quiz::irt::to_string(row.larger)},
                       {"stat", row.lrt.stat},
                       {"df", row.lrt.df},
                       {"p_value", row.lrt.p_value},
                       {"accepted", row.accepted}});
    }
    doc["selection"] = table;
    ordered_json logliks = ordered_json::object();
    for (const auto& f : selection.fits) logliks[std::string(quiz::irt::to_string(f.variant))] = f.loglik;
    doc["chain_loglik"] = logliks;
  } else {
    model = quiz::irt::fit(matrix, quiz::irt::variant_from_string(variant), fit_config);
    doc = model_to_json(model);
  }
  doc["n_students"] = matrix.n_students();
  doc["n_responses"] = matrix.n_cells();
  {
    auto out = open_out(out_path);
    out << std::setw(2) << doc << '\n';
  }
  if (!report_path.empty()) {
    auto out = open_out(report_path);
    write_report(out, model);
  }
  std::cerr << "calibrated " << quiz::irt::to_string(model.variant) << " on " << matrix.n_students() << " students x "
            << matrix.n_items() << " items (" << matrix.n_cells() << " first-exposure responses), loglik "
            << model.loglik << '\n';
  return 0;
}

// analyze --------------------------------------------------------------------

ordered_json fit_to_json(const quiz::crossover::LmmFit& fit) {
  ordered_json coef = ordered_json::array();
  for (std::size_t k = 0; k < fit.names.size(); ++k) {
    coef.push_back({{"name", fit.names[k]}, {"estimate", fit.beta[k]}, {"std_error", fit.std_error(fit.names[k])}});
  }
  return {{"coefficients", coef},
          {"sigma_b2", fit.sigma_b2},
          {"sigma2", fit.sigma2},
          {"loglik", fit.loglik},
          {"n_obs", fit.n_obs}};
}

int run_analyze(const std::string& exams_path, double alpha, const std::string& json_path) {
  namespace cx = quiz::crossover;
  const auto records = cx::read_exams_csv_file(exams_path);
  const auto result = cx::backward_eliminate(records, alpha);
  const auto ci = cx::treatment_ci(result.treatment_fit, 0.95);

  std::cout << "Backward elimination (alpha = " << alpha << ", " << records.size() << " exam records)\n";
  for (const auto& step : result.trace) {
    std::cout << "  " << std::left << std::setw(24) << cx::to_string(step.term) << " p = " << std::setprecision(4)
              << step.p_value << (step.dropped ? "  dropped" : "  kept") << '\n';
  }
  std::cout << "\nFinal model\n";
  const auto& fit = result.final_fit;
  for (std::size_t k = 0; k < fit.names.size(); ++k) {
    std::cout << "  " << std::left << std::setw(34) << fit.names[k] << std::right << std::setw(10) << std::fixed
              << std::setprecision(4) << fit.beta[k] << "  (se " << fit.std_error(fit.names[k]) << ")\n";
  }
  std::cout << "\n  student variance  " << fit.sigma_b2 << "\n  residual variance " << fit.sigma2 << '\n';
  std::cout << "\nTreatment effect (tutor-web vs traditional), 95% CI: [" << ci.lower << ", " << ci.upper << "]\n";
  std::cout.unsetf(std::ios::fixed);

  if (!json_path.empty()) {
    ordered_json trace = ordered_json::array();
    for (const auto& step : result.trace) {
      trace.push_back({{"term", cx::to_string(step.term)}, {"p_value", step.p_value}, {"dropped", step.dropped}});
    }
    const ordered_json doc{{"alpha", alpha},
                           {"trace", trace},
                           {"final", fit_to_json(fit)},
                           {"treatment_estimate", result.treatment_fit.coefficient("treatment:tutorweb")},
                           {"treatment_ci", {ci.lower, ci.upper}}};
    auto out = open_out(json_path);
    out << std::setw(2) << doc << '\n';
  }
  return 0;
}

// pmf / rank -----------------------------------------------------------------

int run_pmf(std::size_t items, double grade, double q, double m, const std::string& mode, bool plot) {
  quiz::AllocationPolicy policy;
  policy.q = q;
  policy.m = m;
  policy.mode = quiz::allocation_mode_from_string(mode);
  const auto p = quiz::allocation_pmf(policy, items, grade);
  std::cout << std::setprecision(17);
  std::cout << "rank,probability\n";
  for (std::size_t r = 0; r < p.size(); ++r) std::cout << r + 1 << ',' << p[r] << '\n';
  if (plot) {
    const double peak = *std::max_element(p.begin(), p.end());
    std::cerr << "\n";
    for (std::size_t r = 0; r < p.size(); ++r) {
      const int width = peak > 0 ? static_cast<int>(std::lround(60.0 * p[r] / peak)) : 0;
      std::cerr << std::setw(5) << r + 1 << " | " << std::string(width, '#') << '\n';
    }
  }
  return 0;
}

int run_rank(const std::string& bank_path, const std::string& log_path) {
  auto bank = quiz::load_bank_file(bank_path);
  if (!log_path.empty()) quiz::apply_counters(bank, quiz::read_log_file(log_path));
  const auto ranking = quiz::rank_by_difficulty(bank);
  std::cout << "rank,item_id,times_answered,times_correct,difficulty\n";
  for (std::size_t r = 1; r <= ranking.size(); ++r) {
    const auto* item = bank.find(ranking.item_at(r));
    std::cout << r << ',' << item->item_id << ',' << item->times_answered << ',' << item->times_correct << ','
              << quiz::empirical_difficulty(*item) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive quiz engine: service, simulation and analysis"};
  app.require_subcommand(1);

  std::string config_path;
  auto* serve = app.add_subcommand("serve", "Run the HTTP quiz service");
  serve->add_option("--config", config_path, "Service config JSON")->required()->check(CLI::ExistingFile);

  std::string sim_config, sim_out, sim_exams, sim_bank_out;
  auto* simulate = app.add_subcommand("simulate", "Simulate quiz sessions and crossover exams");
  simulate->add_option("--config", sim_config, "Simulation config JSON")->required()->check(CLI::ExistingFile);
  simulate->add_option("--out", sim_out, "Response log to write (JSON lines)")->required();
  simulate->add_option("--exams", sim_exams, "Also write crossover exam scores (CSV)");
  simulate->add_option("--bank-out", sim_bank_out, "Write the simulated bank (JSON)");

  std::string cal_log, cal_bank, cal_variant = "auto", cal_out, cal_report;
  double cal_alpha = 0.05;
  std::size_t cal_nodes = 21;
  auto* calibrate = app.add_subcommand("calibrate", "Fit IRT models to first-exposure responses");
  calibrate->add_option("--log", cal_log, "Response log (JSON lines)")->required()->check(CLI::ExistingFile);
  calibrate->add_option("--bank", cal_bank, "Item bank JSON")->required()->check(CLI::ExistingFile);
  calibrate->add_option("--variant", cal_variant, "auto, m1, m2, m3 or m4")
      ->check(CLI::IsMember({"auto", "m1", "m2", "m3", "m4"}));
  calibrate->add_option("--out", cal_out, "Model JSON to write")->required();
  calibrate->add_option("--report", cal_report, "Average-student report CSV");
  calibrate->add_option("--alpha", cal_alpha, "LRT level for --variant auto")->check(CLI::Range(0.0, 1.0));
  calibrate->add_option("--nodes", cal_nodes, "Gauss-Hermite nodes")->check(CLI::Range(2, 200));

  std::string an_exams, an_json;
  double an_alpha = 0.05;
  auto* analyze = app.add_subcommand("analyze", "Crossover mixed-model analysis of exam scores");
  analyze->add_option("--exams", an_exams, "Exam CSV")->required()->check(CLI::ExistingFile);
  analyze->add_option("--alpha", an_alpha, "Elimination level")->check(CLI::Range(0.0, 1.0));
  analyze->add_option("--json", an_json, "Also write results as JSON");

  std::size_t pmf_items = 50;
  double pmf_grade = 0.0, pmf_q = 0.85, pmf_m = 0.5;
  std::string pmf_mode = "grade-adaptive";
  bool pmf_plot = false;
  auto* pmf = app.add_subcommand("pmf", "Print the allocation probabilities by difficulty rank");
  pmf->add_option("--items", pmf_items, "Number of items")->required();
  pmf->add_option("--grade", pmf_grade, "Student grade in [0, 1]")->required();
  pmf->add_option("--q", pmf_q, "Steepness");
  pmf->add_option("--m", pmf_m, "Pivot grade");
  pmf->add_option("--mode", pmf_mode, "grade-adaptive or uniform");
  pmf->add_flag("--plot", pmf_plot, "Draw a text bar chart on stderr");

  std::string rank_bank, rank_log;
  auto* rank = app.add_subcommand("rank", "Rank a bank's items by empirical difficulty");
  rank->add_option("--bank", rank_bank, "Item bank JSON")->required()->check(CLI::ExistingFile);
  rank->add_option("--log", rank_log, "Response log supplying the counters");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*serve) return run_serve(config_path);
    if (*simulate) return run_simulate(sim_config, sim_out, sim_exams, sim_bank_out);
    if (*calibrate) return run_calibrate(cal_log, cal_bank, cal_variant, cal_out, cal_report, cal_alpha, cal_nodes);
    if (*analyze) return run_analyze(an_exams, an_alpha, an_json);
    if (*pmf) return run_pmf(pmf_items, pmf_grade, pmf_q, pmf_m, pmf_mode, pmf_plot);
    if (*rank) return run_rank(rank_bank, rank_log);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
