#include "quiz/service.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <ostream>
#include <random>
#include <sstream>

#include <httplib.h>

#include "quiz/bank_io.hpp"

namespace quiz::service {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

ServiceConfig ServiceConfig::from_json(const json& doc) {
  ServiceConfig c;
  c.host = doc.value("host", c.host);
  c.port = doc.value("port", c.port);
  c.bank_dir = doc.value("bank_dir", std::string());
  c.log_path = doc.value("log_path", c.log_path.string());
  if (doc.contains("students_path")) c.students_path = doc.at("students_path").get<std::string>();
  if (doc.contains("policy")) {
    const auto& p = doc.at("policy");
    c.policy.q = p.value("q", c.policy.q);
    c.policy.m = p.value("m", c.policy.m);
    c.policy.mode = allocation_mode_from_string(p.value("mode", std::string(to_string(c.policy.mode))));
  }
  c.legacy_uniform = doc.value("legacy_uniform", c.legacy_uniform);
  c.seed = doc.value("seed", c.seed);
  c.policy.validate();
  if (const char* env = std::getenv("QUIZ_LOG_PATH"); env && *env) c.log_path = env;
  return c;
}

ServiceConfig ServiceConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open service config " + path.string());
  ServiceConfig c = from_json(json::parse(in));
  const auto base = path.parent_path();
  const auto resolve = [&](std::filesystem::path& p) {
    if (!p.empty() && p.is_relative()) p = base / p;
  };
  resolve(c.bank_dir);
  if (!std::getenv("QUIZ_LOG_PATH")) resolve(c.log_path);
  if (c.students_path) resolve(*c.students_path);
  return c;
}

std::filesystem::path ServiceConfig::registry_path() const {
  if (students_path) return *students_path;
  auto p = log_path;
  p += ".students";
  return p;
}

// ---------------------------------------------------------------------------
// ResponseLog

ResponseLog::ResponseLog(std::filesystem::path path) : path_(std::move(path)) {
  fd_ = ::open(path_.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw std::runtime_error("cannot open log " + path_.string() + ": " + std::strerror(errno));
}

ResponseLog::~ResponseLog() {
  if (fd_ >= 0) ::close(fd_);
}

void ResponseLog::append_line(const std::string& line) {
  const std::string data = line + '\n';
  std::size_t written = 0;
  while (written < data.size()) {
    const ssize_t n = ::write(fd_, data.data() + written, data.size() - written);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw std::runtime_error("append to " + path_.string() + " failed: " + std::strerror(errno));
    }
    written += static_cast<std::size_t>(n);
  }
  if (::fsync(fd_) != 0) throw std::runtime_error("fsync of " + path_.string() + " failed: " + std::strerror(errno));
}

// ---------------------------------------------------------------------------
// QuizService

namespace {

std::uint64_t seed_from(std::uint64_t configured) {
  if (configured != 0) return configured;
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

std::string slugify(std::string_view name) {
  std::string out;
  for (char ch : name) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      out.push_back(static_cast<char>(std::tolower(c)));
    } else if (!out.empty() && out.back() != '-') {
      out.push_back('-');
    }
  }
  while (!out.empty() && out.back() == '-') out.pop_back();
  return out.empty() ? "student" : out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

QuizService::QuizService(ServiceConfig config) : config_(std::move(config)), rng_(seed_from(config_.seed)) {
  config_.policy.validate();

  const auto registry_file = config_.registry_path();
  if (std::filesystem::exists(registry_file)) {
    std::ifstream in(registry_file);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (trim(line).empty()) continue;
      try {
        const auto obj = json::parse(line);
        auto entry = std::make_unique<StudentEntry>();
        entry->name = obj.at("name").get<std::string>();
        entry->state.student_id = obj.at("student_id").get<std::string>();
        students_.emplace(entry->state.student_id, std::move(entry));
      } catch (const json::exception& e) {
        throw FormatError(registry_file.string(), line_no, "", e.what());
      }
    }
  }

  if (!config_.bank_dir.empty() && std::filesystem::is_directory(config_.bank_dir)) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(config_.bank_dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      auto bank = load_bank_file(f);
      const auto id = bank.bank_id;
      if (banks_.count(id)) throw FormatError(f.string(), 0, "bank_id", "duplicate bank '" + id + "'");
      auto entry = std::make_unique<BankEntry>();
      entry->bank = std::move(bank);
      banks_.emplace(id, std::move(entry));
    }
  }

  const auto existing = read_log_file(config_.log_path);
  replay(existing);

  log_ = std::make_unique<ResponseLog>(config_.log_path);
  registry_ = std::make_unique<ResponseLog>(registry_file);
}

QuizService::~QuizService() = default;

std::string QuizService::add_bank(ItemBank bank) {
  validate_bank(bank);
  std::unique_lock lock(registry_mutex_);
  if (banks_.count(bank.bank_id)) throw ServiceError(409, "bank '" + bank.bank_id + "' already loaded");
  {
    std::lock_guard log_lock(log_mutex_);
    apply_counters(bank, history_);
  }
  const auto id = bank.bank_id;
  auto entry = std::make_unique<BankEntry>();
  entry->bank = std::move(bank);
  banks_.emplace(id, std::move(entry));
  return id;
}

std::string QuizService::load_bank(const std::filesystem::path& path) { return add_bank(load_bank_file(path)); }

std::vector<BankSummary> QuizService::banks() const {
  std::shared_lock lock(registry_mutex_);
  std::vector<BankSummary> out;
  for (const auto& [id, entry] : banks_) out.push_back({id, entry->bank.title, entry->bank.items.size()});
  return out;
}

std::string QuizService::register_student(std::string_view name) {
  const std::string clean = trim(name);
  if (clean.empty()) throw ServiceError(400, "student name must not be empty");
  std::unique_lock lock(registry_mutex_);
  const std::string base = slugify(clean);
  std::string id = base;
  for (int suffix = 2; students_.count(id); ++suffix) id = base + "-" + std::to_string(suffix);

  json line{{"student_id", id}, {"name", clean}, {"consent", true}, {"timestamp", format_timestamp(now_utc())}};
  registry_->append_line(line.dump());
  auto entry = std::make_unique<StudentEntry>();
  entry->name = clean;
  entry->state.student_id = id;
  students_.emplace(id, std::move(entry));
  return id;
}

bool QuizService::is_registered(std::string_view student_id) const {
  std::shared_lock lock(registry_mutex_);
  return students_.count(student_id) > 0;
}

QuizService::StudentEntry& QuizService::student(std::string_view student_id) const {
  auto it = students_.find(student_id);
  if (it == students_.end()) throw ServiceError(404, "unknown student '" + std::string(student_id) + "'");
  return *it->second;
}

QuizService::BankEntry& QuizService::bank(std::string_view bank_id) const {
  auto it = banks_.find(bank_id);
  if (it == banks_.end()) throw ServiceError(404, "unknown bank '" + std::string(bank_id) + "'");
  return *it->second;
}

std::string QuizService::make_token() {
  std::lock_guard lock(rng_mutex_);
  char buf[33];
  std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(rng_.next_u64()),
                static_cast<unsigned long long>(rng_.next_u64()));
  return buf;
}

Question QuizService::present(const BankEntry& entry, const Pending& pending) const {
  const Item* item = entry.bank.find(pending.item_id);
  Question q;
  q.item_id = item->item_id;
  q.stem = item->stem;
  for (auto canonical : pending.permutation.presented_order()) q.answers.push_back(item->answers[canonical].text);
  q.question_token = pending.token;
  return q;
}

std::vector<double> QuizService::current_pmf(std::string_view student_id, std::string_view bank_id) const {
  std::shared_lock lock(registry_mutex_);
  auto& s = student(student_id);
  auto& b = bank(bank_id);
  std::lock_guard student_lock(s.mutex);
  const auto* progress = s.state.progress(bank_id);
  const double grade = progress ? progress->grade.grade : 0.0;
  std::lock_guard bank_lock(b.mutex);
  const std::size_t n = b.bank.items.size();
  return config_.legacy_uniform ? uniform_pmf(n) : allocation_pmf(config_.policy, n, grade);
}

Question QuizService::next_question(std::string_view student_id, std::string_view bank_id) {
  std::shared_lock lock(registry_mutex_);
  auto& s = student(student_id);
  auto& b = bank(bank_id);
  std::lock_guard student_lock(s.mutex);
  if (auto it = s.pending.find(bank_id); it != s.pending.end()) return present(b, it->second);

  const auto* progress = s.state.progress(bank_id);
  const double grade = progress ? progress->grade.grade : 0.0;
  Pending pending;
  {
    std::lock_guard bank_lock(b.mutex);
    const auto ranking = rank_by_difficulty(b.bank);
    const std::size_t n = b.bank.items.size();
    const auto p = config_.legacy_uniform ? uniform_pmf(n) : allocation_pmf(config_.policy, n, grade);
    std::uint64_t shuffle_seed = 0;
    {
      std::lock_guard rng_lock(rng_mutex_);
      pending.item_id = draw_item(p, ranking, rng_);
      shuffle_seed = rng_.next_u64();
    }
    pending.permutation = shuffle_answers(*b.bank.find(pending.item_id), shuffle_seed);
  }
  pending.token = make_token();
  pending.issued_at = now_utc();
  auto [it, inserted] = s.pending.emplace(std::string(bank_id), std::move(pending));
  return present(b, it->second);
}

AnswerResult QuizService::submit_answer(std::string_view student_id, std::string_view bank_id,
                                        std::string_view question_token, std::size_t presented_index) {
  std::shared_lock lock(registry_mutex_);
  auto& s = student(student_id);
  auto& b = bank(bank_id);
  std::lock_guard student_lock(s.mutex);
  auto pit = s.pending.find(bank_id);
  if (pit == s.pending.end() || pit->second.token != question_token) {
    throw ServiceError(409, "stale or unknown question token");
  }
  const Pending& pending = pit->second;
  if (presented_index >= pending.permutation.size()) {
    throw ServiceError(400, "answer index " + std::to_string(presented_index) + " out of range");
  }
  const std::size_t canonical = pending.permutation.canonical_index(presented_index);

  // Work on copies; nothing is committed until the log line is durable.
  StudentState scratch{s.state.student_id, {}};
  if (const auto* progress = s.state.progress(bank_id)) scratch.banks.emplace(std::string(bank_id), *progress);

  std::lock_guard bank_lock(b.mutex);
  Item* item = b.bank.find(pending.item_id);
  Item item_copy = *item;
  const ResponseRecord rec = record_response(scratch, bank_id, item_copy, canonical, now_utc());
  {
    std::lock_guard log_lock(log_mutex_);
    log_->append_line(record_to_line(rec));
    history_.push_back(rec);
  }
  *item = std::move(item_copy);
  auto& committed = scratch.banks.at(std::string(bank_id));
  s.state.banks[std::string(bank_id)] = std::move(committed);
  s.pending.erase(pit);

  const auto& grade = s.state.banks.at(std::string(bank_id)).grade;
  return {rec.correct, grade.raw_score, grade.grade};
}

GradeView QuizService::get_grade(std::string_view student_id, std::string_view bank_id) const {
  std::shared_lock lock(registry_mutex_);
  auto& s = student(student_id);
  bank(bank_id);
  std::lock_guard student_lock(s.mutex);
  const auto* progress = s.state.progress(bank_id);
  if (!progress) return {};
  return {progress->grade.raw_score, progress->grade.grade, progress->history.size()};
}

void QuizService::export_log(std::ostream& out, std::size_t offset, std::size_t limit) const {
  std::lock_guard lock(log_mutex_);
  const std::size_t end = limit == 0 ? history_.size() : std::min(history_.size(), offset + limit);
  for (std::size_t k = offset; k < end; ++k) out << record_to_line(history_[k]) << '\n';
}

std::vector<ResponseRecord> QuizService::records() const {
  std::lock_guard lock(log_mutex_);
  return history_;
}

void QuizService::replay_one(const ResponseRecord& rec) {
  auto sit = students_.find(rec.student_id);
  if (sit == students_.end()) {
    auto entry = std::make_unique<StudentEntry>();
    entry->name = rec.student_id;
    entry->state.student_id = rec.student_id;
    sit = students_.emplace(rec.student_id, std::move(entry)).first;
  }
  auto& progress = sit->second->state.banks[rec.bank_id];
  if (rec.seq != progress.last_seq + 1) {
    throw std::invalid_argument("log replay: student '" + rec.student_id + "' bank '" + rec.bank_id + "' expected seq " +
                                std::to_string(progress.last_seq + 1) + ", found " + std::to_string(rec.seq));
  }
  if (auto bit = banks_.find(rec.bank_id); bit != banks_.end()) {
    Item* item = bit->second->bank.find(rec.item_id);
    if (!item) throw std::invalid_argument("log replay: unknown item '" + rec.item_id + "' in bank '" + rec.bank_id + "'");
    if (rec.chosen_index >= item->answers.size() || item->answers[rec.chosen_index].correct != rec.correct) {
      throw std::invalid_argument("log replay: record for item '" + rec.item_id + "' disagrees with the bank");
    }
    ++item->times_answered;
    if (rec.correct) ++item->times_correct;
  }
  progress.history.push_back({rec.item_id, rec.correct});
  progress.grade = lecture_grade(progress.history);
  progress.last_seq = rec.seq;
  if (std::abs(progress.grade.grade - rec.grade_after) > 1e-12) {
    throw std::invalid_argument("log replay: grade mismatch for student '" + rec.student_id + "' seq " +
                                std::to_string(rec.seq));
  }
  history_.push_back(rec);
}

void QuizService::replay(std::span<const ResponseRecord> records) {
  std::unique_lock lock(registry_mutex_);
  std::lock_guard log_lock(log_mutex_);
  for (const auto& rec : records) replay_one(rec);
}

// ---------------------------------------------------------------------------
// HTTP

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename Handler>
auto guarded(Handler handler) {
  return [handler](const httplib::Request& req, httplib::Response& res) {
    try {
      handler(req, res);
    } catch (const ServiceError& e) {
      send_json(res, e.status(), {{"error", e.what()}});
    } catch (const json::exception& e) {
      send_json(res, 400, {{"error", std::string("bad request body: ") + e.what()}});
    } catch (const std::invalid_argument& e) {
      send_json(res, 400, {{"error", e.what()}});
    } catch (const std::exception& e) {
      send_json(res, 500, {{"error", e.what()}});
    }
  };
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  return json::parse(req.body);
}

}  // namespace

void mount_routes(httplib::Server& server, QuizService& service) {
  server.Post("/students", guarded([&service](const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req);
    const auto id = service.register_student(body.value("name", std::string()));
    send_json(res, 201, {{"student_id", id}, {"consent", true}});
  }));

  server.Get("/banks", guarded([&service](const httplib::Request&, httplib::Response& res) {
    json out = json::array();
    for (const auto& b : service.banks()) {
      out.push_back({{"bank_id", b.bank_id}, {"title", b.title}, {"item_count", b.item_count}});
    }
    send_json(res, 200, out);
  }));

  server.Post(R"(/banks/([^/]+)/question)", guarded([&service](const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req);
    const auto q = service.next_question(body.at("student_id").get<std::string>(), req.matches[1].str());
    send_json(res, 200,
              {{"item_id", q.item_id}, {"stem", q.stem}, {"answers", q.answers}, {"question_token", q.question_token}});
  }));

  server.Post(R"(/banks/([^/]+)/answer)", guarded([&service](const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req);
    const auto index = body.at("presented_index").get<long long>();
    if (index < 0) throw ServiceError(400, "presented_index must be non-negative");
    const auto r = service.submit_answer(body.at("student_id").get<std::string>(), req.matches[1].str(),
                                         body.at("question_token").get<std::string>(),
                                         static_cast<std::size_t>(index));
    send_json(res, 200, {{"correct", r.correct}, {"raw_score", r.raw_score}, {"grade", r.grade}});
  }));

  server.Get(R"(/banks/([^/]+)/grade)", guarded([&service](const httplib::Request& req, httplib::Response& res) {
    if (!req.has_param("student_id")) throw ServiceError(400, "missing student_id parameter");
    const auto g = service.get_grade(req.get_param_value("student_id"), req.matches[1].str());
    send_json(res, 200, {{"raw_score", g.raw_score}, {"grade", g.grade}, {"answered_count", g.answered_count}});
  }));

  server.Get("/admin/export", guarded([&service](const httplib::Request& req, httplib::Response& res) {
    const auto offset = req.has_param("offset") ? std::stoull(req.get_param_value("offset")) : 0ULL;
    const auto limit = req.has_param("limit") ? std::stoull(req.get_param_value("limit")) : 0ULL;
    std::ostringstream out;
    service.export_log(out, offset, limit);
    res.status = 200;
    res.set_content(out.str(), "application/x-ndjson");
  }));
}

}  // namespace quiz::service
