#ifndef CPBO_SERVICE_SESSION_HPP
#define CPBO_SERVICE_SESSION_HPP

#include "cpbo/acq/eubo.hpp"
#include "cpbo/engine/engine.hpp"
#include "cpbo/service/design_space.hpp"
#include "cpbo/service/errors.hpp"

#include <json.hpp>

#include <cctype>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>

namespace cpbo::service {

using nlohmann::json;

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// FNV-1a, so nonces do not depend on the standard library's hash.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) h = (h ^ ch) * 0x100000001b3ULL;
  return h;
}

struct SessionOptions {
  DesignSpace space = banner_colors();
  int budget = 50;
  int warm_points = 200;
  std::uint64_t seed = 0;

  void validate() const {
    space.validate();
    if (budget < 1) throw std::invalid_argument("budget must be at least 1");
    if (warm_points < 0) throw std::invalid_argument("warm_points must be >= 0");
  }
};

/// One interactive run. Not thread-safe on its own; callers hold mutex().
class Session {
 public:
  Session(std::string id, SessionOptions opts) : id_(std::move(id)), opts_(std::move(opts)) {
    opts_.validate();
    created_ = updated_ = utc_timestamp();
    engine_ = std::make_unique<engine::Engine>(engine_config());
    engine_->warm_start(constraint_on_unit(), opts_.warm_points, opts_.seed);
    engine_->propose();
  }

  const std::string& id() const { return id_; }
  const SessionOptions& options() const { return opts_; }
  const engine::Engine& engine() const { return *engine_; }
  bool completed() const { return engine_->iteration() >= opts_.budget; }
  std::mutex& mutex() { return mutex_; }

  /// The nonce of the pending pair; distinct per session and iteration.
  std::string nonce() const {
    const int n = engine_->iteration() + 1;
    return hex64(mix_seed(mix_seed(opts_.seed, fnv1a(id_)), 0x6e6f6e6365ULL + n)) + "-" +
           std::to_string(n);
  }

  /// Marginal probability that x satisfies the constraint under the current surrogate.
  double feasibility_probability(const ParamVector& x) const {
    const gp::GPModel* c = engine_->constraint_model();
    double mu = 0.0, var = 0.0;
    c->predict_marginal(x, mu, var);
    return acq::feasibility_factor(mu, std::sqrt(var), opts_.space.lambda);
  }

  json pair_payload() const {
    if (completed()) throw conflict_error("session_completed", "session " + id_ + " is completed");
    const auto& [xi, xj] = *engine_->pending();
    const double pi = feasibility_probability(xi);
    const double pj = feasibility_probability(xj);
    return {{"session_id", id_},
            {"status", "active"},
            {"nonce", nonce()},
            {"iteration", engine_->iteration() + 1},
            {"budget", opts_.budget},
            {"render_template", opts_.space.render_template},
            {"candidates",
             json::array({{{"side", "i"}, {"params", opts_.space.params_json(opts_.space.to_native(xi))},
                           {"feasibility_probability", pi}},
                          {{"side", "j"}, {"params", opts_.space.params_json(opts_.space.to_native(xj))},
                           {"feasibility_probability", pj}}})},
            {"feasibility_probability", pi * pj}};
  }

  json status_payload() const {
    return {{"session_id", id_},
            {"status", completed() ? "completed" : "active"},
            {"completed_choices", engine_->iteration()},
            {"budget", opts_.budget},
            {"created", created_},
            {"updated", updated_}};
  }

  json create_payload() const {
    json j = status_payload();
    j["warm_points"] = opts_.warm_points;
    j["seed"] = opts_.seed;
    j["space"] = to_json(opts_.space);
    j["pair"] = pair_payload();
    return j;
  }

  /// Applies a choice for the pending pair. Re-sending the last accepted
  /// nonce with the same winner returns the stored response unchanged.
  json submit(const std::string& nonce_in, engine::Winner winner) {
    if (last_ && last_->nonce == nonce_in) {
      if (last_->winner != winner)
        throw conflict_error("nonce_conflict", "nonce " + nonce_in + " was already answered with a different winner");
      return last_->response;
    }
    if (completed()) throw conflict_error("session_completed", "session " + id_ + " is completed");
    if (nonce_in != nonce()) throw conflict_error("stale_nonce", "nonce " + nonce_in + " does not match the pending pair");

    const auto [xi, xj] = *engine_->pending();
    const double ci = opts_.space.constraint_value(opts_.space.to_native(xi));
    const double cj = opts_.space.constraint_value(opts_.space.to_native(xj));
    engine_->apply_feedback(winner, ci, cj);
    if (!completed()) engine_->propose();
    updated_ = utc_timestamp();

    json response = status_payload();
    response["pair"] = completed() ? json(nullptr) : pair_payload();
    last_ = LastSubmission{nonce_in, winner, response};
    return response;
  }

  json best_payload() const {
    json j = {{"session_id", id_}, {"render_template", opts_.space.render_template}};
    const auto inc = engine_->incumbent();
    if (!inc) {
      j["best"] = nullptr;
    } else {
      j["best"] = {{"params", opts_.space.params_json(opts_.space.to_native(inc->x))},
                   {"posterior_mean", inc->posterior_mean}};
    }
    return j;
  }

  json history_payload() const {
    json records = json::array();
    for (const auto& r : engine_->history().records) {
      json rec = engine::to_json(r);
      rec["params_i"] = opts_.space.params_json(opts_.space.to_native(r.x_i));
      rec["params_j"] = opts_.space.params_json(opts_.space.to_native(r.x_j));
      records.push_back(std::move(rec));
    }
    return {{"session_id", id_}, {"records", records}, {"jsonl", engine::to_jsonl(engine_->history().records)}};
  }

  /// Everything needed to rebuild the session by replay.
  json snapshot() const {
    const auto& h = engine_->history();
    json warm_inputs = json::array();
    for (const auto& x : h.warm_inputs) warm_inputs.push_back(engine::vector_to_json(x));
    json records = json::array();
    for (const auto& r : h.records) records.push_back(engine::to_json(r));
    json j = {{"version", 1},
              {"id", id_},
              {"space", to_json(opts_.space)},
              {"budget", opts_.budget},
              {"warm_points", opts_.warm_points},
              {"seed", opts_.seed},
              {"created", created_},
              {"updated", updated_},
              {"warm_inputs", warm_inputs},
              {"warm_values", h.warm_values},
              {"records", records},
              {"pending", nullptr},
              {"last_submission", nullptr}};
    if (const auto& p = engine_->pending())
      j["pending"] = {{"nonce", nonce()}, {"x_i", engine::vector_to_json(p->first)},
                      {"x_j", engine::vector_to_json(p->second)}};
    if (last_)
      j["last_submission"] = {{"nonce", last_->nonce}, {"winner", engine::to_string(last_->winner)},
                              {"response", last_->response}};
    return j;
  }

  /// Rebuilds a session from snapshot(), checking that replay regenerates
  /// the persisted pending pair.
  static std::unique_ptr<Session> restore(const json& j) {
    std::unique_ptr<Session> s(new Session());
    s->id_ = j.at("id").get<std::string>();
    s->opts_.space = design_space_from_json(j.at("space"));
    s->opts_.budget = j.at("budget").get<int>();
    s->opts_.warm_points = j.at("warm_points").get<int>();
    s->opts_.seed = j.at("seed").get<std::uint64_t>();
    s->opts_.validate();
    s->created_ = j.at("created").get<std::string>();
    s->updated_ = j.at("updated").get<std::string>();
    engine::WarmStartData warm;
    for (const auto& x : j.at("warm_inputs")) warm.inputs.push_back(engine::vector_from_json(x));
    warm.values = j.at("warm_values").get<std::vector<double>>();
    std::vector<engine::IterationRecord> records;
    for (const auto& r : j.at("records")) records.push_back(engine::record_from_json(r));
    s->engine_ = std::make_unique<engine::Engine>(engine::Engine::replay(s->engine_config(), warm, records));
    if (!s->completed()) {
      const auto [a, b] = s->engine_->propose();
      const auto& p = j.at("pending");
      if (p.is_null() || engine::vector_from_json(p.at("x_i")) != a || engine::vector_from_json(p.at("x_j")) != b ||
          p.at("nonce").get<std::string>() != s->nonce())
        throw std::runtime_error("snapshot for session " + s->id_ + " does not reproduce its pending pair");
    }
    if (const auto& l = j.at("last_submission"); !l.is_null())
      s->last_ = LastSubmission{l.at("nonce").get<std::string>(),
                                engine::parse_winner(l.at("winner").get<std::string>()), l.at("response")};
    return s;
  }

 private:
  struct LastSubmission {
    std::string nonce;
    engine::Winner winner;
    json response;
  };

  Session() = default;

  engine::EngineConfig engine_config() const {
    engine::EngineConfig cfg;
    cfg.dims = opts_.space.dims();
    cfg.policy = engine::Policy::euboc;
    cfg.lambda = opts_.space.lambda;
    cfg.seed = opts_.seed;
    return cfg;
  }

  engine::ConstraintFunction constraint_on_unit() const {
    return [space = opts_.space](const ParamVector& u) { return space.constraint_value(space.to_native(u)); };
  }

  std::string id_;
  SessionOptions opts_;
  std::string created_;
  std::string updated_;
  std::unique_ptr<engine::Engine> engine_;
  std::optional<LastSubmission> last_;
  std::mutex mutex_;
};

/// Writes text to path through a temporary file and a rename.
inline void atomic_write(const std::filesystem::path& path, const std::string& text) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + tmp);
    os << text;
    os.flush();
    if (!os) throw std::runtime_error("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

/// Sessions in memory, each backed by one JSON snapshot in the data directory.
class SessionStore {
 public:
  explicit SessionStore(std::filesystem::path data_dir, int default_budget = 50)
      : dir_(std::move(data_dir)), default_budget_(default_budget) {
    if (default_budget_ < 1) throw std::invalid_argument("default budget must be at least 1");
    std::filesystem::create_directories(dir_);
  }

  int default_budget() const { return default_budget_; }
  const std::filesystem::path& data_dir() const { return dir_; }

  /// Creates, persists and registers a session; returns the creation payload.
  json create(const SessionOptions& opts) {
    opts.validate();
    auto session = std::make_shared<Session>(new_id(), opts);
    const json payload = session->create_payload();
    persist(*session);
    std::lock_guard lock(mutex_);
    sessions_.emplace(session->id(), session);
    return payload;
  }

  /// Runs fn(session) while holding that session's mutex, loading it from
  /// disk first if this process has not seen it yet.
  template <class F>
  auto with_session(const std::string& id, F&& fn) {
    auto session = find(id);
    std::lock_guard lock(session->mutex());
    return fn(*session);
  }

  json submit(const std::string& id, const std::string& nonce, engine::Winner winner) {
    return with_session(id, [&](Session& s) {
      json response = s.submit(nonce, winner);
      persist(s);
      return response;
    });
  }

  std::filesystem::path snapshot_path(const std::string& id) const { return dir_ / (id + ".json"); }

 private:
  static bool valid_id(const std::string& id) {
    if (id.empty() || id.size() > 64) return false;
    for (char ch : id)
      if (!std::isxdigit(static_cast<unsigned char>(ch))) return false;
    return true;
  }

  std::string new_id() {
    std::random_device rd;
    std::string id;
    do {
      const std::uint64_t a = (static_cast<std::uint64_t>(rd()) << 32) | rd();
      const std::uint64_t b = (static_cast<std::uint64_t>(rd()) << 32) | rd();
      id = hex64(a) + hex64(b);
    } while (std::filesystem::exists(snapshot_path(id)));
    return id;
  }

  void persist(const Session& s) { atomic_write(snapshot_path(s.id()), s.snapshot().dump(1)); }

  std::shared_ptr<Session> find(const std::string& id) {
    if (!valid_id(id)) throw not_found_error("unknown session " + id);
    {
      std::lock_guard lock(mutex_);
      if (auto it = sessions_.find(id); it != sessions_.end()) return it->second;
    }
    const auto path = snapshot_path(id);
    if (!std::filesystem::exists(path)) throw not_found_error("unknown session " + id);
    std::ifstream is(path);
    std::shared_ptr<Session> loaded = Session::restore(json::parse(is));
    std::lock_guard lock(mutex_);
    return sessions_.emplace(id, std::move(loaded)).first->second;
  }

  std::filesystem::path dir_;
  int default_budget_;
  std::mutex mutex_;
  std::unordered_map<std::string, std::shared_ptr<Session>> sessions_;
};

}  // namespace cpbo::service

#endif
