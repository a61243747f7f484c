#ifndef CPBO_SERVICE_HTTP_HPP
#define CPBO_SERVICE_HTTP_HPP

#include "cpbo/service/session.hpp"

#include <httplib.h>
#include <json.hpp>

#include <functional>
#include <string>

namespace cpbo::service {

inline void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json; charset=utf-8");
}

inline void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
  send_json(res, status, {{"code", code}, {"message", message}});
}

/// Maps exceptions from a handler onto {code, message} error bodies.
inline void guarded(httplib::Response& res, const std::function<void()>& body) {
  try {
    body();
  } catch (const service_error& e) {
    send_error(res, e.status(), e.code(), e.what());
  } catch (const json::exception& e) {
    send_error(res, 400, "invalid_request", e.what());
  } catch (const std::invalid_argument& e) {
    send_error(res, 400, "invalid_request", e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, "internal", e.what());
  }
}

inline json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  json j = json::parse(req.body);
  if (!j.is_object()) throw std::invalid_argument("request body must be a JSON object");
  return j;
}

inline SessionOptions session_options_from_json(const json& body, int default_budget) {
  SessionOptions opts;
  opts.space = design_space_from_json(body.value("space", json::object()));
  opts.budget = body.value("budget", default_budget);
  opts.warm_points = body.value("warm_points", 200);
  opts.seed = body.value("seed", std::uint64_t{0});
  return opts;
}

/// Registers the session API on server. The store must outlive it.
inline void install_routes(httplib::Server& server, SessionStore& store) {
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Headers", "Content-Type"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, {{"status", "ok"}});
  });

  server.Post("/sessions", [&store](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = parse_body(req);
      send_json(res, 201, store.create(session_options_from_json(body, store.default_budget())));
    });
  });

  server.Get(R"(/sessions/([^/]+)/pair)", [&store](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      send_json(res, 200, store.with_session(req.matches[1], [](Session& s) { return s.pair_payload(); }));
    });
  });

  server.Post(R"(/sessions/([^/]+)/choice)", [&store](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = parse_body(req);
      const auto nonce = body.at("nonce").get<std::string>();
      const auto winner = engine::parse_winner(body.at("winner").get<std::string>());
      send_json(res, 200, store.submit(req.matches[1], nonce, winner));
    });
  });

  server.Get(R"(/sessions/([^/]+)/best)", [&store](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      send_json(res, 200, store.with_session(req.matches[1], [](Session& s) { return s.best_payload(); }));
    });
  });

  server.Get(R"(/sessions/([^/]+)/history)", [&store](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      send_json(res, 200, store.with_session(req.matches[1], [](Session& s) { return s.history_payload(); }));
    });
  });

  server.Get(R"(/sessions/([^/]+))", [&store](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      send_json(res, 200, store.with_session(req.matches[1], [](Session& s) { return s.status_payload(); }));
    });
  });

  server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) send_error(res, res.status, res.status == 404 ? "not_found" : "error", "no such route");
  });
}

}  // namespace cpbo::service

#endif
