#include "cpbo/service/http.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <cstdlib>
#include <iostream>
#include <string>

namespace {

httplib::Server* g_server = nullptr;

void handle_signal(int) {
  if (g_server) g_server->stop();
}

std::string env_or(const char* name, std::string fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interactive constrained preferential BO session service"};
  std::string listen = env_or("CPBO_LISTEN", "127.0.0.1:8080");
  std::string data_dir = env_or("CPBO_DATA_DIR", "./cpbo-sessions");
  int budget = 50;
  try {
    budget = std::stoi(env_or("CPBO_BUDGET", "50"));
  } catch (const std::exception&) {
    std::cerr << "cpbo_serve: CPBO_BUDGET must be an integer\n";
    return 2;
  }
  app.add_option("--listen", listen, "host:port to bind (env CPBO_LISTEN)")->capture_default_str();
  app.add_option("--data-dir", data_dir, "snapshot directory (env CPBO_DATA_DIR)")->capture_default_str();
  app.add_option("--budget", budget, "default choices per session (env CPBO_BUDGET)")->capture_default_str();
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const auto colon = listen.rfind(':');
  int port = 0;
  try {
    if (colon == std::string::npos) throw std::invalid_argument("missing port");
    port = std::stoi(listen.substr(colon + 1));
    if (port < 0 || port > 65535) throw std::invalid_argument("port out of range");
  } catch (const std::exception&) {
    std::cerr << "cpbo_serve: --listen expects host:port, got \"" << listen << "\"\n";
    return 2;
  }
  const std::string host = listen.substr(0, colon);

  try {
    cpbo::service::SessionStore store(data_dir, budget);
    httplib::Server server;
    cpbo::service::install_routes(server, store);
    g_server = &server;
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    if (!server.bind_to_port(host, port)) {
      std::cerr << "cpbo_serve: cannot bind " << listen << '\n';
      return 1;
    }
    std::cerr << "cpbo_serve: listening on " << listen << ", data in " << data_dir << '\n';
    server.listen_after_bind();
  } catch (const std::exception& e) {
    std::cerr << "cpbo_serve: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
