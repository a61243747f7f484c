#ifndef CPBO_SERVICE_ERRORS_HPP
#define CPBO_SERVICE_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace cpbo::service {

/// An error with the HTTP status and machine-readable code it maps to.
class service_error : public std::runtime_error {
 public:
  service_error(int status, std::string code, const std::string& message)
      : std::runtime_error(message), status_(status), code_(std::move(code)) {}
  int status() const { return status_; }
  const std::string& code() const { return code_; }

 private:
  int status_;
  std::string code_;
};

class not_found_error : public service_error {
 public:
  explicit not_found_error(const std::string& message) : service_error(404, "not_found", message) {}
};

class conflict_error : public service_error {
 public:
  conflict_error(std::string code, const std::string& message) : service_error(409, std::move(code), message) {}
};

}  // namespace cpbo::service

#endif
