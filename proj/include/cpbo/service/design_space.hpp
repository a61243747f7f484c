#ifndef CPBO_SERVICE_DESIGN_SPACE_HPP
#define CPBO_SERVICE_DESIGN_SPACE_HPP

#include "cpbo/core/types.hpp"
#include "cpbo/service/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace cpbo::service {

/// sRGB component in [0,1] to linear light.
inline double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

inline double relative_luminance(double r, double g, double b) {
  return 0.2126 * srgb_to_linear(r) + 0.7152 * srgb_to_linear(g) + 0.0722 * srgb_to_linear(b);
}

/// Contrast ratio between the foreground (params 0..2) and background (3..5) colors.
inline double contrast_ratio(const Vector& params) {
  if (params.size() != 6) throw std::invalid_argument("contrast: expected 6 parameters");
  const double l1 = relative_luminance(params(0), params(1), params(2));
  const double l2 = relative_luminance(params(3), params(4), params(5));
  return (std::max(l1, l2) + 0.05) / (std::min(l1, l2) + 0.05);
}

/// A computable constraint over native parameters, satisfied when value >= lambda.
struct ConstraintEntry {
  std::function<double(const Vector&)> evaluate;
  double default_lambda = 0.0;
  Eigen::Index dims = 0;
};

inline std::map<std::string, ConstraintEntry>& constraint_registry() {
  static std::map<std::string, ConstraintEntry> registry{
      {"contrast", {contrast_ratio, 4.5, 6}},
  };
  return registry;
}

inline const ConstraintEntry& find_constraint(const std::string& id) {
  const auto& reg = constraint_registry();
  auto it = reg.find(id);
  if (it == reg.end()) throw not_found_error("unknown constraint \"" + id + "\"");
  return it->second;
}

struct Parameter {
  std::string name;
  std::string label;
  double lo = 0.0;
  double hi = 1.0;
};

/// Named, bounded parameters plus the template that renders them and the constraint on them.
struct DesignSpace {
  std::string render_template = "banner-colors";
  std::vector<Parameter> parameters;
  std::string constraint = "contrast";
  double lambda = 4.5;

  Eigen::Index dims() const { return static_cast<Eigen::Index>(parameters.size()); }

  void validate() const {
    if (parameters.empty()) throw std::invalid_argument("design space has no parameters");
    for (const auto& p : parameters) {
      if (p.name.empty()) throw std::invalid_argument("parameter without a name");
      if (!std::isfinite(p.lo) || !std::isfinite(p.hi) || !(p.lo < p.hi))
        throw std::invalid_argument("parameter \"" + p.name + "\" needs finite lo < hi");
    }
    for (std::size_t a = 0; a < parameters.size(); ++a)
      for (std::size_t b = a + 1; b < parameters.size(); ++b)
        if (parameters[a].name == parameters[b].name)
          throw std::invalid_argument("duplicate parameter \"" + parameters[a].name + "\"");
    if (!std::isfinite(lambda)) throw std::invalid_argument("lambda must be finite");
    const auto& entry = find_constraint(constraint);
    if (entry.dims != dims())
      throw std::invalid_argument("constraint \"" + constraint + "\" expects " + std::to_string(entry.dims) +
                                  " parameters");
  }

  Vector to_native(const Vector& u) const {
    Vector x(dims());
    for (Eigen::Index d = 0; d < dims(); ++d) {
      const auto& p = parameters[static_cast<std::size_t>(d)];
      x(d) = p.lo + (p.hi - p.lo) * u(d);
    }
    return x;
  }

  double constraint_value(const Vector& native) const { return find_constraint(constraint).evaluate(native); }

  nlohmann::json params_json(const Vector& native) const {
    nlohmann::json j = nlohmann::json::object();
    for (Eigen::Index d = 0; d < dims(); ++d) j[parameters[static_cast<std::size_t>(d)].name] = native(d);
    return j;
  }
};

/// Foreground and background sRGB colors as six parameters in [0,1].
inline DesignSpace banner_colors() {
  DesignSpace s;
  s.render_template = "banner-colors";
  s.parameters = {
      {"fg_r", "Foreground red", 0.0, 1.0},   {"fg_g", "Foreground green", 0.0, 1.0},
      {"fg_b", "Foreground blue", 0.0, 1.0},  {"bg_r", "Background red", 0.0, 1.0},
      {"bg_g", "Background green", 0.0, 1.0}, {"bg_b", "Background blue", 0.0, 1.0},
  };
  s.constraint = "contrast";
  s.lambda = 4.5;
  return s;
}

inline std::optional<DesignSpace> builtin_template(const std::string& id) {
  if (id == "banner-colors") return banner_colors();
  return std::nullopt;
}

inline nlohmann::json to_json(const DesignSpace& s) {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : s.parameters) params.push_back({{"name", p.name}, {"label", p.label}, {"lo", p.lo}, {"hi", p.hi}});
  return {{"template", s.render_template}, {"parameters", params}, {"constraint", s.constraint}, {"lambda", s.lambda}};
}

/// Reads a design space. Missing fields fall back to the named template, and
/// a missing lambda falls back to the constraint's default.
inline DesignSpace design_space_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("space must be an object");
  const std::string tmpl = j.value("template", std::string("banner-colors"));
  DesignSpace s;
  if (auto builtin = builtin_template(tmpl)) s = *builtin;
  s.render_template = tmpl;
  if (j.contains("parameters")) {
    s.parameters.clear();
    for (const auto& p : j.at("parameters")) {
      Parameter param;
      param.name = p.at("name").get<std::string>();
      param.label = p.value("label", param.name);
      param.lo = p.value("lo", 0.0);
      param.hi = p.value("hi", 1.0);
      s.parameters.push_back(param);
    }
  } else if (!builtin_template(tmpl)) {
    throw std::invalid_argument("template \"" + tmpl + "\" requires explicit parameters");
  }
  if (j.contains("constraint")) {
    s.constraint = j.at("constraint").get<std::string>();
    s.lambda = find_constraint(s.constraint).default_lambda;
  }
  if (j.contains("lambda")) s.lambda = j.at("lambda").get<double>();
  s.validate();
  return s;
}

}  // namespace cpbo::service

#endif
