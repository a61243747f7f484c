#ifndef CPBO_ENGINE_HISTORY_HPP
#define CPBO_ENGINE_HISTORY_HPP

#include "cpbo/core/types.hpp"

#include <json.hpp>

#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cpbo::engine {

enum class Winner { i, j };

inline const char* to_string(Winner w) { return w == Winner::i ? "i" : "j"; }

inline Winner parse_winner(const std::string& s) {
  if (s == "i") return Winner::i;
  if (s == "j") return Winner::j;
  throw std::invalid_argument("winner must be \"i\" or \"j\", got \"" + s + "\"");
}

/// One completed iteration: the proposed pair, the choice, both constraint values.
struct IterationRecord {
  int n = 0;
  ParamVector x_i;
  ParamVector x_j;
  Winner winner = Winner::i;
  double c_i = 0.0;
  double c_j = 0.0;
  bool auto_won = false;
};

struct History {
  std::vector<IterationRecord> records;
  std::vector<ParamVector> warm_inputs;
  std::vector<double> warm_values;
};

inline nlohmann::json vector_to_json(const Vector& v) {
  return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Vector vector_from_json(const nlohmann::json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

inline nlohmann::json to_json(const IterationRecord& r) {
  return {{"n", r.n},         {"x_i", vector_to_json(r.x_i)}, {"x_j", vector_to_json(r.x_j)},
          {"winner", to_string(r.winner)}, {"c_i", r.c_i}, {"c_j", r.c_j}, {"auto_won", r.auto_won}};
}

inline IterationRecord record_from_json(const nlohmann::json& j) {
  IterationRecord r;
  r.n = j.at("n").get<int>();
  r.x_i = vector_from_json(j.at("x_i"));
  r.x_j = vector_from_json(j.at("x_j"));
  r.winner = parse_winner(j.at("winner").get<std::string>());
  r.c_i = j.at("c_i").get<double>();
  r.c_j = j.at("c_j").get<double>();
  r.auto_won = j.at("auto_won").get<bool>();
  return r;
}

/// One JSON object per line, in iteration order.
inline void write_jsonl(std::ostream& os, const std::vector<IterationRecord>& records) {
  for (const auto& r : records) os << to_json(r).dump() << '\n';
}

inline std::string to_jsonl(const std::vector<IterationRecord>& records) {
  std::ostringstream os;
  write_jsonl(os, records);
  return os.str();
}

inline std::vector<IterationRecord> read_jsonl(std::istream& is) {
  std::vector<IterationRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(record_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

}  // namespace cpbo::engine

#endif
