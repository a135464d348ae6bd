#pragma once

// JSONL serialization of offline datasets and held-out test sets.
//
// Line 1 is a header record {"header": {d_x, n_actions, T, tau,
// schedule_descriptor, seed}}; each further line is one record.

#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nsdpo/core.hpp"

namespace nsdpo {

namespace detail {

inline nlohmann::json vector_to_json(const Vector& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline Vector vector_from_json(const nlohmann::json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

inline nlohmann::json header_json(const EnvironmentSpec& env, int horizon,
                                  const nlohmann::json& schedule, std::uint64_t seed,
                                  const std::string& kind) {
  return {{"header",
           {{"kind", kind},
            {"d_x", env.context_dim},
            {"n_actions", env.num_actions},
            {"T", horizon},
            {"tau", env.tau},
            {"schedule_descriptor", schedule},
            {"seed", seed}}}};
}

struct Header {
  EnvironmentSpec env;
  int horizon = 0;
  nlohmann::json schedule;
  std::uint64_t seed = 0;
};

inline Header parse_header(std::istream& in, const std::string& expected_kind) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty JSONL stream: missing header");
  const auto j = nlohmann::json::parse(line);
  if (!j.contains("header")) throw std::runtime_error("first JSONL record is not a header");
  const auto& h = j.at("header");
  if (h.value("kind", expected_kind) != expected_kind) {
    throw std::runtime_error("JSONL header kind is '" + h.value("kind", std::string{}) +
                             "', expected '" + expected_kind + "'");
  }
  Header out;
  out.env.context_dim = h.at("d_x");
  out.env.num_actions = h.at("n_actions");
  out.env.tau = h.at("tau");
  out.horizon = h.at("T");
  out.schedule = h.value("schedule_descriptor", nlohmann::json{});
  out.seed = h.at("seed");
  return out;
}

}  // namespace detail

inline void write_dataset(std::ostream& out, const OfflineDataset& data) {
  out << detail::header_json(data.env, data.horizon, data.schedule, data.seed, "train").dump()
      << '\n';
  for (const auto& p : data.points) {
    nlohmann::json j{{"x", detail::vector_to_json(p.x)},
                     {"winner", p.winner},
                     {"loser", p.loser},
                     {"t", p.t},
                     {"label", p.label}};
    out << j.dump() << '\n';
  }
}

inline OfflineDataset read_dataset(std::istream& in) {
  const auto header = detail::parse_header(in, "train");
  OfflineDataset data;
  data.env = header.env;
  data.horizon = header.horizon;
  data.schedule = header.schedule;
  data.seed = header.seed;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    data.points.push_back(PreferenceDatapoint{detail::vector_from_json(j.at("x")),
                                              j.at("winner").get<ActionIndex>(),
                                              j.at("loser").get<ActionIndex>(), j.at("t").get<int>(),
                                              j.at("label").get<int>()});
  }
  data.validate();
  return data;
}

inline void write_test_set(std::ostream& out, const std::vector<TestPair>& rows,
                           const EnvironmentSpec& env, int horizon, const nlohmann::json& schedule,
                           std::uint64_t seed) {
  out << detail::header_json(env, horizon, schedule, seed, "test").dump() << '\n';
  for (const auto& r : rows) {
    nlohmann::json j{{"x", detail::vector_to_json(r.x)}, {"a1", r.a1}, {"a2", r.a2}, {"p", r.p}};
    out << j.dump() << '\n';
  }
}

struct TestSetFile {
  EnvironmentSpec env;
  int horizon = 0;
  nlohmann::json schedule;
  std::uint64_t seed = 0;
  std::vector<TestPair> rows;
};

inline TestSetFile read_test_set(std::istream& in) {
  const auto header = detail::parse_header(in, "test");
  TestSetFile file{header.env, header.horizon, header.schedule, header.seed, {}};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    file.rows.push_back(TestPair{detail::vector_from_json(j.at("x")), j.at("a1").get<ActionIndex>(),
                                 j.at("a2").get<ActionIndex>(), j.at("p").get<double>()});
  }
  return file;
}

inline void save_dataset(const std::string& path, const OfflineDataset& data) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_dataset(out, data);
}

inline OfflineDataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_dataset(in);
}

inline TestSetFile load_test_set(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_test_set(in);
}

}  // namespace nsdpo
