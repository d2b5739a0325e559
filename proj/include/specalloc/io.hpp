#pragma once

#include <cmath>
#include <cstddef>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "allocator.hpp"
#include "cost_model.hpp"
#include "markov.hpp"
#include "maxp.hpp"
#include "splice_sim.hpp"

namespace specalloc::io {

using json = nlohmann::json;

class io_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

inline double parse_number(const std::string& s, const std::string& where) {
  std::size_t used = 0;
  double x;
  try {
    x = std::stod(s, &used);
  } catch (const std::exception&) {
    throw io_error(where + ": '" + s + "' is not a number");
  }
  if (used != s.size()) throw io_error(where + ": '" + s + "' is not a number");
  return x;
}

// Non-empty lines that are not '#' comments, with 1-based line numbers.
inline std::vector<std::pair<std::size_t, std::string>> data_lines(const std::string& text) {
  std::vector<std::pair<std::size_t, std::string>> out;
  std::istringstream in(text);
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    out.emplace_back(no, line);
  }
  return out;
}

}  // namespace detail

/// Benchmark CSV with header `w,t_seconds`.
inline std::vector<BenchmarkSample> parse_benchmark_csv(const std::string& text,
                                                        const std::string& name = "benchmark") {
  const auto lines = detail::data_lines(text);
  if (lines.empty()) throw io_error(name + ": empty file");
  const auto header = detail::split(lines[0].second, ',');
  if (header.size() != 2 || header[0] != "w" || header[1] != "t_seconds")
    throw io_error(name + ": expected header 'w,t_seconds'");
  std::vector<BenchmarkSample> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto where = name + ":" + std::to_string(lines[i].first);
    const auto f = detail::split(lines[i].second, ',');
    if (f.size() != 2) throw io_error(where + ": expected two columns");
    out.push_back({detail::parse_number(f[0], where), detail::parse_number(f[1], where)});
  }
  return out;
}

inline std::vector<BenchmarkSample> read_benchmark_csv(const std::string& path) {
  return parse_benchmark_csv(read_file(path), path);
}

inline json model_to_json(const CostModel& m) {
  const auto& c = m.coefficients();
  return {{"a", c.a}, {"b", c.b}, {"d", c.d}, {"g", c.g}, {"h", c.h},
          {"w_lo", m.w_lo()}, {"w_max", m.w_max()}};
}

/// Rebuilds a model from `{a,b,d,g,h[,w_lo][,w_max]}`. A stored w_max must agree
/// with the coefficients.
inline CostModel model_from_json(const json& j) {
  CostCoefficients c{};
  try {
    c = {j.at("a").get<double>(), j.at("b").get<double>(), j.at("d").get<double>(),
         j.at("g").get<double>(), j.at("h").get<double>()};
  } catch (const json::exception& e) {
    throw io_error(std::string("model: ") + e.what());
  }
  CostModel m = j.contains("w_lo") ? CostModel::with_domain(c, j["w_lo"].get<double>())
                                   : CostModel(c);
  if (j.contains("w_max")) {
    const double w = j["w_max"].get<double>();
    if (std::fabs(w - m.w_max()) > 1e-6 * m.w_max())
      throw io_error("model: stored w_max " + std::to_string(w) +
                     " does not match the coefficients (" + std::to_string(m.w_max()) + ")");
  }
  return m;
}

inline CostModel read_model(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw io_error(path + ": " + e.what());
  }
  return model_from_json(j);
}

/// Probabilities as a JSON array or one value per line; returned sorted descending.
inline TaskProbabilityDistribution parse_probabilities(const std::string& text,
                                                       const std::string& name = "probabilities") {
  std::vector<double> p;
  const auto body = detail::trim(text);
  if (!body.empty() && body[0] == '[') {
    try {
      p = json::parse(body).get<std::vector<double>>();
    } catch (const json::exception& e) {
      throw io_error(name + ": " + e.what());
    }
  } else {
    for (const auto& [no, line] : detail::data_lines(text))
      p.push_back(detail::parse_number(line, name + ":" + std::to_string(no)));
  }
  if (p.empty()) throw io_error(name + ": no probabilities");
  for (std::size_t i = 0; i < p.size(); ++i)
    if (!(p[i] > 0.0 && p[i] <= 1.0))
      throw io_error(name + ": value " + std::to_string(p[i]) + " at position " +
                     std::to_string(i + 1) + " is outside (0, 1]");
  return TaskProbabilityDistribution::from_unsorted(std::move(p));
}

inline TaskProbabilityDistribution read_probabilities(const std::string& path) {
  return parse_probabilities(read_file(path), path);
}

/// Dense transition matrix, one comma-separated row per line.
inline MarkovChain parse_chain_csv(const std::string& text, const std::string& name = "chain") {
  std::vector<double> m;
  std::size_t n = 0;
  for (const auto& [no, line] : detail::data_lines(text)) {
    const auto where = name + ":" + std::to_string(no);
    const auto f = detail::split(line, ',');
    if (n == 0) n = f.size();
    if (f.size() != n) throw io_error(where + ": row has " + std::to_string(f.size()) +
                                      " entries, expected " + std::to_string(n));
    for (const auto& x : f) m.push_back(detail::parse_number(x, where));
  }
  if (n == 0) throw io_error(name + ": empty matrix");
  if (m.size() != n * n) throw io_error(name + ": matrix is not square");
  return MarkovChain::dense(n, std::move(m));
}

inline MarkovChain read_chain_csv(const std::string& path) {
  return parse_chain_csv(read_file(path), path);
}

inline json allocation_to_json(const TaskProbabilityDistribution& dist, const Allocation& a,
                               double budget) {
  json tasks = json::array();
  for (std::size_t i = 0; i < a.m_star; ++i) tasks.push_back({{"p", dist[i]}, {"w", a.w[i]}});
  return {{"budget", budget},
          {"m_star", a.m_star},
          {"lambda", a.lambda},
          {"expected_throughput", a.expected_throughput},
          {"total_w", a.total()},
          {"tasks", tasks}};
}

inline json table_to_json(const TaskProbabilityTable& t) {
  json entries = json::array();
  for (const auto& e : t.entries)
    entries.push_back({{"state", e.state}, {"ordinal", e.ordinal}, {"p", e.p}});
  return {{"horizon", t.horizon}, {"entries", entries}};
}

/// Fixed formatting so equal inputs give byte-identical files.
inline void write_series_csv(std::ostream& out, const std::vector<MetricPoint>& series) {
  out << "clock_s,spliced\n";
  out << std::setprecision(17);
  for (const auto& m : series) out << m.clock << ',' << m.spliced << '\n';
}

inline void write_mean_csv(std::ostream& out, const std::vector<double>& times,
                           const std::vector<double>& mean) {
  out << "clock_s,spliced\n";
  out << std::setprecision(17);
  for (std::size_t i = 0; i < times.size(); ++i) out << times[i] << ',' << mean[i] << '\n';
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot write " + path);
  out << text;
  if (!out) throw io_error("write failed: " + path);
}

}  // namespace specalloc::io
