#pragma once

// Drift recipes over user-supplied pairwise preference tables. Each table row
// carries the preference probability of response a over response b under two
// sources; the recipes assign time steps and labels that move from source 0
// to source 1 either gradually or at a change point.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nsdpo/core.hpp"
#include "nsdpo/math.hpp"

namespace nsdpo {

class TableFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PreferenceRow {
  std::string item_id;
  std::string prompt_key;
  std::string response_a_key;
  std::string response_b_key;
  double p_a_source_0 = 0.5;
  double p_a_source_1 = 0.5;
};

struct PreferenceTable {
  std::vector<PreferenceRow> rows;

  std::size_t size() const { return rows.size(); }
  bool empty() const { return rows.empty(); }

  void validate() const {
    for (const auto& r : rows) {
      if (!(r.p_a_source_0 >= 0.0 && r.p_a_source_0 <= 1.0 && r.p_a_source_1 >= 0.0 &&
            r.p_a_source_1 <= 1.0)) {
        throw TableFormatError("row '" + r.item_id + "': probabilities must lie in [0, 1]");
      }
    }
  }
};

struct TimedPreferenceRow {
  std::string item_id;
  int t = 1;
  int label = 0;
  double p_a_at_t = 0.5;

  bool operator==(const TimedPreferenceRow&) const = default;
};

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline constexpr const char* kPreferenceTableHeader =
    "item_id,prompt_key,response_a_key,response_b_key,p_a_source_0,p_a_source_1";

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  if (quoted) throw TableFormatError("line " + std::to_string(line_no) + ": unterminated quote");
  fields.push_back(std::move(field));
  return fields;
}

inline std::string quote_csv(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (const char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

inline double parse_probability(const std::string& text, std::size_t line_no) {
  std::size_t used = 0;
  double value = 0.0;
  try {
    value = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) {
    throw TableFormatError("line " + std::to_string(line_no) + ": '" + text + "' is not a number");
  }
  return value;
}

inline std::mt19937_64 table_stream(std::uint64_t seed, Stream stream) { return substream(seed, stream); }

}  // namespace detail

inline PreferenceTable read_preference_table(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw TableFormatError("empty table: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kPreferenceTableHeader) {
    throw TableFormatError(std::string("unexpected header; expected '") + kPreferenceTableHeader + "'");
  }
  PreferenceTable table;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_csv_line(line, line_no);
    if (f.size() != 6) {
      throw TableFormatError("line " + std::to_string(line_no) + ": expected 6 fields, got " +
                             std::to_string(f.size()));
    }
    table.rows.push_back(PreferenceRow{f[0], f[1], f[2], f[3], detail::parse_probability(f[4], line_no),
                                       detail::parse_probability(f[5], line_no)});
  }
  table.validate();
  return table;
}

inline void write_preference_table(std::ostream& out, const PreferenceTable& table) {
  out << kPreferenceTableHeader << '\n';
  for (const auto& r : table.rows) {
    out << detail::quote_csv(r.item_id) << ',' << detail::quote_csv(r.prompt_key) << ','
        << detail::quote_csv(r.response_a_key) << ',' << detail::quote_csv(r.response_b_key) << ','
        << format_double(r.p_a_source_0) << ',' << format_double(r.p_a_source_1) << '\n';
  }
}

inline PreferenceTable load_preference_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_preference_table(in);
}

// ---------------------------------------------------------------------------
// TimedPreferenceRow JSONL
// ---------------------------------------------------------------------------

inline void write_timed_rows(std::ostream& out, const std::vector<TimedPreferenceRow>& rows) {
  for (const auto& r : rows) {
    out << nlohmann::json{{"item_id", r.item_id}, {"t", r.t}, {"label", r.label}, {"p_a_at_t", r.p_a_at_t}}
               .dump()
        << '\n';
  }
}

inline std::vector<TimedPreferenceRow> read_timed_rows(std::istream& in) {
  std::vector<TimedPreferenceRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    TimedPreferenceRow r{j.at("item_id").get<std::string>(), j.at("t").get<int>(),
                         j.at("label").get<int>(), j.at("p_a_at_t").get<double>()};
    if (r.label != 0 && r.label != 1) throw TableFormatError("label must be 0 or 1");
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Plackett-Luce to pairwise
// ---------------------------------------------------------------------------

struct PairwiseProbability {
  std::size_t a = 0;
  std::size_t b = 0;
  double p = 0.5;  // p(a > b)
};

struct PairwiseTable {
  std::vector<PairwiseProbability> pairs;  // every ordered pair of responses with positive mass
  std::vector<std::string> warnings;
};

/// p(a > b) = s(log p_a - log p_b) = p_a / (p_a + p_b) for every ordered pair.
/// The larger of each unordered pair is computed directly and the smaller as
/// its complement, so p(a > b) + p(b > a) == 1 holds exactly.
inline PairwiseTable plackett_luce_to_binary(const std::vector<double>& probabilities) {
  double total = 0.0;
  for (const double p : probabilities) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("probabilities must lie in [0, 1]");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw std::invalid_argument("probabilities must sum to 1 within 1e-6 (sum = " + std::to_string(total) +
                                ")");
  }
  PairwiseTable out;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    if (probabilities[i] == 0.0) {
      out.warnings.push_back("response " + std::to_string(i) +
                             " has zero probability; its pairs are excluded");
    }
  }
  const std::size_t k = probabilities.size();
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = 0; b < k; ++b) {
      if (a == b || probabilities[a] == 0.0 || probabilities[b] == 0.0) continue;
      const double pa = probabilities[a];
      const double pb = probabilities[b];
      const double hi = std::max(pa, pb) / (pa + pb);
      const bool a_is_larger = pa > pb || (pa == pb && a < b);
      out.pairs.push_back(PairwiseProbability{a, b, a_is_larger ? hi : 1.0 - hi});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Filters, splits, subsampling
// ---------------------------------------------------------------------------

/// Keeps rows with |p_a_source_0 - p_a_source_1| >= threshold.
inline PreferenceTable min_divergence_filter(const PreferenceTable& table, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw std::invalid_argument("threshold must lie in [0, 1]");
  PreferenceTable out;
  for (const auto& r : table.rows) {
    if (std::abs(r.p_a_source_0 - r.p_a_source_1) >= threshold) out.rows.push_back(r);
  }
  return out;
}

struct TableSplit {
  PreferenceTable train;
  PreferenceTable test;
};

/// Splits by prompt so train and test share no prompt_key. The test side
/// receives round(test_fraction * #prompts) prompts, at least one when the
/// fraction is positive and there are two or more prompts.
inline TableSplit split_by_prompt(const PreferenceTable& table, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw std::invalid_argument("test_fraction must lie in [0, 1)");
  }
  std::vector<std::string> prompts;
  std::set<std::string> seen;
  for (const auto& r : table.rows) {
    if (seen.insert(r.prompt_key).second) prompts.push_back(r.prompt_key);
  }
  auto rng = detail::table_stream(seed, Stream::kTableSplit);
  std::shuffle(prompts.begin(), prompts.end(), rng);
  auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(prompts.size())));
  if (test_fraction > 0.0 && n_test == 0 && prompts.size() >= 2) n_test = 1;
  if (n_test >= prompts.size() && !prompts.empty()) n_test = prompts.size() - 1;
  const std::set<std::string> test_prompts(prompts.begin(), prompts.begin() + static_cast<long>(n_test));
  TableSplit out;
  for (const auto& r : table.rows) {
    (test_prompts.count(r.prompt_key) ? out.test : out.train).rows.push_back(r);
  }
  return out;
}

/// Uniformly chosen subset of `count` rows, kept in table order.
inline PreferenceTable subsample_rows(const PreferenceTable& table, std::size_t count, std::uint64_t seed) {
  if (count >= table.size()) return table;
  std::vector<std::size_t> index(table.size());
  for (std::size_t i = 0; i < index.size(); ++i) index[i] = i;
  auto rng = detail::table_stream(seed, Stream::kTableSubsample);
  std::shuffle(index.begin(), index.end(), rng);
  index.resize(count);
  std::sort(index.begin(), index.end());
  PreferenceTable out;
  for (const auto i : index) out.rows.push_back(table.rows[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Recipes
// ---------------------------------------------------------------------------

/// Source 0 for t < t_start, linear blend p0 + (t - t_start) / (t_end - t_start) (p1 - p0)
/// on [t_start, t_end), source 1 for t >= t_end.
inline double blended_probability(double p0, double p1, int t, int t_start, int t_end) {
  if (t < t_start) return p0;
  if (t >= t_end) return p1;
  const double u = static_cast<double>(t - t_start) / static_cast<double>(t_end - t_start);
  return p0 + u * (p1 - p0);
}

/// Hard label of a source: response a wins iff p > 1/2.
inline int hard_label(double p) { return p > 0.5 ? 1 : 0; }

inline bool sources_disagree(const PreferenceRow& r) {
  return hard_label(r.p_a_source_0) != hard_label(r.p_a_source_1);
}

/// Each row gets a uniform t in [1, T-1], p_a_at_t from the piecewise blend
/// and a Bernoulli(p_a_at_t) label.
inline std::vector<TimedPreferenceRow> gradual_interpolation(const PreferenceTable& table, int horizon,
                                                             int t_start, int t_end, std::uint64_t seed) {
  table.validate();
  if (horizon < 2) throw std::invalid_argument("T must be >= 2");
  if (!(1 <= t_start && t_start < t_end && t_end <= horizon)) {
    throw std::invalid_argument("need 1 <= t_start < t_end <= T");
  }
  auto time_rng = detail::table_stream(seed, Stream::kTableTimes);
  auto label_rng = detail::table_stream(seed, Stream::kTableLabels);
  std::uniform_int_distribution<int> step(1, horizon - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<TimedPreferenceRow> out;
  out.reserve(table.size());
  for (const auto& r : table.rows) {
    const int t = step(time_rng);
    const double p = blended_probability(r.p_a_source_0, r.p_a_source_1, t, t_start, t_end);
    out.push_back(TimedPreferenceRow{r.item_id, t, unit(label_rng) < p ? 1 : 0, p});
  }
  return out;
}

/// Test rows at t = T under the terminal probabilities, labels sampled.
inline std::vector<TimedPreferenceRow> gradual_test_rows(const PreferenceTable& table, int horizon,
                                                         std::uint64_t seed) {
  auto label_rng = detail::table_stream(seed ^ 0x9e3779b97f4a7c15ULL, Stream::kTableLabels);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<TimedPreferenceRow> out;
  for (const auto& r : table.rows) {
    out.push_back(TimedPreferenceRow{r.item_id, horizon, unit(label_rng) < r.p_a_source_1 ? 1 : 0,
                                     r.p_a_source_1});
  }
  return out;
}

/// Changepoints of the reference experiments at T = 101.
inline constexpr std::array<int, 3> kChangepointPresets{51, 66, 81};

struct ChangepointOptions {
  int horizon = 101;
  int t_cp = 66;
  double rho_diff = 0.9;
  std::optional<std::size_t> target_rows;  // maximal retained count when unset
  std::uint64_t seed = 0;
};

struct ChangepointResult {
  std::vector<TimedPreferenceRow> rows;
  std::size_t disagreeing = 0;  // retained rows whose source labels differ
  std::size_t agreeing = 0;

  double flip_fraction() const {
    const auto n = disagreeing + agreeing;
    return n == 0 ? 0.0 : static_cast<double>(disagreeing) / static_cast<double>(n);
  }
};

class InsufficientRowsError : public std::runtime_error {
 public:
  InsufficientRowsError(const std::string& what, double max_rho, std::size_t max_rows)
      : std::runtime_error(what), max_rho_(max_rho), max_rows_(max_rows) {}
  double achievable_rho() const { return max_rho_; }
  std::size_t achievable_rows() const { return max_rows_; }

 private:
  double max_rho_;
  std::size_t max_rows_;
};

namespace detail {

/// Disagreeing count for a retained total n at target fraction rho.
inline std::size_t disagreeing_quota(double rho, std::size_t n) {
  return static_cast<std::size_t>(std::llround(rho * static_cast<double>(n)));
}

/// Largest n with quota(n) <= disagree_available and n - quota(n) <= agree_available.
inline std::size_t max_retained(double rho, std::size_t disagree_available, std::size_t agree_available) {
  for (std::size_t n = disagree_available + agree_available; n > 0; --n) {
    const auto k = disagreeing_quota(rho, n);
    if (k <= disagree_available && n - k <= agree_available) return n;
  }
  return 0;
}

}  // namespace detail

/// Retains a subset of rows whose disagreeing fraction is round(rho n) / n,
/// assigns uniform t in [1, T-1], and labels each row by the hard label of
/// source 0 for t < t_cp and of source 1 for t >= t_cp.
inline ChangepointResult changepoint_assignment(const PreferenceTable& table, const ChangepointOptions& opt) {
  table.validate();
  if (opt.horizon < 2) throw std::invalid_argument("T must be >= 2");
  if (!(opt.t_cp >= 2 && opt.t_cp <= opt.horizon)) throw std::invalid_argument("t_cp must lie in [2, T]");
  if (!(opt.rho_diff >= 0.0 && opt.rho_diff <= 1.0)) throw std::invalid_argument("rho_diff must lie in [0, 1]");

  std::vector<std::size_t> disagree;
  std::vector<std::size_t> agree;
  for (std::size_t i = 0; i < table.size(); ++i) {
    (sources_disagree(table.rows[i]) ? disagree : agree).push_back(i);
  }

  std::size_t n = 0;
  if (opt.target_rows) {
    n = *opt.target_rows;
    const auto k = detail::disagreeing_quota(opt.rho_diff, n);
    if (k > disagree.size() || n - k > agree.size()) {
      const double max_rho = n == 0 ? 0.0 : std::min(1.0, static_cast<double>(disagree.size()) / static_cast<double>(n));
      const auto max_rows = detail::max_retained(opt.rho_diff, disagree.size(), agree.size());
      throw InsufficientRowsError("cannot retain " + std::to_string(n) + " rows at rho_diff = " +
                                      std::to_string(opt.rho_diff) + " (" + std::to_string(disagree.size()) +
                                      " disagreeing, " + std::to_string(agree.size()) +
                                      " agreeing); achievable maximum rho_diff at this size is " +
                                      std::to_string(max_rho) + ", maximum rows at this rho_diff is " +
                                      std::to_string(max_rows),
                                  max_rho, max_rows);
    }
  } else {
    n = detail::max_retained(opt.rho_diff, disagree.size(), agree.size());
    if (n == 0) {
      const double max_rho = table.empty() ? 0.0
                                           : static_cast<double>(disagree.size()) / static_cast<double>(table.size());
      throw InsufficientRowsError("no rows can be retained at rho_diff = " + std::to_string(opt.rho_diff) +
                                      "; achievable maximum rho_diff is " + std::to_string(max_rho),
                                  max_rho, 0);
    }
  }
  const auto k = detail::disagreeing_quota(opt.rho_diff, n);

  auto pick_rng = detail::table_stream(opt.seed, Stream::kTableSubsample);
  std::shuffle(disagree.begin(), disagree.end(), pick_rng);
  std::shuffle(agree.begin(), agree.end(), pick_rng);
  std::vector<std::size_t> keep(disagree.begin(), disagree.begin() + static_cast<long>(k));
  keep.insert(keep.end(), agree.begin(), agree.begin() + static_cast<long>(n - k));
  std::sort(keep.begin(), keep.end());

  auto time_rng = detail::table_stream(opt.seed, Stream::kTableTimes);
  std::uniform_int_distribution<int> step(1, opt.horizon - 1);
  ChangepointResult out;
  out.disagreeing = k;
  out.agreeing = n - k;
  out.rows.reserve(n);
  for (const auto i : keep) {
    const auto& r = table.rows[i];
    const int t = step(time_rng);
    const double p = t < opt.t_cp ? r.p_a_source_0 : r.p_a_source_1;
    out.rows.push_back(TimedPreferenceRow{r.item_id, t, hard_label(p), p});
  }
  return out;
}

/// Test rows at t = T labeled by source 1.
inline std::vector<TimedPreferenceRow> changepoint_test_rows(const PreferenceTable& table, int horizon) {
  std::vector<TimedPreferenceRow> out;
  for (const auto& r : table.rows) {
    out.push_back(TimedPreferenceRow{r.item_id, horizon, hard_label(r.p_a_source_1), r.p_a_source_1});
  }
  return out;
}

}  // namespace nsdpo
