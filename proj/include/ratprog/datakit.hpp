#pragma once

// Sample-point selection, synthetic measurement (a desk-scale stand-in for
// an instrumenting profiler), and CSV persistence of measured metric data.
//
// CSV schema: optional '#' comment lines, then a header
//   D1,...,Dd,bx,by,bz,<metric1>,...,<metricM>
// with integer data parameters and block dimensions and shortest-round-trip
// decimal reals for metric values.  A provenance comment written by
// write_samples survives a round trip.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ratprog/perfmodel.hpp"
#include "ratprog/polyfit.hpp"
#include "ratprog/rng.hpp"

namespace ratprog::data {

struct CsvError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct KernelSpecError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Provenance {
  enum class Kind { Measured, Synthetic };
  Kind kind = Kind::Measured;
  std::uint64_t seed = 0;
  double noise_rel = 0;
  bool operator==(const Provenance&) const = default;
};

struct Sample {
  std::vector<long long> data_params;
  perf::LaunchConfig config;
  std::map<std::string, double> metric_values;
};

struct SampleSet {
  std::vector<std::string> metric_names;
  std::vector<Sample> samples;
  Provenance provenance;

  std::size_t dims() const {
    return samples.empty() ? 0 : samples.front().data_params.size();
  }
};

// Ground-truth kernel description used to synthesize measurements.
struct SyntheticKernelSpec {
  std::string name;
  std::vector<std::string> variables;  // D1..Dd then bx, by [, bz]
  std::map<std::string, poly::RationalFunction> ground_truth;
  double regs_per_thread = 0;
  double shared_words_per_block = 0;
  double noise_rel = 0;
};

// ---------------------------------------------------------------------------
// Sample-point selection.

// All block configurations with power-of-two dimensions whose thread count
// lies in [min_threads, max_threads], in lexicographic (bx, by, bz) order.
inline std::vector<perf::LaunchConfig> enumerate_configs(
    long long max_threads = 1024, long long min_threads = 32, int dims = 2) {
  if (min_threads < 1 || min_threads > max_threads || max_threads > 1024)
    throw std::invalid_argument(
        "enumerate_configs: need 1 <= min_threads <= max_threads <= 1024");
  if (dims < 1 || dims > 3)
    throw std::invalid_argument("enumerate_configs: dims must be 1, 2 or 3");
  std::vector<perf::LaunchConfig> out;
  for (long long bx = 1; bx <= 1024; bx *= 2)
    for (long long by = 1; by <= (dims >= 2 ? 1024 : 1); by *= 2)
      for (long long bz = 1; bz <= (dims >= 3 ? 1024 : 1); bz *= 2) {
        long long t = bx * by * bz;
        if (t >= min_threads && t <= max_threads) out.push_back({bx, by, bz});
      }
  return out;
}

struct DesignPoint {
  std::vector<long long> data_params;
  perf::LaunchConfig config;
};

// Cartesian product of data-parameter values and configurations, data-major.
inline std::vector<DesignPoint> design_points(
    const std::vector<long long>& d_values,
    const std::vector<perf::LaunchConfig>& config_set) {
  if (d_values.empty())
    throw std::invalid_argument("design_points: no data-parameter values");
  if (config_set.empty())
    throw std::invalid_argument("design_points: no configurations");
  std::vector<DesignPoint> out;
  out.reserve(d_values.size() * config_set.size());
  for (long long d : d_values)
    for (const perf::LaunchConfig& c : config_set)
      out.push_back({{d}, c});
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic measurement.

namespace detail {

// Coordinates of a design point in the kernel's variable order.
inline std::vector<double> point_coords(const SyntheticKernelSpec& spec,
                                        const DesignPoint& p) {
  std::vector<double> coords;
  coords.reserve(spec.variables.size());
  std::size_t next_param = 0;
  for (const std::string& v : spec.variables) {
    if (v == "bx") {
      coords.push_back(static_cast<double>(p.config.bx));
    } else if (v == "by") {
      coords.push_back(static_cast<double>(p.config.by));
    } else if (v == "bz") {
      coords.push_back(static_cast<double>(p.config.bz));
    } else {
      if (next_param >= p.data_params.size())
        throw std::invalid_argument(
            "synthesize: point has fewer data parameters than the kernel");
      coords.push_back(static_cast<double>(p.data_params[next_param++]));
    }
  }
  if (next_param != p.data_params.size())
    throw std::invalid_argument(
        "synthesize: point has more data parameters than the kernel");
  return coords;
}

inline std::string point_label(const DesignPoint& p) {
  std::string s = "(";
  for (std::size_t i = 0; i < p.data_params.size(); ++i)
    s += (i ? "," : "D=") + std::to_string(p.data_params[i]);
  s += " " + std::to_string(p.config.bx) + "x" +
       std::to_string(p.config.by) + "x" + std::to_string(p.config.bz) + ")";
  return s;
}

}  // namespace detail

// Evaluates every ground-truth metric at every point and perturbs each value
// by an independent uniform relative error in [-noise_rel, +noise_rel]
// (drawn per point and metric, in metric-name order; no draws happen when
// noise_rel is zero).  Points where a metric denominator vanishes or a
// ground-truth value is negative are skipped and reported through `skipped`.
inline SampleSet synthesize(const SyntheticKernelSpec& spec,
                            const std::vector<DesignPoint>& points,
                            std::uint64_t seed,
                            std::vector<std::string>* skipped = nullptr) {
  if (spec.noise_rel < 0)
    throw std::invalid_argument("synthesize: noise_rel must be >= 0");
  if (spec.ground_truth.empty())
    throw std::invalid_argument("synthesize: kernel has no metrics");

  SampleSet out;
  for (const auto& [name, _] : spec.ground_truth)
    out.metric_names.push_back(name);
  out.provenance = {Provenance::Kind::Synthetic, seed, spec.noise_rel};

  rng::Engine eng(seed);
  std::set<std::pair<std::vector<long long>, perf::LaunchConfig>> seen;
  for (const DesignPoint& p : points) {
    if (!seen.insert({p.data_params, p.config}).second)
      throw std::invalid_argument("synthesize: duplicate design point " +
                                  detail::point_label(p));
    std::vector<double> coords = detail::point_coords(spec, p);

    Sample s;
    s.data_params = p.data_params;
    s.config = p.config;
    bool ok = true;
    for (const std::string& name : out.metric_names) {
      double v = 0;
      try {
        v = poly::eval_ratfunc(spec.ground_truth.at(name), coords);
      } catch (const poly::DenominatorNearZero&) {
        if (skipped)
          skipped->push_back(detail::point_label(p) + ": metric '" + name +
                             "' has a singular denominator");
        ok = false;
        break;
      }
      if (v < 0) {
        if (skipped)
          skipped->push_back(detail::point_label(p) + ": metric '" + name +
                             "' is negative (" + std::to_string(v) + ")");
        ok = false;
        break;
      }
      s.metric_values[name] = v;
    }
    if (!ok) continue;
    if (spec.noise_rel > 0)
      for (const std::string& name : out.metric_names)
        s.metric_values[name] *=
            1.0 + rng::uniform_real(eng, -spec.noise_rel, spec.noise_rel);
    out.samples.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV persistence.

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw CsvError("cannot format value");
  return std::string(buf, end);
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r' && c != ' ' && c != '\t') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline long long parse_int_field(const std::string& s, std::size_t line_no,
                                 const std::string& what) {
  long long v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw CsvError("line " + std::to_string(line_no) + ": bad integer " +
                   what + " '" + s + "'");
  return v;
}

inline double parse_real_field(const std::string& s, std::size_t line_no,
                               const std::string& what) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw CsvError("line " + std::to_string(line_no) + ": bad value for " +
                   what + " '" + s + "'");
  if (!std::isfinite(v))
    throw CsvError("line " + std::to_string(line_no) + ": non-finite value for " +
                   what);
  return v;
}

}  // namespace detail

inline std::string format_samples(const SampleSet& set) {
  if (set.samples.empty())
    throw CsvError("cannot format an empty sample set");
  std::ostringstream out;
  if (set.provenance.kind == Provenance::Kind::Synthetic)
    out << "# provenance: synthetic seed=" << set.provenance.seed
        << " noise_rel=" << detail::format_double(set.provenance.noise_rel)
        << "\n";
  else
    out << "# provenance: measured\n";

  std::size_t d = set.dims();
  for (std::size_t i = 1; i <= d; ++i) out << "D" << i << ",";
  out << "bx,by,bz";
  for (const std::string& m : set.metric_names) out << "," << m;
  out << "\n";

  for (const Sample& s : set.samples) {
    if (s.data_params.size() != d)
      throw CsvError("sample data-parameter arity differs across rows");
    for (long long p : s.data_params) out << p << ",";
    out << s.config.bx << "," << s.config.by << "," << s.config.bz;
    for (const std::string& m : set.metric_names) {
      auto it = s.metric_values.find(m);
      if (it == s.metric_values.end())
        throw CsvError("sample is missing metric '" + m + "'");
      if (!std::isfinite(it->second))
        throw CsvError("metric '" + m + "' has a non-finite value");
      out << "," << detail::format_double(it->second);
    }
    out << "\n";
  }
  return out.str();
}

inline SampleSet parse_samples(const std::string& text) {
  SampleSet set;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::size_t d = 0;
  bool have_header = false;
  std::set<std::pair<std::vector<long long>, perf::LaunchConfig>> seen;

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (line[0] == '#') {
      if (have_header)
        throw CsvError("line " + std::to_string(line_no) +
                       ": comments are only allowed before the header");
      std::istringstream c(line);
      std::string hash, tag, kind;
      c >> hash >> tag >> kind;
      if (tag == "provenance:") {
        if (kind == "measured") {
          set.provenance = {};
        } else if (kind == "synthetic") {
          std::string kv;
          set.provenance.kind = Provenance::Kind::Synthetic;
          while (c >> kv) {
            auto eq = kv.find('=');
            if (eq == std::string::npos) continue;
            std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
            if (key == "seed")
              try {
                set.provenance.seed = std::stoull(val);
              } catch (const std::exception&) {
                throw CsvError("line " + std::to_string(line_no) +
                               ": bad provenance seed '" + val + "'");
              }
            else if (key == "noise_rel")
              set.provenance.noise_rel =
                  detail::parse_real_field(val, line_no, "noise_rel");
          }
        } else {
          throw CsvError("line " + std::to_string(line_no) +
                         ": unknown provenance kind '" + kind + "'");
        }
      }
      continue;
    }

    std::vector<std::string> fields = detail::split_csv(line);
    if (!have_header) {
      // Header: D1..Dd, then bx, by, bz, then at least one metric.
      std::size_t i = 0;
      while (i < fields.size() &&
             fields[i] == "D" + std::to_string(i + 1))
        ++i;
      d = i;
      if (d == 0)
        throw CsvError("line " + std::to_string(line_no) +
                       ": header must start with data-parameter columns "
                       "D1,...,Dd");
      if (fields.size() < d + 4)
        throw CsvError("line " + std::to_string(line_no) +
                       ": header is missing block-dimension or metric "
                       "columns");
      if (fields[d] != "bx" || fields[d + 1] != "by" || fields[d + 2] != "bz")
        throw CsvError("line " + std::to_string(line_no) +
                       ": header must list bx,by,bz after the data "
                       "parameters");
      std::set<std::string> metric_seen;
      for (std::size_t k = d + 3; k < fields.size(); ++k) {
        if (fields[k].empty())
          throw CsvError("line " + std::to_string(line_no) +
                         ": empty metric column name");
        if (!metric_seen.insert(fields[k]).second)
          throw CsvError("line " + std::to_string(line_no) +
                         ": duplicate metric column '" + fields[k] + "'");
        set.metric_names.push_back(fields[k]);
      }
      have_header = true;
      continue;
    }

    if (fields.size() != d + 3 + set.metric_names.size())
      throw CsvError("line " + std::to_string(line_no) + ": expected " +
                     std::to_string(d + 3 + set.metric_names.size()) +
                     " fields, found " + std::to_string(fields.size()));
    Sample s;
    for (std::size_t i = 0; i < d; ++i)
      s.data_params.push_back(
          detail::parse_int_field(fields[i], line_no, "D" + std::to_string(i + 1)));
    s.config.bx = detail::parse_int_field(fields[d], line_no, "bx");
    s.config.by = detail::parse_int_field(fields[d + 1], line_no, "by");
    s.config.bz = detail::parse_int_field(fields[d + 2], line_no, "bz");
    if (s.config.bx < 1 || s.config.by < 1 || s.config.bz < 1)
      throw CsvError("line " + std::to_string(line_no) +
                     ": block dimensions must be positive");
    for (std::size_t k = 0; k < set.metric_names.size(); ++k)
      s.metric_values[set.metric_names[k]] = detail::parse_real_field(
          fields[d + 3 + k], line_no, set.metric_names[k]);
    if (!seen.insert({s.data_params, s.config}).second)
      throw CsvError("line " + std::to_string(line_no) +
                     ": duplicate sample for the same point and "
                     "configuration");
    set.samples.push_back(std::move(s));
  }
  if (!have_header) throw CsvError("no header row found");
  return set;
}

inline void write_samples(const SampleSet& set, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CsvError("cannot open '" + path + "' for writing");
  out << format_samples(set);
  if (!out) throw CsvError("write to '" + path + "' failed");
}

inline SampleSet read_samples(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CsvError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_samples(buf.str());
  } catch (const CsvError& e) {
    throw CsvError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Train/test splitting.

// Deterministic seeded partition: shuffles indices with the given seed,
// holds out round(test_fraction * n) samples, and keeps both halves in their
// original relative order.
inline std::pair<SampleSet, SampleSet> holdout_split(const SampleSet& set,
                                                     double test_fraction,
                                                     std::uint64_t seed) {
  if (!(test_fraction > 0.0) || !(test_fraction < 1.0))
    throw std::invalid_argument("holdout_split: fraction must be in (0, 1)");
  std::size_t n = set.samples.size();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  rng::Engine eng(seed);
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(
        rng::uniform_int(eng, 0, static_cast<long long>(i) - 1));
    std::swap(idx[i - 1], idx[j]);
  }
  std::size_t n_test = static_cast<std::size_t>(
      std::llround(test_fraction * static_cast<double>(n)));
  std::vector<bool> is_test(n, false);
  for (std::size_t i = 0; i < n_test && i < n; ++i) is_test[idx[i]] = true;

  SampleSet train, test;
  train.metric_names = test.metric_names = set.metric_names;
  train.provenance = test.provenance = set.provenance;
  for (std::size_t i = 0; i < n; ++i)
    (is_test[i] ? test : train).samples.push_back(set.samples[i]);
  return {std::move(train), std::move(test)};
}

// Extrapolation split: train on samples whose selected data parameter is at
// most `threshold`, test on the rest.
inline std::pair<SampleSet, SampleSet> holdout_split_threshold(
    const SampleSet& set, std::size_t param_index, long long threshold) {
  SampleSet train, test;
  train.metric_names = test.metric_names = set.metric_names;
  train.provenance = test.provenance = set.provenance;
  for (const Sample& s : set.samples) {
    if (param_index >= s.data_params.size())
      throw std::invalid_argument(
          "holdout_split_threshold: data-parameter index out of range");
    (s.data_params[param_index] <= threshold ? train : test)
        .samples.push_back(s);
  }
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Kernel description files (JSON, schema "ratprog-kernel-v1").

namespace detail {

inline poly::RationalFunction ratfunc_from_json(
    const nlohmann::json& j, const std::vector<std::string>& variables,
    const std::string& metric) {
  for (const char* key : {"num_bounds", "num_coeffs", "den_bounds",
                          "den_coeffs"})
    if (!j.contains(key))
      throw KernelSpecError("metric '" + metric + "' is missing '" + key +
                            "'");
  poly::RationalFunction f;
  auto read_poly = [&](const char* bkey, const char* ckey,
                       poly::Polynomial& p) {
    std::vector<int> bounds = j.at(bkey).get<std::vector<int>>();
    if (bounds.size() != variables.size())
      throw KernelSpecError("metric '" + metric + "': '" + std::string(bkey) +
                            "' must have one entry per variable");
    p.variables = variables;
    p.basis = poly::monomial_basis(bounds);
    p.coeffs = j.at(ckey).get<std::vector<double>>();
    if (p.coeffs.size() != p.basis.size())
      throw KernelSpecError(
          "metric '" + metric + "': '" + std::string(ckey) + "' must have " +
          std::to_string(p.basis.size()) + " entries for these bounds");
  };
  read_poly("num_bounds", "num_coeffs", f.num);
  read_poly("den_bounds", "den_coeffs", f.den);
  return f;
}

inline nlohmann::ordered_json ratfunc_to_json(const poly::RationalFunction& f) {
  auto bounds_of = [](const poly::Polynomial& p) {
    std::vector<int> bounds(p.variables.size(), 0);
    for (const auto& mono : p.basis)
      for (std::size_t i = 0; i < bounds.size(); ++i)
        bounds[i] = std::max(bounds[i], mono[i]);
    return bounds;
  };
  nlohmann::ordered_json j;
  j["num_bounds"] = bounds_of(f.num);
  j["num_coeffs"] = f.num.coeffs;
  j["den_bounds"] = bounds_of(f.den);
  j["den_coeffs"] = f.den.coeffs;
  return j;
}

}  // namespace detail

inline SyntheticKernelSpec parse_kernel_spec(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw KernelSpecError(std::string("kernel spec is not valid JSON: ") +
                          e.what());
  }
  if (!j.contains("schema") || j.at("schema") != "ratprog-kernel-v1")
    throw KernelSpecError("kernel spec must declare schema "
                          "'ratprog-kernel-v1'");
  SyntheticKernelSpec spec;
  spec.name = j.value("name", std::string("kernel"));
  if (!j.contains("variables"))
    throw KernelSpecError("kernel spec is missing 'variables'");
  spec.variables = j.at("variables").get<std::vector<std::string>>();

  if (j.contains("constants")) {
    const auto& c = j.at("constants");
    spec.regs_per_thread = c.value(perf::kMetricRegs, 0.0);
    spec.shared_words_per_block = c.value(perf::kMetricShared, 0.0);
  }
  spec.noise_rel = j.value("noise_rel", 0.0);
  if (spec.noise_rel < 0)
    throw KernelSpecError("noise_rel must be >= 0");

  if (!j.contains("metrics") || !j.at("metrics").is_object())
    throw KernelSpecError("kernel spec is missing the 'metrics' object");
  for (const auto& [name, body] : j.at("metrics").items())
    spec.ground_truth[name] =
        detail::ratfunc_from_json(body, spec.variables, name);
  for (const std::string& required : perf::required_metric_names())
    if (!spec.ground_truth.count(required))
      throw KernelSpecError("kernel spec is missing metric '" + required +
                            "'");
  // Reject unknown variable names early (same rules as program emission).
  perf::MetricSpec probe;
  probe.variables = spec.variables;
  probe.models = spec.ground_truth;
  probe.constants[perf::kMetricRegs] = spec.regs_per_thread;
  probe.constants[perf::kMetricShared] = spec.shared_words_per_block;
  try {
    perf::check_metric_spec(probe);
  } catch (const perf::ModelError& e) {
    throw KernelSpecError(e.what());
  }
  return spec;
}

inline std::string format_kernel_spec(const SyntheticKernelSpec& spec) {
  nlohmann::ordered_json j;
  j["schema"] = "ratprog-kernel-v1";
  j["name"] = spec.name;
  j["variables"] = spec.variables;
  j["constants"] = {{perf::kMetricRegs, spec.regs_per_thread},
                    {perf::kMetricShared, spec.shared_words_per_block}};
  j["noise_rel"] = spec.noise_rel;
  nlohmann::ordered_json metrics;
  for (const auto& [name, f] : spec.ground_truth)
    metrics[name] = detail::ratfunc_to_json(f);
  j["metrics"] = metrics;
  return j.dump(2) + "\n";
}

inline SyntheticKernelSpec load_kernel_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw KernelSpecError("cannot open kernel spec '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_kernel_spec(buf.str());
  } catch (const KernelSpecError& e) {
    throw KernelSpecError(path + ": " + e.what());
  }
}

// The metric functions the cycle-count model needs, taken from ground truth.
inline perf::MetricSpec to_metric_spec(const SyntheticKernelSpec& spec) {
  perf::MetricSpec m;
  m.variables = spec.variables;
  m.models = spec.ground_truth;
  m.constants[perf::kMetricRegs] = spec.regs_per_thread;
  m.constants[perf::kMetricShared] = spec.shared_words_per_block;
  perf::check_metric_spec(m);
  return m;
}

}  // namespace ratprog::data
