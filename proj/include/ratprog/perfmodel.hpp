#pragma once

// The two analytical GPU models the generated programs encode:
//
//  * hardware occupancy — how many blocks/warps fit on one streaming
//    multiprocessor given register, shared-memory, warp and block limits;
//  * MWP-CWP clock-cycle estimation — overlap of memory-warp parallelism
//    (how many warps can hide memory latency) and computation-warp
//    parallelism (how many warps one memory period can feed), selecting one
//    of three execution-time formulas.
//
// Both models exist twice: a direct binary64 implementation, and an emitter
// producing an equivalent branching rational program.  The direct path and
// the emitted IR use the same comparison structure so they classify inputs
// identically away from case boundaries.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ratprog/ir.hpp"
#include "ratprog/ir_builder.hpp"
#include "ratprog/polyfit.hpp"
#include "ratprog/rational.hpp"

namespace ratprog::perf {

struct ProfileError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ZeroOccupancy : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Fixed device characteristics.  Counts are integral; rates and latencies
// are reals.  The register/shared-memory fields are the per-SM budgets that
// bound how many blocks can be resident at once.
struct DeviceProfile {
  long long R_max = 0;  // register budget limiting blocks per SM
  long long Z_max = 0;  // shared-memory words budget per SM
  long long T_max = 0;  // max threads per block
  long long B_max = 0;  // max blocks per SM
  long long W_max = 0;  // max warps per SM
  long long num_SM = 0;
  double freq_GHz = 0;
  double mem_latency_cycles = 0;
  double departure_del_coal_cycles = 0;
  double departure_del_uncoal_cycles = 0;
  double mem_bandwidth_GBps = 0;
  double issue_cycles = 0;
  long long load_bytes_per_warp = 0;
  long long uncoal_per_mw = 0;  // transactions per non-coalesced warp access
};

// Per-kernel low-level metrics (averages; fractional values are fine).
struct KernelMetrics {
  double regs_per_thread = 0;
  double shared_words_per_block = 0;
  double comp_insts_per_thread = 0;
  double mem_insts_per_thread = 0;
  double uncoal_mem_insts_per_thread = 0;
  double coal_mem_insts_per_thread = 0;
  double synch_insts_per_block = 0;
  double total_blocks = 0;
};

struct LaunchConfig {
  long long bx = 1, by = 1, bz = 1;
  long long threads() const { return bx * by * bz; }
  bool operator==(const LaunchConfig&) const = default;
  auto operator<=>(const LaunchConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Device profile file format: flat `key = value` lines, '#' comments, every
// field present exactly once, unknown keys rejected.

namespace detail {
inline const std::vector<std::string>& profile_keys() {
  static const std::vector<std::string> keys = {
      "R_max",
      "Z_max",
      "T_max",
      "B_max",
      "W_max",
      "num_SM",
      "freq_GHz",
      "mem_latency_cycles",
      "departure_del_coal_cycles",
      "departure_del_uncoal_cycles",
      "mem_bandwidth_GBps",
      "issue_cycles",
      "load_bytes_per_warp",
      "uncoal_per_mw"};
  return keys;
}
}  // namespace detail

inline DeviceProfile parse_profile(const std::string& text) {
  DeviceProfile hw;
  std::map<std::string, double> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string stripped = line.substr(0, line.find('#'));
    if (stripped.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ProfileError("profile line " + std::to_string(line_no) +
                         ": expected 'key = value'");
    auto trim = [](std::string s) {
      std::size_t b = s.find_first_not_of(" \t\r");
      std::size_t e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::string key = trim(stripped.substr(0, eq));
    std::string value = trim(stripped.substr(eq + 1));
    const auto& keys = detail::profile_keys();
    if (std::find(keys.begin(), keys.end(), key) == keys.end())
      throw ProfileError("profile line " + std::to_string(line_no) +
                         ": unknown key '" + key + "'");
    if (seen.count(key))
      throw ProfileError("profile line " + std::to_string(line_no) +
                         ": duplicate key '" + key + "'");
    double v = 0;
    try {
      std::size_t used = 0;
      v = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
    } catch (const std::exception&) {
      throw ProfileError("profile line " + std::to_string(line_no) +
                         ": bad numeric value '" + value + "'");
    }
    if (!(v > 0))
      throw ProfileError("profile line " + std::to_string(line_no) + ": '" +
                         key + "' must be positive");
    seen[key] = v;
  }
  for (const std::string& key : detail::profile_keys())
    if (!seen.count(key))
      throw ProfileError("profile is missing key '" + key + "'");

  auto as_count = [&](const std::string& key) {
    double v = seen[key];
    if (v != std::floor(v))
      throw ProfileError("profile key '" + key + "' must be an integer");
    return static_cast<long long>(v);
  };
  hw.R_max = as_count("R_max");
  hw.Z_max = as_count("Z_max");
  hw.T_max = as_count("T_max");
  hw.B_max = as_count("B_max");
  hw.W_max = as_count("W_max");
  hw.num_SM = as_count("num_SM");
  hw.freq_GHz = seen["freq_GHz"];
  hw.mem_latency_cycles = seen["mem_latency_cycles"];
  hw.departure_del_coal_cycles = seen["departure_del_coal_cycles"];
  hw.departure_del_uncoal_cycles = seen["departure_del_uncoal_cycles"];
  hw.mem_bandwidth_GBps = seen["mem_bandwidth_GBps"];
  hw.issue_cycles = seen["issue_cycles"];
  hw.load_bytes_per_warp = as_count("load_bytes_per_warp");
  hw.uncoal_per_mw = as_count("uncoal_per_mw");
  if (hw.T_max > 1024)
    throw ProfileError("T_max exceeds 1024, the architectural block limit");
  return hw;
}

inline DeviceProfile load_profile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ProfileError("cannot open device profile '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_profile(buf.str());
  } catch (const ProfileError& e) {
    throw ProfileError(path + ": " + e.what());
  }
}

inline std::string format_profile(const DeviceProfile& hw) {
  std::ostringstream out;
  out << "R_max = " << hw.R_max << "\nZ_max = " << hw.Z_max
      << "\nT_max = " << hw.T_max << "\nB_max = " << hw.B_max
      << "\nW_max = " << hw.W_max << "\nnum_SM = " << hw.num_SM
      << "\nfreq_GHz = " << hw.freq_GHz
      << "\nmem_latency_cycles = " << hw.mem_latency_cycles
      << "\ndeparture_del_coal_cycles = " << hw.departure_del_coal_cycles
      << "\ndeparture_del_uncoal_cycles = " << hw.departure_del_uncoal_cycles
      << "\nmem_bandwidth_GBps = " << hw.mem_bandwidth_GBps
      << "\nissue_cycles = " << hw.issue_cycles
      << "\nload_bytes_per_warp = " << hw.load_bytes_per_warp
      << "\nuncoal_per_mw = " << hw.uncoal_per_mw << "\n";
  return out.str();
}

// Exact rational bindings for a profile, keyed by field name (used to run
// emitted programs that take hardware fields as inputs).
inline std::map<std::string, Rational> profile_bindings(const DeviceProfile& hw) {
  return {
      {"R_max", Rational(hw.R_max)},
      {"Z_max", Rational(hw.Z_max)},
      {"T_max", Rational(hw.T_max)},
      {"B_max", Rational(hw.B_max)},
      {"W_max", Rational(hw.W_max)},
      {"num_SM", Rational(hw.num_SM)},
      {"freq_GHz", rational_from_double(hw.freq_GHz)},
      {"mem_latency_cycles", rational_from_double(hw.mem_latency_cycles)},
      {"departure_del_coal_cycles",
       rational_from_double(hw.departure_del_coal_cycles)},
      {"departure_del_uncoal_cycles",
       rational_from_double(hw.departure_del_uncoal_cycles)},
      {"mem_bandwidth_GBps", rational_from_double(hw.mem_bandwidth_GBps)},
      {"issue_cycles", rational_from_double(hw.issue_cycles)},
      {"load_bytes_per_warp", Rational(hw.load_bytes_per_warp)},
      {"uncoal_per_mw", Rational(hw.uncoal_per_mw)},
  };
}

// ---------------------------------------------------------------------------
// Occupancy.

// Blocks resident per SM: the tightest of the block, warp, register and
// shared-memory limits; 0 when the kernel cannot launch (T out of range or
// some limit below one block).
inline long long active_blocks(const DeviceProfile& hw, double R, double Z,
                               long long T) {
  if (T < 1 || T > hw.T_max) return 0;
  long long warps_per_block = (T + 31) / 32;
  long long b = hw.B_max;
  b = std::min(b, hw.W_max / warps_per_block);
  if (R > 0)
    b = std::min(b, static_cast<long long>(
                        std::floor(static_cast<double>(hw.R_max) / (R * T))));
  if (Z > 0)
    b = std::min(b, static_cast<long long>(
                        std::floor(static_cast<double>(hw.Z_max) / Z)));
  return b < 1 ? 0 : b;
}

// Warps resident per SM, capped by the hardware warp limit.
inline long long active_warps(const DeviceProfile& hw, long long b_active,
                              long long T) {
  if (b_active <= 0) return 0;
  return std::min(b_active * T / 32, hw.W_max);
}

inline double occupancy(const DeviceProfile& hw, double R, double Z,
                        long long T) {
  long long b = active_blocks(hw, R, Z, T);
  return static_cast<double>(active_warps(hw, b, T)) /
         static_cast<double>(hw.W_max);
}

// ---------------------------------------------------------------------------
// MWP-CWP clock-cycle estimation.

enum class RepMode { Real, Ceil };

enum class CaseTag { BothSaturated, CwpBound, MwpBound };

inline const char* case_name(CaseTag t) {
  switch (t) {
    case CaseTag::BothSaturated: return "both_saturated";
    case CaseTag::CwpBound: return "cwp_bound";
    case CaseTag::MwpBound: return "mwp_bound";
  }
  return "?";
}

struct MwpCwpBreakdown {
  long long b_active = 0;
  long long n_active_warps = 0;  // N
  double mem_cycles = 0;
  double comp_cycles = 0;
  double mwp = 0;
  double cwp = 0;
  double rep = 0;
  CaseTag case_tag = CaseTag::CwpBound;
  double cycles_pre_synch = 0;
  double synch_cost = 0;
  double total_cycles = 0;
};

inline MwpCwpBreakdown mwpcwp_cycles(const DeviceProfile& hw,
                                     const KernelMetrics& m,
                                     const LaunchConfig& config,
                                     RepMode rep_mode = RepMode::Real) {
  const double mem = m.mem_insts_per_thread;
  if (std::fabs(m.uncoal_mem_insts_per_thread + m.coal_mem_insts_per_thread -
                mem) > 1e-9 * std::max(1.0, mem))
    throw ModelError(
        "metrics inconsistent: uncoal + coal must equal mem_insts");
  if (m.comp_insts_per_thread < 0 || mem < 0 ||
      m.uncoal_mem_insts_per_thread < 0 || m.coal_mem_insts_per_thread < 0 ||
      m.synch_insts_per_block < 0 || m.total_blocks < 0)
    throw ModelError("metrics must be non-negative");

  MwpCwpBreakdown out;
  const long long T = config.threads();
  out.b_active = active_blocks(hw, m.regs_per_thread,
                               m.shared_words_per_block, T);
  if (out.b_active == 0)
    throw ZeroOccupancy("configuration cannot launch (no resident block)");
  out.n_active_warps = active_warps(hw, out.b_active, T);
  if (out.n_active_warps == 0)
    throw ZeroOccupancy("configuration yields no resident warp");
  const double n = static_cast<double>(out.n_active_warps);

  const double mem_l_coal = hw.mem_latency_cycles;
  const double mem_l_uncoal =
      hw.mem_latency_cycles +
      (static_cast<double>(hw.uncoal_per_mw) - 1.0) *
          hw.departure_del_uncoal_cycles;
  out.comp_cycles = hw.issue_cycles * (m.comp_insts_per_thread + mem);

  double rep_den = static_cast<double>(out.b_active) *
                   static_cast<double>(hw.num_SM);
  out.rep = m.total_blocks / rep_den;
  if (rep_mode == RepMode::Ceil) out.rep = std::ceil(out.rep);

  if (mem == 0.0) {
    // Compute-only convention: no departure weighting is possible, the
    // comp-per-mem term drops, MWP saturates at N, and the pre-synch time is
    // comp_cycles * N/MWP = comp_cycles (per repetition).
    out.mem_cycles = 0.0;
    out.mwp = n;
    out.cwp = out.comp_cycles > 0.0 ? 1.0 : n;
    out.case_tag = CaseTag::CwpBound;
    out.cycles_pre_synch = out.comp_cycles * out.rep;
    out.synch_cost = hw.departure_del_coal_cycles * (out.mwp - 1.0) *
                     m.synch_insts_per_block *
                     static_cast<double>(out.b_active) * out.rep;
    out.total_cycles = out.cycles_pre_synch + out.synch_cost;
    return out;
  }

  const double r_uncoal = m.uncoal_mem_insts_per_thread / mem;
  const double weighted_mem_l =
      r_uncoal * mem_l_uncoal + (1.0 - r_uncoal) * mem_l_coal;
  const double departure_delay =
      r_uncoal * hw.departure_del_uncoal_cycles *
          static_cast<double>(hw.uncoal_per_mw) +
      (1.0 - r_uncoal) * hw.departure_del_coal_cycles;
  out.mem_cycles = m.uncoal_mem_insts_per_thread * mem_l_uncoal +
                   m.coal_mem_insts_per_thread * mem_l_coal;

  const double mwp_no_bw = weighted_mem_l / departure_delay;
  const double bw_per_warp = hw.freq_GHz *
                             static_cast<double>(hw.load_bytes_per_warp) /
                             hw.mem_latency_cycles;
  const double mwp_peak_bw =
      hw.mem_bandwidth_GBps /
      (bw_per_warp * static_cast<double>(hw.num_SM));
  out.mwp = std::min(std::min(mwp_no_bw, mwp_peak_bw), n);
  double cwp_full = out.comp_cycles > 0.0
                        ? (out.mem_cycles + out.comp_cycles) / out.comp_cycles
                        : std::numeric_limits<double>::infinity();
  out.cwp = std::min(cwp_full, n);

  const double comp_per_mem = out.comp_cycles / mem;
  if (out.mwp == n && out.cwp == n) {
    out.case_tag = CaseTag::BothSaturated;
    out.cycles_pre_synch =
        (out.mem_cycles + out.comp_cycles + comp_per_mem * (out.mwp - 1.0)) *
        out.rep;
  } else if (out.cwp >= out.mwp || out.comp_cycles > out.mem_cycles) {
    out.case_tag = CaseTag::CwpBound;
    out.cycles_pre_synch =
        (out.mem_cycles * n / out.mwp + comp_per_mem * (out.mwp - 1.0)) *
        out.rep;
  } else {
    out.case_tag = CaseTag::MwpBound;
    out.cycles_pre_synch =
        (hw.mem_latency_cycles + out.comp_cycles * n) * out.rep;
  }
  out.synch_cost = departure_delay * (out.mwp - 1.0) *
                   m.synch_insts_per_block *
                   static_cast<double>(out.b_active) * out.rep;
  out.total_cycles = out.cycles_pre_synch + out.synch_cost;
  return out;
}

// ---------------------------------------------------------------------------
// Metric functions feeding the cycle-count program: each required metric is
// either a fitted rational function of the listed variables or a constant.

inline constexpr const char* kMetricComp = "comp_insts_per_thread";
inline constexpr const char* kMetricUncoal = "uncoal_mem_insts_per_thread";
inline constexpr const char* kMetricCoal = "coal_mem_insts_per_thread";
inline constexpr const char* kMetricSynch = "synch_insts_per_block";
inline constexpr const char* kMetricTotalBlocks = "total_blocks";
inline constexpr const char* kMetricRegs = "regs_per_thread";
inline constexpr const char* kMetricShared = "shared_words_per_block";

inline const std::vector<std::string>& required_metric_names() {
  static const std::vector<std::string> names = {
      kMetricComp, kMetricUncoal, kMetricCoal, kMetricSynch,
      kMetricTotalBlocks};
  return names;
}

struct MetricSpec {
  // Variable order shared by all models: data parameters (D1..Dd) first,
  // then bx, by and optionally bz.
  std::vector<std::string> variables;
  std::map<std::string, poly::RationalFunction> models;
  std::map<std::string, double> constants;  // e.g. regs_per_thread

  bool covers(const std::string& name) const {
    return models.count(name) || constants.count(name);
  }
};

inline void check_metric_spec(const MetricSpec& spec) {
  for (const std::string& name : required_metric_names())
    if (!spec.covers(name))
      throw ModelError("metric '" + name +
                       "' has neither a model nor a constant");
  for (const char* name : {kMetricRegs, kMetricShared})
    if (!spec.covers(name))
      throw ModelError(std::string("metric '") + name +
                       "' has neither a model nor a constant");
  bool has_bx = false, has_by = false;
  for (const std::string& v : spec.variables) {
    has_bx |= v == "bx";
    has_by |= v == "by";
    const auto& hw_keys = detail::profile_keys();
    if (std::find(hw_keys.begin(), hw_keys.end(), v) != hw_keys.end())
      throw ModelError("variable '" + v + "' collides with a hardware field");
    bool data_param = v.size() >= 2 && v[0] == 'D' &&
                      v.find_first_not_of("0123456789", 1) == std::string::npos;
    if (!data_param && v != "bx" && v != "by" && v != "bz")
      throw ModelError("variable '" + v +
                       "' is not a data parameter (D1..Dd) or block dimension");
  }
  if (!has_bx || !has_by)
    throw ModelError("metric variables must include bx and by");
  for (const auto& [name, f] : spec.models)
    if (f.num.variables != spec.variables)
      throw ModelError("model '" + name +
                       "' disagrees with the shared variable order");
}

// Direct evaluation of all metrics at one point (variable order of the
// spec).  Throws poly::DenominatorNearZero on singular model denominators.
inline KernelMetrics evaluate_metrics(const MetricSpec& spec,
                                      const std::vector<double>& point) {
  auto value = [&](const std::string& name) -> double {
    auto c = spec.constants.find(name);
    if (c != spec.constants.end()) return c->second;
    return poly::eval_ratfunc(spec.models.at(name), point);
  };
  KernelMetrics m;
  m.regs_per_thread = value(kMetricRegs);
  m.shared_words_per_block = value(kMetricShared);
  m.comp_insts_per_thread = value(kMetricComp);
  m.uncoal_mem_insts_per_thread = value(kMetricUncoal);
  m.coal_mem_insts_per_thread = value(kMetricCoal);
  m.mem_insts_per_thread =
      m.uncoal_mem_insts_per_thread + m.coal_mem_insts_per_thread;
  m.synch_insts_per_block = value(kMetricSynch);
  m.total_blocks = value(kMetricTotalBlocks);
  return m;
}

// ---------------------------------------------------------------------------
// Emission of rational programs.

struct EmitOptions {
  RepMode rep_mode = RepMode::Real;
  // Interior divisions are lowered to floor_div against a 10^scale_pow10
  // scale; the absolute error of each lowered division is below
  // 10^-scale_pow10.
  int scale_pow10 = 40;
};

namespace detail {

inline Rational pow10_rational(int k) {
  BigInt p = 1;
  for (int i = 0; i < k; ++i) p *= 10;
  return Rational(p);
}

// target := a / b, encoded without a division opcode:
//   q := floor_div(a * 10^s, b);  target := q * 10^-s
inline void emit_div(ir::ProgramBuilder& b, const std::string& target,
                     const ir::Operand& num, const ir::Operand& den,
                     int scale_pow10) {
  Rational scale = pow10_rational(scale_pow10);
  std::string t = b.fresh("dscaled"), q = b.fresh("dquot");
  b.mul(t, num, ir::lit(scale));
  b.floor_div(q, ir::var(t), den);
  b.mul(target, ir::var(q), ir::lit(Rational(1) / scale));
}

// target := f(vals); branches to `infeasible` if the denominator vanishes.
inline void emit_ratfunc(ir::ProgramBuilder& b, const std::string& target,
                         const poly::RationalFunction& f,
                         const std::vector<std::string>& variables,
                         ir::ProgramBuilder::Label infeasible,
                         int scale_pow10) {
  auto emit_poly_value = [&](const poly::Polynomial& p,
                             const std::string& acc) {
    b.assign(acc, ir::lit(0));
    for (std::size_t k = 0; k < p.basis.size(); ++k) {
      if (p.coeffs[k] == 0.0) continue;
      std::string term = b.fresh("term");
      b.assign(term, ir::lit(rational_from_double(p.coeffs[k])));
      for (std::size_t v = 0; v < variables.size(); ++v)
        for (int e = 0; e < p.basis[k][v]; ++e)
          b.mul(term, ir::var(term), ir::var(variables[v]));
      b.add(acc, ir::var(acc), ir::var(term));
    }
  };
  std::string pnum = b.fresh("fnum"), pden = b.fresh("fden");
  emit_poly_value(f.num, pnum);
  emit_poly_value(f.den, pden);
  std::string dz = b.fresh("fdenzero");
  b.cmp_eq(dz, ir::var(pden), ir::lit(0));
  auto ok = b.make_label();
  b.branch_if(dz, infeasible, ok);
  b.place(ok);
  emit_div(b, target, ir::var(pnum), ir::var(pden), scale_pow10);
}

// Occupancy core: given R/Z operands and the threads variable, computes
// blocks and warps per SM into fresh variables (returned through the out
// parameters), branching to `fail` when the launch is impossible.  Assumes
// the hardware limits are readable as variables.
inline void emit_occupancy_core(ir::ProgramBuilder& b, const ir::Operand& R,
                                const ir::Operand& Z, const std::string& t_var,
                                ir::ProgramBuilder::Label fail,
                                std::string* blocks_out,
                                std::string* warps_out) {
  using ir::lit;
  using ir::var;

  // Launch guards: T > T_max or T < 1 means failure.
  std::string c_big = b.fresh("t_over_max");
  b.cmp_lt(c_big, var("T_max"), var(t_var));
  auto t_ok1 = b.make_label();
  b.branch_if(c_big, fail, t_ok1);
  b.place(t_ok1);
  std::string c_small = b.fresh("t_under_one");
  b.cmp_lt(c_small, var(t_var), lit(1));
  auto t_ok2 = b.make_label();
  b.branch_if(c_small, fail, t_ok2);
  b.place(t_ok2);

  // Warp-granularity limit: blocks consume ceil(T/32) warp slots.
  std::string wpb = b.fresh("warps_per_block");
  b.ceil_div(wpb, var(t_var), lit(32));
  std::string blocks = b.fresh("blocks");
  b.assign(blocks, var("B_max"));
  std::string lim_w = b.fresh("limit_warps");
  b.floor_div(lim_w, var("W_max"), var(wpb));
  b.emit_min(blocks, var(blocks), var(lim_w));

  // Register limit applies only when the kernel uses registers.
  std::string r_zero = b.fresh("regs_zero");
  b.cmp_eq(r_zero, R, lit(0));
  auto skip_r = b.make_label(), do_r = b.make_label();
  b.branch_if(r_zero, skip_r, do_r);
  b.place(do_r);
  std::string rt = b.fresh("regs_per_block");
  b.mul(rt, R, var(t_var));
  std::string lim_r = b.fresh("limit_regs");
  b.floor_div(lim_r, var("R_max"), var(rt));
  b.emit_min(blocks, var(blocks), var(lim_r));
  b.place(skip_r);

  // Shared-memory limit, same guard.
  std::string z_zero = b.fresh("shared_zero");
  b.cmp_eq(z_zero, Z, lit(0));
  auto skip_z = b.make_label(), do_z = b.make_label();
  b.branch_if(z_zero, skip_z, do_z);
  b.place(do_z);
  std::string lim_z = b.fresh("limit_shared");
  b.floor_div(lim_z, var("Z_max"), Z);
  b.emit_min(blocks, var(blocks), var(lim_z));
  b.place(skip_z);

  // No limit may fall below one block.
  std::string b_zero = b.fresh("blocks_under_one");
  b.cmp_lt(b_zero, var(blocks), lit(1));
  auto b_ok = b.make_label();
  b.branch_if(b_zero, fail, b_ok);
  b.place(b_ok);

  // Warps per SM: floor(blocks * T / 32), capped at the warp limit.
  std::string bt = b.fresh("threads_resident");
  b.mul(bt, var(blocks), var(t_var));
  std::string warps = b.fresh("warps");
  b.floor_div(warps, var(bt), lit(32));
  b.emit_min(warps, var(warps), var("W_max"));

  *blocks_out = blocks;
  *warps_out = warps;
}

}  // namespace detail

// Occupancy as a rational program: inputs (R_max, Z_max, T_max, B_max,
// W_max, R, Z, T), output W_active (warps resident per SM; divide by W_max
// for the occupancy ratio).  Launch failures return 0.
inline ir::RationalProgram emit_occupancy_rp() {
  ir::ProgramBuilder b;
  for (const char* in : {"R_max", "Z_max", "T_max", "B_max", "W_max"})
    b.input(in);
  b.input("R");
  b.input("Z");
  b.input("T");
  b.output("W_active");

  auto fail = b.make_label(), done = b.make_label();
  std::string blocks, warps;
  detail::emit_occupancy_core(b, ir::var("R"), ir::var("Z"), "T", fail,
                              &blocks, &warps);
  b.assign("W_active", ir::var(warps));
  b.jump(done);
  b.place(fail);
  b.assign("W_active", ir::lit(0));
  b.place(done);
  b.halt_return("W_active");
  return b.finish();
}

// The full cycle-count estimator as a rational program.  Inputs are the
// metric variables (data parameters and block dimensions) followed by the
// fourteen hardware fields; output is the estimated total cycles, or the
// sentinel -1 for configurations that cannot launch (or hit a singular
// metric denominator).
inline ir::RationalProgram emit_mwpcwp_rp(const MetricSpec& spec,
                                          const EmitOptions& opts = {}) {
  check_metric_spec(spec);
  using ir::lit;
  using ir::var;
  const int S = opts.scale_pow10;

  ir::ProgramBuilder b;
  for (const std::string& v : spec.variables) b.input(v);
  for (const std::string& k : detail::profile_keys()) b.input(k);
  b.output("total_cycles");

  auto infeasible = b.make_label(), done = b.make_label();

  // T = bx * by (* bz when modeled).
  bool has_bz = false;
  for (const std::string& v : spec.variables) has_bz |= v == "bz";
  b.mul("T", var("bx"), var("by"));
  if (has_bz) b.mul("T", var("T"), var("bz"));

  // Every declared input must be read on some instruction; a fitted model
  // may ignore a data parameter entirely, so anchor each one explicitly.
  for (const std::string& v : spec.variables)
    if (v != "bx" && v != "by" && v != "bz")
      b.assign(b.fresh("param_anchor"), var(v));

  // Metric values: inline each model (constants become literals).
  auto metric_value = [&](const std::string& name) -> std::string {
    std::string target = b.fresh("m_" + name);
    auto c = spec.constants.find(name);
    if (c != spec.constants.end())
      b.assign(target, lit(rational_from_double(c->second)));
    else
      detail::emit_ratfunc(b, target, spec.models.at(name), spec.variables,
                           infeasible, S);
    return target;
  };
  std::string regs = metric_value(kMetricRegs);
  std::string shared = metric_value(kMetricShared);
  std::string comp_insts = metric_value(kMetricComp);
  std::string uncoal = metric_value(kMetricUncoal);
  std::string coal = metric_value(kMetricCoal);
  std::string synch = metric_value(kMetricSynch);
  std::string total_blocks = metric_value(kMetricTotalBlocks);
  std::string mem_insts = b.fresh("m_mem_insts");
  b.add(mem_insts, var(uncoal), var(coal));

  // Occupancy section.
  std::string blocks, warps;
  detail::emit_occupancy_core(b, var(regs), var(shared), "T", infeasible,
                              &blocks, &warps);
  std::string n_zero = b.fresh("warps_under_one");
  b.cmp_lt(n_zero, var(warps), lit(1));
  auto n_ok = b.make_label();
  b.branch_if(n_zero, infeasible, n_ok);
  b.place(n_ok);

  // Latencies and issue cost.
  b.assign("mem_l_coal", var("mem_latency_cycles"));
  b.sub("txn_extra", var("uncoal_per_mw"), lit(1));
  b.mul("txn_cost", var("txn_extra"), var("departure_del_uncoal_cycles"));
  b.add("mem_l_uncoal", var("mem_latency_cycles"), var("txn_cost"));
  b.add("insts_issued", var(comp_insts), var(mem_insts));
  b.mul("comp_cycles", var("issue_cycles"), var("insts_issued"));

  // Repetitions over all SMs.
  b.mul("rep_den", var(blocks), var("num_SM"));
  if (opts.rep_mode == RepMode::Ceil)
    b.ceil_div("rep", var(total_blocks), var("rep_den"));
  else
    detail::emit_div(b, "rep", var(total_blocks), var("rep_den"), S);

  // Compute-only convention: with no memory instructions the pre-synch time
  // is comp_cycles per repetition and MWP saturates at N.
  std::string mem_zero = b.fresh("mem_zero");
  b.cmp_eq(mem_zero, var(mem_insts), lit(0));
  auto compute_only = b.make_label(), with_mem = b.make_label();
  b.branch_if(mem_zero, compute_only, with_mem);

  b.place(compute_only);
  b.mul("pre0", var("comp_cycles"), var("rep"));
  b.sub("nm1_0", var(warps), lit(1));
  b.mul("sc0", var("departure_del_coal_cycles"), var("nm1_0"));
  b.mul("sc0", var("sc0"), var(synch));
  b.mul("sc0", var("sc0"), var(blocks));
  b.mul("sc0", var("sc0"), var("rep"));
  b.add("total_cycles", var("pre0"), var("sc0"));
  b.jump(done);

  b.place(with_mem);
  detail::emit_div(b, "r_uncoal", var(uncoal), var(mem_insts), S);
  b.sub("r_coal", lit(1), var("r_uncoal"));
  b.mul("wl_u", var("r_uncoal"), var("mem_l_uncoal"));
  b.mul("wl_c", var("r_coal"), var("mem_l_coal"));
  b.add("weighted_mem_l", var("wl_u"), var("wl_c"));
  b.mul("dd_u", var("r_uncoal"), var("departure_del_uncoal_cycles"));
  b.mul("dd_u", var("dd_u"), var("uncoal_per_mw"));
  b.mul("dd_c", var("r_coal"), var("departure_del_coal_cycles"));
  b.add("departure_delay", var("dd_u"), var("dd_c"));
  b.mul("mc_u", var(uncoal), var("mem_l_uncoal"));
  b.mul("mc_c", var(coal), var("mem_l_coal"));
  b.add("mem_cycles", var("mc_u"), var("mc_c"));

  detail::emit_div(b, "mwp_no_bw", var("weighted_mem_l"),
                   var("departure_delay"), S);
  b.mul("bw_num", var("freq_GHz"), var("load_bytes_per_warp"));
  detail::emit_div(b, "bw_per_warp", var("bw_num"), var("mem_latency_cycles"),
                   S);
  b.mul("bw_all_sm", var("bw_per_warp"), var("num_SM"));
  detail::emit_div(b, "mwp_peak_bw", var("mem_bandwidth_GBps"),
                   var("bw_all_sm"), S);
  b.emit_min("mwp", var("mwp_no_bw"), var("mwp_peak_bw"));
  b.emit_min("mwp", var("mwp"), var(warps));

  std::string comp_zero = b.fresh("comp_zero");
  b.cmp_eq(comp_zero, var("comp_cycles"), lit(0));
  auto cwp_sat = b.make_label(), cwp_div = b.make_label(), cwp_done = b.make_label();
  b.branch_if(comp_zero, cwp_sat, cwp_div);
  b.place(cwp_sat);
  b.assign("cwp", var(warps));
  b.jump(cwp_done);
  b.place(cwp_div);
  b.add("busy_cycles", var("mem_cycles"), var("comp_cycles"));
  detail::emit_div(b, "cwp_full", var("busy_cycles"), var("comp_cycles"), S);
  b.emit_min("cwp", var("cwp_full"), var(warps));
  b.place(cwp_done);

  detail::emit_div(b, "comp_per_mem", var("comp_cycles"), var(mem_insts), S);
  b.sub("mwp_m1", var("mwp"), lit(1));

  // Case selection, in the same order as the direct implementation:
  //   both_saturated  iff MWP == N and CWP == N
  //   cwp_bound       iff CWP >= MWP or comp_cycles > mem_cycles
  //   mwp_bound       otherwise
  std::string eq1 = b.fresh("mwp_is_n"), eq2 = b.fresh("cwp_is_n");
  auto check2 = b.make_label(), elif_case = b.make_label();
  auto case_both = b.make_label(), case_cwp = b.make_label(),
       case_mwp = b.make_label(), have_pre = b.make_label();
  b.cmp_eq(eq1, var("mwp"), var(warps));
  b.branch_if(eq1, check2, elif_case);
  b.place(check2);
  b.cmp_eq(eq2, var("cwp"), var(warps));
  b.branch_if(eq2, case_both, elif_case);

  b.place(elif_case);
  std::string lt1 = b.fresh("cwp_lt_mwp"), lt2 = b.fresh("mem_lt_comp");
  auto second_test = b.make_label();
  b.cmp_lt(lt1, var("cwp"), var("mwp"));
  b.branch_if(lt1, second_test, case_cwp);  // !(CWP < MWP) means CWP >= MWP
  b.place(second_test);
  b.cmp_lt(lt2, var("mem_cycles"), var("comp_cycles"));
  b.branch_if(lt2, case_cwp, case_mwp);

  b.place(case_both);
  b.add("pre_b", var("mem_cycles"), var("comp_cycles"));
  b.mul("ovl_b", var("comp_per_mem"), var("mwp_m1"));
  b.add("pre_b", var("pre_b"), var("ovl_b"));
  b.mul("pre", var("pre_b"), var("rep"));
  b.jump(have_pre);

  b.place(case_cwp);
  b.mul("mem_n", var("mem_cycles"), var(warps));
  detail::emit_div(b, "mem_span", var("mem_n"), var("mwp"), S);
  b.mul("ovl_c", var("comp_per_mem"), var("mwp_m1"));
  b.add("pre_c", var("mem_span"), var("ovl_c"));
  b.mul("pre", var("pre_c"), var("rep"));
  b.jump(have_pre);

  b.place(case_mwp);
  b.mul("comp_n", var("comp_cycles"), var(warps));
  b.add("pre_m", var("mem_latency_cycles"), var("comp_n"));
  b.mul("pre", var("pre_m"), var("rep"));
  b.place(have_pre);

  b.mul("synch_cost", var("departure_delay"), var("mwp_m1"));
  b.mul("synch_cost", var("synch_cost"), var(synch));
  b.mul("synch_cost", var("synch_cost"), var(blocks));
  b.mul("synch_cost", var("synch_cost"), var("rep"));
  b.add("total_cycles", var("pre"), var("synch_cost"));
  b.jump(done);

  b.place(infeasible);
  b.assign("total_cycles", lit(-1));
  b.place(done);
  b.halt_return("total_cycles");
  return b.finish();
}

}  // namespace ratprog::perf
