#pragma once

// End-to-end glue: fit per-metric rational models from measured samples,
// bake a device profile into an emitted cycle-count program, lower programs
// to portable C, search launch-configuration spaces, and cross-check model
// predictions against collected measurements.
//
// Conventions shared by every stage:
//   * metric models are functions of (D1..Dd, bx, by[, bz]) in that order;
//   * an estimated cycle count of -1 from a program marks an infeasible
//     configuration and is discarded by the search;
//   * all report formatters are pure functions of their inputs, so repeated
//     runs produce byte-identical files.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ratprog/datakit.hpp"
#include "ratprog/interp.hpp"
#include "ratprog/ir.hpp"
#include "ratprog/perfmodel.hpp"
#include "ratprog/polyfit.hpp"
#include "ratprog/rational.hpp"

namespace ratprog::pipe {

struct PipelineError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Every metric column failed to fit; carries the per-metric reasons.
struct AllMetricsFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Every configuration in the searched space was infeasible.
struct NoFeasibleConfig : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Fitted model bundle.

struct MetricModel {
  poly::RationalFunction fn;
  poly::FitReport report;
};

struct MetricModelSet {
  std::vector<std::string> variables;  // D1..Dd, bx, by [, bz]
  std::map<std::string, MetricModel> models;
  std::map<std::string, double> constants;   // e.g. regs_per_thread
  std::map<std::string, std::string> failures;  // metric -> reason
};

// Variable list implied by a sample set: one D<i> per data parameter, then
// bx and by, plus bz only when some sample actually varies it.
inline std::vector<std::string> sample_variables(const data::SampleSet& set) {
  std::vector<std::string> vars;
  for (std::size_t i = 1; i <= set.dims(); ++i)
    vars.push_back("D" + std::to_string(i));
  vars.push_back("bx");
  vars.push_back("by");
  for (const data::Sample& s : set.samples)
    if (s.config.bz != 1) {
      vars.push_back("bz");
      break;
    }
  return vars;
}

// Fallback degree bounds when a metric has no explicit entry: quadratic
// numerator, linear denominator in every variable.
inline poly::DegreeBounds default_bounds(std::size_t n_variables) {
  poly::DegreeBounds b;
  b.num.assign(n_variables, 2);
  b.den.assign(n_variables, 1);
  return b;
}

namespace detail {

inline double coordinate(const data::Sample& s, const std::string& variable) {
  if (variable == "bx") return static_cast<double>(s.config.bx);
  if (variable == "by") return static_cast<double>(s.config.by);
  if (variable == "bz") return static_cast<double>(s.config.bz);
  if (variable.size() >= 2 && variable[0] == 'D') {
    std::size_t k = std::stoul(variable.substr(1));
    if (k < 1 || k > s.data_params.size())
      throw PipelineError("variable '" + variable +
                          "' exceeds the sample's data-parameter count");
    return static_cast<double>(s.data_params[k - 1]);
  }
  throw PipelineError("variable '" + variable +
                      "' is not a data parameter or block dimension");
}

}  // namespace detail

// Extracts one metric column as fit-ready (point, value) pairs.
inline poly::PointValueSet metric_points(
    const data::SampleSet& set, const std::string& metric,
    const std::vector<std::string>& variables) {
  poly::PointValueSet out;
  out.points.reserve(set.samples.size());
  out.values.reserve(set.samples.size());
  for (const data::Sample& s : set.samples) {
    auto it = s.metric_values.find(metric);
    if (it == s.metric_values.end())
      throw PipelineError("sample set has no metric column '" + metric + "'");
    std::vector<double> x;
    x.reserve(variables.size());
    for (const std::string& v : variables)
      x.push_back(detail::coordinate(s, v));
    out.points.push_back(std::move(x));
    out.values.push_back(it->second);
  }
  return out;
}

struct FitOptions {
  double rank_tol = poly::kDefaultRankTol;
};

// Fits one rational function per metric column.  Numerical failures
// (degenerate nullspace, SVD breakdown) are recorded per metric and do not
// abort the remaining fits; only a full wipeout raises AllMetricsFailed.
// Declared constants cover metrics that are not sampled (typically
// regs_per_thread and shared_words_per_block); a name may not be both a
// column and a constant.
inline MetricModelSet fit_all_metrics(
    const data::SampleSet& samples,
    const std::map<std::string, poly::DegreeBounds>& bounds,
    const std::map<std::string, double>& constants,
    const FitOptions& opts = {}) {
  if (samples.samples.empty())
    throw std::invalid_argument("fit_all_metrics: sample set is empty");
  MetricModelSet out;
  out.variables = sample_variables(samples);
  out.constants = constants;
  for (const std::string& metric : samples.metric_names) {
    if (constants.count(metric))
      throw PipelineError("metric '" + metric +
                          "' is both a sample column and a declared constant");
    poly::DegreeBounds b = bounds.count(metric)
                               ? bounds.at(metric)
                               : default_bounds(out.variables.size());
    if (b.num.size() != out.variables.size() ||
        b.den.size() != out.variables.size())
      throw PipelineError("degree bounds for metric '" + metric + "' must have " +
                          std::to_string(out.variables.size()) +
                          " entries per side");
    try {
      auto pv = metric_points(samples, metric, out.variables);
      auto [fn, report] = poly::fit_rational(pv, out.variables, b, opts.rank_tol);
      out.models[metric] = MetricModel{std::move(fn), std::move(report)};
    } catch (const poly::DegenerateFit& e) {
      out.failures[metric] = e.what();
    } catch (const poly::SvdFailure& e) {
      out.failures[metric] = e.what();
    }
  }
  if (out.models.empty()) {
    std::string msg = "no metric could be fitted:";
    for (const auto& [name, why] : out.failures)
      msg += " [" + name + ": " + why + "]";
    throw AllMetricsFailed(msg);
  }
  return out;
}

// Fitted models + constants as the evaluation/emission-ready metric spec.
// Throws perf::ModelError when a required metric is covered by neither.
inline perf::MetricSpec to_metric_spec(const MetricModelSet& m) {
  perf::MetricSpec spec;
  spec.variables = m.variables;
  for (const auto& [name, model] : m.models) spec.models[name] = model.fn;
  spec.constants = m.constants;
  perf::check_metric_spec(spec);
  return spec;
}

// Largest pointwise error of the model against reference values, relative to
// max(1, |reference|).  A singular model denominator at a test point counts
// as an infinite error.
inline double max_relative_error(const poly::RationalFunction& fn,
                                 const poly::PointValueSet& reference) {
  double worst = 0.0;
  for (std::size_t k = 0; k < reference.points.size(); ++k) {
    double predicted;
    try {
      predicted = poly::eval_ratfunc(fn, reference.points[k]);
    } catch (const poly::DenominatorNearZero&) {
      return std::numeric_limits<double>::infinity();
    }
    double rel = std::fabs(predicted - reference.values[k]) /
                 std::max(1.0, std::fabs(reference.values[k]));
    worst = std::max(worst, rel);
  }
  return worst;
}

// Evaluates every fitted model on a held-out sample set and records the
// per-metric worst relative error in each fit report.
inline void attach_holdout(MetricModelSet& models,
                           const data::SampleSet& held_out) {
  for (auto& [metric, model] : models.models) {
    auto pv = metric_points(held_out, metric, models.variables);
    model.report.holdout_relative_error = max_relative_error(model.fn, pv);
  }
}

// ---------------------------------------------------------------------------
// Program generation.

// Substitutes the device profile for every program input that names one of
// its fields, then re-validates.  Inputs that are not profile fields (data
// parameters, block dimensions) survive as inputs of the returned program.
inline ir::RationalProgram bake_hardware(const ir::RationalProgram& p,
                                         const perf::DeviceProfile& hw) {
  std::map<std::string, Rational> all = perf::profile_bindings(hw);
  std::map<std::string, Rational> used;
  for (const std::string& in : p.inputs) {
    auto it = all.find(in);
    if (it != all.end()) used.insert(*it);
  }
  ir::RationalProgram baked = ir::specialize(p, used);
  ir::ValidationReport report = ir::validate(baked);
  if (!report.ok())
    throw PipelineError("baked program failed validation: " +
                        report.violations.front());
  return baked;
}

// Cycle-count program for the fitted models with the device profile baked in
// as literals: the result's inputs are exactly the model variables.
inline ir::RationalProgram generate_rp(const MetricModelSet& models,
                                       const perf::DeviceProfile& hw,
                                       const perf::EmitOptions& opts = {}) {
  return bake_hardware(perf::emit_mwpcwp_rp(to_metric_spec(models), opts), hw);
}

// Occupancy-only variant: inputs (R, Z, T), device caps baked in.
inline ir::RationalProgram generate_occupancy_rp(const perf::DeviceProfile& hw) {
  return bake_hardware(perf::emit_occupancy_rp(), hw);
}

// ---------------------------------------------------------------------------
// C lowering.
//
// The emitted translation unit is self-contained (math.h + stdint.h only)
// and deterministic.  Lowering: every program value becomes an IEEE-754
// double; the integer-part operations use exact 64-bit integer division when
// both operands are integral and within int64_t range -- with an explicit
// quotient correction for negative operands -- and otherwise fall back to
// floor()/ceil() of the double quotient.  Comparisons yield 1.0/0.0 and
// branches test != 0.0.  Relative to the exact interpreter the only error
// sources are double rounding of literals and arithmetic (~1e-15), so
// programs agree with the interpreter far inside a 1e-9 relative tolerance
// away from branch boundaries; integer-only programs agree exactly.

inline std::string emit_c_source(const ir::RationalProgram& p,
                                 const std::string& entry_name = "rp_eval") {
  auto cvar = [](const std::string& name) { return "v_" + name; };
  auto cliteral = [](const Rational& r) {
    std::string s = data::detail::format_double(to_double(r));
    if (s.find_first_of(".eE") == std::string::npos &&
        s.find("inf") == std::string::npos && s.find("nan") == std::string::npos)
      s += ".0";
    return s;
  };
  auto coperand = [&](const ir::Operand& o) {
    return o.is_var() ? cvar(o.var) : cliteral(o.lit);
  };

  // Labels are emitted only at jump targets.
  std::set<std::size_t> labelled;
  for (const ir::TacInstruction& ins : p.body)
    for (std::size_t t : ins.jump_targets) labelled.insert(t);

  // Locals: declared inputs first, then every other variable in first-use
  // order over a sequential scan of the body.
  std::vector<std::string> locals;
  std::set<std::string> seen(p.inputs.begin(), p.inputs.end());
  auto note = [&](const std::string& name) {
    if (seen.insert(name).second) locals.push_back(name);
  };
  for (const ir::TacInstruction& ins : p.body) {
    if (!ins.target.empty()) note(ins.target);
    for (const ir::Operand& o : ins.operands)
      if (o.is_var()) note(o.var);
  }

  std::ostringstream out;
  out << "/* " << entry_name
      << ": branching three-address program over rational values, lowered to\n"
         " * C doubles.  Generated mechanically; do not edit.\n"
         " *\n"
         " * Lowering rules:\n"
         " *   - every value is a double; literals are shortest-round-trip\n"
         " *     decimal doubles;\n"
         " *   - floor_div/ceil_div/euclid_quot/euclid_rem use exact 64-bit\n"
         " *     integer division when both operands are integral and |.| <\n"
         " *     9e15, correcting the truncated quotient for negative\n"
         " *     operands, and otherwise floor()/ceil() of the double\n"
         " *     quotient;\n"
         " *   - comparisons produce 1.0/0.0; branches test != 0.0.\n"
         " */\n"
         "#include <math.h>\n"
         "#include <stdint.h>\n"
         "\n"
         "static double rp_floor_div(double a, double b) {\n"
         "  if (a == floor(a) && b == floor(b) && fabs(a) < 9.0e15 &&\n"
         "      fabs(b) < 9.0e15 && b != 0.0) {\n"
         "    int64_t ia = (int64_t)a;\n"
         "    int64_t ib = (int64_t)b;\n"
         "    int64_t q = ia / ib;\n"
         "    if ((ia % ib != 0) && ((ia < 0) != (ib < 0))) q -= 1;\n"
         "    return (double)q;\n"
         "  }\n"
         "  return floor(a / b);\n"
         "}\n"
         "\n"
         "static double rp_ceil_div(double a, double b) {\n"
         "  return -rp_floor_div(-a, b);\n"
         "}\n"
         "\n"
         "static double rp_euclid_quot(double a, double b) {\n"
         "  return b >= 0.0 ? rp_floor_div(a, b) : rp_ceil_div(a, b);\n"
         "}\n"
         "\n"
         "static double rp_euclid_rem(double a, double b) {\n"
         "  return a - b * rp_euclid_quot(a, b);\n"
         "}\n"
         "\n";

  out << "/* inputs, in order:";
  for (const std::string& in : p.inputs) out << " " << in;
  out << " */\n";
  out << "double " << entry_name << "(const double *in) {\n";
  for (std::size_t i = 0; i < p.inputs.size(); ++i)
    out << "  double " << cvar(p.inputs[i]) << " = in[" << i << "];\n";
  for (const std::string& name : locals)
    out << "  double " << cvar(name) << " = 0.0;\n";
  out << "\n";

  auto label = [](std::size_t i) { return "L" + std::to_string(i); };
  for (std::size_t i = 0; i < p.body.size(); ++i) {
    const ir::TacInstruction& ins = p.body[i];
    if (labelled.count(i)) out << label(i) << ":\n";
    out << "  ";
    switch (ins.op) {
      case ir::Opcode::Assign:
        out << cvar(ins.target) << " = " << coperand(ins.operands[0]) << ";";
        break;
      case ir::Opcode::Neg:
        out << cvar(ins.target) << " = -(" << coperand(ins.operands[0]) << ");";
        break;
      case ir::Opcode::Add:
        out << cvar(ins.target) << " = " << coperand(ins.operands[0]) << " + "
            << coperand(ins.operands[1]) << ";";
        break;
      case ir::Opcode::Sub:
        out << cvar(ins.target) << " = " << coperand(ins.operands[0]) << " - "
            << coperand(ins.operands[1]) << ";";
        break;
      case ir::Opcode::Mul:
        out << cvar(ins.target) << " = " << coperand(ins.operands[0]) << " * "
            << coperand(ins.operands[1]) << ";";
        break;
      case ir::Opcode::FloorDiv:
        out << cvar(ins.target) << " = rp_floor_div("
            << coperand(ins.operands[0]) << ", " << coperand(ins.operands[1])
            << ");";
        break;
      case ir::Opcode::CeilDiv:
        out << cvar(ins.target) << " = rp_ceil_div("
            << coperand(ins.operands[0]) << ", " << coperand(ins.operands[1])
            << ");";
        break;
      case ir::Opcode::EuclidQuot:
        out << cvar(ins.target) << " = rp_euclid_quot("
            << coperand(ins.operands[0]) << ", " << coperand(ins.operands[1])
            << ");";
        break;
      case ir::Opcode::EuclidRem:
        out << cvar(ins.target) << " = rp_euclid_rem("
            << coperand(ins.operands[0]) << ", " << coperand(ins.operands[1])
            << ");";
        break;
      case ir::Opcode::CmpEq:
        out << cvar(ins.target) << " = (" << coperand(ins.operands[0])
            << " == " << coperand(ins.operands[1]) << ") ? 1.0 : 0.0;";
        break;
      case ir::Opcode::CmpLt:
        out << cvar(ins.target) << " = (" << coperand(ins.operands[0])
            << " < " << coperand(ins.operands[1]) << ") ? 1.0 : 0.0;";
        break;
      case ir::Opcode::BranchIf:
        out << "if (" << coperand(ins.operands[0]) << " != 0.0) goto "
            << label(ins.jump_targets[0]) << "; else goto "
            << label(ins.jump_targets[1]) << ";";
        break;
      case ir::Opcode::Jump:
        out << "goto " << label(ins.jump_targets[0]) << ";";
        break;
      case ir::Opcode::HaltReturn:
        out << "return " << cvar(ins.operands.empty() ? p.output
                                                      : ins.operands[0].var)
            << ";";
        break;
    }
    out << "\n";
  }
  if (labelled.count(p.body.size()))
    out << label(p.body.size()) << ":\n";
  out << "  return 0.0;\n}\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Configuration search.

struct SearchOptions {
  // Occupancy context when no metric spec is supplied: per-thread register
  // and per-block shared-word pressure of the kernel.
  double regs_per_thread = 0.0;
  double shared_words_per_block = 0.0;
  // When set, occupancy (and the diagnostic case tag) for each feasible
  // configuration is derived from these metric models instead.
  const perf::MetricSpec* metrics = nullptr;
  perf::RepMode rep_mode = perf::RepMode::Real;
  int jobs = 1;
  // Estimated-cycle values within this relative distance of the minimum
  // count as tied for the optimum.
  double tie_rel_tol = 1e-12;
  std::size_t step_limit = ir::kDefaultStepLimit;
};

struct SearchRow {
  perf::LaunchConfig config;
  double estimated_cycles = 0.0;
  double occupancy = 0.0;
  std::string case_tag = "-";
};

struct SearchResult {
  std::vector<SearchRow> ranking;  // feasible configurations, best first
  std::size_t ties = 1;            // size of the leading tie group
  std::size_t evaluated = 0;
  std::size_t infeasible = 0;
  const SearchRow& best() const { return ranking.front(); }
};

namespace detail {

struct BindingPlan {
  enum class Source { Bx, By, Bz, DataParam, Fixed };
  struct Slot {
    std::string name;
    Source source = Source::Fixed;
    std::size_t data_index = 0;
    Rational fixed;
  };
  std::vector<Slot> slots;
};

inline BindingPlan make_binding_plan(const ir::RationalProgram& rp,
                                     const std::vector<long long>& data_params,
                                     const perf::DeviceProfile& hw) {
  std::map<std::string, Rational> hw_values = perf::profile_bindings(hw);
  BindingPlan plan;
  for (const std::string& in : rp.inputs) {
    BindingPlan::Slot slot;
    slot.name = in;
    if (in == "bx") {
      slot.source = BindingPlan::Source::Bx;
    } else if (in == "by") {
      slot.source = BindingPlan::Source::By;
    } else if (in == "bz") {
      slot.source = BindingPlan::Source::Bz;
    } else if (auto it = hw_values.find(in); it != hw_values.end()) {
      slot.source = BindingPlan::Source::Fixed;
      slot.fixed = it->second;
    } else if (in.size() >= 2 && in[0] == 'D' &&
               in.find_first_not_of("0123456789", 1) == std::string::npos) {
      std::size_t k = std::stoul(in.substr(1));
      if (k < 1 || k > data_params.size())
        throw PipelineError("program input '" + in + "' has no value: " +
                            std::to_string(data_params.size()) +
                            " data parameter(s) were given");
      slot.source = BindingPlan::Source::DataParam;
      slot.data_index = k - 1;
    } else {
      throw PipelineError("program input '" + in +
                          "' is neither a block dimension, a data parameter, "
                          "nor a device profile field");
    }
    plan.slots.push_back(std::move(slot));
  }
  return plan;
}

inline std::map<std::string, Rational> bindings_for(
    const BindingPlan& plan, const std::vector<long long>& data_params,
    const perf::LaunchConfig& config) {
  std::map<std::string, Rational> b;
  for (const BindingPlan::Slot& s : plan.slots) {
    switch (s.source) {
      case BindingPlan::Source::Bx: b[s.name] = Rational(config.bx); break;
      case BindingPlan::Source::By: b[s.name] = Rational(config.by); break;
      case BindingPlan::Source::Bz: b[s.name] = Rational(config.bz); break;
      case BindingPlan::Source::DataParam:
        b[s.name] = Rational(data_params[s.data_index]);
        break;
      case BindingPlan::Source::Fixed: b[s.name] = s.fixed; break;
    }
  }
  return b;
}

// Model-variable coordinates for one (data parameters, config) point.
inline std::vector<double> spec_point(const perf::MetricSpec& spec,
                                      const std::vector<long long>& data_params,
                                      const perf::LaunchConfig& config) {
  std::vector<double> x;
  x.reserve(spec.variables.size());
  for (const std::string& v : spec.variables) {
    if (v == "bx") {
      x.push_back(static_cast<double>(config.bx));
    } else if (v == "by") {
      x.push_back(static_cast<double>(config.by));
    } else if (v == "bz") {
      x.push_back(static_cast<double>(config.bz));
    } else {
      std::size_t k = std::stoul(v.substr(1));
      if (k < 1 || k > data_params.size())
        throw PipelineError("model variable '" + v + "' has no value: " +
                            std::to_string(data_params.size()) +
                            " data parameter(s) were given");
      x.push_back(static_cast<double>(data_params[k - 1]));
    }
  }
  return x;
}

inline bool lex_less(const perf::LaunchConfig& a, const perf::LaunchConfig& b) {
  if (a.bx != b.bx) return a.bx < b.bx;
  if (a.by != b.by) return a.by < b.by;
  return a.bz < b.bz;
}

}  // namespace detail

// Evaluates the program at every configuration in `space`, discards
// infeasible ones (output < 0), and ranks the rest by estimated cycles.
// Within a leading group tied to within `tie_rel_tol` (relative), higher
// occupancy wins, then the lexicographically smallest (bx, by, bz).  The
// result is a pure function of the inputs: `jobs` only adds worker threads
// over a static partition of the space and never changes any output.
inline SearchResult search_optimal(const ir::RationalProgram& rp,
                                   const std::vector<long long>& data_params,
                                   const perf::DeviceProfile& hw,
                                   const std::vector<perf::LaunchConfig>& space,
                                   const SearchOptions& opts = {}) {
  if (space.empty())
    throw std::invalid_argument("search_optimal: configuration space is empty");
  const detail::BindingPlan plan = detail::make_binding_plan(rp, data_params, hw);

  const std::size_t n = space.size();
  std::vector<std::optional<Rational>> cycles(n);
  auto evaluate_range = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      Rational v = ir::evaluate(rp, detail::bindings_for(plan, data_params,
                                                         space[i]),
                                opts.step_limit);
      if (v >= 0) cycles[i] = std::move(v);
    }
  };

  std::size_t jobs = opts.jobs > 1 ? std::min<std::size_t>(opts.jobs, n) : 1;
  if (jobs <= 1) {
    evaluate_range(0, n);
  } else {
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(jobs);
    for (std::size_t j = 0; j < jobs; ++j) {
      std::size_t lo = n * j / jobs, hi = n * (j + 1) / jobs;
      workers.emplace_back([&, j, lo, hi] {
        try {
          evaluate_range(lo, hi);
        } catch (...) {
          errors[j] = std::current_exception();
        }
      });
    }
    for (std::thread& w : workers) w.join();
    for (const std::exception_ptr& e : errors)
      if (e) std::rethrow_exception(e);
  }

  std::vector<std::size_t> feasible;
  for (std::size_t i = 0; i < n; ++i)
    if (cycles[i]) feasible.push_back(i);
  if (feasible.empty())
    throw NoFeasibleConfig(
        "no configuration in the search space can launch on this device");

  // Occupancy and case tag per feasible configuration (diagnostics and the
  // secondary ranking criterion).
  std::vector<double> occ(n, 0.0);
  std::vector<std::string> tag(n, "-");
  for (std::size_t i : feasible) {
    const perf::LaunchConfig& c = space[i];
    if (opts.metrics) {
      try {
        std::vector<double> x = detail::spec_point(*opts.metrics, data_params, c);
        perf::KernelMetrics m = perf::evaluate_metrics(*opts.metrics, x);
        occ[i] = perf::occupancy(hw, m.regs_per_thread,
                                 m.shared_words_per_block, c.threads());
        tag[i] = perf::case_name(
            perf::mwpcwp_cycles(hw, m, c, opts.rep_mode).case_tag);
      } catch (const poly::DenominatorNearZero&) {
        occ[i] = perf::occupancy(hw, opts.regs_per_thread,
                                 opts.shared_words_per_block, c.threads());
      } catch (const perf::ZeroOccupancy&) {
        // Feasible per the program but rejected by the direct model (an
        // edge the two sides round differently): keep the row, leave the
        // tag unknown.
      } catch (const perf::ModelError&) {
        // Fitted metrics can dip below zero at corner points; the program
        // still produced a total, so only the diagnostic tag is dropped.
      }
    } else {
      occ[i] = perf::occupancy(hw, opts.regs_per_thread,
                               opts.shared_words_per_block, c.threads());
    }
  }

  std::sort(feasible.begin(), feasible.end(),
            [&](std::size_t a, std::size_t b) {
              if (*cycles[a] != *cycles[b]) return *cycles[a] < *cycles[b];
              return detail::lex_less(space[a], space[b]);
            });

  const Rational& best_ec = *cycles[feasible.front()];
  Rational bound = best_ec + best_ec * rational_from_double(opts.tie_rel_tol);
  std::size_t tie_count = 0;
  while (tie_count < feasible.size() &&
         *cycles[feasible[tie_count]] <= bound)
    ++tie_count;
  std::stable_sort(feasible.begin(), feasible.begin() + tie_count,
                   [&](std::size_t a, std::size_t b) {
                     return occ[a] > occ[b];
                   });

  SearchResult out;
  out.evaluated = n;
  out.infeasible = n - feasible.size();
  out.ties = tie_count;
  out.ranking.reserve(feasible.size());
  for (std::size_t i : feasible)
    out.ranking.push_back(SearchRow{space[i], to_double(*cycles[i]), occ[i],
                                    tag[i]});
  return out;
}

// ---------------------------------------------------------------------------
// Error metric.

// Position of a chosen configuration's runtime within [best, worst], as a
// percentage: 0% is optimal, 100% is pessimal.  Degenerate inputs are
// reported through `warnings` rather than by failing: a collapsed interval
// defines the error as 0, and a runtime outside the interval is clamped.
inline double error_metric(double chosen, double best, double worst,
                           std::vector<std::string>* warnings = nullptr) {
  auto warn = [&](const std::string& msg) {
    if (warnings) warnings->push_back(msg);
  };
  if (!(best <= worst))
    throw std::invalid_argument("error_metric: best exceeds worst");
  if (best == worst) {
    warn("best and worst runtimes coincide; error defined as 0%");
    return 0.0;
  }
  if (chosen < best) {
    warn("chosen runtime is below the best reference; clamped");
    chosen = best;
  } else if (chosen > worst) {
    warn("chosen runtime is above the worst reference; clamped");
    chosen = worst;
  }
  return (chosen - best) / (worst - best) * 100.0;
}

// ---------------------------------------------------------------------------
// Sanity report: measured argmin vs program argmin per data-parameter tuple.

struct SanityRow {
  std::vector<long long> data_params;
  perf::LaunchConfig measured_best;      // argmin over collected metrics
  double measured_best_cycles = 0.0;     // model cycles at measured_best
  perf::LaunchConfig predicted_best;     // argmin of the rational program
  double predicted_best_cycles = 0.0;    // program cycles at predicted_best
  double collected_cycles = 0.0;         // collected-metric cycles at predicted_best
};

struct SanityReport {
  std::vector<std::string> param_names;  // D1..Dd
  std::vector<SanityRow> rows;
  std::vector<std::string> notes;  // skipped groups etc.
};

namespace detail {

// Cycle-model metrics taken from one collected sample, with declared
// constants filling anything the CSV does not carry.
inline perf::KernelMetrics metrics_from_sample(const data::Sample& s,
                                               const MetricModelSet& models) {
  auto value = [&](const char* name) -> double {
    auto it = s.metric_values.find(name);
    if (it != s.metric_values.end()) return it->second;
    auto c = models.constants.find(name);
    if (c != models.constants.end()) return c->second;
    throw PipelineError(std::string("sample provides no metric '") + name +
                        "' and no constant is declared for it");
  };
  perf::KernelMetrics m;
  m.regs_per_thread = value(perf::kMetricRegs);
  m.shared_words_per_block = value(perf::kMetricShared);
  m.comp_insts_per_thread = value(perf::kMetricComp);
  m.uncoal_mem_insts_per_thread = value(perf::kMetricUncoal);
  m.coal_mem_insts_per_thread = value(perf::kMetricCoal);
  m.mem_insts_per_thread =
      m.uncoal_mem_insts_per_thread + m.coal_mem_insts_per_thread;
  m.synch_insts_per_block = value(perf::kMetricSynch);
  m.total_blocks = value(perf::kMetricTotalBlocks);
  return m;
}

inline std::string params_label(const std::vector<long long>& params) {
  std::string s;
  for (std::size_t i = 0; i < params.size(); ++i)
    s += (i ? "," : "") + std::to_string(params[i]);
  return s;
}

}  // namespace detail

// For every distinct data-parameter tuple in `samples`: the best
// configuration according to the cycle model fed with *collected* metrics
// (measured_best), the best according to the rational program
// (predicted_best), and the collected-metric cycles at the program's pick.
// Configurations outside the sampled set are not considered, so both argmins
// range over the same space.
inline SanityReport sanity_report(const MetricModelSet& models,
                                  const data::SampleSet& samples,
                                  const ir::RationalProgram& rp,
                                  const perf::DeviceProfile& hw,
                                  perf::RepMode rep_mode = perf::RepMode::Real) {
  if (models.models.empty())
    throw PipelineError("sanity report requires at least one fitted model");
  if (samples.samples.empty())
    throw PipelineError("sanity report requires a non-empty sample set");
  perf::MetricSpec spec = to_metric_spec(models);

  std::map<std::vector<long long>, std::vector<const data::Sample*>> groups;
  for (const data::Sample& s : samples.samples)
    groups[s.data_params].push_back(&s);

  SanityReport report;
  for (std::size_t i = 1; i <= samples.dims(); ++i)
    report.param_names.push_back("D" + std::to_string(i));

  for (const auto& [params, members] : groups) {
    // Collected-metric side.
    bool have_measured = false;
    perf::LaunchConfig best_cfg;
    double best_cycles = 0.0;
    for (const data::Sample* s : members) {
      double total;
      try {
        total = perf::mwpcwp_cycles(hw, detail::metrics_from_sample(*s, models),
                                    s->config, rep_mode)
                    .total_cycles;
      } catch (const perf::ZeroOccupancy&) {
        continue;
      }
      if (!have_measured || total < best_cycles ||
          (total == best_cycles && detail::lex_less(s->config, best_cfg))) {
        have_measured = true;
        best_cfg = s->config;
        best_cycles = total;
      }
    }
    if (!have_measured) {
      report.notes.push_back("D=(" + detail::params_label(params) +
                             "): no sampled configuration is feasible; skipped");
      continue;
    }

    // Program side, over the same configurations.
    std::vector<perf::LaunchConfig> space;
    for (const data::Sample* s : members) space.push_back(s->config);
    std::sort(space.begin(), space.end(), detail::lex_less);
    SearchOptions so;
    so.metrics = &spec;
    so.rep_mode = rep_mode;
    SearchResult found;
    try {
      found = search_optimal(rp, params, hw, space, so);
    } catch (const NoFeasibleConfig&) {
      report.notes.push_back("D=(" + detail::params_label(params) +
                             "): program marks every sampled configuration "
                             "infeasible; skipped");
      continue;
    }

    SanityRow row;
    row.data_params = params;
    row.measured_best = best_cfg;
    row.measured_best_cycles = best_cycles;
    row.predicted_best = found.best().config;
    row.predicted_best_cycles = found.best().estimated_cycles;
    row.collected_cycles = std::numeric_limits<double>::quiet_NaN();
    for (const data::Sample* s : members) {
      const perf::LaunchConfig& c = s->config;
      if (c.bx == row.predicted_best.bx && c.by == row.predicted_best.by &&
          c.bz == row.predicted_best.bz) {
        try {
          row.collected_cycles =
              perf::mwpcwp_cycles(hw, detail::metrics_from_sample(*s, models),
                                  c, rep_mode)
                  .total_cycles;
        } catch (const perf::ZeroOccupancy&) {
        }
        break;
      }
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Report formatting.  All formatters are deterministic.

namespace detail {

inline std::string config_label(const perf::LaunchConfig& c) {
  return std::to_string(c.bx) + "x" + std::to_string(c.by) + "x" +
         std::to_string(c.bz);
}

// Minimal aligned-text table: left-justified cells padded to column width.
inline std::string format_table(const std::vector<std::string>& header,
                                const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t j = 0; j < header.size(); ++j) width[j] = header[j].size();
  for (const auto& row : rows)
    for (std::size_t j = 0; j < row.size(); ++j)
      width[j] = std::max(width[j], row[j].size());
  std::ostringstream out;
  auto emit_row = [&](const std::vector<std::string>& row) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      out << row[j];
      if (j + 1 < row.size())
        out << std::string(width[j] - row[j].size() + 2, ' ');
    }
    out << "\n";
  };
  emit_row(header);
  std::size_t total = 0;
  for (std::size_t j = 0; j < width.size(); ++j)
    total += width[j] + (j + 1 < width.size() ? 2 : 0);
  out << std::string(total, '-') << "\n";
  for (const auto& row : rows) emit_row(row);
  return out.str();
}

}  // namespace detail

inline std::string format_search_csv(const SearchResult& r) {
  std::ostringstream out;
  out << "bx,by,bz,Ec,occupancy,case\n";
  for (const SearchRow& row : r.ranking)
    out << row.config.bx << "," << row.config.by << "," << row.config.bz << ","
        << data::detail::format_double(row.estimated_cycles) << ","
        << data::detail::format_double(row.occupancy) << "," << row.case_tag
        << "\n";
  return out.str();
}

inline std::string format_search_text(const SearchResult& r) {
  std::vector<std::vector<std::string>> rows;
  for (const SearchRow& row : r.ranking)
    rows.push_back({detail::config_label(row.config),
                    data::detail::format_double(row.estimated_cycles),
                    data::detail::format_double(row.occupancy), row.case_tag});
  std::ostringstream out;
  out << detail::format_table({"config", "Ec", "occupancy", "case"}, rows);
  out << "evaluated " << r.evaluated << " configuration(s), " << r.infeasible
      << " infeasible; optimum ties: " << r.ties << "\n";
  return out.str();
}

// One JSON object per feasible configuration, in ranking order.
inline std::string format_search_jsonl(const SearchResult& r) {
  std::string out;
  for (const SearchRow& row : r.ranking) {
    nlohmann::ordered_json j;
    j["config"] = {row.config.bx, row.config.by, row.config.bz};
    j["Ec"] = row.estimated_cycles;
    j["occupancy"] = row.occupancy;
    j["case_tag"] = row.case_tag;
    out += j.dump();
    out += "\n";
  }
  return out;
}

inline std::string format_sanity_csv(const SanityReport& r) {
  std::ostringstream out;
  for (const std::string& p : r.param_names) out << p << ",";
  out << "ci_bx,ci_by,ci_bz,Ec_i,cr_bx,cr_by,cr_bz,Ec_r,collected_Ec\n";
  for (const SanityRow& row : r.rows) {
    for (long long p : row.data_params) out << p << ",";
    out << row.measured_best.bx << "," << row.measured_best.by << ","
        << row.measured_best.bz << ","
        << data::detail::format_double(row.measured_best_cycles) << ","
        << row.predicted_best.bx << "," << row.predicted_best.by << ","
        << row.predicted_best.bz << ","
        << data::detail::format_double(row.predicted_best_cycles) << ","
        << data::detail::format_double(row.collected_cycles) << "\n";
  }
  return out.str();
}

// One JSON object per data-parameter tuple, in row order.
inline std::string format_sanity_jsonl(const SanityReport& r) {
  std::string out;
  for (const SanityRow& row : r.rows) {
    nlohmann::ordered_json j;
    j["data_params"] = row.data_params;
    j["measured_best"] = {row.measured_best.bx, row.measured_best.by,
                          row.measured_best.bz};
    j["Ec_i"] = row.measured_best_cycles;
    j["predicted_best"] = {row.predicted_best.bx, row.predicted_best.by,
                           row.predicted_best.bz};
    j["Ec_r"] = row.predicted_best_cycles;
    j["collected_Ec"] = row.collected_cycles;
    out += j.dump();
    out += "\n";
  }
  return out;
}

inline std::string format_sanity_text(const SanityReport& r) {
  std::vector<std::string> header = r.param_names;
  header.insert(header.end(),
                {"C_i", "Ec_i", "C_r", "Ec_r", "collected Ec"});
  std::vector<std::vector<std::string>> rows;
  for (const SanityRow& row : r.rows) {
    std::vector<std::string> cells;
    for (long long p : row.data_params) cells.push_back(std::to_string(p));
    cells.push_back(detail::config_label(row.measured_best));
    cells.push_back(data::detail::format_double(row.measured_best_cycles));
    cells.push_back(detail::config_label(row.predicted_best));
    cells.push_back(data::detail::format_double(row.predicted_best_cycles));
    cells.push_back(data::detail::format_double(row.collected_cycles));
    rows.push_back(std::move(cells));
  }
  std::ostringstream out;
  out << detail::format_table(header, rows);
  for (const std::string& note : r.notes) out << "note: " << note << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Model-set persistence (JSON, schema "ratprog-models-v1").

inline std::string format_models(const MetricModelSet& m) {
  nlohmann::ordered_json j;
  j["schema"] = "ratprog-models-v1";
  j["variables"] = m.variables;
  j["constants"] = nlohmann::ordered_json::object();
  for (const auto& [name, value] : m.constants) j["constants"][name] = value;
  j["metrics"] = nlohmann::ordered_json::object();
  for (const auto& [name, model] : m.models) {
    nlohmann::ordered_json body = data::detail::ratfunc_to_json(model.fn);
    nlohmann::ordered_json rep;
    rep["residual_norm"] = model.report.residual_norm;
    rep["numerical_rank"] = model.report.numerical_rank;
    rep["truncated"] = model.report.truncated;
    rep["singular_values"] = model.report.singular_values;
    if (model.report.holdout_relative_error)
      rep["holdout_relative_error"] = *model.report.holdout_relative_error;
    body["report"] = std::move(rep);
    j["metrics"][name] = std::move(body);
  }
  j["failures"] = nlohmann::ordered_json::object();
  for (const auto& [name, why] : m.failures) j["failures"][name] = why;
  return j.dump(2) + "\n";
}

inline MetricModelSet parse_models(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw PipelineError(std::string("models file is not valid JSON: ") +
                        e.what());
  }
  try {
    if (j.value("schema", "") != "ratprog-models-v1")
      throw PipelineError("models file schema must be 'ratprog-models-v1'");
    MetricModelSet m;
    m.variables = j.at("variables").get<std::vector<std::string>>();
    if (m.variables.empty())
      throw PipelineError("models file declares no variables");
    // Note: .items() must not be called on a temporary (the proxy would
    // outlive the container), so the defaulted lookups are materialized.
    const nlohmann::json constants =
        j.value("constants", nlohmann::json::object());
    for (const auto& [name, value] : constants.items())
      m.constants[name] = value.get<double>();
    if (!j.contains("metrics") || !j.at("metrics").is_object())
      throw PipelineError("models file is missing the 'metrics' object");
    for (const auto& [name, body] : j.at("metrics").items()) {
      MetricModel model;
      model.fn = data::detail::ratfunc_from_json(body, m.variables, name);
      if (body.contains("report")) {
        const auto& rep = body.at("report");
        model.report.residual_norm = rep.value("residual_norm", 0.0);
        model.report.numerical_rank = rep.value("numerical_rank", 0);
        model.report.truncated = rep.value("truncated", false);
        model.report.singular_values =
            rep.value("singular_values", std::vector<double>{});
        if (rep.contains("holdout_relative_error"))
          model.report.holdout_relative_error =
              rep.at("holdout_relative_error").get<double>();
      }
      m.models[name] = std::move(model);
    }
    const nlohmann::json failures =
        j.value("failures", nlohmann::json::object());
    for (const auto& [name, why] : failures.items())
      m.failures[name] = why.get<std::string>();
    return m;
  } catch (const data::KernelSpecError& e) {
    throw PipelineError(e.what());
  } catch (const nlohmann::json::exception& e) {
    throw PipelineError(std::string("models file is malformed: ") + e.what());
  }
}

inline void write_models(const MetricModelSet& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PipelineError("cannot open '" + path + "' for writing");
  out << format_models(m);
  out.flush();
  if (!out) throw PipelineError("failed writing '" + path + "'");
}

inline MetricModelSet read_models(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PipelineError("cannot open '" + path + "' for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_models(buf.str());
  } catch (const PipelineError& e) {
    throw PipelineError(path + ": " + e.what());
  }
}

}  // namespace ratprog::pipe
