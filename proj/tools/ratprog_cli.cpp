// ratprog: batch CLI over the rational-program performance toolkit.
//
// Subcommands: synth, fit, gen-rp, eval-rp, search, sanity, validate.
// Exit codes: 0 success, 1 usage error, 2 data error.  All outputs are pure
// functions of the inputs (plus --seed), so reruns are byte-identical.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ratprog/ir_text.hpp"
#include "ratprog/pipeline.hpp"

using namespace ratprog;

namespace {

int usage_error(const std::string& message) {
  std::cerr << "usage error: " << message << "\n";
  return 1;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot open '" + path + "' for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// `-` writes to stdout; anything else is a file path.
void write_output(const std::string& path, const std::string& content) {
  if (path == "-") {
    std::cout << content;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw std::runtime_error("cannot open '" + path + "' for writing");
  out << content;
  out.flush();
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

std::optional<std::vector<long long>> parse_size_list(const std::string& text) {
  std::vector<long long> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      long long v = std::stoll(item, &used);
      if (used != item.size() || v <= 0) return std::nullopt;
      out.push_back(v);
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }
  if (out.empty()) return std::nullopt;
  return out;
}

perf::RepMode parse_rep_mode(const std::string& name) {
  if (name == "real") return perf::RepMode::Real;
  if (name == "ceil") return perf::RepMode::Ceil;
  throw std::runtime_error("--rep-mode must be 'real' or 'ceil'");
}

// Bounds sidecar: {"<metric>": {"num": [..], "den": [..]}, ...}
std::map<std::string, poly::DegreeBounds> load_bounds(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": bounds file is not valid JSON: " +
                             e.what());
  }
  std::map<std::string, poly::DegreeBounds> out;
  try {
    for (const auto& [metric, body] : j.items()) {
      poly::DegreeBounds b;
      b.num = body.at("num").get<std::vector<int>>();
      b.den = body.at("den").get<std::vector<int>>();
      out[metric] = std::move(b);
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": bounds entry is malformed (expected "
                             "{\"num\": [..], \"den\": [..]}): " + e.what());
  }
  return out;
}

ir::RationalProgram load_program(const std::string& path) {
  try {
    return ir::parse(read_text_file(path));
  } catch (const ir::ParseError& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

struct SynthArgs {
  std::string kernel_path;
  std::string sizes_text;
  std::string output = "-";
  std::uint64_t seed = 0;
  double noise_rel = -1.0;  // <0: use the kernel file's value
  long long max_threads = 1024, min_threads = 32;
  int dims = 2;
};

int do_synth(const SynthArgs& a) {
  auto sizes = parse_size_list(a.sizes_text);
  if (!sizes)
    return usage_error("--sizes: expected a comma-separated list of positive "
                       "integers, got '" + a.sizes_text + "'");
  data::SyntheticKernelSpec kernel = data::load_kernel_spec(a.kernel_path);
  if (a.noise_rel >= 0) kernel.noise_rel = a.noise_rel;
  auto configs =
      data::enumerate_configs(a.max_threads, a.min_threads, a.dims);
  auto points = data::design_points(*sizes, configs);
  std::vector<std::string> skipped;
  data::SampleSet set = data::synthesize(kernel, points, a.seed, &skipped);
  write_output(a.output, data::format_samples(set));
  for (const std::string& s : skipped)
    std::cerr << "skipped " << s << "\n";
  std::cerr << "synthesized " << set.samples.size() << " sample(s) for kernel '"
            << kernel.name << "'\n";
  return 0;
}

struct FitArgs {
  std::string data_path;
  std::string bounds_path;
  std::string output = "-";
  double regs_per_thread = std::numeric_limits<double>::quiet_NaN();
  double shared_words = std::numeric_limits<double>::quiet_NaN();
  double rank_tol = poly::kDefaultRankTol;
  double holdout_fraction = 0.0;
  std::uint64_t seed = 0;
};

int do_fit(const FitArgs& a) {
  data::SampleSet set = data::read_samples(a.data_path);

  std::map<std::string, double> constants;
  auto has_column = [&](const char* name) {
    return std::find(set.metric_names.begin(), set.metric_names.end(),
                     name) != set.metric_names.end();
  };
  if (!std::isnan(a.regs_per_thread))
    constants[perf::kMetricRegs] = a.regs_per_thread;
  else if (!has_column(perf::kMetricRegs))
    throw std::runtime_error("'" + a.data_path + "' has no column '" +
                             perf::kMetricRegs +
                             "' and --regs-per-thread was not given");
  if (!std::isnan(a.shared_words))
    constants[perf::kMetricShared] = a.shared_words;
  else if (!has_column(perf::kMetricShared))
    throw std::runtime_error("'" + a.data_path + "' has no column '" +
                             perf::kMetricShared +
                             "' and --shared-words was not given");
  for (const std::string& metric : perf::required_metric_names())
    if (!has_column(metric.c_str()))
      throw std::runtime_error("'" + a.data_path + "' has no column '" +
                               metric + "'");

  std::map<std::string, poly::DegreeBounds> bounds;
  if (!a.bounds_path.empty()) bounds = load_bounds(a.bounds_path);

  pipe::FitOptions opts;
  opts.rank_tol = a.rank_tol;

  pipe::MetricModelSet models;
  if (a.holdout_fraction > 0) {
    auto [train, test] = data::holdout_split(set, a.holdout_fraction, a.seed);
    models = pipe::fit_all_metrics(train, bounds, constants, opts);
    pipe::attach_holdout(models, test);
  } else {
    models = pipe::fit_all_metrics(set, bounds, constants, opts);
  }

  write_output(a.output, pipe::format_models(models));
  for (const auto& [name, model] : models.models) {
    std::cerr << name << ": rank " << model.report.numerical_rank
              << ", residual " << model.report.residual_norm
              << (model.report.truncated ? ", truncated" : "");
    if (model.report.holdout_relative_error)
      std::cerr << ", holdout rel err " << *model.report.holdout_relative_error;
    std::cerr << "\n";
  }
  for (const auto& [name, why] : models.failures)
    std::cerr << name << ": FAILED (" << why << ")\n";
  return 0;
}

struct GenRpArgs {
  std::string models_path;
  std::string profile_path;
  std::string output = "-";
  std::string emit_c_path;
  std::string rep_mode = "real";
  bool occupancy_only = false;
};

int do_gen_rp(const GenRpArgs& a) {
  if (a.profile_path.empty())
    return usage_error("--profile is required (or set RATPROG_PROFILE)");
  if (!a.occupancy_only && a.models_path.empty())
    return usage_error("--models is required unless --occupancy-only is given");
  perf::DeviceProfile hw = perf::load_profile(a.profile_path);
  ir::RationalProgram rp;
  if (a.occupancy_only) {
    rp = pipe::generate_occupancy_rp(hw);
  } else {
    pipe::MetricModelSet models = pipe::read_models(a.models_path);
    perf::EmitOptions opts;
    opts.rep_mode = parse_rep_mode(a.rep_mode);
    rp = pipe::generate_rp(models, hw, opts);
  }
  write_output(a.output, ir::serialize(rp));
  if (!a.emit_c_path.empty())
    write_output(a.emit_c_path, pipe::emit_c_source(rp));
  return 0;
}

struct EvalRpArgs {
  std::string rp_path;
  std::vector<std::string> bindings;
};

int do_eval_rp(const EvalRpArgs& a) {
  ir::RationalProgram rp = load_program(a.rp_path);
  std::map<std::string, Rational> env;
  for (const std::string& b : a.bindings) {
    auto eq = b.find('=');
    if (eq == std::string::npos || eq == 0)
      return usage_error("--bind expects NAME=VALUE, got '" + b + "'");
    std::string name = b.substr(0, eq), value = b.substr(eq + 1);
    try {
      env[name] = parse_rational(value);
    } catch (const std::exception& e) {
      return usage_error("--bind " + b + ": " + e.what());
    }
  }
  Rational result = ir::evaluate(rp, env);
  std::cout << to_string(result) << "\n";
  return 0;
}

struct SearchArgs {
  std::string models_path;
  std::string rp_path;
  std::string profile_path;
  std::string output = "-";
  std::string dump_jsonl_path;
  std::string format = "text";
  std::string rep_mode = "real";
  std::vector<long long> sizes;
  int jobs = 1;
  double regs_per_thread = 0.0;
  double shared_words = 0.0;
  long long max_threads = 1024, min_threads = 32;
  int dims = 2;
};

int do_search(const SearchArgs& a) {
  if (a.profile_path.empty())
    return usage_error("--profile is required (or set RATPROG_PROFILE)");
  if (a.models_path.empty() == a.rp_path.empty())
    return usage_error("exactly one of --models or --rp must be given");
  if (a.sizes.empty()) return usage_error("--size is required");
  if (a.format != "text" && a.format != "csv" && a.format != "json")
    return usage_error("--format must be text, csv, or json");

  perf::DeviceProfile hw = perf::load_profile(a.profile_path);
  auto space = data::enumerate_configs(a.max_threads, a.min_threads, a.dims);

  pipe::SearchOptions opts;
  opts.jobs = a.jobs;
  opts.rep_mode = parse_rep_mode(a.rep_mode);
  opts.regs_per_thread = a.regs_per_thread;
  opts.shared_words_per_block = a.shared_words;

  ir::RationalProgram rp;
  pipe::MetricModelSet models;
  perf::MetricSpec spec;
  if (!a.models_path.empty()) {
    models = pipe::read_models(a.models_path);
    spec = pipe::to_metric_spec(models);
    perf::EmitOptions emit;
    emit.rep_mode = opts.rep_mode;
    rp = pipe::generate_rp(models, hw, emit);
    opts.metrics = &spec;
  } else {
    rp = load_program(a.rp_path);
  }

  pipe::SearchResult found =
      pipe::search_optimal(rp, a.sizes, hw, space, opts);

  std::string report;
  if (a.format == "csv") {
    report = pipe::format_search_csv(found);
  } else if (a.format == "json") {
    report = pipe::format_search_jsonl(found);
  } else {
    report = pipe::format_search_text(found);
  }
  write_output(a.output, report);
  if (!a.dump_jsonl_path.empty())
    write_output(a.dump_jsonl_path, pipe::format_search_jsonl(found));

  const pipe::SearchRow& best = found.best();
  std::cerr << "chosen " << best.config.bx << "x" << best.config.by << "x"
            << best.config.bz << "  Ec="
            << data::detail::format_double(best.estimated_cycles)
            << "  occupancy="
            << data::detail::format_double(best.occupancy)
            << "  ties=" << found.ties << "\n";
  return 0;
}

struct SanityArgs {
  std::string models_path;
  std::string data_path;
  std::string profile_path;
  std::string output = "-";
  std::string format = "text";
  std::string rep_mode = "real";
};

int do_sanity(const SanityArgs& a) {
  if (a.profile_path.empty())
    return usage_error("--profile is required (or set RATPROG_PROFILE)");
  if (a.format != "text" && a.format != "csv" && a.format != "json")
    return usage_error("--format must be text, csv, or json");
  perf::DeviceProfile hw = perf::load_profile(a.profile_path);
  pipe::MetricModelSet models = pipe::read_models(a.models_path);
  data::SampleSet samples = data::read_samples(a.data_path);
  perf::EmitOptions emit;
  emit.rep_mode = parse_rep_mode(a.rep_mode);
  ir::RationalProgram rp = pipe::generate_rp(models, hw, emit);
  pipe::SanityReport report =
      pipe::sanity_report(models, samples, rp, hw, emit.rep_mode);
  std::string text;
  if (a.format == "csv") {
    text = pipe::format_sanity_csv(report);
  } else if (a.format == "json") {
    text = pipe::format_sanity_jsonl(report);
  } else {
    text = pipe::format_sanity_text(report);
  }
  write_output(a.output, text);
  for (const std::string& note : report.notes)
    std::cerr << "note: " << note << "\n";
  return 0;
}

int do_validate(const std::string& rp_path) {
  ir::RationalProgram rp = load_program(rp_path);
  ir::ValidationReport report = ir::validate(rp);
  for (const std::string& v : report.violations)
    std::cout << "violation: " << v << "\n";
  for (const std::string& n : report.notes) std::cout << "note: " << n << "\n";
  if (!report.ok()) {
    std::cerr << "error: '" << rp_path << "' failed validation\n";
    return 2;
  }
  std::cout << "ok: " << rp_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rational-program performance modeling toolkit"};
  app.name("ratprog");
  app.require_subcommand(1);

  SynthArgs synth_args;
  CLI::App* synth = app.add_subcommand(
      "synth", "Synthesize measurement CSV from a kernel description");
  synth->add_option("--kernel", synth_args.kernel_path,
                    "kernel description JSON")->required();
  synth->add_option("--sizes", synth_args.sizes_text,
                    "comma-separated data sizes, e.g. 64,128,256")->required();
  synth->add_option("-o,--output", synth_args.output,
                    "output CSV path ('-' for stdout)");
  synth->add_option("--seed", synth_args.seed, "noise seed (default 0)");
  synth->add_option("--noise-rel", synth_args.noise_rel,
                    "override the kernel's relative noise amplitude");
  synth->add_option("--max-threads", synth_args.max_threads,
                    "largest block size in the grid");
  synth->add_option("--min-threads", synth_args.min_threads,
                    "smallest block size in the grid");
  synth->add_option("--dims", synth_args.dims, "block dimensions (1-3)");

  FitArgs fit_args;
  CLI::App* fit = app.add_subcommand(
      "fit", "Fit per-metric rational models from a measurement CSV");
  fit->add_option("--data", fit_args.data_path, "measurement CSV")->required();
  fit->add_option("--bounds", fit_args.bounds_path,
                  "degree-bounds JSON sidecar");
  fit->add_option("-o,--output", fit_args.output,
                  "models JSON path ('-' for stdout)");
  fit->add_option("--regs-per-thread", fit_args.regs_per_thread,
                  "register pressure constant when not a CSV column");
  fit->add_option("--shared-words", fit_args.shared_words,
                  "shared-memory words per block when not a CSV column");
  fit->add_option("--rank-tol", fit_args.rank_tol,
                  "relative singular-value cutoff");
  fit->add_option("--holdout-fraction", fit_args.holdout_fraction,
                  "fraction of samples held out for error reporting");
  fit->add_option("--seed", fit_args.seed, "holdout-split seed (default 0)");

  GenRpArgs gen_args;
  CLI::App* gen = app.add_subcommand(
      "gen-rp", "Generate a rational program from models and a device profile");
  gen->add_option("--models", gen_args.models_path, "models JSON from `fit`");
  gen->add_option("--profile", gen_args.profile_path, "device profile")
      ->envname("RATPROG_PROFILE");
  gen->add_option("-o,--output", gen_args.output,
                  "program path ('-' for stdout)");
  gen->add_option("--emit-c", gen_args.emit_c_path,
                  "also write a C lowering of the program here");
  gen->add_option("--rep-mode", gen_args.rep_mode,
                  "block-repetition mode: real|ceil");
  gen->add_flag("--occupancy-only", gen_args.occupancy_only,
                "emit the occupancy program instead of the cycle model");

  EvalRpArgs eval_args;
  CLI::App* eval = app.add_subcommand(
      "eval-rp", "Evaluate a rational program at given inputs");
  eval->add_option("--rp", eval_args.rp_path, "program file")->required();
  eval->add_option("--bind", eval_args.bindings,
                   "input binding NAME=VALUE (rational; repeatable)");

  SearchArgs search_args;
  CLI::App* search = app.add_subcommand(
      "search", "Rank launch configurations by estimated cycles");
  search->add_option("--models", search_args.models_path,
                     "models JSON (program is generated internally)");
  search->add_option("--rp", search_args.rp_path,
                     "pre-generated program file");
  search->add_option("--profile", search_args.profile_path, "device profile")
      ->envname("RATPROG_PROFILE");
  search->add_option("--size", search_args.sizes,
                     "data-parameter value (repeat for D1, D2, ...)");
  search->add_option("-o,--output", search_args.output,
                     "report path ('-' for stdout)");
  search->add_option("--format", search_args.format, "text|csv|json");
  search->add_option("--dump-jsonl", search_args.dump_jsonl_path,
                     "also write the per-config JSON-lines dump here");
  search->add_option("--jobs", search_args.jobs,
                     "worker threads (never changes the output)");
  search->add_option("--rep-mode", search_args.rep_mode,
                     "block-repetition mode: real|ceil");
  search->add_option("--regs-per-thread", search_args.regs_per_thread,
                     "occupancy context when searching a bare program");
  search->add_option("--shared-words", search_args.shared_words,
                     "occupancy context when searching a bare program");
  search->add_option("--max-threads", search_args.max_threads,
                     "largest block size in the searched grid");
  search->add_option("--min-threads", search_args.min_threads,
                     "smallest block size in the searched grid");
  search->add_option("--dims", search_args.dims, "block dimensions (1-3)");

  SanityArgs sanity_args;
  CLI::App* sanity = app.add_subcommand(
      "sanity", "Compare collected and modelled optima per data size");
  sanity->add_option("--models", sanity_args.models_path, "models JSON")
      ->required();
  sanity->add_option("--data", sanity_args.data_path, "measurement CSV")
      ->required();
  sanity->add_option("--profile", sanity_args.profile_path, "device profile")
      ->envname("RATPROG_PROFILE");
  sanity->add_option("-o,--output", sanity_args.output,
                     "report path ('-' for stdout)");
  sanity->add_option("--format", sanity_args.format, "text|csv|json");
  sanity->add_option("--rep-mode", sanity_args.rep_mode,
                     "block-repetition mode: real|ceil");

  std::string validate_path;
  CLI::App* validate = app.add_subcommand(
      "validate", "Check a rational program's structural invariants");
  validate->add_option("--rp", validate_path, "program file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth) return do_synth(synth_args);
    if (*fit) return do_fit(fit_args);
    if (*gen) return do_gen_rp(gen_args);
    if (*eval) return do_eval_rp(eval_args);
    if (*search) return do_search(search_args);
    if (*sanity) return do_sanity(sanity_args);
    if (*validate) return do_validate(validate_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return usage_error("no subcommand given");
}
