#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ratprog/ir_builder.hpp"
#include "ratprog/ir_text.hpp"
#include "ratprog/pipeline.hpp"

using namespace ratprog;
using Catch::Matchers::ContainsSubstring;
using perf::DeviceProfile;
using perf::LaunchConfig;

namespace {

DeviceProfile sample_hw() {
  DeviceProfile hw;
  hw.R_max = 65536;
  hw.Z_max = 12288;
  hw.T_max = 1024;
  hw.B_max = 8;
  hw.W_max = 48;
  hw.num_SM = 16;
  hw.freq_GHz = 1.3;
  hw.mem_latency_cycles = 436;
  hw.departure_del_coal_cycles = 4;
  hw.departure_del_uncoal_cycles = 40;
  hw.mem_bandwidth_GBps = 144;
  hw.issue_cycles = 4;
  hw.load_bytes_per_warp = 128;
  hw.uncoal_per_mw = 32;
  return hw;
}

poly::RationalFunction make_rf(const std::vector<std::string>& vars,
                               const std::vector<int>& num_bounds,
                               const std::vector<double>& num_coeffs,
                               const std::vector<int>& den_bounds,
                               const std::vector<double>& den_coeffs) {
  poly::RationalFunction f;
  f.num.variables = vars;
  f.num.basis = poly::monomial_basis(num_bounds);
  f.num.coeffs = num_coeffs;
  f.den.variables = vars;
  f.den.basis = poly::monomial_basis(den_bounds);
  f.den.coeffs = den_coeffs;
  REQUIRE(f.num.basis.size() == num_coeffs.size());
  REQUIRE(f.den.basis.size() == den_coeffs.size());
  return f;
}

// Plane-stencil kernel over one data parameter: per-thread work splits the
// image among bx lanes, block count follows from the block footprint.
data::SyntheticKernelSpec stencil_kernel(double noise_rel = 0) {
  const std::vector<std::string> vars = {"D1", "bx", "by"};
  data::SyntheticKernelSpec spec;
  spec.name = "stencil2d";
  spec.variables = vars;
  spec.ground_truth[perf::kMetricComp] =
      make_rf(vars, {1, 1, 0}, {0, 20, 8, 0}, {0, 1, 0}, {0, 1});
  spec.ground_truth[perf::kMetricUncoal] =
      make_rf(vars, {0, 1, 0}, {12, 5}, {0, 1, 0}, {0, 1});
  spec.ground_truth[perf::kMetricCoal] =
      make_rf(vars, {0, 0, 0}, {9}, {0, 0, 0}, {1});
  spec.ground_truth[perf::kMetricSynch] =
      make_rf(vars, {1, 0, 0}, {0, 2}, {0, 1, 0}, {0, 1});
  spec.ground_truth[perf::kMetricTotalBlocks] =
      make_rf(vars, {2, 0, 0}, {0, 0, 1}, {0, 1, 1}, {0, 0, 0, 1});
  spec.regs_per_thread = 20;
  spec.noise_rel = noise_rel;
  return spec;
}

std::map<std::string, poly::DegreeBounds> stencil_bounds() {
  std::map<std::string, poly::DegreeBounds> b;
  b[perf::kMetricComp] = {{1, 1, 0}, {0, 1, 0}};
  b[perf::kMetricUncoal] = {{0, 1, 0}, {0, 1, 0}};
  b[perf::kMetricCoal] = {{0, 0, 0}, {0, 0, 0}};
  b[perf::kMetricSynch] = {{1, 0, 0}, {0, 1, 0}};
  b[perf::kMetricTotalBlocks] = {{2, 0, 0}, {0, 1, 1}};
  return b;
}

std::map<std::string, double> stencil_constants() {
  return {{perf::kMetricRegs, 20.0}, {perf::kMetricShared, 0.0}};
}

data::SampleSet stencil_samples(const std::vector<long long>& sizes,
                                std::uint64_t seed, double noise_rel) {
  auto spec = stencil_kernel(noise_rel);
  auto points = data::design_points(sizes, data::enumerate_configs());
  return data::synthesize(spec, points, seed);
}

// The ground-truth functions packaged as an already-"fitted" model set.
pipe::MetricModelSet ground_truth_models() {
  auto spec = stencil_kernel();
  pipe::MetricModelSet m;
  m.variables = spec.variables;
  for (const auto& [name, fn] : spec.ground_truth)
    m.models[name] = pipe::MetricModel{fn, {}};
  m.constants = stencil_constants();
  return m;
}

// Reference argmin straight from the closed-form model, with lexicographic
// tie-breaking on equal totals.
struct DirectBest {
  LaunchConfig config;
  double cycles = 0;
  double runner_up = 0;  // best cycles among other configs
};

DirectBest direct_argmin(const perf::MetricSpec& spec, const DeviceProfile& hw,
                         long long d1,
                         const std::vector<LaunchConfig>& space) {
  DirectBest best;
  bool have = false;
  std::vector<double> totals;
  for (const LaunchConfig& c : space) {
    double total;
    try {
      perf::KernelMetrics m = perf::evaluate_metrics(
          spec, {static_cast<double>(d1), static_cast<double>(c.bx),
                 static_cast<double>(c.by)});
      total = perf::mwpcwp_cycles(hw, m, c).total_cycles;
    } catch (const perf::ZeroOccupancy&) {
      continue;
    }
    totals.push_back(total);
    if (!have || total < best.cycles) {
      have = true;
      best.config = c;
      best.cycles = total;
    }
  }
  REQUIRE(have);
  best.runner_up = std::numeric_limits<double>::infinity();
  for (double t : totals)
    if (t > best.cycles) best.runner_up = std::min(best.runner_up, t);
  return best;
}

// Compiles an emitted C translation unit with the system compiler and runs
// it over the given points, one result per point.  Returns false when no C
// compiler is available (callers SKIP).
bool run_compiled(const std::string& csource, std::size_t arity,
                  const std::vector<std::vector<double>>& points,
                  std::vector<double>* results) {
  if (std::system("cc --version > /dev/null 2>&1") != 0) return false;
  namespace fs = std::filesystem;
  fs::path dir = "c_lowering_work";
  fs::create_directories(dir);
  {
    std::ofstream src(dir / "prog.c", std::ios::binary);
    src << csource << "\n#include <stdio.h>\n"
        << "int main(void) {\n"
        << "  double in[" << arity << "];\n"
        << "  for (;;) {\n"
        << "    for (unsigned i = 0; i < " << arity << "u; ++i)\n"
        << "      if (scanf(\"%lf\", &in[i]) != 1) return i == 0 ? 0 : 1;\n"
        << "    printf(\"%.17g\\n\", rp_eval(in));\n"
        << "  }\n"
        << "}\n";
  }
  {
    std::ofstream in(dir / "in.txt", std::ios::binary);
    in << std::setprecision(17);
    for (const auto& p : points) {
      for (std::size_t i = 0; i < p.size(); ++i) in << (i ? " " : "") << p[i];
      in << "\n";
    }
  }
  std::string build = "cc -O1 -o " + (dir / "prog").string() + " " +
                      (dir / "prog.c").string() + " -lm > " +
                      (dir / "cc.log").string() + " 2>&1";
  REQUIRE(std::system(build.c_str()) == 0);
  std::string run = (dir / "prog").string() + " < " + (dir / "in.txt").string() +
                    " > " + (dir / "out.txt").string();
  REQUIRE(std::system(run.c_str()) == 0);
  std::ifstream out(dir / "out.txt");
  results->clear();
  double v;
  while (out >> v) results->push_back(v);
  return true;
}

}  // namespace

TEST_CASE("fitting recovers the exact stencil metrics from clean samples",
          "[pipeline]") {
  auto samples = stencil_samples({64, 128, 256, 512}, 11, 0.0);
  REQUIRE(samples.samples.size() == 4 * 51);

  auto models = pipe::fit_all_metrics(samples, stencil_bounds(),
                                      stencil_constants());
  CHECK(models.variables == std::vector<std::string>{"D1", "bx", "by"});
  CHECK(models.models.size() == 5);
  CHECK(models.failures.empty());

  for (const auto& [name, model] : models.models) {
    INFO("metric " << name);
    CHECK(model.report.residual_norm <=
          1e-9 * std::max(1.0, model.report.singular_values.front()));
    CHECK_FALSE(model.report.truncated);
  }

  // Fitted functions agree with the generators pointwise, including on data
  // sizes never sampled.
  auto truth = stencil_kernel();
  auto holdout = stencil_samples({48, 96, 1536}, 99, 0.0);
  for (const auto& [name, model] : models.models) {
    auto pv = pipe::metric_points(holdout, name, models.variables);
    for (std::size_t k = 0; k < pv.points.size(); ++k) {
      double got = poly::eval_ratfunc(model.fn, pv.points[k]);
      double want = poly::eval_ratfunc(truth.ground_truth.at(name),
                                       pv.points[k]);
      REQUIRE_THAT(got, Catch::Matchers::WithinRel(want, 1e-9));
    }
  }

  pipe::attach_holdout(models, holdout);
  for (const auto& [name, model] : models.models) {
    INFO("metric " << name);
    REQUIRE(model.report.holdout_relative_error.has_value());
    CHECK(*model.report.holdout_relative_error < 1e-9);
  }
}

TEST_CASE("fitting tolerates per-metric failures and reports total wipeout",
          "[pipeline]") {
  // A constant column at 1e30 forces the homogeneous solver into the
  // p = (huge) * q regime whose normalized denominator is identically zero.
  auto samples = stencil_samples({64, 128}, 5, 0.0);
  data::SampleSet mixed = samples;
  mixed.metric_names.push_back("broken_counter");
  for (auto& s : mixed.samples) s.metric_values["broken_counter"] = 1e30;

  auto models = pipe::fit_all_metrics(mixed, stencil_bounds(),
                                      stencil_constants());
  CHECK(models.models.size() == 5);
  REQUIRE(models.failures.count("broken_counter") == 1);
  CHECK_THAT(models.failures.at("broken_counter"),
             ContainsSubstring("denominator"));

  // to_metric_spec refuses a failed *required* metric...
  pipe::MetricModelSet missing = models;
  missing.models.erase(perf::kMetricSynch);
  CHECK_THROWS_WITH(pipe::to_metric_spec(missing),
                    ContainsSubstring(perf::kMetricSynch));
  // ...but a failed auxiliary column is no obstacle.
  CHECK_NOTHROW(pipe::to_metric_spec(models));

  data::SampleSet doomed = samples;
  doomed.metric_names = {"m1", "m2"};
  for (auto& s : doomed.samples)
    s.metric_values = {{"m1", 1e30}, {"m2", 1e30}};
  CHECK_THROWS_AS(pipe::fit_all_metrics(doomed, {}, {}),
                  pipe::AllMetricsFailed);

  CHECK_THROWS_AS(pipe::fit_all_metrics(data::SampleSet{}, {}, {}),
                  std::invalid_argument);
  CHECK_THROWS_WITH(
      pipe::fit_all_metrics(samples, stencil_bounds(),
                            {{perf::kMetricCoal, 9.0}}),
      ContainsSubstring("both a sample column and a declared constant"));

  std::map<std::string, poly::DegreeBounds> bad = stencil_bounds();
  bad[perf::kMetricComp] = {{1, 1}, {0, 1}};  // two entries, three variables
  CHECK_THROWS_WITH(pipe::fit_all_metrics(samples, bad, stencil_constants()),
                    ContainsSubstring(perf::kMetricComp));
}

TEST_CASE("rank-deficient model class completes with the truncation flag",
          "[pipeline]") {
  auto samples = stencil_samples({64, 128, 256, 512}, 21, 0.0);
  // Numerator and denominator bounds strictly wider than the generator of
  // comp_insts: the nullspace gains a dimension, so the fit is ambiguous but
  // must still complete and say so.
  std::map<std::string, poly::DegreeBounds> wide = stencil_bounds();
  wide[perf::kMetricComp] = {{2, 2, 0}, {1, 1, 0}};
  auto models = pipe::fit_all_metrics(samples, wide, stencil_constants());

  const auto& report = models.models.at(perf::kMetricComp).report;
  CHECK(report.truncated);
  CHECK(report.residual_norm <=
        1e-9 * std::max(1.0, report.singular_values.front()));
  for (double c : models.models.at(perf::kMetricComp).fn.num.coeffs)
    CHECK(std::isfinite(c));
  for (double c : models.models.at(perf::kMetricComp).fn.den.coeffs)
    CHECK(std::isfinite(c));
}

TEST_CASE("generated program bakes the profile and mirrors the closed form",
          "[pipeline]") {
  DeviceProfile hw = sample_hw();
  auto samples = stencil_samples({64, 128, 256, 512}, 11, 0.0);
  auto models = pipe::fit_all_metrics(samples, stencil_bounds(),
                                      stencil_constants());
  ir::RationalProgram rp = pipe::generate_rp(models, hw);

  CHECK(rp.inputs == std::vector<std::string>{"D1", "bx", "by"});
  CHECK(ir::validate(rp).ok());
  CHECK(ir::parse(ir::serialize(rp)) == rp);

  perf::MetricSpec spec = pipe::to_metric_spec(models);
  int feasible = 0;
  for (long long d1 : {64LL, 512LL}) {
    for (const LaunchConfig& c : data::enumerate_configs()) {
      Rational got = ir::evaluate(
          rp, {{"D1", Rational(d1)},
               {"bx", Rational(c.bx)},
               {"by", Rational(c.by)}});
      double direct;
      try {
        perf::KernelMetrics m = perf::evaluate_metrics(
            spec, {static_cast<double>(d1), static_cast<double>(c.bx),
                   static_cast<double>(c.by)});
        direct = perf::mwpcwp_cycles(hw, m, c).total_cycles;
      } catch (const perf::ZeroOccupancy&) {
        REQUIRE(got == Rational(-1));
        continue;
      }
      ++feasible;
      REQUIRE_THAT(to_double(got),
                   Catch::Matchers::WithinRel(direct, 1e-9));
    }
  }
  CHECK(feasible >= 60);

  ir::RationalProgram occ = pipe::generate_occupancy_rp(hw);
  CHECK(occ.inputs == std::vector<std::string>{"R", "Z", "T"});
  Rational warps = ir::evaluate(
      occ, {{"R", Rational(20)}, {"Z", Rational(0)}, {"T", Rational(256)}});
  long long blocks = perf::active_blocks(hw, 20, 0, 256);
  CHECK(warps == Rational(perf::active_warps(hw, blocks, 256)));
}

TEST_CASE("emitted C source lowers integer parts with corrected division",
          "[pipeline]") {
  DeviceProfile hw = sample_hw();
  ir::RationalProgram occ = pipe::generate_occupancy_rp(hw);
  std::string src = pipe::emit_c_source(occ);

  CHECK_THAT(src, ContainsSubstring("double rp_eval(const double *in)"));
  CHECK_THAT(src, ContainsSubstring("int64_t q = ia / ib;"));
  CHECK_THAT(src, ContainsSubstring("q -= 1;"));
  CHECK_THAT(src, ContainsSubstring("rp_floor_div"));
  CHECK_THAT(src, ContainsSubstring("#include <math.h>"));
  CHECK(src == pipe::emit_c_source(occ));  // deterministic

  std::string renamed = pipe::emit_c_source(occ, "occupancy_eval");
  CHECK_THAT(renamed, ContainsSubstring("double occupancy_eval(const double *in)"));
}

TEST_CASE("compiled C program matches the interpreter", "[pipeline]") {
  DeviceProfile hw = sample_hw();

  // Integer-only occupancy program: agreement must be bit-exact.
  ir::RationalProgram occ = pipe::generate_occupancy_rp(hw);
  std::vector<std::vector<double>> pts;
  rng::Engine eng(20240817);
  for (int i = 0; i < 200; ++i)
    pts.push_back({static_cast<double>(rng::uniform_int(eng, 0, 64)),
                   static_cast<double>(rng::uniform_int(eng, 0, 8192)),
                   static_cast<double>(rng::uniform_int(eng, 1, 1100))});
  std::vector<double> got;
  if (!run_compiled(pipe::emit_c_source(occ), 3, pts, &got))
    SKIP("no C compiler available in this environment");
  REQUIRE(got.size() == pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    Rational exact = ir::evaluate(occ, {{"R", rational_from_double(pts[i][0])},
                                        {"Z", rational_from_double(pts[i][1])},
                                        {"T", rational_from_double(pts[i][2])}});
    REQUIRE(got[i] == to_double(exact));
  }

  // Full cycle program: doubles in C vs exact rationals, 1e-9 relative.
  ir::RationalProgram rp = pipe::generate_rp(ground_truth_models(), hw);
  std::vector<std::vector<double>> cpts;
  for (long long d1 : {64LL, 256LL, 1024LL})
    for (const LaunchConfig& c : data::enumerate_configs())
      if (c.bx >= 4)
        cpts.push_back({static_cast<double>(d1), static_cast<double>(c.bx),
                        static_cast<double>(c.by)});
  std::vector<double> cgot;
  REQUIRE(run_compiled(pipe::emit_c_source(rp), 3, cpts, &cgot));
  REQUIRE(cgot.size() == cpts.size());
  for (std::size_t i = 0; i < cpts.size(); ++i) {
    Rational exact = ir::evaluate(
        rp, {{"D1", rational_from_double(cpts[i][0])},
             {"bx", rational_from_double(cpts[i][1])},
             {"by", rational_from_double(cpts[i][2])}});
    if (exact == Rational(-1)) {
      REQUIRE(cgot[i] == -1.0);
    } else {
      REQUIRE_THAT(cgot[i],
                   Catch::Matchers::WithinRel(to_double(exact), 1e-9));
    }
  }
}

TEST_CASE("search ranks by estimated cycles and matches the closed form",
          "[pipeline]") {
  DeviceProfile hw = sample_hw();
  auto models = ground_truth_models();
  perf::MetricSpec spec = pipe::to_metric_spec(models);
  ir::RationalProgram rp = pipe::generate_rp(models, hw);
  auto space = data::enumerate_configs();

  for (long long d1 : {1024LL, 2048LL}) {
    pipe::SearchOptions opts;
    opts.metrics = &spec;
    pipe::SearchResult found = pipe::search_optimal(rp, {d1}, hw, space, opts);

    DirectBest truth = direct_argmin(spec, hw, d1, space);
    INFO("D1=" << d1 << " truth=" << truth.config.bx << "x" << truth.config.by
               << " found=" << found.best().config.bx << "x"
               << found.best().config.by);
    REQUIRE_THAT(found.best().estimated_cycles,
                 Catch::Matchers::WithinRel(truth.cycles, 1e-9));
    if (truth.runner_up > truth.cycles * (1 + 1e-6)) {
      CHECK(found.best().config.bx == truth.config.bx);
      CHECK(found.best().config.by == truth.config.by);
      CHECK(found.ties == 1);
    }

    // Ranking is sorted and complete.
    for (std::size_t i = 1; i < found.ranking.size(); ++i)
      CHECK(found.ranking[i - 1].estimated_cycles <=
            found.ranking[i].estimated_cycles * (1 + 1e-12));
    CHECK(found.evaluated == space.size());
    CHECK(found.ranking.size() + found.infeasible == space.size());
    for (const auto& row : found.ranking)
      CHECK((row.case_tag == "cwp_bound" || row.case_tag == "mwp_bound" ||
             row.case_tag == "both_saturated"));

    // Determinism, including across worker counts.
    pipe::SearchOptions par = opts;
    par.jobs = 8;
    pipe::SearchResult again = pipe::search_optimal(rp, {d1}, hw, space, par);
    REQUIRE(again.ranking.size() == found.ranking.size());
    CHECK(again.ties == found.ties);
    for (std::size_t i = 0; i < found.ranking.size(); ++i) {
      CHECK(again.ranking[i].config.bx == found.ranking[i].config.bx);
      CHECK(again.ranking[i].config.by == found.ranking[i].config.by);
      CHECK(again.ranking[i].estimated_cycles ==
            found.ranking[i].estimated_cycles);
      CHECK(again.ranking[i].occupancy == found.ranking[i].occupancy);
      CHECK(again.ranking[i].case_tag == found.ranking[i].case_tag);
    }
  }
}

TEST_CASE("search tie-break prefers occupancy, then lexicographic order",
          "[pipeline]") {
  DeviceProfile hw = sample_hw();
  ir::ProgramBuilder b;
  b.input("bx");
  b.input("by");
  b.output("t");
  b.add("anchor", ir::var("bx"), ir::var("by"));
  b.assign("t", ir::lit(100));
  b.halt_return("t");
  ir::RationalProgram flat = b.finish();
  REQUIRE(ir::validate(flat).ok());

  auto space = data::enumerate_configs();
  pipe::SearchResult found = pipe::search_optimal(flat, {}, hw, space, {});
  CHECK(found.ties == space.size());
  CHECK(found.ranking.size() == space.size());
  // With zero register/shared pressure, occupancy peaks (48/48) exactly for
  // thread counts 256 and 512; the lexicographically smallest such
  // configuration is 1x256x1.
  CHECK(found.best().config.bx == 1);
  CHECK(found.best().config.by == 256);
  CHECK(found.best().occupancy == 1.0);
  CHECK(found.best().case_tag == "-");
  // Full-occupancy block comes first, in lexicographic order within.
  std::vector<std::pair<long long, long long>> head;
  for (std::size_t i = 0; i < 4; ++i)
    head.push_back({found.ranking[i].config.bx, found.ranking[i].config.by});
  CHECK(head == std::vector<std::pair<long long, long long>>{
                    {1, 256}, {1, 512}, {2, 128}, {2, 256}});

  // Error paths.
  ir::ProgramBuilder nb;
  nb.input("bx");
  nb.input("by");
  nb.output("t");
  nb.add("anchor", ir::var("bx"), ir::var("by"));
  nb.assign("t", ir::lit(-1));
  nb.halt_return("t");
  ir::RationalProgram never = nb.finish();
  CHECK_THROWS_AS(pipe::search_optimal(never, {}, hw, space, {}),
                  pipe::NoFeasibleConfig);

  ir::ProgramBuilder qb;
  qb.input("Q7");
  qb.output("t");
  qb.assign("t", ir::var("Q7"));
  qb.halt_return("t");
  CHECK_THROWS_WITH(pipe::search_optimal(qb.finish(), {}, hw, space, {}),
                    ContainsSubstring("Q7"));

  ir::ProgramBuilder db;
  db.input("D2");
  db.output("t");
  db.assign("t", ir::var("D2"));
  db.halt_return("t");
  CHECK_THROWS_WITH(pipe::search_optimal(db.finish(), {64}, hw, space, {}),
                    ContainsSubstring("D2"));

  CHECK_THROWS_AS(pipe::search_optimal(flat, {}, hw, {}, {}),
                  std::invalid_argument);
}

TEST_CASE("uniform metric rescaling leaves the chosen configuration fixed",
          "[pipeline]") {
  DeviceProfile hw = sample_hw();
  auto base = ground_truth_models();
  auto scaled = base;
  // Four times the work in block count scales every estimated cycle count by
  // the same factor (repetitions are linear in total_blocks).
  for (double& c : scaled.models.at(perf::kMetricTotalBlocks).fn.num.coeffs)
    c *= 4.0;

  ir::RationalProgram rp_base = pipe::generate_rp(base, hw);
  ir::RationalProgram rp_scaled = pipe::generate_rp(scaled, hw);
  auto space = data::enumerate_configs();

  for (long long d1 : {512LL, 2048LL}) {
    auto a = pipe::search_optimal(rp_base, {d1}, hw, space, {});
    auto b = pipe::search_optimal(rp_scaled, {d1}, hw, space, {});
    REQUIRE(a.ranking.size() == b.ranking.size());
    CHECK(a.best().config.bx == b.best().config.bx);
    CHECK(a.best().config.by == b.best().config.by);
    CHECK(a.ties == b.ties);
    for (std::size_t i = 0; i < a.ranking.size(); ++i) {
      CHECK(a.ranking[i].config.bx == b.ranking[i].config.bx);
      CHECK(a.ranking[i].config.by == b.ranking[i].config.by);
      REQUIRE_THAT(b.ranking[i].estimated_cycles,
                   Catch::Matchers::WithinRel(
                       4.0 * a.ranking[i].estimated_cycles, 1e-9));
    }
  }
}

TEST_CASE("runtime error metric: anchors, clamping, degenerate interval",
          "[pipeline]") {
  CHECK(pipe::error_metric(0.04, 0.04, 0.34) == 0.0);
  CHECK_THAT(pipe::error_metric(0.16, 0.15, 1.31),
             Catch::Matchers::WithinAbs(100.0 * 0.01 / 1.16, 1e-9));
  CHECK_THAT(pipe::error_metric(1.31, 0.15, 1.31),
             Catch::Matchers::WithinAbs(100.0, 1e-12));

  std::vector<std::string> warnings;
  CHECK(pipe::error_metric(0.5, 0.7, 0.7, &warnings) == 0.0);
  REQUIRE(warnings.size() == 1);
  CHECK_THAT(warnings[0], ContainsSubstring("coincide"));

  warnings.clear();
  CHECK(pipe::error_metric(0.1, 0.2, 0.4, &warnings) == 0.0);
  CHECK(pipe::error_metric(0.5, 0.2, 0.4, &warnings) == 100.0);
  REQUIRE(warnings.size() == 2);
  CHECK_THAT(warnings[0], ContainsSubstring("below"));
  CHECK_THAT(warnings[1], ContainsSubstring("above"));

  CHECK_THROWS_AS(pipe::error_metric(0.5, 1.0, 0.2), std::invalid_argument);
}

TEST_CASE("sanity report compares collected and modelled optima per size",
          "[pipeline]") {
  DeviceProfile hw = sample_hw();
  auto samples = stencil_samples({64, 128, 256, 512}, 11, 0.0);
  auto models = pipe::fit_all_metrics(samples, stencil_bounds(),
                                      stencil_constants());
  ir::RationalProgram rp = pipe::generate_rp(models, hw);

  pipe::SanityReport report = pipe::sanity_report(models, samples, rp, hw);
  REQUIRE(report.rows.size() == 4);
  CHECK(report.param_names == std::vector<std::string>{"D1"});
  CHECK(report.notes.empty());

  long long previous = 0;
  for (const auto& row : report.rows) {
    CHECK(row.data_params.size() == 1);
    CHECK(row.data_params[0] > previous);
    previous = row.data_params[0];
    // Noise-free samples + exact fit: both sides pick the same block and the
    // collected-metric cycles at the pick match the program's estimate.
    CHECK(row.measured_best.bx == row.predicted_best.bx);
    CHECK(row.measured_best.by == row.predicted_best.by);
    REQUIRE_THAT(row.collected_cycles,
                 Catch::Matchers::WithinRel(row.predicted_best_cycles, 1e-6));
    REQUIRE_THAT(row.measured_best_cycles,
                 Catch::Matchers::WithinRel(row.collected_cycles, 1e-9));
  }

  std::string csv = pipe::format_sanity_csv(report);
  CHECK_THAT(csv, ContainsSubstring(
                      "D1,ci_bx,ci_by,ci_bz,Ec_i,cr_bx,cr_by,cr_bz,Ec_r,"
                      "collected_Ec\n"));
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  CHECK(csv == pipe::format_sanity_csv(report));

  std::string text = pipe::format_sanity_text(report);
  CHECK_THAT(text, ContainsSubstring("collected Ec"));
  CHECK_THAT(text, ContainsSubstring("x1"));

  CHECK_THROWS_AS(
      pipe::sanity_report(pipe::MetricModelSet{}, samples, rp, hw),
      pipe::PipelineError);
  CHECK_THROWS_AS(pipe::sanity_report(models, data::SampleSet{}, rp, hw),
                  pipe::PipelineError);
}

TEST_CASE("search report formatters are deterministic and well-formed",
          "[pipeline]") {
  DeviceProfile hw = sample_hw();
  auto models = ground_truth_models();
  perf::MetricSpec spec = pipe::to_metric_spec(models);
  ir::RationalProgram rp = pipe::generate_rp(models, hw);
  pipe::SearchOptions opts;
  opts.metrics = &spec;
  pipe::SearchResult found =
      pipe::search_optimal(rp, {1024}, hw, data::enumerate_configs(), opts);

  std::string csv = pipe::format_search_csv(found);
  CHECK_THAT(csv, ContainsSubstring("bx,by,bz,Ec,occupancy,case\n"));
  CHECK(std::count(csv.begin(), csv.end(), '\n') ==
        static_cast<long>(found.ranking.size()) + 1);
  CHECK(csv == pipe::format_search_csv(found));

  std::string text = pipe::format_search_text(found);
  CHECK_THAT(text, ContainsSubstring("config"));
  CHECK_THAT(text, ContainsSubstring("optimum ties: "));

  std::string jsonl = pipe::format_search_jsonl(found);
  std::istringstream lines(jsonl);
  std::string line;
  std::size_t parsed = 0;
  while (std::getline(lines, line)) {
    auto j = nlohmann::json::parse(line);
    REQUIRE(j.contains("config"));
    REQUIRE(j.at("config").size() == 3);
    REQUIRE(j.contains("Ec"));
    REQUIRE(j.contains("occupancy"));
    REQUIRE(j.contains("case_tag"));
    ++parsed;
  }
  CHECK(parsed == found.ranking.size());
}

TEST_CASE("model sidecar JSON round-trips byte-for-byte", "[pipeline]") {
  auto samples = stencil_samples({64, 128, 256, 512}, 11, 0.0);
  auto models = pipe::fit_all_metrics(samples, stencil_bounds(),
                                      stencil_constants());
  pipe::attach_holdout(models, stencil_samples({48, 96}, 99, 0.0));
  models.failures["phantom_counter"] = "degenerate fit";

  std::string text = pipe::format_models(models);
  pipe::MetricModelSet back = pipe::parse_models(text);
  CHECK(back.variables == models.variables);
  CHECK(back.constants == models.constants);
  CHECK(back.failures == models.failures);
  REQUIRE(back.models.size() == models.models.size());
  for (const auto& [name, model] : models.models) {
    REQUIRE(back.models.count(name) == 1);
    const auto& b = back.models.at(name);
    CHECK(b.fn.num.coeffs == model.fn.num.coeffs);
    CHECK(b.fn.den.coeffs == model.fn.den.coeffs);
    CHECK(b.fn.num.basis == model.fn.num.basis);
    CHECK(b.report.numerical_rank == model.report.numerical_rank);
    CHECK(b.report.truncated == model.report.truncated);
    CHECK(b.report.residual_norm == model.report.residual_norm);
    CHECK(b.report.singular_values == model.report.singular_values);
    CHECK(b.report.holdout_relative_error ==
          model.report.holdout_relative_error);
  }
  CHECK(pipe::format_models(back) == text);

  namespace fs = std::filesystem;
  fs::path dir = fs::path("pipeline_io_work");
  fs::create_directories(dir);
  std::string path = (dir / "models.json").string();
  pipe::write_models(models, path);
  pipe::MetricModelSet from_file = pipe::read_models(path);
  CHECK(pipe::format_models(from_file) == text);

  CHECK_THROWS_WITH(pipe::parse_models("{ not json"),
                    ContainsSubstring("not valid JSON"));
  CHECK_THROWS_WITH(pipe::parse_models("{\"schema\":\"other-v9\"}"),
                    ContainsSubstring("ratprog-models-v1"));
  CHECK_THROWS_WITH(
      pipe::parse_models(
          "{\"schema\":\"ratprog-models-v1\",\"variables\":[\"D1\",\"bx\","
          "\"by\"]}"),
      ContainsSubstring("metrics"));
  CHECK_THROWS_WITH(pipe::read_models((dir / "absent.json").string()),
                    ContainsSubstring("absent.json"));

  nlohmann::json bad = nlohmann::json::parse(text);
  bad["metrics"][perf::kMetricCoal].erase("den_coeffs");
  CHECK_THROWS_WITH(pipe::parse_models(bad.dump()),
                    ContainsSubstring("den_coeffs"));
}

TEST_CASE("holdout error turns singular predictions into infinities",
          "[pipeline]") {
  const std::vector<std::string> vars = {"D1", "bx", "by"};
  // Denominator bx - 32 vanishes at bx = 32.
  poly::RationalFunction f =
      make_rf(vars, {0, 0, 0}, {1}, {0, 1, 0}, {-32, 1});
  poly::PointValueSet pv;
  pv.points = {{64, 16, 1}, {64, 32, 1}};
  pv.values = {1.0 / (16 - 32), 1.0};
  CHECK(pipe::max_relative_error(f, pv) ==
        std::numeric_limits<double>::infinity());

  poly::PointValueSet clean;
  clean.points = {{64, 16, 1}, {64, 64, 1}};
  clean.values = {1.0 / (16 - 32), 1.0 / (64 - 32)};
  CHECK(pipe::max_relative_error(f, clean) < 1e-15);
}
