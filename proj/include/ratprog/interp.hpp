#pragma once

// Interpreter for rational programs.  Evaluation is exact (no floating
// point), deterministic, and bounded by an instruction budget since halting
// cannot be checked statically.

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ratprog/ir.hpp"
#include "ratprog/rational.hpp"

namespace ratprog::ir {

struct EvalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct StepLimitExceeded : EvalError {
  explicit StepLimitExceeded(std::size_t limit)
      : EvalError("step limit of " + std::to_string(limit) +
                  " instructions exceeded (possible non-termination)") {}
};
struct MissingBinding : EvalError {
  explicit MissingBinding(const std::string& name)
      : EvalError("no value bound for variable '" + name + "'") {}
};

inline constexpr std::size_t kDefaultStepLimit = 1'000'000;

// Optional execution trace: the outcome of every branch plus the exact
// result of every integer-part operation.  Two runs that record identical
// traces followed the same control-flow path through the same floor/ceil
// plateaus, so the output restricted to that trace class is a single
// rational function of the inputs.
struct EvalTrace {
  std::vector<std::pair<std::size_t, bool>> branches;
  std::vector<Rational> integer_part_results;
  bool operator==(const EvalTrace&) const = default;
};

inline Rational evaluate(const RationalProgram& p,
                         const std::map<std::string, Rational>& bindings,
                         std::size_t step_limit = kDefaultStepLimit,
                         EvalTrace* trace = nullptr) {
  if (step_limit < 1) throw std::invalid_argument("step_limit must be >= 1");
  for (const std::string& in : p.inputs)
    if (!bindings.count(in)) throw MissingBinding(in);

  std::map<std::string, Rational> env(bindings);
  auto value_of = [&](const Operand& o) -> const Rational& {
    if (!o.is_var()) return o.lit;
    auto it = env.find(o.var);
    if (it == env.end()) throw MissingBinding(o.var);
    return it->second;
  };

  std::size_t pc = 0, steps = 0;
  while (true) {
    if (pc >= p.body.size())
      throw EvalError("control fell off the end of the program");
    if (++steps > step_limit) throw StepLimitExceeded(step_limit);
    const TacInstruction& ins = p.body[pc];
    switch (ins.op) {
      case Opcode::Assign:
        env[ins.target] = value_of(ins.operands[0]);
        break;
      case Opcode::Neg:
        env[ins.target] = -value_of(ins.operands[0]);
        break;
      case Opcode::Add:
        env[ins.target] = value_of(ins.operands[0]) + value_of(ins.operands[1]);
        break;
      case Opcode::Sub:
        env[ins.target] = value_of(ins.operands[0]) - value_of(ins.operands[1]);
        break;
      case Opcode::Mul:
        env[ins.target] = value_of(ins.operands[0]) * value_of(ins.operands[1]);
        break;
      case Opcode::EuclidQuot:
      case Opcode::EuclidRem:
      case Opcode::FloorDiv:
      case Opcode::CeilDiv: {
        const Rational& a = value_of(ins.operands[0]);
        const Rational& b = value_of(ins.operands[1]);
        Rational r;
        switch (ins.op) {
          case Opcode::EuclidQuot: r = euclid_quot(a, b); break;
          case Opcode::EuclidRem: r = euclid_rem(a, b); break;
          case Opcode::FloorDiv: r = floor_div(a, b); break;
          default: r = ceil_div(a, b); break;
        }
        if (trace) trace->integer_part_results.push_back(r);
        env[ins.target] = std::move(r);
        break;
      }
      case Opcode::CmpEq:
        env[ins.target] =
            Rational(value_of(ins.operands[0]) == value_of(ins.operands[1]) ? 1 : 0);
        break;
      case Opcode::CmpLt:
        env[ins.target] =
            Rational(value_of(ins.operands[0]) < value_of(ins.operands[1]) ? 1 : 0);
        break;
      case Opcode::BranchIf: {
        bool taken = value_of(ins.operands[0]) != 0;
        if (trace) trace->branches.emplace_back(pc, taken);
        pc = ins.jump_targets[taken ? 0 : 1];
        continue;
      }
      case Opcode::Jump:
        pc = ins.jump_targets[0];
        continue;
      case Opcode::HaltReturn:
        return value_of(ins.operands[0]);
    }
    ++pc;
  }
}

}  // namespace ratprog::ir
