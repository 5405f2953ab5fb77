#pragma once

// Three-address-code programs over exact rationals.  A program reads a fixed
// set of input variables, runs a branching instruction sequence whose only
// arithmetic is rational (+, -, *, comparisons, and the integer-part
// divisions floor/ceil/euclid), and returns one output variable.  There is
// deliberately no general division opcode.

#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ratprog/rational.hpp"

namespace ratprog::ir {

enum class Opcode {
  Assign,
  Neg,
  Add,
  Sub,
  Mul,
  EuclidQuot,
  EuclidRem,
  FloorDiv,
  CeilDiv,
  CmpEq,   // target := (a == b) ? 1 : 0
  CmpLt,   // target := (a < b)  ? 1 : 0
  BranchIf,  // jump to targets[0] if operand != 0, else targets[1]
  Jump,
  HaltReturn,  // names the output variable
};

inline const char* opcode_name(Opcode op) {
  switch (op) {
    case Opcode::Assign: return "assign";
    case Opcode::Neg: return "neg";
    case Opcode::Add: return "add";
    case Opcode::Sub: return "sub";
    case Opcode::Mul: return "mul";
    case Opcode::EuclidQuot: return "euclid_quot";
    case Opcode::EuclidRem: return "euclid_rem";
    case Opcode::FloorDiv: return "floor_div";
    case Opcode::CeilDiv: return "ceil_div";
    case Opcode::CmpEq: return "cmp_eq";
    case Opcode::CmpLt: return "cmp_lt";
    case Opcode::BranchIf: return "branch_if";
    case Opcode::Jump: return "jump";
    case Opcode::HaltReturn: return "halt_return";
  }
  return "?";
}

inline bool opcode_is_binary(Opcode op) {
  switch (op) {
    case Opcode::Add:
    case Opcode::Sub:
    case Opcode::Mul:
    case Opcode::EuclidQuot:
    case Opcode::EuclidRem:
    case Opcode::FloorDiv:
    case Opcode::CeilDiv:
    case Opcode::CmpEq:
    case Opcode::CmpLt:
      return true;
    default:
      return false;
  }
}

struct Operand {
  enum class Kind { Variable, Literal };
  Kind kind = Kind::Literal;
  std::string var;
  Rational lit;

  static Operand variable(std::string name) {
    Operand o;
    o.kind = Kind::Variable;
    o.var = std::move(name);
    return o;
  }
  static Operand literal(Rational value) {
    Operand o;
    o.kind = Kind::Literal;
    o.lit = std::move(value);
    return o;
  }
  bool is_var() const { return kind == Kind::Variable; }
  bool operator==(const Operand&) const = default;
};

inline Operand var(std::string name) { return Operand::variable(std::move(name)); }
inline Operand lit(Rational value) { return Operand::literal(std::move(value)); }
inline Operand lit(long long value) { return Operand::literal(Rational(value)); }

struct TacInstruction {
  Opcode op = Opcode::HaltReturn;
  std::string target;                    // empty for branch/jump/halt
  std::vector<Operand> operands;         // 0..2
  std::vector<std::size_t> jump_targets; // branch: 2, jump: 1, else: 0
  bool operator==(const TacInstruction&) const = default;
};

struct RationalProgram {
  std::vector<std::string> inputs;
  std::string output;
  std::vector<TacInstruction> body;
  bool operator==(const RationalProgram&) const = default;
};

struct ValidationReport {
  std::vector<std::string> violations;  // fatal
  std::vector<std::string> notes;       // informational metadata
  bool ok() const { return violations.empty(); }
};

// Structural validation.  A program is well-formed iff the report carries no
// violations: opcode arity/shape respected, jump targets in range, exactly
// one halt_return naming the declared output, free variables (read, never
// assigned) exactly the declared inputs, and control cannot fall off the end.
inline ValidationReport validate(const RationalProgram& p) {
  ValidationReport rep;
  auto fail = [&](std::string msg) { rep.violations.push_back(std::move(msg)); };

  std::set<std::string> declared(p.inputs.begin(), p.inputs.end());
  if (declared.size() != p.inputs.size()) fail("duplicate input name");
  if (p.output.empty()) fail("missing output variable");

  std::size_t halt_count = 0;
  std::set<std::string> assigned, read;
  bool non_integer_literal = false;
  bool non_cmp_condition = false;
  std::set<std::string> cmp_targets;
  for (const TacInstruction& ins : p.body)
    if (ins.op == Opcode::CmpEq || ins.op == Opcode::CmpLt)
      cmp_targets.insert(ins.target);

  for (std::size_t i = 0; i < p.body.size(); ++i) {
    const TacInstruction& ins = p.body[i];
    const std::string at = "instruction " + std::to_string(i) + " (" +
                           opcode_name(ins.op) + ")";

    std::size_t want_operands = 0, want_targets = 0;
    bool want_target_var = false;
    switch (ins.op) {
      case Opcode::Assign:
      case Opcode::Neg:
        want_operands = 1;
        want_target_var = true;
        break;
      case Opcode::BranchIf:
        want_operands = 1;
        want_targets = 2;
        break;
      case Opcode::Jump:
        want_targets = 1;
        break;
      case Opcode::HaltReturn:
        want_operands = 1;
        break;
      default:
        want_operands = 2;
        want_target_var = true;
        break;
    }
    if (ins.operands.size() != want_operands)
      fail(at + ": expected " + std::to_string(want_operands) + " operand(s)");
    if (ins.jump_targets.size() != want_targets)
      fail(at + ": expected " + std::to_string(want_targets) + " jump target(s)");
    if (want_target_var && ins.target.empty())
      fail(at + ": missing target variable");
    if (!want_target_var && !ins.target.empty())
      fail(at + ": unexpected target variable");

    for (std::size_t t : ins.jump_targets)
      if (t >= p.body.size())
        fail(at + ": jump target " + std::to_string(t) + " out of range");

    if (ins.op == Opcode::BranchIf || ins.op == Opcode::HaltReturn) {
      if (!ins.operands.empty() && !ins.operands[0].is_var())
        fail(at + ": operand must be a variable");
    }
    if (ins.op == Opcode::BranchIf && !ins.operands.empty() &&
        ins.operands[0].is_var() && !cmp_targets.count(ins.operands[0].var))
      non_cmp_condition = true;

    if (ins.op == Opcode::HaltReturn) {
      ++halt_count;
      if (!ins.operands.empty() && ins.operands[0].is_var() &&
          ins.operands[0].var != p.output)
        fail(at + ": returns '" + ins.operands[0].var +
             "' but program output is '" + p.output + "'");
    }

    for (const Operand& o : ins.operands) {
      if (o.is_var())
        read.insert(o.var);
      else if (!is_integer(o.lit))
        non_integer_literal = true;
    }
    if (want_target_var && !ins.target.empty()) {
      if (declared.count(ins.target))
        fail(at + ": assigns declared input '" + ins.target + "'");
      assigned.insert(ins.target);
    }
  }

  if (halt_count != 1)
    fail("expected exactly one halt_return, found " + std::to_string(halt_count));
  if (!p.body.empty()) {
    Opcode last = p.body.back().op;
    if (last != Opcode::HaltReturn && last != Opcode::Jump &&
        last != Opcode::BranchIf)
      fail("control can fall off the end of the program");
  } else {
    fail("empty program body");
  }

  for (const std::string& v : read)
    if (!assigned.count(v) && !declared.count(v))
      fail("undeclared free variable '" + v + "'");
  for (const std::string& v : p.inputs)
    if (!read.count(v)) fail("declared input '" + v + "' is never read");
  if (!p.output.empty() && !assigned.count(p.output) && !declared.count(p.output))
    fail("output variable '" + p.output + "' is never assigned");

  if (non_integer_literal)
    rep.notes.push_back(
        "program contains non-integer literals; output may be non-integer");
  if (non_cmp_condition)
    rep.notes.push_back(
        "branch condition not produced by a comparison instruction");
  return rep;
}

}  // namespace ratprog::ir
