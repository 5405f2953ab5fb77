#pragma once

// Fluent construction of rational programs with symbolic labels, plus
// partial evaluation (specialize) that bakes chosen inputs into literals.

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ratprog/ir.hpp"

namespace ratprog::ir {

class ProgramBuilder {
 public:
  struct Label {
    std::size_t id;
  };

  void input(std::string name) { program_.inputs.push_back(std::move(name)); }
  void output(std::string name) { program_.output = std::move(name); }

  Label make_label() {
    label_positions_.push_back(kUnplaced);
    return {label_positions_.size() - 1};
  }
  // Binds a label to the index of the next emitted instruction.
  void place(Label l) {
    if (label_positions_.at(l.id) != kUnplaced)
      throw std::logic_error("label placed twice");
    label_positions_[l.id] = program_.body.size();
  }

  void assign(std::string t, Operand a) { emit(Opcode::Assign, std::move(t), {std::move(a)}); }
  void neg(std::string t, Operand a) { emit(Opcode::Neg, std::move(t), {std::move(a)}); }
  void add(std::string t, Operand a, Operand b) { emit(Opcode::Add, std::move(t), {std::move(a), std::move(b)}); }
  void sub(std::string t, Operand a, Operand b) { emit(Opcode::Sub, std::move(t), {std::move(a), std::move(b)}); }
  void mul(std::string t, Operand a, Operand b) { emit(Opcode::Mul, std::move(t), {std::move(a), std::move(b)}); }
  void euclid_quot(std::string t, Operand a, Operand b) { emit(Opcode::EuclidQuot, std::move(t), {std::move(a), std::move(b)}); }
  void euclid_rem(std::string t, Operand a, Operand b) { emit(Opcode::EuclidRem, std::move(t), {std::move(a), std::move(b)}); }
  void floor_div(std::string t, Operand a, Operand b) { emit(Opcode::FloorDiv, std::move(t), {std::move(a), std::move(b)}); }
  void ceil_div(std::string t, Operand a, Operand b) { emit(Opcode::CeilDiv, std::move(t), {std::move(a), std::move(b)}); }
  void cmp_eq(std::string t, Operand a, Operand b) { emit(Opcode::CmpEq, std::move(t), {std::move(a), std::move(b)}); }
  void cmp_lt(std::string t, Operand a, Operand b) { emit(Opcode::CmpLt, std::move(t), {std::move(a), std::move(b)}); }

  void branch_if(std::string cond, Label if_true, Label if_false) {
    TacInstruction ins;
    ins.op = Opcode::BranchIf;
    ins.operands.push_back(var(std::move(cond)));
    ins.jump_targets = {if_true.id, if_false.id};  // label ids; resolved later
    pending_labels_.push_back(program_.body.size());
    program_.body.push_back(std::move(ins));
  }
  void jump(Label to) {
    TacInstruction ins;
    ins.op = Opcode::Jump;
    ins.jump_targets = {to.id};
    pending_labels_.push_back(program_.body.size());
    program_.body.push_back(std::move(ins));
  }
  void halt_return(std::string variable) {
    TacInstruction ins;
    ins.op = Opcode::HaltReturn;
    ins.operands.push_back(var(std::move(variable)));
    program_.body.push_back(std::move(ins));
  }

  // Convenience macro-ops (expand to compare + branch + assign sequences).

  // target := min(a, b)
  void emit_min(const std::string& target, const Operand& a, const Operand& b) {
    std::string c = fresh("min_c");
    assign(target, a);
    cmp_lt(c, b, a);
    Label use_b = make_label(), done = make_label();
    branch_if(c, use_b, done);
    place(use_b);
    assign(target, b);
    place(done);
  }

  // Returns a fresh variable name with the given prefix; never collides with
  // names produced by other fresh() calls.
  std::string fresh(const std::string& prefix) {
    return prefix + "_" + std::to_string(fresh_counter_++);
  }

  // Resolves labels to instruction indices and returns the program.
  RationalProgram finish() {
    for (std::size_t at : pending_labels_) {
      for (std::size_t& t : program_.body[at].jump_targets) {
        std::size_t pos = label_positions_.at(t);
        if (pos == kUnplaced) throw std::logic_error("unplaced label used");
        t = pos;
      }
    }
    pending_labels_.clear();
    return std::move(program_);
  }

 private:
  static constexpr std::size_t kUnplaced = static_cast<std::size_t>(-1);

  void emit(Opcode op, std::string target, std::vector<Operand> operands) {
    TacInstruction ins;
    ins.op = op;
    ins.target = std::move(target);
    ins.operands = std::move(operands);
    program_.body.push_back(std::move(ins));
  }

  RationalProgram program_;
  std::vector<std::size_t> label_positions_;
  std::vector<std::size_t> pending_labels_;
  std::size_t fresh_counter_ = 0;
};

// Partial evaluation: binds some inputs to literal values by prepending
// assignments, removing them from the input list, and shifting jump targets.
// The result computes the same function of the remaining inputs.
inline RationalProgram specialize(const RationalProgram& p,
                                  const std::map<std::string, Rational>& fixed) {
  for (const auto& [name, _] : fixed) {
    bool declared = false;
    for (const std::string& in : p.inputs) declared |= (in == name);
    if (!declared)
      throw std::invalid_argument("specialize: '" + name +
                                  "' is not an input of the program");
  }

  RationalProgram out;
  out.output = p.output;
  std::size_t shift = 0;
  for (const std::string& in : p.inputs) {
    auto it = fixed.find(in);
    if (it == fixed.end()) {
      out.inputs.push_back(in);
    } else {
      TacInstruction ins;
      ins.op = Opcode::Assign;
      ins.target = in;
      ins.operands.push_back(lit(it->second));
      out.body.push_back(std::move(ins));
      ++shift;
    }
  }
  for (TacInstruction ins : p.body) {
    for (std::size_t& t : ins.jump_targets) t += shift;
    out.body.push_back(std::move(ins));
  }
  return out;
}

}  // namespace ratprog::ir
