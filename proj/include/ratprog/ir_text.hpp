#pragma once

// Line-oriented interchange format for rational programs.
//
//   # comments and blank lines are permitted anywhere
//   inputs: X1 X2 ...
//   output: Y
//   0: assign t X1
//   1: cmp_lt c t 5/2
//   2: branch_if c -> 4 3
//   3: jump -> 5
//   4: neg t t        <- operands are variables or literals `num` / `num/den`
//   5: halt_return Y
//
// Instruction indices must run 0,1,2,... in order; branch_if lists exactly
// two jump targets (taken, not-taken) and jump exactly one.  parse() reports
// line and column on malformed input; parse(serialize(p)) is structurally
// equal to p.

#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ratprog/ir.hpp"

namespace ratprog::ir {

struct ParseError : std::runtime_error {
  std::size_t line, column;
  ParseError(std::size_t line_, std::size_t column_, const std::string& why)
      : std::runtime_error("line " + std::to_string(line_) + ", column " +
                           std::to_string(column_) + ": " + why),
        line(line_),
        column(column_) {}
};

namespace detail {

struct Token {
  std::string text;
  std::size_t column;  // 1-based
};

inline std::vector<Token> tokenize_line(const std::string& line) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < line.size()) {
    if (line[i] == ' ' || line[i] == '\t') {
      ++i;
      continue;
    }
    if (line[i] == '#') break;  // trailing comment
    std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' &&
           line[i] != '#')
      ++i;
    out.push_back({line.substr(start, i - start), start + 1});
  }
  return out;
}

inline bool is_identifier(std::string_view s) {
  if (s.empty()) return false;
  if (!(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_'))
    return false;
  for (char c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_'))
      return false;
  return true;
}

}  // namespace detail

inline std::string serialize(const RationalProgram& p) {
  std::ostringstream out;
  out << "inputs:";
  for (const std::string& in : p.inputs) out << ' ' << in;
  out << "\noutput: " << p.output << '\n';
  for (std::size_t i = 0; i < p.body.size(); ++i) {
    const TacInstruction& ins = p.body[i];
    out << i << ": " << opcode_name(ins.op);
    if (!ins.target.empty()) out << ' ' << ins.target;
    for (const Operand& o : ins.operands)
      out << ' ' << (o.is_var() ? o.var : to_string(o.lit));
    if (!ins.jump_targets.empty()) {
      out << " ->";
      for (std::size_t t : ins.jump_targets) out << ' ' << t;
    }
    out << '\n';
  }
  return out.str();
}

inline RationalProgram parse(std::string_view text) {
  using detail::Token;
  RationalProgram p;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  bool saw_inputs = false, saw_output = false;

  auto parse_operand = [&](const Token& tok) -> Operand {
    if (detail::is_identifier(tok.text)) return var(tok.text);
    if (tok.text.find('.') != std::string::npos)
      throw ParseError(line_no, tok.column,
                       "decimal literals are not part of the format; use num/den");
    try {
      return lit(parse_rational(tok.text));
    } catch (const std::invalid_argument& e) {
      throw ParseError(line_no, tok.column, e.what());
    }
  };
  auto parse_index = [&](const Token& tok) -> std::size_t {
    for (char c : tok.text)
      if (!std::isdigit(static_cast<unsigned char>(c)))
        throw ParseError(line_no, tok.column,
                         "expected instruction index, got '" + tok.text + "'");
    return static_cast<std::size_t>(std::stoull(tok.text));
  };

  while (std::getline(in, raw)) {
    ++line_no;
    std::vector<Token> toks = detail::tokenize_line(raw);
    if (toks.empty()) continue;

    if (!saw_inputs) {
      if (toks[0].text != "inputs:")
        throw ParseError(line_no, toks[0].column, "expected 'inputs:' header");
      for (std::size_t i = 1; i < toks.size(); ++i) {
        if (!detail::is_identifier(toks[i].text))
          throw ParseError(line_no, toks[i].column,
                           "bad input name '" + toks[i].text + "'");
        p.inputs.push_back(toks[i].text);
      }
      saw_inputs = true;
      continue;
    }
    if (!saw_output) {
      if (toks[0].text != "output:" || toks.size() != 2 ||
          !detail::is_identifier(toks[1].text))
        throw ParseError(line_no, toks[0].column,
                         "expected 'output: <variable>' header");
      p.output = toks[1].text;
      saw_output = true;
      continue;
    }

    // Body line:  idx: OP [target] [operands...] [-> t...]
    if (toks[0].text.empty() || toks[0].text.back() != ':')
      throw ParseError(line_no, toks[0].column, "expected '<index>:'");
    Token idx_tok{toks[0].text.substr(0, toks[0].text.size() - 1), toks[0].column};
    std::size_t idx = parse_index(idx_tok);
    if (idx != p.body.size())
      throw ParseError(line_no, toks[0].column,
                       "instruction index " + std::to_string(idx) +
                           " out of order; expected " +
                           std::to_string(p.body.size()));
    if (toks.size() < 2)
      throw ParseError(line_no, toks[0].column, "missing opcode");

    TacInstruction ins;
    const std::string& opname = toks[1].text;
    bool found = false;
    for (int code = 0; code <= static_cast<int>(Opcode::HaltReturn); ++code) {
      if (opname == opcode_name(static_cast<Opcode>(code))) {
        ins.op = static_cast<Opcode>(code);
        found = true;
        break;
      }
    }
    if (!found)
      throw ParseError(line_no, toks[1].column, "unknown opcode '" + opname + "'");

    // Split remaining tokens at '->'.
    std::vector<Token> args, targets;
    bool in_targets = false;
    for (std::size_t i = 2; i < toks.size(); ++i) {
      if (toks[i].text == "->") {
        if (in_targets)
          throw ParseError(line_no, toks[i].column, "duplicate '->'");
        in_targets = true;
      } else {
        (in_targets ? targets : args).push_back(toks[i]);
      }
    }

    std::size_t want_args = 0, want_targets = 0;
    bool has_target_var = false;
    switch (ins.op) {
      case Opcode::Assign:
      case Opcode::Neg:
        want_args = 2;  // target + one operand
        has_target_var = true;
        break;
      case Opcode::BranchIf:
        want_args = 1;
        want_targets = 2;
        break;
      case Opcode::Jump:
        want_targets = 1;
        break;
      case Opcode::HaltReturn:
        want_args = 1;
        break;
      default:
        want_args = 3;  // target + two operands
        has_target_var = true;
        break;
    }
    if (args.size() != want_args)
      throw ParseError(line_no, toks[1].column,
                       std::string(opcode_name(ins.op)) + " expects " +
                           std::to_string(want_args) + " argument(s), got " +
                           std::to_string(args.size()));
    if (targets.size() != want_targets)
      throw ParseError(line_no, toks[1].column,
                       std::string(opcode_name(ins.op)) + " expects " +
                           std::to_string(want_targets) +
                           " jump target(s), got " +
                           std::to_string(targets.size()));

    std::size_t a = 0;
    if (has_target_var) {
      if (!detail::is_identifier(args[0].text))
        throw ParseError(line_no, args[0].column,
                         "bad target variable '" + args[0].text + "'");
      ins.target = args[0].text;
      a = 1;
    }
    for (; a < args.size(); ++a) ins.operands.push_back(parse_operand(args[a]));
    for (const Token& t : targets) ins.jump_targets.push_back(parse_index(t));
    p.body.push_back(std::move(ins));
  }

  if (!saw_inputs) throw ParseError(line_no + 1, 1, "missing 'inputs:' header");
  if (!saw_output) throw ParseError(line_no + 1, 1, "missing 'output:' header");
  if (p.body.empty()) throw ParseError(line_no + 1, 1, "empty program body");
  return p;
}

}  // namespace ratprog::ir
