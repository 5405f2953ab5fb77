#pragma once

// Control-flow graph over maximal basic blocks.  Blocks are contiguous
// instruction runs [first, last]; edges follow feasible control transfers
// (branch targets, jump targets, and fallthrough).

#include <algorithm>
#include <cstddef>
#include <set>
#include <stdexcept>
#include <utility>
#include <vector>

#include "ratprog/ir.hpp"

namespace ratprog::ir {

struct InvalidProgram : std::runtime_error {
  explicit InvalidProgram(const std::string& why)
      : std::runtime_error("invalid program: " + why) {}
};

struct Cfg {
  struct Block {
    std::size_t first = 0, last = 0;  // inclusive instruction range
    bool operator==(const Block&) const = default;
  };
  std::vector<Block> blocks;                            // in program order
  std::vector<std::pair<std::size_t, std::size_t>> edges;  // block index pairs

  std::size_t block_of(std::size_t instruction) const {
    for (std::size_t b = 0; b < blocks.size(); ++b)
      if (instruction >= blocks[b].first && instruction <= blocks[b].last)
        return b;
    throw std::out_of_range("instruction index outside all blocks");
  }
};

inline Cfg build_cfg(const RationalProgram& p) {
  ValidationReport rep = validate(p);
  if (!rep.ok()) throw InvalidProgram(rep.violations.front());

  std::set<std::size_t> leaders{0};
  for (std::size_t i = 0; i < p.body.size(); ++i) {
    const TacInstruction& ins = p.body[i];
    if (ins.op == Opcode::BranchIf || ins.op == Opcode::Jump) {
      for (std::size_t t : ins.jump_targets) leaders.insert(t);
      if (i + 1 < p.body.size()) leaders.insert(i + 1);
    } else if (ins.op == Opcode::HaltReturn && i + 1 < p.body.size()) {
      leaders.insert(i + 1);
    }
  }

  Cfg cfg;
  std::vector<std::size_t> sorted(leaders.begin(), leaders.end());
  for (std::size_t b = 0; b < sorted.size(); ++b) {
    std::size_t first = sorted[b];
    std::size_t last = (b + 1 < sorted.size()) ? sorted[b + 1] - 1 : p.body.size() - 1;
    cfg.blocks.push_back({first, last});
  }

  auto block_index = [&](std::size_t instruction) {
    return cfg.block_of(instruction);
  };
  std::set<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t b = 0; b < cfg.blocks.size(); ++b) {
    const TacInstruction& term = p.body[cfg.blocks[b].last];
    switch (term.op) {
      case Opcode::BranchIf:
        edges.emplace(b, block_index(term.jump_targets[0]));
        edges.emplace(b, block_index(term.jump_targets[1]));
        break;
      case Opcode::Jump:
        edges.emplace(b, block_index(term.jump_targets[0]));
        break;
      case Opcode::HaltReturn:
        break;
      default:  // fallthrough into the next block
        edges.emplace(b, b + 1);
        break;
    }
  }
  cfg.edges.assign(edges.begin(), edges.end());
  return cfg;
}

}  // namespace ratprog::ir
