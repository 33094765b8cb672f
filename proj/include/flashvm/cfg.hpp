#ifndef FLASHVM_CFG_HPP
#define FLASHVM_CFG_HPP

#include <memory>
#include <vector>

#include "flashvm/ir.hpp"

namespace flashvm {

// Block-level control flow graph of one function. Edges follow jmp/br and
// fallthrough; `call` is not a terminator.
struct CFG {
  const Function* fn = nullptr;
  std::vector<std::vector<int>> succs;
  std::vector<std::vector<int>> preds;
  Diagnostics warnings;  // unreachable blocks

  int num_blocks() const { return static_cast<int>(succs.size()); }
};

CFG build_cfg(const Function& fn);

// Immediate dominators over `cfg` from the entry block; idom[entry] = entry,
// idom[b] = -1 for unreachable blocks.
std::vector<int> compute_idom(const CFG& cfg);

// Immediate postdominators toward a virtual exit that all ret/halt blocks
// reach; ipdom[b] = -1 when b cannot reach an exit.
std::vector<int> compute_ipdom(const CFG& cfg);

bool dominates(const std::vector<int>& idom, int a, int b);

// Reverse postorder of the reachable blocks.
std::vector<int> reverse_postorder(const CFG& cfg);

enum class RegionKind { TopLevel, Loop, Conditional };

struct Region {
  RegionKind kind = RegionKind::TopLevel;
  Region* parent = nullptr;
  std::vector<std::unique_ptr<Region>> children;

  // Loop regions. The pre-header is the unique out-of-loop predecessor of
  // the header; the latch is the unique source of the back edge.
  int header = -1;
  int latch = -1;
  int preheader = -1;
  std::vector<int> blocks;  // all blocks of the natural loop, incl. header

  // Conditional regions.
  int cond_block = -1;              // block whose terminator is the br
  int join_block = -1;              // immediate postdominator of cond_block
  std::vector<int> true_blocks;     // branch block sets, exclusive of join
  std::vector<int> false_blocks;    // empty for if-then shapes

  bool is_loop() const { return kind == RegionKind::Loop; }
  bool is_conditional() const { return kind == RegionKind::Conditional; }
};

// Region tree of one function: properly nested loops and two-way
// conditionals. Requires a reducible CFG with single-latch canonical loops;
// anything else is rejected with an `Unsupported` error.
struct RegionTree {
  std::unique_ptr<Region> root;
  // innermost region per block; root for top-level blocks
  std::vector<Region*> enclosing;

  // Innermost loop containing `block`, or nullptr.
  Region* innermost_loop(int block) const;
  // All loop regions, innermost first.
  std::vector<Region*> loops_innermost_first() const;
  std::vector<Region*> conditionals_innermost_first() const;
};

RegionTree build_region_tree(const CFG& cfg);

}  // namespace flashvm

#endif
