#include "flashvm/cfg.hpp"

#include <algorithm>
#include <functional>
#include <set>

namespace flashvm {

CFG build_cfg(const Function& fn) {
  CFG cfg;
  cfg.fn = &fn;
  int n = static_cast<int>(fn.blocks.size());
  cfg.succs.resize(n);
  cfg.preds.resize(n);
  for (int i = 0; i < n; ++i) {
    const BasicBlock& b = fn.blocks[i];
    const Instruction* term = b.instrs.empty() ? nullptr : &b.instrs.back();
    if (term && term->op == Opcode::Jmp) {
      cfg.succs[i].push_back(fn.block_index(term->label_a));
    } else if (term && term->op == Opcode::Br) {
      int t = fn.block_index(term->label_a);
      int f = fn.block_index(term->label_b);
      cfg.succs[i].push_back(t);
      if (f != t) cfg.succs[i].push_back(f);
    } else if (term && (term->op == Opcode::Ret || term->op == Opcode::Halt)) {
      // no successors
    } else if (i + 1 < n) {
      cfg.succs[i].push_back(i + 1);  // fallthrough
    }
  }
  for (int i = 0; i < n; ++i)
    for (int s : cfg.succs[i]) cfg.preds[s].push_back(i);

  // Unreachable blocks are reported, not rejected.
  std::vector<bool> seen(n, false);
  std::vector<int> stack{0};
  if (n > 0) seen[0] = true;
  while (!stack.empty()) {
    int b = stack.back();
    stack.pop_back();
    for (int s : cfg.succs[b])
      if (!seen[s]) {
        seen[s] = true;
        stack.push_back(s);
      }
  }
  for (int i = 0; i < n; ++i)
    if (!seen[i])
      cfg.warnings.push_back({"unreachable block '" + fn.blocks[i].label +
                                  "' in " + fn.name,
                              fn.blocks[i].pos});
  return cfg;
}

std::vector<int> reverse_postorder(const CFG& cfg) {
  int n = cfg.num_blocks();
  std::vector<int> order;
  std::vector<int> state(n, 0);
  std::function<void(int)> dfs = [&](int b) {
    state[b] = 1;
    for (int s : cfg.succs[b])
      if (state[s] == 0) dfs(s);
    order.push_back(b);
  };
  if (n > 0) dfs(0);
  std::reverse(order.begin(), order.end());
  return order;
}

namespace {

// Cooper-Harvey-Kennedy iterative dominators over an arbitrary graph given
// in predecessor form plus a reverse postorder from the entry.
std::vector<int> idom_generic(int n, int entry,
                              const std::vector<std::vector<int>>& preds,
                              const std::vector<int>& rpo) {
  std::vector<int> rpo_index(n, -1);
  for (std::size_t i = 0; i < rpo.size(); ++i)
    rpo_index[rpo[i]] = static_cast<int>(i);
  std::vector<int> idom(n, -1);
  idom[entry] = entry;
  auto intersect = [&](int a, int b) {
    while (a != b) {
      while (rpo_index[a] > rpo_index[b]) a = idom[a];
      while (rpo_index[b] > rpo_index[a]) b = idom[b];
    }
    return a;
  };
  bool changed = true;
  while (changed) {
    changed = false;
    for (int b : rpo) {
      if (b == entry) continue;
      int new_idom = -1;
      for (int p : preds[b]) {
        if (idom[p] == -1) continue;
        new_idom = new_idom == -1 ? p : intersect(new_idom, p);
      }
      if (new_idom != -1 && idom[b] != new_idom) {
        idom[b] = new_idom;
        changed = true;
      }
    }
  }
  return idom;
}

}  // namespace

std::vector<int> compute_idom(const CFG& cfg) {
  return idom_generic(cfg.num_blocks(), 0, cfg.preds, reverse_postorder(cfg));
}

std::vector<int> compute_ipdom(const CFG& cfg) {
  // Virtual exit node `n`; edges of the reversed graph point from it into
  // every ret/halt block.
  int n = cfg.num_blocks();
  std::vector<std::vector<int>> rsuccs(n + 1), rpreds(n + 1);
  for (int i = 0; i < n; ++i)
    for (int s : cfg.succs[i]) {
      rsuccs[s].push_back(i);
      rpreds[i].push_back(s);
    }
  for (int i = 0; i < n; ++i)
    if (cfg.succs[i].empty()) {
      rsuccs[n].push_back(i);
      rpreds[i].push_back(n);
    }
  std::vector<int> order;
  std::vector<int> state(n + 1, 0);
  std::function<void(int)> dfs = [&](int b) {
    state[b] = 1;
    for (int s : rsuccs[b])
      if (state[s] == 0) dfs(s);
    order.push_back(b);
  };
  dfs(n);
  std::reverse(order.begin(), order.end());
  std::vector<int> ipdom = idom_generic(n + 1, n, rpreds, order);
  for (int i = 0; i < n; ++i) {
    if (state[i] == 0) ipdom[i] = -1;       // cannot reach an exit
    else if (ipdom[i] == n) ipdom[i] = -1;  // exits straight to program end
  }
  ipdom.resize(n);
  return ipdom;
}

bool dominates(const std::vector<int>& idom, int a, int b) {
  if (b < 0 || a < 0) return false;
  while (true) {
    if (a == b) return true;
    if (idom[b] == b || idom[b] < 0) return false;
    b = idom[b];
  }
}

Region* RegionTree::innermost_loop(int block) const {
  Region* r = enclosing[block];
  while (r && !r->is_loop()) r = r->parent;
  return r && r->is_loop() ? r : nullptr;
}

namespace {

void collect(Region* r, RegionKind kind, std::vector<Region*>& out) {
  for (auto& c : r->children) collect(c.get(), kind, out);
  if (r->kind == kind) out.push_back(r);
}

}  // namespace

std::vector<Region*> RegionTree::loops_innermost_first() const {
  std::vector<Region*> out;
  collect(root.get(), RegionKind::Loop, out);
  return out;
}

std::vector<Region*> RegionTree::conditionals_innermost_first() const {
  std::vector<Region*> out;
  collect(root.get(), RegionKind::Conditional, out);
  return out;
}

RegionTree build_region_tree(const CFG& cfg) {
  const Function& fn = *cfg.fn;
  int n = cfg.num_blocks();
  std::vector<int> idom = compute_idom(cfg);
  std::vector<int> ipdom = compute_ipdom(cfg);

  // Candidate regions with explicit block sets, built flat first and nested
  // by containment afterwards.
  struct Candidate {
    std::unique_ptr<Region> region;
    std::set<int> blocks;  // owned blocks (join excluded for conditionals)
  };
  std::vector<Candidate> cands;

  // Natural loops from back edges (tail -> head where head dominates tail).
  std::set<int> loop_headers;
  for (int b = 0; b < n; ++b)
    for (int s : cfg.succs[b]) {
      if (!dominates(idom, s, b)) continue;
      if (!loop_headers.insert(s).second)
        throw Error(ErrorKind::Unsupported,
                    "loop with multiple latches at '" + fn.blocks[s].label +
                        "' in " + fn.name);
      Candidate c;
      c.region = std::make_unique<Region>();
      c.region->kind = RegionKind::Loop;
      c.region->header = s;
      c.region->latch = b;
      c.blocks.insert(s);
      std::vector<int> work{b};
      while (!work.empty()) {
        int x = work.back();
        work.pop_back();
        if (!c.blocks.insert(x).second) continue;
        for (int p : cfg.preds[x])
          if (!c.blocks.count(p)) work.push_back(p);
      }
      for (int x : c.blocks)
        if (!dominates(idom, s, x))
          throw Error(ErrorKind::Unsupported,
                      "irreducible control flow around '" +
                          fn.blocks[s].label + "' in " + fn.name);
      std::vector<int> outside;
      for (int p : cfg.preds[s])
        if (!c.blocks.count(p)) outside.push_back(p);
      if (outside.size() != 1)
        throw Error(ErrorKind::Unsupported,
                    "loop at '" + fn.blocks[s].label + "' in " + fn.name +
                        " lacks a unique pre-header");
      c.region->preheader = outside[0];
      c.region->blocks.assign(c.blocks.begin(), c.blocks.end());
      cands.push_back(std::move(c));
    }

  // Reducibility: with back edges removed the graph must be acyclic.
  {
    std::vector<std::vector<int>> fwd(n);
    for (int b = 0; b < n; ++b)
      for (int s : cfg.succs[b])
        if (!dominates(idom, s, b)) fwd[b].push_back(s);
    std::vector<int> color(n, 0);
    std::function<void(int)> dfs = [&](int b) {
      color[b] = 1;
      for (int s : fwd[b]) {
        if (color[s] == 1)
          throw Error(ErrorKind::Unsupported,
                      "irreducible control flow in " + fn.name);
        if (color[s] == 0) dfs(s);
      }
      color[b] = 2;
    };
    if (n > 0) dfs(0);
  }

  auto loop_of = [&](int block) -> const Candidate* {
    const Candidate* best = nullptr;
    for (const auto& c : cands) {
      if (!c.region->is_loop() || !c.blocks.count(block)) continue;
      if (!best || c.blocks.size() < best->blocks.size()) best = &c;
    }
    return best;
  };

  // Conditional regions: two-way branches that are not loop headers or
  // latches; the join is the immediate postdominator.
  for (int b : reverse_postorder(cfg)) {
    const BasicBlock& blk = fn.blocks[b];
    if (blk.instrs.empty() || blk.instrs.back().op != Opcode::Br) continue;
    const Candidate* loop = loop_of(b);
    if (loop && (loop->region->header == b || loop->region->latch == b))
      continue;
    int join = ipdom[b];
    if (join < 0)
      throw Error(ErrorKind::Unsupported,
                  "branch at '" + blk.label + "' in " + fn.name +
                      " has no join block");
    if (loop && !loop->blocks.count(join))
      throw Error(ErrorKind::Unsupported,
                  "branch at '" + blk.label + "' in " + fn.name +
                      " joins outside its loop");

    Candidate c;
    c.region = std::make_unique<Region>();
    c.region->kind = RegionKind::Conditional;
    c.region->cond_block = b;
    c.region->join_block = join;
    c.blocks.insert(b);
    auto collect_branch = [&](int start, std::vector<int>& out) {
      if (start == join) return;
      std::set<int> seen;
      std::vector<int> work{start};
      while (!work.empty()) {
        int x = work.back();
        work.pop_back();
        if (x == join || !seen.insert(x).second) continue;
        for (int s : cfg.succs[x]) work.push_back(s);
      }
      out.assign(seen.begin(), seen.end());
      c.blocks.insert(seen.begin(), seen.end());
    };
    const Instruction& br = blk.instrs.back();
    collect_branch(fn.block_index(br.label_a), c.region->true_blocks);
    collect_branch(fn.block_index(br.label_b), c.region->false_blocks);
    for (int x : c.region->true_blocks)
      for (int y : c.region->false_blocks)
        if (x == y)
          throw Error(ErrorKind::Unsupported,
                      "branches at '" + blk.label + "' in " + fn.name +
                          " share blocks before the join");
    if (loop)
      for (int x : c.blocks)
        if (!loop->blocks.count(x))
          throw Error(ErrorKind::Unsupported,
                      "branch at '" + blk.label + "' in " + fn.name +
                          " exits its loop");
    cands.push_back(std::move(c));
  }

  // Nest by containment: larger regions become ancestors. Partial overlap
  // is rejected.
  std::sort(cands.begin(), cands.end(), [](const Candidate& a,
                                           const Candidate& b) {
    return a.blocks.size() > b.blocks.size();
  });
  RegionTree tree;
  tree.root = std::make_unique<Region>();
  tree.enclosing.assign(n, tree.root.get());

  std::vector<std::pair<Region*, std::set<int>>> placed;
  placed.push_back({tree.root.get(), {}});
  for (auto& c : cands) {
    Region* parent = tree.root.get();
    std::size_t parent_size = static_cast<std::size_t>(-1);
    for (auto& [r, blocks] : placed) {
      if (r == tree.root.get()) continue;
      bool contains = std::includes(blocks.begin(), blocks.end(),
                                    c.blocks.begin(), c.blocks.end());
      bool disjoint = true;
      for (int b : c.blocks)
        if (blocks.count(b)) {
          disjoint = false;
          break;
        }
      if (contains) {
        if (blocks.size() < parent_size) {
          parent = r;
          parent_size = blocks.size();
        }
      } else if (!disjoint) {
        throw Error(ErrorKind::Unsupported,
                    "overlapping control regions in " + fn.name);
      }
    }
    Region* raw = c.region.get();
    raw->parent = parent;
    parent->children.push_back(std::move(c.region));
    placed.push_back({raw, c.blocks});
    for (int b : c.blocks) {
      // deepest region wins; candidates are processed large-to-small
      tree.enclosing[b] = raw;
    }
  }

  return tree;
}

}  // namespace flashvm
