#include "flashvm/analysis.hpp"

#include <algorithm>
#include <functional>

namespace flashvm {

bool executes_save(const Program& p, const Function& fn) {
  for (const auto& b : fn.blocks)
    for (const auto& in : b.instrs) {
      if (in.is_save()) return true;
      if (in.op == Opcode::Call)
        if (const Function* callee = p.find_function(in.callee))
          if (executes_save(p, *callee)) return true;
    }
  return false;
}

namespace {

std::vector<int> idom_nodes(int n, int entry,
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
      int best = -1;
      for (int p : preds[b]) {
        if (idom[p] == -1) continue;
        best = best == -1 ? p : intersect(best, p);
      }
      if (best != -1 && idom[b] != best) {
        idom[b] = best;
        changed = true;
      }
    }
  }
  return idom;
}

}  // namespace

IntervalGraph::IntervalGraph(const Program& p,
                             const ComputationInterval& interval,
                             const ProgramTags& tags)
    : interval_(&interval), tags_(&tags) {
  std::unordered_set<std::uint32_t> members(interval.instrs.begin(),
                                            interval.instrs.end());
  int fn_idx = p.function_index(interval.fn);
  const Function& fn = p.functions[fn_idx];
  std::vector<int> entries, rets;
  add_function_body(p, fn, {}, &members, entries, rets);
  // Top-level ret/halt nodes exit the interval.
  for (int r : rets) nodes_[r].edge_to_exit = true;
  compute_views();
}

// Creates nodes and intra-interval edges for `fn`, restricted to `members`
// when given (nullptr = whole function, used for spliced callees). Appends
// the sub-entry nodes and the ret/halt nodes of this body.
void IntervalGraph::add_function_body(
    const Program& p, const Function& fn, std::vector<std::uint32_t> ctx,
    const std::unordered_set<std::uint32_t>* members,
    std::vector<int>& entry_nodes, std::vector<int>& ret_nodes) {
  int fn_idx = p.function_index(fn.name);
  auto is_member = [&](const Instruction& in) {
    return !members || members->count(in.id) > 0;
  };

  // First pass: create nodes for member instructions.
  std::unordered_map<std::uint32_t, int> local_index;
  for (std::size_t bi = 0; bi < fn.blocks.size(); ++bi)
    for (std::size_t ii = 0; ii < fn.blocks[bi].instrs.size(); ++ii) {
      const Instruction& in = fn.blocks[bi].instrs[ii];
      if (in.is_save() || !is_member(in)) continue;
      IntervalNode node;
      node.in = &in;
      node.ref = {fn_idx, int(bi), int(ii)};
      node.ctx = ctx;
      node.callee_frame_access =
          !ctx.empty() && in.is_mem() &&
          in.addr.base_kind == AddrBaseKind::Local;
      local_index[in.id] = static_cast<int>(nodes_.size());
      by_instr_[in.id].push_back(static_cast<int>(nodes_.size()));
      nodes_.push_back(std::move(node));
    }

  auto first_member_of_block = [&](int bi) -> int {
    const auto& instrs = fn.blocks[bi].instrs;
    if (instrs.empty()) return -1;
    const Instruction& first = instrs.front();
    if (first.is_save() || !is_member(first)) return -1;
    return local_index.at(first.id);
  };

  // Second pass: edges.
  for (std::size_t bi = 0; bi < fn.blocks.size(); ++bi) {
    const auto& instrs = fn.blocks[bi].instrs;
    for (std::size_t ii = 0; ii < instrs.size(); ++ii) {
      const Instruction& in = instrs[ii];
      if (in.is_save() || !is_member(in)) continue;
      int self = local_index.at(in.id);

      // Successor-of-call: splice save-free callees.
      int after_call_target = -1;  // filled below for call nodes
      if (in.op == Opcode::Call) {
        const Function& callee = *p.find_function(in.callee);
        if (executes_save(p, callee)) {
          nodes_[self].edge_to_exit = true;  // call boundary
          continue;
        }
        std::vector<std::uint32_t> sub_ctx = ctx;
        sub_ctx.push_back(in.id);
        std::vector<int> sub_entries, sub_rets;
        add_function_body(p, callee, sub_ctx, nullptr, sub_entries, sub_rets);
        for (int e : sub_entries) {
          nodes_[self].succs.push_back(e);
          nodes_[e].preds.push_back(self);
        }
        // Return edges attach to the instruction after the call.
        after_call_target = -2;  // marker: connect sub_rets below
        auto connect_return = [&](int target) {
          for (int r : sub_rets) {
            nodes_[r].succs.push_back(target);
            nodes_[target].preds.push_back(r);
          }
        };
        // The dynamic successor of the call is the next instruction.
        if (ii + 1 < instrs.size()) {
          const Instruction& next = instrs[ii + 1];
          if (!next.is_save() && is_member(next))
            connect_return(local_index.at(next.id));
          else
            for (int r : sub_rets) nodes_[r].edge_to_exit = true;
        } else {
          // fallthrough to next block
          bool connected = false;
          if (bi + 1 < fn.blocks.size()) {
            int t = first_member_of_block(int(bi + 1));
            if (t >= 0) {
              connect_return(t);
              connected = true;
            }
          }
          if (!connected)
            for (int r : sub_rets) nodes_[r].edge_to_exit = true;
        }
        continue;
      }

      (void)after_call_target;
      auto link_or_exit = [&](const Instruction* next, int target_node) {
        if (next && next->is_save()) {
          nodes_[self].edge_to_exit = true;
        } else if (target_node >= 0) {
          nodes_[self].succs.push_back(target_node);
          nodes_[target_node].preds.push_back(self);
        } else {
          nodes_[self].edge_to_exit = true;
        }
      };

      if (in.op == Opcode::Ret || in.op == Opcode::Halt) {
        ret_nodes.push_back(self);
        continue;
      }
      if (in.op == Opcode::Jmp || in.op == Opcode::Br) {
        for (const std::string* label :
             in.op == Opcode::Jmp
                 ? std::initializer_list<const std::string*>{&in.label_a}
                 : std::initializer_list<const std::string*>{&in.label_a,
                                                             &in.label_b}) {
          int tb = fn.block_index(*label);
          const Instruction* first =
              fn.blocks[tb].instrs.empty() ? nullptr
                                           : &fn.blocks[tb].instrs.front();
          link_or_exit(first, first_member_of_block(tb));
        }
        continue;
      }
      // Plain instruction: next in block, else fallthrough.
      if (ii + 1 < instrs.size()) {
        link_or_exit(&instrs[ii + 1],
                     !instrs[ii + 1].is_save() && is_member(instrs[ii + 1])
                         ? local_index.at(instrs[ii + 1].id)
                         : -1);
      } else if (bi + 1 < fn.blocks.size()) {
        const Instruction* first = fn.blocks[bi + 1].instrs.empty()
                                       ? nullptr
                                       : &fn.blocks[bi + 1].instrs.front();
        link_or_exit(first, first_member_of_block(int(bi + 1)));
      } else {
        nodes_[self].edge_to_exit = true;
      }
    }
  }

  // Entry nodes of this body: the function's first member instruction (for
  // spliced callees) is enough; for the top level, every node without
  // intra-interval predecessors acts as an entry (computed in
  // compute_views).
  if (!fn.blocks.empty()) {
    for (const Instruction& in : fn.blocks[0].instrs) {
      if (in.is_save() || !is_member(in)) break;
      entry_nodes.push_back(local_index.at(in.id));
      break;
    }
  }
}

void IntervalGraph::compute_views() {
  int n = static_cast<int>(nodes_.size());
  for (int i = 0; i < n; ++i)
    if (nodes_[i].preds.empty()) nodes_[i].edge_from_entry = true;

  // Deterministic quasi-topological order: DFS from entry nodes.
  order_.clear();
  std::vector<int> state(n, 0);
  back_edge_flag_.assign(n, false);
  std::vector<std::pair<int, int>> back_edges;
  std::function<void(int)> dfs = [&](int v) {
    state[v] = 1;
    for (int s : nodes_[v].succs) {
      if (state[s] == 0)
        dfs(s);
      else if (state[s] == 1) {
        back_edges.push_back({v, s});
        back_edge_flag_[s] = true;
      }
    }
    state[v] = 2;
    order_.push_back(v);
  };
  for (int i = 0; i < n; ++i)
    if (nodes_[i].edge_from_entry && state[i] == 0) dfs(i);
  for (int i = 0; i < n; ++i)
    if (state[i] == 0) dfs(i);  // unreachable members, keep deterministic
  std::reverse(order_.begin(), order_.end());

  // Reachability closures.
  auto closure = [&](bool include_back) {
    std::vector<std::vector<bool>> reach(n, std::vector<bool>(n, false));
    for (int i = 0; i < n; ++i) {
      std::vector<int> stack{i};
      while (!stack.empty()) {
        int v = stack.back();
        stack.pop_back();
        for (int s : nodes_[v].succs) {
          if (!include_back) {
            bool is_back = false;
            for (auto& [f, t] : back_edges)
              if (f == v && t == s) is_back = true;
            if (is_back) continue;
          }
          if (!reach[i][s]) {
            reach[i][s] = true;
            stack.push_back(s);
          }
        }
      }
    }
    return reach;
  };
  reach_full_ = closure(true);
  reach_fwd_ = closure(false);

  // Dominators with virtual entry n, postdominators with virtual exit n.
  {
    std::vector<std::vector<int>> preds(n + 1);
    for (int i = 0; i < n; ++i) {
      for (int s : nodes_[i].succs) preds[s].push_back(i);
      if (nodes_[i].edge_from_entry) preds[i].push_back(n);
    }
    std::vector<int> rpo{n};
    for (int v : order_) rpo.push_back(v);
    idom_ = idom_nodes(n + 1, n, preds, rpo);
    idom_.resize(n);
  }
  {
    std::vector<std::vector<int>> preds(n + 1);  // preds in reversed graph
    for (int i = 0; i < n; ++i) {
      for (int s : nodes_[i].succs) preds[i].push_back(s);
      if (nodes_[i].edge_to_exit) preds[i].push_back(n);
    }
    std::vector<int> rpo{n};
    for (auto it = order_.rbegin(); it != order_.rend(); ++it)
      rpo.push_back(*it);
    ipdom_ = idom_nodes(n + 1, n, preds, rpo);
    ipdom_.resize(n);
  }
}

const MemoryTag& IntervalGraph::tag_of(int node) const {
  return tags_->of(nodes_[node].in->id);
}

bool IntervalGraph::reaches(int from, int to, bool include_back_edges) const {
  const auto& m = include_back_edges ? reach_full_ : reach_fwd_;
  return m[from][to];
}

bool IntervalGraph::reaches_exit_avoiding(
    int from, const std::function<bool(int)>& blocked) const {
  int n = static_cast<int>(nodes_.size());
  std::vector<bool> seen(n, false);
  std::vector<int> stack;
  if (nodes_[from].edge_to_exit) return true;
  for (int s : nodes_[from].succs)
    if (!seen[s]) {
      seen[s] = true;
      stack.push_back(s);
    }
  while (!stack.empty()) {
    int v = stack.back();
    stack.pop_back();
    if (blocked(v)) continue;
    if (nodes_[v].edge_to_exit) return true;
    for (int s : nodes_[v].succs)
      if (!seen[s]) {
        seen[s] = true;
        stack.push_back(s);
      }
  }
  return false;
}

bool IntervalGraph::reachable_from_entry_avoiding(
    int to, const std::function<bool(int)>& blocked) const {
  int n = static_cast<int>(nodes_.size());
  std::vector<bool> seen(n, false);
  std::vector<int> stack;
  for (int i = 0; i < n; ++i)
    if (nodes_[i].edge_from_entry && !seen[i]) {
      seen[i] = true;
      stack.push_back(i);
    }
  while (!stack.empty()) {
    int v = stack.back();
    stack.pop_back();
    if (v == to) return true;
    if (blocked(v)) continue;
    for (int s : nodes_[v].succs)
      if (!seen[s]) {
        seen[s] = true;
        stack.push_back(s);
      }
  }
  return false;
}

bool IntervalGraph::avoidable(int node) const {
  int n = static_cast<int>(nodes_.size());
  std::vector<bool> seen(n, false);
  std::vector<int> stack;
  for (int i = 0; i < n; ++i)
    if (nodes_[i].edge_from_entry && i != node && !seen[i]) {
      seen[i] = true;
      stack.push_back(i);
    }
  while (!stack.empty()) {
    int v = stack.back();
    stack.pop_back();
    if (nodes_[v].edge_to_exit) return true;
    for (int s : nodes_[v].succs)
      if (s != node && !seen[s]) {
        seen[s] = true;
        stack.push_back(s);
      }
  }
  return false;
}

bool IntervalGraph::exists_path_avoiding(
    int from, int to, const std::function<bool(int)>& blocked) const {
  int n = static_cast<int>(nodes_.size());
  std::vector<bool> seen(n, false);
  std::vector<int> stack{from};
  seen[from] = true;
  while (!stack.empty()) {
    int v = stack.back();
    stack.pop_back();
    for (int s : nodes_[v].succs) {
      if (s == to) return true;
      if (!seen[s] && !blocked(s)) {
        seen[s] = true;
        stack.push_back(s);
      }
    }
  }
  return false;
}

bool IntervalGraph::dominated(int a, int b) const {
  while (true) {
    if (a == b) return true;
    if (b < 0 || idom_[b] == b || idom_[b] < 0) return false;
    int next = idom_[b];
    if (next == b) return false;
    b = next;
    if (b >= static_cast<int>(nodes_.size())) return false;  // virtual entry
  }
}

bool IntervalGraph::postdominated(int a, int b) const {
  while (true) {
    if (a == b) return true;
    if (b < 0 || ipdom_[b] == b || ipdom_[b] < 0) return false;
    int next = ipdom_[b];
    if (next == b) return false;
    b = next;
    if (b >= static_cast<int>(nodes_.size())) return false;  // virtual exit
  }
}

int IntervalGraph::node_of(std::uint32_t instr_id) const {
  auto it = by_instr_.find(instr_id);
  if (it == by_instr_.end() || it->second.size() != 1) return -1;
  return it->second[0];
}

std::vector<int> IntervalGraph::nodes_of(std::uint32_t instr_id) const {
  auto it = by_instr_.find(instr_id);
  return it == by_instr_.end() ? std::vector<int>{} : it->second;
}

std::vector<CoveringRun> find_covering_runs(const Program& p) {
  std::vector<CoveringRun> out;
  for (const Function& fn : p.functions)
    for (const BasicBlock& b : fn.blocks) {
      std::size_t i = 0;
      while (i < b.instrs.size()) {
        const Instruction& in = b.instrs[i];
        if (!in.is_store() || in.prov == Provenance::Original ||
            in.addr.index_is_reg) {
          ++i;
          continue;
        }
        // maximal same-provenance run of inserted stores on one base;
        // interleaved inserted loads (the load half of copy pairs) are
        // stepped over
        CoveringRun run;
        run.base = in.addr.base;
        run.base_kind = in.addr.base_kind;
        run.owner_fn = fn.name;
        run.prov = in.prov;
        std::vector<std::int64_t> idxs;
        std::size_t j = i;
        for (; j < b.instrs.size(); ++j) {
          const Instruction& s = b.instrs[j];
          if (s.is_load() && s.prov != Provenance::Original) continue;
          if (!s.is_store() || s.prov != run.prov || s.addr.index_is_reg ||
              s.addr.base != run.base || s.addr.base_kind != run.base_kind)
            break;
          idxs.push_back(s.addr.index_const);
          run.store_ids.push_back(s.id);
        }
        if (idxs.size() >= 1) {
          std::sort(idxs.begin(), idxs.end());
          bool contiguous = true;
          for (std::size_t k = 1; k < idxs.size(); ++k)
            if (idxs[k] != idxs[k - 1] + 1) contiguous = false;
          if (contiguous) {
            run.lo = idxs.front();
            run.hi = idxs.back() + 1;
            out.push_back(run);
          }
        }
        i = j > i ? j : i + 1;
      }
    }
  return out;
}

std::optional<IndexRange> access_index_range(const MemoryTag& tag,
                                             const TagMap& fn_tags) {
  if (tag.opaque) return std::nullopt;
  if (tag.coeffs.empty()) return IndexRange{tag.c0, tag.c0 + 1};
  if (tag.coeffs.size() != 1) return std::nullopt;
  const auto& [sym, coeff] = *tag.coeffs.begin();
  if (sym.kind != TagSym::Kind::Induction) return std::nullopt;
  const InductionVar* ivp = fn_tags.iv_by_symbol(sym.id);
  if (!ivp) return std::nullopt;
  const InductionVar& iv = *ivp;
  if (!iv.has_const_init || !iv.has_const_trip || iv.step != 1)
    return std::nullopt;
  std::int64_t a = tag.c0 + coeff * std::int64_t(iv.init);
  std::int64_t b = tag.c0 + coeff * (std::int64_t(iv.init) + iv.trip_count - 1);
  if (iv.trip_count <= 0) return IndexRange{a, a};  // empty
  return IndexRange{std::min(a, b), std::max(a, b) + 1};
}

bool war_order_possible(const MemoryTag& rt, const MemoryTag& wt,
                        std::int32_t loop_step, bool same_iter_r_before_w,
                        bool cross_iter_reachable) {
  if (!rt.same_base(wt)) return false;
  if (rt.opaque || wt.opaque)
    return same_iter_r_before_w || cross_iter_reachable;
  if (rt.coeffs.empty() && wt.coeffs.empty())
    return rt.c0 == wt.c0 && same_iter_r_before_w;
  if (rt.coeffs == wt.coeffs) {
    if (rt.c0 == wt.c0) return same_iter_r_before_w;
    if (!cross_iter_reachable) return false;
    // Same sweep, offset by a constant: the write lands on a cell the read
    // used `k` iterations earlier iff the offsets line up with the step.
    std::int64_t diff = std::int64_t(wt.c0) - std::int64_t(rt.c0);
    std::int32_t coeff = rt.coeffs.begin()->second;
    std::int64_t denom = std::int64_t(coeff) * loop_step;
    if (denom == 0) return true;
    if (diff % denom != 0) return false;
    return diff / denom < 0;  // write in a later iteration than the read
  }
  // Mixed shapes (e.g. a[i] vs a[N-i]): conservative.
  return same_iter_r_before_w || cross_iter_reachable;
}

}  // namespace flashvm
