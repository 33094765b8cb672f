#ifndef FLASHVM_ANALYSIS_HPP
#define FLASHVM_ANALYSIS_HPP

#include <optional>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "flashvm/placement.hpp"
#include "flashvm/structure.hpp"
#include "flashvm/tags.hpp"

namespace flashvm {

// Instruction-level graph of one computation interval. Calls to functions
// that never execute saves are spliced in (virtually inlined), so analyses
// see the callee's outside-frame accesses in caller context; a callee
// instruction reached through two call sites appears as two nodes.
struct IntervalNode {
  const Instruction* in = nullptr;
  InstrRef ref;
  std::vector<std::uint32_t> ctx;  // call-site chain, outermost first
  bool callee_frame_access = false;  // memory op on an inlined callee's frame
  std::vector<int> succs;
  std::vector<int> preds;
  bool edge_to_exit = false;   // some successor leaves the interval
  bool edge_from_entry = false;
};

class IntervalGraph {
 public:
  IntervalGraph(const Program& p, const ComputationInterval& interval,
                const ProgramTags& tags);

  const std::vector<IntervalNode>& nodes() const { return nodes_; }
  const ComputationInterval& interval() const { return *interval_; }
  const ProgramTags& tags() const { return *tags_; }
  const MemoryTag& tag_of(int node) const;

  // Reachability along interval edges. `forward_only` excludes loop back
  // edges, giving within-iteration precedence.
  bool reaches(int from, int to, bool include_back_edges = true) const;
  bool reaches_exit_avoiding(
      int from, const std::function<bool(int)>& blocked) const;
  bool reachable_from_entry_avoiding(
      int to, const std::function<bool(int)>& blocked) const;
  // Any entry-to-exit path that avoids `node` (i.e. the node is not on
  // every interval execution).
  bool avoidable(int node) const;
  // Path from `from` to `to` not passing through blocked intermediates.
  bool exists_path_avoiding(int from, int to,
                            const std::function<bool(int)>& blocked) const;

  // Dominators relative to the virtual entry / postdominators relative to
  // the virtual exit. Indices are node indices; -1 for unreachable.
  const std::vector<int>& idom() const { return idom_; }
  const std::vector<int>& ipdom() const { return ipdom_; }
  bool dominated(int a, int b) const;      // a dominates b
  bool postdominated(int a, int b) const;  // a postdominates b

  // All nodes in deterministic quasi-topological order (structured program
  // order of the interval, callee bodies inline after their call).
  const std::vector<int>& order() const { return order_; }

  int node_of(std::uint32_t instr_id) const;  // -1 if absent or duplicated
  std::vector<int> nodes_of(std::uint32_t instr_id) const;

 private:
  void add_function_body(const Program& p, const Function& fn,
                         std::vector<std::uint32_t> ctx,
                         const std::unordered_set<std::uint32_t>* members,
                         std::vector<int>& entry_nodes,
                         std::vector<int>& ret_nodes);
  void compute_views();

  const ComputationInterval* interval_ = nullptr;
  const ProgramTags* tags_ = nullptr;
  std::vector<IntervalNode> nodes_;
  std::vector<int> order_;
  std::vector<int> idom_, ipdom_;
  std::unordered_map<std::uint32_t, std::vector<int>> by_instr_;
  std::vector<std::vector<bool>> reach_full_, reach_fwd_;
  std::vector<bool> back_edge_flag_;  // per-node: has incoming back edge
};

// A run of inserted constant-index stores that together cover the index
// range [lo, hi) of a base object; such a run blocks first-read/last-write
// analyses for covered accesses the way a single scalar store would.
struct CoveringRun {
  std::string base;
  AddrBaseKind base_kind = AddrBaseKind::Global;
  std::string owner_fn;
  std::int64_t lo = 0, hi = 0;
  std::vector<std::uint32_t> store_ids;
  Provenance prov = Provenance::DummyWrite;
};

// Derives covering runs from the program text: maximal same-block runs of
// non-original constant-index stores on one base.
std::vector<CoveringRun> find_covering_runs(const Program& p);

// Static index range of an access within its interval, when derivable:
// constant tags give [c, c+1); affine tags with constant loop bounds give
// the swept range. nullopt when unresolved.
struct IndexRange {
  std::int64_t lo = 0, hi = 0;  // half open
};
std::optional<IndexRange> access_index_range(const MemoryTag& tag,
                                             const TagMap& fn_tags);

// true when a store with tag `wt` may dynamically write, before a read with
// tag `rt` executes, the same cell the read will use. `same_iter_r_first` /
// `cross_iter_reachable` describe the CFG relationship of the two accesses.
bool war_order_possible(const MemoryTag& rt, const MemoryTag& wt,
                        std::int32_t loop_step, bool same_iter_r_before_w,
                        bool cross_iter_reachable);

// Per-function helper bundle most passes need.
struct FunctionAnalysis {
  FunctionStructure structure;
  TagMap tags;
};

// Whether `fn` (or any callee) contains a checkpoint instruction.
bool executes_save(const Program& p, const Function& fn);

}  // namespace flashvm

#endif
