#include "flashvm/normalize.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "flashvm/analysis.hpp"
#include "flashvm/structure.hpp"

namespace flashvm {

const char* finding_kind_name(FindingKind k) {
  switch (k) {
    case FindingKind::LoopLastWrite: return "loop-last-write";
    case FindingKind::LoopFirstRead: return "loop-first-read";
    case FindingKind::CondFirstWrite: return "cond-first-write";
    case FindingKind::CondLastWrite: return "cond-last-write";
    case FindingKind::CallOutsideFrame: return "call-outside-frame";
  }
  return "?";
}

const char* remedy_name(Remedy r) {
  switch (r) {
    case Remedy::DummyWriteAfter: return "dummy-write-after";
    case Remedy::DummyWriteBefore: return "dummy-write-before";
    case Remedy::Conservative: return "conservative";
    case Remedy::NonConservative: return "non-conservative";
  }
  return "?";
}

namespace {

bool run_covers(const CoveringRun& run, const MemoryTag& t,
                const TagMap& fn_tags) {
  if (t.base != run.base || t.base_kind != run.base_kind) return false;
  if (t.base_kind == AddrBaseKind::Local && t.owner_fn != run.owner_fn)
    return false;
  auto range = access_index_range(t, fn_tags);
  if (!range) return false;
  return range->lo >= run.lo && range->hi <= run.hi;
}

// Shared blocking predicate: node `n` blocks analyses for an access with
// target's tag when it must write the same cell (equal tags, same call
// context when definition symbols are involved) or when it closes a
// covering run over the target's whole swept range.
struct Blocking {
  const IntervalGraph& g;
  const TagMap& fn_tags;
  const std::vector<CoveringRun>& runs;

  bool must_equal_nodes(int a, int b) const {
    const MemoryTag& ta = g.tag_of(a);
    const MemoryTag& tb = g.tag_of(b);
    if (!tags_equal(ta, tb)) return false;
    for (const auto& [sym, c] : ta.coeffs) {
      (void)c;
      if (sym.kind == TagSym::Kind::Def &&
          g.nodes()[a].ctx != g.nodes()[b].ctx)
        return false;
    }
    return true;
  }

  bool blocks(int node, int target) const {
    const Instruction& in = *g.nodes()[node].in;
    if (!in.is_store()) return false;
    if (g.nodes()[node].callee_frame_access !=
        g.nodes()[target].callee_frame_access)
      return false;
    if (must_equal_nodes(node, target)) return true;
    for (const CoveringRun& run : runs)
      if (!run.store_ids.empty() && run.store_ids.back() == in.id &&
          run_covers(run, g.tag_of(target), fn_tags))
        return true;
    return false;
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// normalize_loops

namespace {

struct LoopNormalizer {
  Program p;
  std::vector<UncertaintyFinding> findings;
  std::vector<std::uint32_t> forced_nv;

  // Register-cache check: the source register still holds the tag's value
  // at the loop exit on every path. Requires a do-while shape (the body
  // runs at least once) and a register that stays stable after the
  // structurally last store.
  bool register_cached(const Function& fn, const StructItem& loop,
                       const std::vector<std::uint32_t>& stores,
                       std::uint8_t& reg_out) {
    if (loop.header != loop.latch) return false;  // zero-trip possible
    std::uint8_t reg = 255;
    std::uint32_t last_store = 0;
    for_each_block(*loop.body, [&](int b) {
      for (const Instruction& in : fn.blocks[b].instrs)
        for (std::uint32_t id : stores)
          if (in.id == id) {
            if (reg == 255)
              reg = in.src1;
            else if (in.src1 != reg)
              reg = 254;
            last_store = id;
          }
    });
    if (reg >= kNumRegisters) return false;
    bool after = false, clobbered = false;
    for_each_block(*loop.body, [&](int b) {
      for (const Instruction& in : fn.blocks[b].instrs) {
        if (after) {
          bool defs = false;
          switch (in.op) {
            case Opcode::Const:
            case Opcode::Mov:
            case Opcode::Load:
              defs = in.dst == reg;
              break;
            case Opcode::Call:
              defs = reg == kLinkRegister;
              break;
            default:
              if (is_binop(in.op)) defs = in.dst == reg;
          }
          if (defs) clobbered = true;
        }
        if (in.id == last_store) after = true;
      }
    });
    if (clobbered) return false;
    reg_out = reg;
    return true;
  }

  void run() {
    int guard = 0;
    while (guard++ < 256) {
      IntervalMap intervals = extract_intervals(p);
      ProgramTags tags = compute_memory_tags(p);
      std::vector<CoveringRun> runs = find_covering_runs(p);
      bool changed = false;
      for (int fi = 0; fi < int(p.functions.size()) && !changed; ++fi) {
        FunctionStructure fs = build_structure(p, p.functions[fi]);
        changed = visit_seq(fi, fs.seq, intervals, tags, runs);
      }
      if (!changed) return;
    }
    throw Error(ErrorKind::Internal, "loop normalization did not converge");
  }

  // Innermost first; returns true after the first program edit so callers
  // restart with fresh analyses.
  bool visit_seq(int fi, const StructSeq& seq, const IntervalMap& intervals,
                 const ProgramTags& tags,
                 const std::vector<CoveringRun>& runs) {
    for (const StructItem& item : seq) {
      if (item.kind == StructItem::Kind::Conditional) {
        if (visit_seq(fi, *item.true_seq, intervals, tags, runs)) return true;
        if (visit_seq(fi, *item.false_seq, intervals, tags, runs))
          return true;
      }
      if (item.kind != StructItem::Kind::Loop) continue;
      if (visit_seq(fi, *item.body, intervals, tags, runs)) return true;
      if (contains_save(p.functions[fi], *item.body)) continue;
      if (normalize_one_loop(fi, item, intervals, tags, runs)) return true;
    }
    return false;
  }

  bool already_forced(std::uint32_t id) const {
    return std::find(forced_nv.begin(), forced_nv.end(), id) !=
           forced_nv.end();
  }

  bool normalize_one_loop(int fi, const StructItem& loop,
                          const IntervalMap& intervals,
                          const ProgramTags& tags,
                          const std::vector<CoveringRun>& runs) {
    const Function& fn = p.functions[fi];
    const TagMap& fn_tags = tags.per_function.at(fn.name);

    struct BaseAccess {
      std::vector<std::uint32_t> loads, stores;
      bool any_opaque = false;
    };
    std::map<std::pair<std::string, int>, BaseAccess> by_base;
    for_each_block(*loop.body, [&](int b) {
      for (const Instruction& in : fn.blocks[b].instrs) {
        if (!in.is_mem()) continue;
        const MemoryTag& t = tags.of(in.id);
        auto& acc = by_base[{t.base, int(t.base_kind)}];
        (in.is_load() ? acc.loads : acc.stores).push_back(in.id);
        if (t.opaque) acc.any_opaque = true;
      }
    });
    if (by_base.empty()) return false;

    std::uint32_t probe = 0;
    for_each_block(*loop.body, [&](int b) {
      for (const Instruction& in : fn.blocks[b].instrs)
        if (probe == 0) probe = in.id;
    });
    auto iv_it = intervals.interval_of.find(probe);
    if (iv_it == intervals.interval_of.end()) return false;
    const ComputationInterval& ci = intervals.intervals[iv_it->second];
    IntervalGraph g(p, ci, tags);
    Blocking blocking{g, fn_tags, runs};

    for (auto& [key, acc] : by_base) {
      bool last_uncertain = false;
      std::vector<std::uint32_t> uncertain_stores;
      for (std::uint32_t id : acc.stores) {
        for (int n : g.nodes_of(id)) {
          if (!g.nodes()[n].ctx.empty()) continue;
          if (g.reaches_exit_avoiding(
                  n, [&](int x) { return blocking.blocks(x, n); })) {
            last_uncertain = true;
            uncertain_stores.push_back(id);
            break;
          }
        }
      }
      bool first_uncertain = false;
      std::vector<std::uint32_t> uncertain_loads;
      for (std::uint32_t id : acc.loads) {
        for (int n : g.nodes_of(id)) {
          if (!g.nodes()[n].ctx.empty()) continue;
          if (g.reachable_from_entry_avoiding(
                  n, [&](int x) { return blocking.blocks(x, n); })) {
            first_uncertain = true;
            uncertain_loads.push_back(id);
            break;
          }
        }
      }
      if (!last_uncertain && !first_uncertain) continue;

      bool scalar = true;
      bool resolvable = true;
      std::int64_t lo = 0, hi = 0;
      bool any_range = false;
      auto widen = [&](const std::vector<std::uint32_t>& ids) {
        for (std::uint32_t id : ids) {
          const MemoryTag& t = tags.of(id);
          if (!(t.scalar_base() && t.c0 == 0)) scalar = false;
          auto r = access_index_range(t, fn_tags);
          if (!r) {
            resolvable = false;
            continue;
          }
          if (!any_range) {
            lo = r->lo;
            hi = r->hi;
            any_range = true;
          } else {
            lo = std::min(lo, r->lo);
            hi = std::max(hi, r->hi);
          }
        }
      };
      widen(uncertain_stores);
      widen(uncertain_loads);
      if (scalar) {
        lo = 0;
        hi = 1;
      }

      const std::string base = key.first;
      AddrBaseKind kind = AddrBaseKind(key.second);
      AddressExpr probe_addr;
      probe_addr.base = base;
      probe_addr.base_kind = kind;
      std::uint32_t obj_size = p.object_size(probe_addr, fn);

      if (acc.any_opaque || !resolvable || lo < 0 ||
          hi > std::int64_t(obj_size) || hi <= lo) {
        std::vector<std::uint32_t> involved = uncertain_stores;
        involved.insert(involved.end(), uncertain_loads.begin(),
                        uncertain_loads.end());
        bool fresh = false;
        for (std::uint32_t id : involved)
          if (!already_forced(id)) {
            forced_nv.push_back(id);
            fresh = true;
          }
        if (fresh) {
          UncertaintyFinding f;
          f.kind = last_uncertain ? FindingKind::LoopLastWrite
                                  : FindingKind::LoopFirstRead;
          f.remedy = Remedy::Conservative;
          f.instrs = involved;
          f.region = fn.blocks[loop.header].label;
          f.tag = base;
          findings.push_back(std::move(f));
        }
        continue;
      }

      auto mk_addr = [&](std::int64_t idx) {
        AddressExpr a;
        a.base = base;
        a.base_kind = kind;
        a.index_const = Word(idx);
        return a;
      };

      UncertaintyFinding f;
      f.kind = last_uncertain ? FindingKind::LoopLastWrite
                              : FindingKind::LoopFirstRead;
      f.remedy = last_uncertain ? Remedy::DummyWriteAfter
                                : Remedy::DummyWriteBefore;
      f.instrs = uncertain_stores;
      f.instrs.insert(f.instrs.end(), uncertain_loads.begin(),
                      uncertain_loads.end());
      f.region = fn.blocks[loop.header].label;
      f.tag = scalar ? base
                     : base + "[" + std::to_string(lo) + ".." +
                           std::to_string(hi) + ")";

      if (first_uncertain || (!scalar && last_uncertain)) {
        std::vector<Instruction> pre;
        for (std::int64_t k = lo; k < hi; ++k) {
          pre.push_back(make_load(p, kScratchRegister, mk_addr(k),
                                  Provenance::DummyWrite));
          pre.push_back(make_store(p, mk_addr(k), kScratchRegister,
                                   Provenance::DummyWrite));
        }
        for (const Instruction& in : pre) f.inserted.push_back(in.id);
        insert_at_block_end(p, fi, loop.preheader, std::move(pre));
      }
      if (last_uncertain) {
        std::vector<Instruction> post;
        std::uint8_t cached = 255;
        if (scalar && register_cached(fn, loop, acc.stores, cached)) {
          post.push_back(
              make_store(p, mk_addr(0), cached, Provenance::DummyWrite));
        } else {
          for (std::int64_t k = lo; k < hi; ++k) {
            post.push_back(make_load(p, kScratchRegister, mk_addr(k),
                                     Provenance::DummyWrite));
            post.push_back(make_store(p, mk_addr(k), kScratchRegister,
                                      Provenance::DummyWrite));
          }
        }
        for (const Instruction& in : post) f.inserted.push_back(in.id);
        insert_at_block_start(p, fi, loop.exit_block, std::move(post));
      }
      findings.push_back(std::move(f));
      return true;
    }
    return false;
  }
};

}  // namespace

NormalizeResult normalize_loops(const Program& p) {
  LoopNormalizer n{p, {}, {}};
  n.run();
  return {std::move(n.p), std::move(n.findings), std::move(n.forced_nv)};
}

// ---------------------------------------------------------------------------
// normalize_conditionals

NormalizeResult normalize_conditionals(
    const Program& p, const std::vector<NonConservativeRequest>& requests) {
  NormalizeResult out{p, {}, {}};
  Program& q = out.program;

  // Non-conservative requests (issued by the versioning extensions): a
  // dummy write of the store's tag in the opposite branch, splitting the
  // branch edge when that branch is empty.
  for (const NonConservativeRequest& req : requests) {
    InstrRef ref = find_instr(q, req.store_instr);
    const Instruction store = *instr_at(q, ref);
    if (!store.is_store())
      throw Error(ErrorKind::Internal,
                  "non-conservative request names a non-store");
    Function& fn = q.functions[ref.fn];
    CFG cfg = build_cfg(fn);
    RegionTree regions = build_region_tree(cfg);
    Region* cond = regions.enclosing[ref.block];
    while (cond && !cond->is_conditional()) cond = cond->parent;
    if (!cond)
      throw Error(ErrorKind::Internal,
                  "non-conservative request outside a conditional");
    bool in_true =
        std::find(cond->true_blocks.begin(), cond->true_blocks.end(),
                  ref.block) != cond->true_blocks.end();
    const std::vector<int>& other =
        in_true ? cond->false_blocks : cond->true_blocks;

    std::vector<Instruction> dummy;
    dummy.push_back(
        make_load(q, kScratchRegister, store.addr, Provenance::DummyWrite));
    dummy.push_back(make_store(q, store.addr, kScratchRegister,
                               Provenance::DummyWrite));
    UncertaintyFinding f;
    f.kind = FindingKind::CondFirstWrite;
    f.remedy = Remedy::NonConservative;
    f.instrs = {store.id};
    for (const Instruction& in : dummy) f.inserted.push_back(in.id);
    f.region = fn.blocks[cond->cond_block].label;
    f.tag = store.addr.base;

    if (!other.empty()) {
      insert_at_block_start(q, ref.fn, other.front(), std::move(dummy));
    } else {
      Instruction& br = fn.blocks[cond->cond_block].instrs.back();
      std::string fresh = "ncons_" + std::to_string(store.id);
      BasicBlock nb;
      nb.label = fresh;
      nb.instrs = std::move(dummy);
      Instruction j;
      j.op = Opcode::Jmp;
      j.id = q.fresh_id();
      bool true_is_join = fn.block_index(br.label_a) == cond->join_block;
      j.label_a = true_is_join ? br.label_a : br.label_b;
      nb.instrs.push_back(j);
      if (true_is_join)
        br.label_a = fresh;
      else
        br.label_b = fresh;
      fn.blocks.insert(fn.blocks.begin() + cond->join_block, nb);
    }
    out.findings.push_back(std::move(f));
  }

  // Conservative findings: conditionally-executed stores that may execute
  // as a tag's first write while a read of the same tag can land before or
  // after them. The mapping enforces the same facts; this pass records
  // them for the report.
  IntervalMap intervals = extract_intervals(q);
  ProgramTags tags = compute_memory_tags(q);
  std::vector<CoveringRun> runs = find_covering_runs(q);
  for (const ComputationInterval& ci : intervals.intervals) {
    if (ci.is_whole_savefree_function) continue;
    IntervalGraph g(q, ci, tags);
    const TagMap& fn_tags = tags.per_function.at(ci.fn);
    Blocking blocking{g, fn_tags, runs};
    int n = int(g.nodes().size());
    for (int s = 0; s < n; ++s) {
      const IntervalNode& sn = g.nodes()[s];
      if (!sn.in->is_store() || sn.callee_frame_access) continue;
      bool on_all_paths = true;
      for (int e = 0; e < n && on_all_paths; ++e) {
        if (!g.nodes()[e].edge_from_entry) continue;
        if (e == s) continue;
        if (g.reaches_exit_avoiding(e, [&](int x) { return x == s; }))
          on_all_paths = false;
      }
      if (on_all_paths) continue;
      bool may_first = g.reachable_from_entry_avoiding(
          s, [&](int x) { return x != s && blocking.blocks(x, s); });
      if (!may_first) continue;
      for (int r = 0; r < n; ++r) {
        const IntervalNode& rn = g.nodes()[r];
        if (!rn.in->is_load() || rn.callee_frame_access) continue;
        if (!tags_may_alias(g.tag_of(r), g.tag_of(s))) continue;
        bool after = g.reaches(s, r);
        bool free_path = g.reachable_from_entry_avoiding(
            r, [&](int x) { return blocking.blocks(x, r); });
        if (after && free_path) {
          UncertaintyFinding f;
          f.kind = FindingKind::CondFirstWrite;
          f.remedy = Remedy::Conservative;
          f.instrs = {sn.in->id, rn.in->id};
          f.region = ci.fn;
          f.tag = tag_to_string(g.tag_of(s));
          out.findings.push_back(std::move(f));
          break;
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// normalize_calls

namespace {

struct CallNormalizer {
  Program p;
  std::vector<UncertaintyFinding> findings;
  std::vector<std::uint32_t> forced_nv;

  bool already_forced(std::uint32_t id) const {
    return std::find(forced_nv.begin(), forced_nv.end(), id) !=
           forced_nv.end();
  }

  void run() {
    int guard = 0;
    while (guard++ < 256) {
      if (!run_once()) return;
    }
    throw Error(ErrorKind::Internal, "call normalization did not converge");
  }

  bool run_once() {
    IntervalMap intervals = extract_intervals(p);
    ProgramTags tags = compute_memory_tags(p);
    std::vector<CoveringRun> runs = find_covering_runs(p);

    for (const ComputationInterval& ci : intervals.intervals) {
      if (ci.is_whole_savefree_function) continue;
      IntervalGraph g(p, ci, tags);
      const TagMap& fn_tags = tags.per_function.at(ci.fn);
      Blocking blocking{g, fn_tags, runs};
      int n = int(g.nodes().size());

      std::map<std::uint32_t, std::vector<int>> callee_nodes;
      for (int i = 0; i < n; ++i) {
        const IntervalNode& node = g.nodes()[i];
        if (node.ctx.empty() || node.callee_frame_access || !node.in->is_mem())
          continue;
        callee_nodes[node.in->id].push_back(i);
      }
      for (auto& [instr_id, occurrences] : callee_nodes) {
        const Instruction& in = *g.nodes()[occurrences[0]].in;
        const MemoryTag& t = tags.of(instr_id);
        bool scalar = t.scalar_base();
        std::vector<int> hits, others;
        for (int node : occurrences) {
          bool hit =
              in.is_store()
                  ? g.reaches_exit_avoiding(
                        node, [&](int x) { return blocking.blocks(x, node); })
                  : g.reachable_from_entry_avoiding(
                        node, [&](int x) { return blocking.blocks(x, node); });
          (hit ? hits : others).push_back(node);
        }
        if (hits.empty() || others.empty()) continue;
        if (!scalar) {
          if (!already_forced(instr_id)) {
            forced_nv.push_back(instr_id);
            UncertaintyFinding f;
            f.kind = FindingKind::CallOutsideFrame;
            f.remedy = Remedy::Conservative;
            f.instrs = {instr_id};
            f.region = ci.fn;
            f.tag = tag_to_string(t);
            findings.push_back(std::move(f));
          }
          continue;
        }
        // Scalar: dummy write after (priming before) the call sites where
        // the callee access would be last (first).
        int node = hits.front();
        std::uint32_t call_id = g.nodes()[node].ctx.front();
        std::vector<Instruction> dummy;
        dummy.push_back(
            make_load(p, kScratchRegister, in.addr, Provenance::DummyWrite));
        dummy.push_back(make_store(p, in.addr, kScratchRegister,
                                   Provenance::DummyWrite));
        UncertaintyFinding f;
        f.kind = FindingKind::CallOutsideFrame;
        f.remedy = in.is_store() ? Remedy::DummyWriteAfter
                                 : Remedy::DummyWriteBefore;
        f.instrs = {instr_id, call_id};
        for (const Instruction& d : dummy) f.inserted.push_back(d.id);
        f.region = ci.fn;
        f.tag = tag_to_string(t);
        findings.push_back(std::move(f));
        if (in.is_store())
          insert_after_id(p, call_id, std::move(dummy));
        else
          insert_before_id(p, call_id, std::move(dummy));
        return true;  // restart with fresh analyses
      }
    }
    return false;
  }
};

}  // namespace

NormalizeResult normalize_calls(const Program& p) {
  CallNormalizer n{p, {}, {}};
  n.run();
  return {std::move(n.p), std::move(n.findings), std::move(n.forced_nv)};
}

}  // namespace flashvm
