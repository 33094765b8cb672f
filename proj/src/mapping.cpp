#include "flashvm/mapping.hpp"

#include <algorithm>
#include <map>
#include <set>

#include <json.hpp>

#include "flashvm/analysis.hpp"
#include "flashvm/structure.hpp"

namespace flashvm {

const char* decision_reason_name(DecisionReason r) {
  switch (r) {
    case DecisionReason::FinalWrite: return "final-write";
    case DecisionReason::FirstRead: return "first-read";
    case DecisionReason::Consolidated: return "consolidated";
    case DecisionReason::Conservative: return "conservative";
    case DecisionReason::Intermediate: return "intermediate";
    case DecisionReason::FramePinned: return "frame-pinned";
  }
  return "?";
}

void MappingReport::record(std::uint32_t instr, MemTarget t,
                           DecisionReason r) {
  for (auto& d : decisions)
    if (d.instr == instr) {
      d.target = t;
      d.reason = r;
      return;
    }
  decisions.push_back({instr, t, r});
}

std::string MappingReport::to_json() const {
  nlohmann::json j;
  j["decisions"] = nlohmann::json::array();
  for (const auto& d : decisions)
    j["decisions"].push_back({{"instr", d.instr},
                              {"target", mem_target_name(d.target)},
                              {"reason", decision_reason_name(d.reason)}});
  j["consolidations"] = nlohmann::json::array();
  for (const auto& c : consolidations)
    j["consolidations"].push_back({{"fn", c.fn},
                                   {"anchor", c.anchor},
                                   {"tag", c.tag},
                                   {"n", c.n},
                                   {"n_w", c.n_w},
                                   {"n_min", c.n_min},
                                   {"consolidated", c.consolidated},
                                   {"energy_nonvolatile", c.energy_nonvolatile},
                                   {"energy_volatile", c.energy_volatile}});
  j["normalization"] = nlohmann::json::array();
  for (const auto& f : normalization) {
    nlohmann::json e;
    e["kind"] = finding_kind_name(f.kind);
    e["remedy"] = remedy_name(f.remedy);
    e["instrs"] = f.instrs;
    e["inserted"] = f.inserted;
    e["region"] = f.region;
    e["tag"] = f.tag;
    j["normalization"].push_back(e);
  }
  j["inserted_copies"] = inserted_copies;
  return j.dump(2);
}

namespace {

bool is_persistence_store(const Instruction& in) {
  return in.is_store() && (in.prov == Provenance::Original ||
                           in.prov == Provenance::DummyWrite);
}

bool run_covers(const CoveringRun& run, const MemoryTag& t,
                const TagMap& fn_tags) {
  if (t.base != run.base || t.base_kind != run.base_kind) return false;
  if (t.base_kind == AddrBaseKind::Local && t.owner_fn != run.owner_fn)
    return false;
  auto range = access_index_range(t, fn_tags);
  if (!range) return false;
  return range->lo >= run.lo && range->hi <= run.hi;
}

struct MapContext {
  const Program& p;
  IntervalMap intervals;
  ProgramTags tags;
  std::vector<CoveringRun> runs;
  std::set<std::string> savefree_fns;  // functions that never execute saves

  explicit MapContext(const Program& prog) : p(prog) {
    intervals = extract_intervals(p);
    tags = compute_memory_tags(p);
    runs = find_covering_runs(p);
    for (const Function& f : p.functions)
      if (!executes_save(p, f)) savefree_fns.insert(f.name);
  }

  bool frame_pinned(const Instruction& in, const std::string& owner) const {
    return in.is_mem() && in.addr.base_kind == AddrBaseKind::Local &&
           savefree_fns.count(owner) > 0;
  }

  // Owner function of an instruction id.
  const std::string& owner_of(std::uint32_t id) const {
    InstrRef ref = find_instr(p, id);
    return p.functions[ref.fn].name;
  }
};

// Blocking predicates over one interval graph. `persistence` restricts the
// blockers to stores that persist data (original + dummy-write); read-side
// analyses also credit volatile copies.
struct Blocker {
  const IntervalGraph& g;
  const TagMap& fn_tags_of_target;  // tag map of the target's function
  const std::vector<CoveringRun>& runs;
  bool persistence = false;

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
    if (persistence && !is_persistence_store(in)) return false;
    if (g.nodes()[node].callee_frame_access !=
        g.nodes()[target].callee_frame_access)
      return false;
    if (must_equal_nodes(node, target)) return true;
    for (const CoveringRun& run : runs)
      if (!run.store_ids.empty() && run.store_ids.back() == in.id &&
          run_covers(run, g.tag_of(target), fn_tags_of_target))
        return true;
    return false;
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// map_writes

Program map_writes(const Program& p,
                   const std::vector<std::uint32_t>& forced_nonvolatile,
                   MappingReport* report) {
  Program q = p;
  MapContext ctx(q);
  std::set<std::uint32_t> forced(forced_nonvolatile.begin(),
                                 forced_nonvolatile.end());

  // may-be-last per store instruction, over all interval occurrences.
  std::set<std::uint32_t> may_last, seen;
  for (const ComputationInterval& ci : ctx.intervals.intervals) {
    if (ci.is_whole_savefree_function && ci.fn != q.entry) continue;
    IntervalGraph g(q, ci, ctx.tags);
    const TagMap& fn_tags = ctx.tags.per_function.at(ci.fn);
    Blocker blk{g, fn_tags, ctx.runs, /*persistence=*/true};
    for (int n = 0; n < int(g.nodes().size()); ++n) {
      const IntervalNode& node = g.nodes()[n];
      if (!node.in->is_store() || node.callee_frame_access) continue;
      seen.insert(node.in->id);
      if (g.reaches_exit_avoiding(n, [&](int x) { return blk.blocks(x, n); }))
        may_last.insert(node.in->id);
    }
  }

  for (Function& fn : q.functions)
    for (BasicBlock& b : fn.blocks)
      for (Instruction& in : b.instrs) {
        if (!in.is_store() || in.target != MemTarget::Unassigned) continue;
        if (ctx.frame_pinned(in, fn.name)) {
          in.target = MemTarget::Volatile;
          if (report)
            report->record(in.id, in.target, DecisionReason::FramePinned);
        } else if (forced.count(in.id)) {
          in.target = MemTarget::NonVolatile;
          if (report)
            report->record(in.id, in.target, DecisionReason::Conservative);
        } else if (may_last.count(in.id)) {
          in.target = MemTarget::NonVolatile;
          if (report)
            report->record(in.id, in.target, DecisionReason::FinalWrite);
        } else if (seen.count(in.id)) {
          in.target = MemTarget::Volatile;
          if (report)
            report->record(in.id, in.target, DecisionReason::Intermediate);
        } else {
          // never reached from any caller: dead code, kept non-volatile
          in.target = MemTarget::NonVolatile;
          if (report)
            report->record(in.id, in.target, DecisionReason::Conservative);
        }
      }
  return q;
}

// ---------------------------------------------------------------------------
// map_reads

namespace {

struct ReadFacts {
  bool pre_reach = false;
  std::set<std::uint32_t> feeders;  // store instruction ids
};

// Backward walk from every occurrence of a load: which stores can be the
// latest write of its cell on some path, and can the pre-interval value
// still reach it.
ReadFacts read_facts(const IntervalGraph& g, const TagMap& fn_tags,
                     const std::vector<CoveringRun>& runs,
                     const std::vector<int>& occurrences) {
  ReadFacts out;
  Blocker blk{g, fn_tags, runs, /*persistence=*/false};
  for (int r : occurrences) {
    std::set<int> visited;
    std::vector<int> stack;
    auto push = [&](int x) {
      if (visited.insert(x).second) stack.push_back(x);
    };
    if (g.nodes()[r].edge_from_entry) out.pre_reach = true;
    for (int pr : g.nodes()[r].preds) push(pr);
    while (!stack.empty()) {
      int x = stack.back();
      stack.pop_back();
      const IntervalNode& node = g.nodes()[x];
      bool stop = false;
      if (node.in->is_store() &&
          node.callee_frame_access == g.nodes()[r].callee_frame_access) {
        if (blk.blocks(x, r)) {
          out.feeders.insert(node.in->id);
          stop = true;
        } else if (tags_may_alias(g.tag_of(x), g.tag_of(r))) {
          out.feeders.insert(node.in->id);
        }
      }
      if (stop) continue;
      if (node.edge_from_entry) out.pre_reach = true;
      for (int pr : node.preds) push(pr);
    }
  }
  return out;
}

}  // namespace

Program map_reads(const Program& p,
                  const std::vector<std::uint32_t>& forced_nonvolatile,
                  MappingReport* report) {
  Program q = p;
  std::set<std::uint32_t> forced(forced_nonvolatile.begin(),
                                 forced_nonvolatile.end());
  MapContext ctx(q);

  // Gather read facts once; the fixpoint below only flips targets.
  std::map<std::uint32_t, ReadFacts> facts;
  for (const ComputationInterval& ci : ctx.intervals.intervals) {
    if (ci.is_whole_savefree_function && ci.fn != q.entry) continue;
    IntervalGraph g(q, ci, ctx.tags);
    const TagMap& fn_tags = ctx.tags.per_function.at(ci.fn);
    std::map<std::uint32_t, std::vector<int>> by_load;
    for (int n = 0; n < int(g.nodes().size()); ++n)
      if (g.nodes()[n].in->is_load() && !g.nodes()[n].callee_frame_access)
        by_load[g.nodes()[n].in->id].push_back(n);
    for (auto& [id, occ] : by_load) {
      ReadFacts f = read_facts(g, fn_tags, ctx.runs, occ);
      ReadFacts& agg = facts[id];
      agg.pre_reach = agg.pre_reach || f.pre_reach;
      agg.feeders.insert(f.feeders.begin(), f.feeders.end());
    }
  }

  auto instr_of = [&](std::uint32_t id) -> Instruction* {
    return instr_at(q, find_instr(q, id));
  };

  // Assign loads; upgrade volatile feeding stores when a read must target
  // non-volatile memory (the conservative strategy for conditionals).
  bool changed = true;
  int guard = 0;
  while (changed && guard++ < 1000) {
    changed = false;
    for (auto& [id, f] : facts) {
      Instruction* ld = instr_of(id);
      const std::string& owner = ctx.owner_of(id);
      if (ctx.frame_pinned(*ld, owner)) {
        if (ld->target == MemTarget::Unassigned) {
          ld->target = MemTarget::Volatile;
          if (report)
            report->record(id, ld->target, DecisionReason::FramePinned);
          changed = true;
        }
        continue;
      }
      bool want_nv = f.pre_reach || forced.count(id) > 0;
      bool any_nv_feeder = false, any_vol_feeder = false;
      for (std::uint32_t s : f.feeders) {
        MemTarget t = instr_of(s)->target;
        if (targets_nonvolatile(t))
          any_nv_feeder = true;
        else if (t == MemTarget::Volatile)
          any_vol_feeder = true;
      }
      want_nv = want_nv || any_nv_feeder;
      if (want_nv) {
        if (ld->target == MemTarget::Unassigned) {
          ld->target = MemTarget::NonVolatile;
          if (report)
            report->record(id, ld->target,
                           f.pre_reach && !forced.count(id)
                               ? DecisionReason::FirstRead
                               : DecisionReason::Conservative);
          changed = true;
        }
        if (ld->target == MemTarget::NonVolatile && any_vol_feeder) {
          for (std::uint32_t s : f.feeders) {
            Instruction* st = instr_of(s);
            if (st->target == MemTarget::Volatile &&
                is_persistence_store(*st)) {
              st->target = MemTarget::NonVolatile;
              if (report)
                report->record(s, st->target, DecisionReason::Conservative);
              changed = true;
            }
          }
        }
      }
    }
  }
  if (guard >= 1000)
    throw Error(ErrorKind::Internal, "read mapping did not converge");

  // Remaining unassigned loads: fed exclusively by volatile stores.
  for (Function& fn : q.functions)
    for (BasicBlock& b : fn.blocks)
      for (Instruction& in : b.instrs) {
        if (!in.is_load() || in.target != MemTarget::Unassigned) continue;
        auto it = facts.find(in.id);
        if (it != facts.end()) {
          in.target = MemTarget::Volatile;
          if (report)
            report->record(in.id, in.target, DecisionReason::Intermediate);
        } else if (ctx.frame_pinned(in, fn.name)) {
          in.target = MemTarget::Volatile;
          if (report)
            report->record(in.id, in.target, DecisionReason::FramePinned);
        } else {
          // dead code in an uncalled function
          in.target = MemTarget::NonVolatile;
          if (report)
            report->record(in.id, in.target, DecisionReason::Conservative);
        }
      }
  return q;
}

// ---------------------------------------------------------------------------
// consolidate_reads

namespace {

struct AnchorPlan {
  std::uint32_t anchor = 0;
  std::vector<std::uint32_t> retarget;      // reads to flip volatile
  std::vector<std::uint32_t> copy_after;    // stores needing a copy
  std::vector<std::uint32_t> release_vol;   // conservative stores to flip
  ConsolidationRecord record;
};

// Scope: blocks of the innermost conditional branch containing the anchor's
// block, or empty meaning the whole interval.
std::set<int> branch_scope(const Program& p, const std::string& fn_name,
                           int block) {
  const Function& fn = *p.find_function(fn_name);
  CFG cfg = build_cfg(fn);
  RegionTree regions = build_region_tree(cfg);
  Region* r = regions.enclosing[block];
  while (r && !r->is_conditional()) r = r->parent;
  std::set<int> out;
  if (!r) return out;
  const auto& t = r->true_blocks;
  if (std::find(t.begin(), t.end(), block) != t.end())
    out.insert(t.begin(), t.end());
  else
    out.insert(r->false_blocks.begin(), r->false_blocks.end());
  return out;
}

}  // namespace

Program consolidate_reads(const Program& p, const EnergyModel& m,
                          MappingReport* report) {
  Program q = p;
  std::optional<long> n_min1 = compute_n_min(m, 1);

  int guard = 0;
  while (guard++ < 10000) {
    MapContext ctx(q);
    bool applied = false;

    for (const ComputationInterval& ci : ctx.intervals.intervals) {
      if (ci.is_whole_savefree_function && ci.fn != q.entry) continue;
      IntervalGraph g(q, ci, ctx.tags);
      const TagMap& fn_tags = ctx.tags.per_function.at(ci.fn);
      Blocker blk{g, fn_tags, ctx.runs, /*persistence=*/false};

      for (int a : g.order()) {
        const IntervalNode& an = g.nodes()[a];
        if (!an.in->is_mem() || !an.ctx.empty() || an.callee_frame_access)
          continue;
        if (an.in->target != MemTarget::NonVolatile) continue;
        if (an.in->prov == Provenance::ConsolidationCopy) continue;
        const MemoryTag& tag = g.tag_of(a);
        if (tag.opaque) continue;

        std::set<int> scope = branch_scope(q, ci.fn, an.ref.block);
        auto in_scope = [&](int node) {
          if (!g.nodes()[node].ctx.empty()) return false;
          if (scope.empty()) return true;
          return scope.count(g.nodes()[node].ref.block) > 0;
        };

        // Non-volatile stores of the tag after the anchor. Conditionally
        // executed ones form the inclusion frontier of the iterative
        // scheme; an unconditional one ends the anchor's reach (it becomes
        // its own anchor later).
        std::vector<int> frontier_stores, hard_stops;
        for (int x : g.order()) {
          if (x == a || !in_scope(x)) continue;
          const IntervalNode& xn = g.nodes()[x];
          if (!xn.in->is_store() ||
              xn.in->target != MemTarget::NonVolatile)
            continue;
          if (!blk.must_equal_nodes(x, a)) continue;
          if (!g.reaches(a, x)) continue;
          if (g.postdominated(x, a))
            hard_stops.push_back(x);
          else
            frontier_stores.push_back(x);
        }

        std::set<int> included;  // indices into nodes
        for (std::size_t round = 0; round <= frontier_stores.size();
             ++round) {
          // Candidate reads: dominated by the anchor, inside the scope,
          // currently non-volatile, with every feeding store included.
          std::vector<int> cands;
          for (int x : g.order()) {
            if (!in_scope(x) || x == a) continue;
            const IntervalNode& xn = g.nodes()[x];
            if (!xn.in->is_load() ||
                xn.in->target != MemTarget::NonVolatile)
              continue;
            if (!blk.must_equal_nodes(x, a)) continue;
            if (!g.dominated(a, x)) continue;
            // every non-volatile store of the tag on an anchor-to-x path
            // must be included; unconditional stores are never included
            bool ok = true;
            for (int s : frontier_stores)
              if (!included.count(s) && g.reaches(a, s) && g.reaches(s, x))
                ok = false;
            for (int s : hard_stops)
              if (g.reaches(a, s) && g.reaches(s, x)) ok = false;
            if (ok) cands.push_back(x);
          }
          long n = 0;
          for (int x : cands)
            if (g.postdominated(x, a)) ++n;

          // copies: one after the anchor plus one after each included
          // store that is not a conservative write we can release
          std::vector<std::uint32_t> copy_after{an.in->id};
          std::vector<std::uint32_t> release;
          auto reason_of = [&](std::uint32_t id) {
            if (!report) return DecisionReason::Intermediate;
            for (const auto& d : report->decisions)
              if (d.instr == id) return d.reason;
            return DecisionReason::Intermediate;
          };
          for (int s : included) {
            std::uint32_t sid = g.nodes()[s].in->id;
            if (reason_of(sid) == DecisionReason::Conservative)
              release.push_back(sid);
            else
              copy_after.push_back(sid);
          }
          int n_w = static_cast<int>(copy_after.size());
          std::optional<long> n_min = compute_n_min(m, n_w);

          ConsolidationRecord rec;
          rec.fn = ci.fn;
          rec.anchor = an.in->id;
          rec.tag = tag_to_string(tag);
          rec.n = n;
          rec.n_w = n_w;
          rec.n_min = n_min ? *n_min : -1;
          rec.energy_nonvolatile = double(n) * m.nv_read_energy();
          rec.energy_volatile = double(n_w) * m.E_write + double(n) * m.E_read;

          if (n_min && n > *n_min && !cands.empty()) {
            AnchorPlan plan;
            plan.anchor = an.in->id;
            for (int x : cands) plan.retarget.push_back(g.nodes()[x].in->id);
            plan.copy_after = copy_after;
            plan.release_vol = release;
            rec.consolidated = true;
            plan.record = rec;

            // Apply: copies after each source, reads flipped volatile,
            // released conservative stores flipped volatile when nothing
            // non-volatile reads them anymore.
            for (std::uint32_t src : plan.copy_after) {
              Instruction* s = instr_at(q, find_instr(q, src));
              std::uint8_t reg = s->is_store() ? s->src1 : s->dst;
              Instruction copy =
                  make_store(q, s->addr, reg, Provenance::ConsolidationCopy,
                             MemTarget::Volatile);
              if (report) {
                report->inserted_copies.push_back(copy.id);
                report->record(copy.id, MemTarget::Volatile,
                               DecisionReason::Consolidated);
              }
              insert_after_id(q, src, {copy});
            }
            for (std::uint32_t rid : plan.retarget) {
              Instruction* r = instr_at(q, find_instr(q, rid));
              r->target = MemTarget::Volatile;
              if (report)
                report->record(rid, MemTarget::Volatile,
                               DecisionReason::Consolidated);
            }
            for (std::uint32_t sid : plan.release_vol) {
              // release only when no non-volatile read is fed by it anymore
              int sn = g.node_of(sid);
              bool still_needed = sn < 0;
              for (int x : g.order()) {
                if (still_needed) break;
                const IntervalNode& xn = g.nodes()[x];
                if (!xn.in->is_load() ||
                    xn.in->target != MemTarget::NonVolatile)
                  continue;
                if (std::find(plan.retarget.begin(), plan.retarget.end(),
                              xn.in->id) != plan.retarget.end())
                  continue;
                if (tags_may_alias(g.tag_of(x), g.tag_of(sn)) &&
                    g.reaches(sn, x))
                  still_needed = true;
              }
              if (!still_needed) {
                Instruction* s = instr_at(q, find_instr(q, sid));
                s->target = MemTarget::Volatile;
                if (report)
                  report->record(sid, MemTarget::Volatile,
                                 DecisionReason::Consolidated);
              }
            }
            if (report) report->consolidations.push_back(rec);
            applied = true;
            break;
          }

          if (round == frontier_stores.size()) {
            if (report && n > 0) report->consolidations.push_back(rec);
            break;
          }
          included.insert(frontier_stores[round]);
        }
        if (applied) break;
      }
      if (applied) break;
    }
    if (!applied) return q;
  }
  throw Error(ErrorKind::Internal, "consolidation did not converge");
}

}  // namespace flashvm
