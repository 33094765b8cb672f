#include "flashvm/placement.hpp"

#include <algorithm>
#include <set>

#include "flashvm/analysis.hpp"
#include "flashvm/structure.hpp"

namespace flashvm {

const char* placement_name(PlacementStrategy s) {
  switch (s) {
    case PlacementStrategy::LoopLatch: return "loop-latch";
    case PlacementStrategy::FunctionReturn: return "function-return";
    case PlacementStrategy::IdempotentBoundaries: return "idempotent";
  }
  return "?";
}

PlacementStrategy placement_from_string(const std::string& s) {
  if (s == "loop-latch") return PlacementStrategy::LoopLatch;
  if (s == "function-return") return PlacementStrategy::FunctionReturn;
  if (s == "idempotent") return PlacementStrategy::IdempotentBoundaries;
  throw Error(ErrorKind::Config, "unknown placement strategy '" + s + "'");
}

bool function_executes_save(const Program& p, const std::string& fn) {
  const Function* f = p.find_function(fn);
  return f && executes_save(p, *f);
}

namespace {

bool has_any_checkpoint(const Program& p) {
  for (const auto& f : p.functions)
    for (const auto& b : f.blocks)
      for (const auto& in : b.instrs)
        if (in.is_save()) return true;
  return false;
}

void place_loop_latch(Program& p) {
  for (std::size_t fi = 0; fi < p.functions.size(); ++fi) {
    FunctionStructure fs = build_structure(p, p.functions[fi]);
    std::function<void(const StructSeq&)> visit = [&](const StructSeq& seq) {
      for (const StructItem& item : seq) {
        if (item.kind == StructItem::Kind::Loop) {
          visit(*item.body);
          insert_at_block_end(p, int(fi), item.latch, {make_checkpoint(p)});
        } else if (item.kind == StructItem::Kind::Conditional) {
          visit(*item.true_seq);
          visit(*item.false_seq);
        }
      }
    };
    visit(fs.seq);
  }
}

void place_function_return(Program& p) {
  for (std::size_t fi = 0; fi < p.functions.size(); ++fi) {
    Function& f = p.functions[fi];
    for (std::size_t bi = 0; bi < f.blocks.size(); ++bi) {
      auto& instrs = f.blocks[bi].instrs;
      for (std::size_t ii = 0; ii < instrs.size(); ++ii) {
        // `halt` counts as the entry function's return site.
        if (instrs[ii].op == Opcode::Ret || instrs[ii].op == Opcode::Halt) {
          Instruction cp = make_checkpoint(p);
          instrs.insert(instrs.begin() + ii, cp);
          ++ii;
        }
      }
    }
  }
}

// One WAR pair found by the placement scan.
struct PlacementWar {
  std::uint32_t write_instr = 0;
};

std::optional<PlacementWar> find_first_war(const Program& p) {
  IntervalMap intervals = extract_intervals(p);
  ProgramTags tags = compute_memory_tags(p);
  for (const ComputationInterval& ci : intervals.intervals) {
    if (ci.is_whole_savefree_function) continue;  // seen inlined in callers
    IntervalGraph g(p, ci, tags);
    const auto& nodes = g.nodes();
    // Loop step of the innermost shared loop is unknown here; the scan uses
    // the conservative step +1 which only affects offset-pattern precision.
    for (std::size_t w = 0; w < nodes.size(); ++w) {
      if (!nodes[w].in->is_store() || nodes[w].callee_frame_access) continue;
      const MemoryTag& wt = g.tag_of(int(w));
      for (std::size_t r = 0; r < nodes.size(); ++r) {
        if (!nodes[r].in->is_load() || nodes[r].callee_frame_access) continue;
        const MemoryTag& rt = g.tag_of(int(r));
        bool same_iter = g.reaches(int(r), int(w), /*back=*/false);
        bool cross = !same_iter && g.reaches(int(r), int(w), /*back=*/true);
        if (war_order_possible(rt, wt, 1, same_iter, cross))
          return PlacementWar{nodes[w].in->id};
      }
    }
  }
  return std::nullopt;
}

void place_idempotent(Program& p) {
  // Greedy: a save immediately before every write that closes a WAR pair in
  // its interval, re-normalizing boundaries until the scan is clean.
  int guard = 0;
  while (true) {
    p = normalize_interval_boundaries(p);
    std::optional<PlacementWar> war = find_first_war(p);
    if (!war) return;
    insert_before_id(p, war->write_instr, {make_checkpoint(p)});
    if (++guard > 100000)
      throw Error(ErrorKind::Internal, "idempotent placement diverged");
  }
}

}  // namespace

Program place_checkpoints(const Program& p, PlacementStrategy s) {
  if (has_any_checkpoint(p))
    throw Error(ErrorKind::Validation,
                "placement requires a program without checkpoints");
  Program q = p;
  switch (s) {
    case PlacementStrategy::LoopLatch:
      place_loop_latch(q);
      break;
    case PlacementStrategy::FunctionReturn:
      place_function_return(q);
      break;
    case PlacementStrategy::IdempotentBoundaries:
      place_idempotent(q);
      break;
  }
  return q;
}

namespace {

// Saves contained in a block (ids, in order).
std::vector<std::uint32_t> block_saves(const BasicBlock& b) {
  std::vector<std::uint32_t> out;
  for (const auto& in : b.instrs)
    if (in.is_save()) out.push_back(in.id);
  return out;
}

struct Normalizer {
  Program& p;
  int fn_idx;
  bool changed = false;

  const Function& fn() const { return p.functions[fn_idx]; }

  void run() {
    FunctionStructure fs = build_structure(p, fn());
    visit_seq(fs.seq);
  }

  void visit_seq(const StructSeq& seq) {
    for (const StructItem& item : seq) visit_item(item);
  }

  // Innermost first: children normalized before the enclosing region.
  void visit_item(const StructItem& item) {
    switch (item.kind) {
      case StructItem::Kind::Block:
        return;
      case StructItem::Kind::Loop: {
        visit_seq(*item.body);
        if (!contains_save(fn(), *item.body)) return;
        normalize_loop(item);
        return;
      }
      case StructItem::Kind::Conditional: {
        visit_seq(*item.true_seq);
        visit_seq(*item.false_seq);
        if (contains_save(fn(), *item.true_seq) ||
            contains_save(fn(), *item.false_seq))
          normalize_conditional(item);
        return;
      }
    }
  }

  // A save before the header (at the pre-header end) and the loop's last
  // save at the latch end, before the back jump. The last save is moved
  // there when that preserves the interval partition (a plain body-level
  // save); otherwise a fresh one is inserted.
  void normalize_loop(const StructItem& loop) {
    const BasicBlock& pre = fn().blocks[loop.preheader];
    bool preheader_save =
        pre.instrs.size() >= 2 && is_terminator(pre.instrs.back().op)
            ? pre.instrs[pre.instrs.size() - 2].is_save()
            : (!pre.instrs.empty() && pre.instrs.back().is_save());
    if (!preheader_save) {
      insert_at_block_end(p, fn_idx, loop.preheader, {make_checkpoint(p)});
      changed = true;
    }

    const BasicBlock& latch = fn().blocks[loop.latch];
    {
      const auto& li = latch.instrs;
      std::size_t lastpos = li.size();
      if (!li.empty() && is_terminator(li.back().op)) --lastpos;
      if (lastpos >= 1 && li[lastpos - 1].is_save()) return;  // already there
    }

    // Structurally last save in the body, if it sits in a plain body-level
    // block and is not the merge save at a conditional's join.
    std::uint32_t movable = 0;
    const StructSeq& body = *loop.body;
    for (std::size_t i = 0; i < body.size(); ++i) {
      const StructItem& item = body[i];
      if (item.kind != StructItem::Kind::Block) continue;
      const BasicBlock& blk = fn().blocks[item.block];
      for (std::size_t k = 0; k < blk.instrs.size(); ++k) {
        if (!blk.instrs[k].is_save()) continue;
        bool join_save =
            k == 0 && i > 0 &&
            body[i - 1].kind == StructItem::Kind::Conditional &&
            (contains_save(fn(), *body[i - 1].true_seq) ||
             contains_save(fn(), *body[i - 1].false_seq));
        movable = join_save ? 0 : blk.instrs[k].id;
      }
    }
    // Saves nested deeper than the body level are never movable; if one of
    // those is the structurally last save, fall back to inserting.
    std::uint32_t overall_last = 0;
    for_each_block(body, [&](int b) {
      for (const auto& in : fn().blocks[b].instrs)
        if (in.is_save()) overall_last = in.id;
    });
    if (movable != 0 && movable == overall_last) {
      InstrRef ref = find_instr(p, movable);
      Instruction save = *instr_at(p, ref);
      erase_instr(p, movable);
      insert_at_block_end(p, fn_idx, loop.latch, {save});
    } else {
      insert_at_block_end(p, fn_idx, loop.latch, {make_checkpoint(p)});
    }
    changed = true;
  }

  // A save before the branch, removal of each branch's last save, and a
  // save at the join when a branch still contains one.
  void normalize_conditional(const StructItem& cond) {
    const BasicBlock& cb = fn().blocks[cond.cond_block];
    // save immediately before the br
    bool has_pre = cb.instrs.size() >= 2 &&
                   cb.instrs[cb.instrs.size() - 2].is_save();
    if (!has_pre) {
      insert_at_block_end(p, fn_idx, cond.cond_block, {make_checkpoint(p)});
      changed = true;
    }
    auto strip_last_save = [&](const StructSeq& seq) -> int {
      std::uint32_t last = 0;
      int count = 0;
      for_each_block(seq, [&](int b) {
        for (const auto& in : fn().blocks[b].instrs)
          if (in.is_save()) {
            last = in.id;
            ++count;
          }
      });
      if (last != 0) {
        erase_instr(p, last);
        changed = true;
      }
      return count - 1;  // saves remaining after removal
    };
    int t_remaining = strip_last_save(*cond.true_seq);
    int f_remaining = strip_last_save(*cond.false_seq);
    if (t_remaining > 0 || f_remaining > 0) {
      const BasicBlock& join = fn().blocks[cond.join_block];
      bool join_starts_with_save =
          !join.instrs.empty() && join.instrs.front().is_save();
      if (!join_starts_with_save) {
        insert_at_block_start(p, fn_idx, cond.join_block,
                              {make_checkpoint(p)});
        changed = true;
      }
    }
  }
};

}  // namespace

Program normalize_interval_boundaries(const Program& p) {
  Program q = p;
  // Conditional normalization can remove saves that an enclosing loop's
  // normalization relied on; iterate to a fixed point.
  for (int round = 0; round < 64; ++round) {
    bool changed = false;
    for (int fi = 0; fi < int(q.functions.size()); ++fi) {
      Normalizer n{q, fi};
      n.run();
      changed = changed || n.changed;
    }
    if (!changed) return q;
  }
  throw Error(ErrorKind::Internal, "boundary normalization did not converge");
}

namespace {

struct Extractor {
  const Program& p;
  int fn_idx;
  IntervalMap& out;

  const Function& fn() const { return p.functions[fn_idx]; }

  int new_interval(std::vector<IntervalBoundary> entries) {
    ComputationInterval ci;
    ci.id = static_cast<int>(out.intervals.size());
    ci.fn = fn().name;
    ci.entries = std::move(entries);
    out.intervals.push_back(std::move(ci));
    return out.intervals.back().id;
  }

  void close_all(std::vector<int>& open, IntervalBoundary b) {
    for (int id : open) out.intervals[id].exits.push_back(b);
  }

  void add_instr(std::vector<int>& open, const Instruction& in) {
    if (open.size() != 1 && in.is_mem())
      throw Error(ErrorKind::Internal,
                  "memory instruction in two computation intervals; "
                  "boundaries not normalized");
    for (int id : open) out.intervals[id].instrs.push_back(in.id);
    if (open.size() == 1) out.interval_of[in.id] = open[0];
  }

  std::vector<int> walk_block(int bi, std::vector<int> open) {
    for (const Instruction& in : fn().blocks[bi].instrs) {
      if (in.is_save()) {
        close_all(open, {IntervalBoundary::Kind::Save, in.id});
        open = {new_interval({{IntervalBoundary::Kind::Save, in.id}})};
        continue;
      }
      if (in.op == Opcode::Call &&
          function_executes_save(p, in.callee)) {
        add_instr(open, in);
        close_all(open, {IntervalBoundary::Kind::CallBoundary, in.id});
        open = {new_interval({{IntervalBoundary::Kind::CallBoundary, in.id}})};
        continue;
      }
      add_instr(open, in);
      if (in.op == Opcode::Ret || in.op == Opcode::Halt)
        close_all(open, {IntervalBoundary::Kind::FunctionExit, in.id});
    }
    return open;
  }

  std::vector<int> walk_seq(const StructSeq& seq, std::vector<int> open) {
    for (const StructItem& item : seq) {
      switch (item.kind) {
        case StructItem::Kind::Block:
          open = walk_block(item.block, std::move(open));
          break;
        case StructItem::Kind::Loop: {
          if (!contains_save(fn(), *item.body)) {
            for_each_block(*item.body, [&](int b) {
              for (const Instruction& in : fn().blocks[b].instrs)
                add_instr(open, in);
            });
            break;
          }
          // Normalized: the pre-header ends with a save, so `open` is the
          // interval it just opened; the latch ends with a save before the
          // back jump.
          if (open.size() != 1)
            throw Error(ErrorKind::Internal,
                        "loop entered with ambiguous interval");
          int first_iter_interval = open[0];
          std::uint32_t preheader_save = 0;
          {
            const auto& entries = out.intervals[first_iter_interval].entries;
            if (entries.size() == 1 &&
                entries[0].kind == IntervalBoundary::Kind::Save)
              preheader_save = entries[0].instr_id;
          }
          if (preheader_save == 0)
            throw Error(ErrorKind::Internal,
                        "loop with saves lacks a pre-header save; "
                        "boundaries not normalized");
          open = walk_seq(*item.body, std::move(open));
          if (open.size() != 1)
            throw Error(ErrorKind::Internal,
                        "loop body left ambiguous intervals");
          // find latch-end save = entry of the now-open interval
          const auto& entries = out.intervals[open[0]].entries;
          if (entries.size() != 1 ||
              entries[0].kind != IntervalBoundary::Kind::Save)
            throw Error(ErrorKind::Internal,
                        "loop lacks a latch-end save; boundaries not "
                        "normalized");
          std::uint32_t latch_save = entries[0].instr_id;
          {
            // the latch save must close the loop body: verify that the open
            // interval holds only the back jump so far
            const auto& li = out.intervals[open[0]].instrs;
            for (std::uint32_t id : li) {
              InstrRef ref = find_instr(p, id);
              if (instr_at(p, ref)->is_mem())
                throw Error(ErrorKind::Internal,
                            "latch save is not last in the loop");
            }
          }
          out.intervals[first_iter_interval].entries.push_back(
              {IntervalBoundary::Kind::Save, latch_save});
          out.intervals[open[0]].entries.push_back(
              {IntervalBoundary::Kind::Save, preheader_save});
          break;
        }
        case StructItem::Kind::Conditional: {
          bool saves = contains_save(fn(), *item.true_seq) ||
                       contains_save(fn(), *item.false_seq);
          for (const Instruction& in : fn().blocks[item.cond_block].instrs) {
            if (in.is_save()) {
              close_all(open, {IntervalBoundary::Kind::Save, in.id});
              open = {new_interval({{IntervalBoundary::Kind::Save, in.id}})};
            } else {
              add_instr(open, in);
            }
          }
          if (!saves) {
            for_each_block(*item.true_seq, [&](int b) {
              for (const Instruction& in : fn().blocks[b].instrs)
                add_instr(open, in);
            });
            for_each_block(*item.false_seq, [&](int b) {
              for (const Instruction& in : fn().blocks[b].instrs)
                add_instr(open, in);
            });
            break;
          }
          std::vector<int> t_end = walk_seq(*item.true_seq, open);
          std::vector<int> f_end = walk_seq(*item.false_seq, open);
          std::set<int> merged(t_end.begin(), t_end.end());
          merged.insert(f_end.begin(), f_end.end());
          open.assign(merged.begin(), merged.end());
          break;
        }
      }
    }
    return open;
  }

  void run() {
    FunctionStructure fs = build_structure(p, fn());
    std::vector<int> open = {
        new_interval({{IntervalBoundary::Kind::FunctionEntry, 0}})};
    if (!executes_save(p, fn()) && fn().name != p.entry)
      out.intervals[open[0]].is_whole_savefree_function = true;
    walk_seq(fs.seq, std::move(open));
  }
};

}  // namespace

IntervalMap extract_intervals(const Program& p) {
  IntervalMap out;
  for (int fi = 0; fi < int(p.functions.size()); ++fi) {
    Extractor e{p, fi, out};
    e.run();
  }
  return out;
}

}  // namespace flashvm
