#include "flashvm/tags.hpp"

#include <algorithm>
#include <array>
#include <optional>
#include <sstream>

namespace flashvm {

bool tags_equal(const MemoryTag& a, const MemoryTag& b) {
  if (a.opaque || b.opaque) return false;
  return a.same_base(b) && a.c0 == b.c0 && a.coeffs == b.coeffs;
}

bool tags_may_alias(const MemoryTag& a, const MemoryTag& b) {
  if (!a.same_base(b)) return false;
  if (a.opaque || b.opaque) return true;
  // Same symbolic part but different constant: provably distinct cells in
  // any single iteration context. Anything else may collide.
  if (a.coeffs == b.coeffs && a.c0 != b.c0) return false;
  return true;
}

std::string tag_to_string(const MemoryTag& t) {
  std::ostringstream os;
  os << t.base;
  if (t.opaque) {
    os << "[?#" << t.opaque_id << "]";
    return os.str();
  }
  if (t.coeffs.empty()) {
    if (t.c0 != 0) os << "[" << t.c0 << "]";
    return os.str();
  }
  os << "[";
  bool first = true;
  for (const auto& [sym, c] : t.coeffs) {
    if (!first && c >= 0) os << "+";
    first = false;
    if (c == -1)
      os << "-";
    else if (c != 1)
      os << c << "*";
    if (sym.kind == TagSym::Kind::Induction)
      os << "i@" << sym.id;
    else
      os << "v#" << sym.id;
  }
  if (t.c0 > 0) os << "+" << t.c0;
  if (t.c0 < 0) os << t.c0;
  os << "]";
  return os.str();
}

namespace {

// Linear value of a register: c0 + sum(ci * sym). Unknown values become
// fresh Def symbols keyed by the defining instruction, so two uses of the
// same definition still share a tag.
struct LinVal {
  std::int32_t c0 = 0;
  std::map<TagSym, std::int32_t> coeffs;
  bool valid = false;

  bool operator==(const LinVal&) const = default;

  static LinVal constant(std::int32_t c) {
    LinVal v;
    v.c0 = c;
    v.valid = true;
    return v;
  }
  static LinVal symbol(TagSym s) {
    LinVal v;
    v.coeffs[s] = 1;
    v.valid = true;
    return v;
  }
  bool is_const() const { return valid && coeffs.empty(); }

  LinVal add(const LinVal& o, int sign) const {
    LinVal r = *this;
    r.c0 += sign * o.c0;
    for (const auto& [s, c] : o.coeffs) {
      r.coeffs[s] += sign * c;
      if (r.coeffs[s] == 0) r.coeffs.erase(s);
    }
    return r;
  }
  LinVal scale(std::int32_t k) const {
    LinVal r;
    r.valid = true;
    if (k == 0) return r;
    r.c0 = c0 * k;
    for (const auto& [s, c] : coeffs) r.coeffs[s] = c * k;
    return r;
  }
};

struct State {
  std::array<LinVal, kNumRegisters> regs;

  bool operator==(const State&) const = default;

  bool merge(const State& o) {
    bool changed = false;
    for (int i = 0; i < kNumRegisters; ++i) {
      if (!regs[i].valid) continue;
      if (!o.regs[i].valid || !(regs[i] == o.regs[i])) {
        regs[i].valid = false;
        changed = true;
      }
    }
    return changed;
  }
};

}  // namespace

TagMap compute_memory_tags(const Program& p, const Function& fn,
                           const CFG& cfg, const RegionTree& regions) {
  (void)p;
  TagMap out;
  int n = cfg.num_blocks();

  // Identify induction variables: register updated exactly once inside the
  // loop, in the latch, by add/sub with a constant.
  for (Region* loop : regions.loops_innermost_first()) {
    std::array<int, kNumRegisters> writes_in_loop{};
    const Instruction* update = nullptr;
    for (int b : loop->blocks)
      for (const Instruction& in : fn.blocks[b].instrs) {
        int dst = -1;
        if (in.op == Opcode::Const || in.op == Opcode::Mov ||
            in.op == Opcode::Load || is_binop(in.op))
          dst = in.dst;
        if (in.op == Opcode::Call) {
          // calls clobber the link register
          writes_in_loop[kLinkRegister] += 100;
        }
        if (dst >= 0) {
          writes_in_loop[dst]++;
          if (b == loop->latch &&
              (in.op == Opcode::Add || in.op == Opcode::Sub) &&
              in.src2_is_imm && in.dst == in.src1)
            update = &in;
        }
      }
    if (!update) continue;
    if (writes_in_loop[update->dst] != 1) continue;
    InductionVar iv;
    iv.header = loop->header;
    iv.sym_id = update->id;
    iv.reg = update->dst;
    iv.step = update->op == Opcode::Add ? std::int32_t(update->imm)
                                        : -std::int32_t(update->imm);
    out.loop_ivs[loop->header] = iv;
  }

  // Forward dataflow of linear register values. Loop headers seed their
  // induction variable with the Induction symbol; all other registers
  // changed around the back edge degrade to invalid (then fresh Def symbols
  // at use sites keep same-definition uses equal).
  std::vector<State> block_in(n);
  std::vector<bool> has_in(n, false);
  std::vector<int> rpo = reverse_postorder(cfg);

  auto transfer = [&](const Instruction& in, State& s,
                      std::unordered_map<std::uint32_t, LinVal>* use_vals) {
    auto value_of = [&](std::uint8_t r) -> LinVal {
      if (s.regs[r].valid) return s.regs[r];
      return LinVal();  // invalid
    };
    if (use_vals && in.is_mem() && in.addr.index_is_reg)
      (*use_vals)[in.id] = value_of(in.addr.index_reg);
    switch (in.op) {
      case Opcode::Const:
        s.regs[in.dst] = LinVal::constant(std::int32_t(in.imm));
        break;
      case Opcode::Mov:
        s.regs[in.dst] = value_of(in.src1);
        if (!s.regs[in.dst].valid)
          s.regs[in.dst] = LinVal::symbol({TagSym::Kind::Def, in.id});
        break;
      case Opcode::Load:
        s.regs[in.dst] = LinVal::symbol({TagSym::Kind::Def, in.id});
        break;
      case Opcode::Add:
      case Opcode::Sub: {
        LinVal a = value_of(in.src1);
        LinVal b = in.src2_is_imm ? LinVal::constant(std::int32_t(in.imm))
                                  : value_of(in.src2);
        if (a.valid && b.valid)
          s.regs[in.dst] = a.add(b, in.op == Opcode::Add ? 1 : -1);
        else
          s.regs[in.dst] = LinVal::symbol({TagSym::Kind::Def, in.id});
        break;
      }
      case Opcode::Mul: {
        LinVal a = value_of(in.src1);
        LinVal b = in.src2_is_imm ? LinVal::constant(std::int32_t(in.imm))
                                  : value_of(in.src2);
        if (a.valid && b.is_const())
          s.regs[in.dst] = a.scale(b.c0);
        else if (b.valid && a.is_const())
          s.regs[in.dst] = b.scale(a.c0);
        else
          s.regs[in.dst] = LinVal::symbol({TagSym::Kind::Def, in.id});
        break;
      }
      case Opcode::Call:
        s.regs[kLinkRegister] = LinVal::symbol({TagSym::Kind::Def, in.id});
        break;
      default:
        if (is_binop(in.op))  // and/or/xor/shl/shr/cmp: non-affine
          s.regs[in.dst] = LinVal::symbol({TagSym::Kind::Def, in.id});
        break;
    }
  };

  // Iterate to fixpoint.
  bool changed = true;
  int rounds = 0;
  while (changed && rounds++ < n + 2) {
    changed = false;
    for (int b : rpo) {
      State in_state;
      if (b == 0) {
        in_state = State();
        // entry: parameters and everything else unknown (invalid)
      } else {
        bool first = true;
        for (int pr : cfg.preds[b]) {
          if (!has_in[pr]) continue;
          State pred_out = block_in[pr];
          for (const Instruction& i2 : fn.blocks[pr].instrs)
            transfer(i2, pred_out, nullptr);
          if (first) {
            in_state = pred_out;
            first = false;
          } else {
            in_state.merge(pred_out);
          }
        }
        if (first) continue;  // no predecessor processed yet
      }
      // Loop headers: the induction variable is the Induction symbol at the
      // top of every iteration.
      auto iv_it = out.loop_ivs.find(b);
      if (iv_it != out.loop_ivs.end())
        in_state.regs[iv_it->second.reg] =
            LinVal::symbol({TagSym::Kind::Induction, iv_it->second.sym_id});
      if (!has_in[b] || !(block_in[b] == in_state)) {
        // convergence: invalidate slots that changed between rounds
        if (has_in[b]) {
          State merged = block_in[b];
          merged.merge(in_state);
          changed = changed || !(merged == block_in[b]);
          block_in[b] = merged;
        } else {
          block_in[b] = in_state;
          changed = true;
        }
        has_in[b] = true;
      }
    }
  }

  // Resolve induction-variable constant initial values and trip counts.
  for (auto& [header, iv] : out.loop_ivs) {
    Region* loop = nullptr;
    for (Region* l : regions.loops_innermost_first())
      if (l->header == header) loop = l;
    if (!loop) continue;
    State pre = block_in[loop->preheader];
    for (const Instruction& i2 : fn.blocks[loop->preheader].instrs)
      transfer(i2, pre, nullptr);
    const LinVal& init = pre.regs[iv.reg];
    if (init.is_const()) {
      iv.has_const_init = true;
      iv.init = Word(init.c0);
      // Trip count from a header comparison `cmp rc, iv, bound` + br when
      // the bound is constant and the step is +-1.
      const BasicBlock& hb = fn.blocks[header];
      if (hb.instrs.size() >= 2 &&
          hb.instrs.back().op == Opcode::Br) {
        const Instruction& br = hb.instrs.back();
        bool true_in_loop =
            std::find(loop->blocks.begin(), loop->blocks.end(),
                      fn.block_index(br.label_a)) != loop->blocks.end();
        for (const Instruction& i2 : hb.instrs) {
          if (i2.op != Opcode::Cmp || i2.dst != br.src1) continue;
          if (i2.src1 != iv.reg || iv.step != 1 || !true_in_loop) continue;
          std::int64_t bound = -1;
          if (i2.src2_is_imm) {
            bound = std::int64_t(i2.imm);
          } else {
            State hs = block_in[header];
            if (hs.regs[i2.src2].is_const()) bound = hs.regs[i2.src2].c0;
          }
          if (bound >= 0 && bound >= std::int64_t(init.c0)) {
            iv.has_const_trip = true;
            iv.trip_count = bound - init.c0;
          }
        }
      }
    }
  }

  // Tag every memory access.
  std::unordered_map<std::uint32_t, LinVal> use_vals;
  for (int b = 0; b < n; ++b) {
    if (!has_in[b] && b != 0) continue;
    State s = block_in[b];
    for (const Instruction& in : fn.blocks[b].instrs)
      transfer(in, s, &use_vals);
  }
  // Canonical affine form: at most one induction variable plus constants
  // and loop-invariant definitions (defined outside every loop). Anything
  // else, e.g. a table value loaded inside the loop, degrades to an opaque
  // per-instruction tag.
  std::unordered_map<std::uint32_t, int> def_block;
  for (int b = 0; b < n; ++b)
    for (const Instruction& in : fn.blocks[b].instrs) def_block[in.id] = b;
  auto admissible = [&](const LinVal& v) {
    int ivars = 0;
    for (const auto& [sym, c] : v.coeffs) {
      (void)c;
      if (sym.kind == TagSym::Kind::Induction) {
        if (++ivars > 1) return false;
      } else {
        auto it = def_block.find(sym.id);
        if (it == def_block.end()) return false;
        if (regions.innermost_loop(it->second) != nullptr) return false;
      }
    }
    return true;
  };
  for (int b = 0; b < n; ++b)
    for (const Instruction& in : fn.blocks[b].instrs) {
      if (!in.is_mem()) continue;
      MemoryTag tag;
      tag.base = in.addr.base;
      tag.base_kind = in.addr.base_kind;
      tag.owner_fn = fn.name;
      if (!in.addr.index_is_reg) {
        tag.c0 = in.addr.index_const;
      } else {
        auto it = use_vals.find(in.id);
        if (it != use_vals.end() && it->second.valid &&
            admissible(it->second)) {
          tag.c0 = it->second.c0;
          tag.coeffs = it->second.coeffs;
        } else {
          tag.opaque = true;
          tag.opaque_id = in.id;
          out.conservative_instrs.push_back(in.id);
        }
      }
      out.tags[in.id] = std::move(tag);
    }
  return out;
}

ProgramTags compute_memory_tags(const Program& p) {
  ProgramTags out;
  for (const Function& fn : p.functions) {
    CFG cfg = build_cfg(fn);
    RegionTree regions = build_region_tree(cfg);
    TagMap m = compute_memory_tags(p, fn, cfg, regions);
    for (const auto& [id, tag] : m.tags) out.tags[id] = tag;
    out.per_function.emplace(fn.name, std::move(m));
  }
  return out;
}

}  // namespace flashvm
