#include "flashvm/structure.hpp"

#include <algorithm>
#include <set>

namespace flashvm {

namespace {

struct Builder {
  const Function& fn;
  const CFG& cfg;
  const RegionTree& regions;

  Region* loop_with_header(int block) const {
    for (Region* l : regions.loops_innermost_first())
      if (l->header == block) return l;
    return nullptr;
  }

  Region* conditional_at(int block) const {
    for (Region* c : regions.conditionals_innermost_first())
      if (c->cond_block == block) return c;
    return nullptr;
  }

  int loop_exit(const Region* loop) const {
    std::set<int> exits;
    std::set<int> in_loop(loop->blocks.begin(), loop->blocks.end());
    for (int b : loop->blocks)
      for (int s : cfg.succs[b])
        if (!in_loop.count(s)) exits.insert(s);
    if (exits.size() != 1)
      throw Error(ErrorKind::Unsupported,
                  "loop at '" + fn.blocks[loop->header].label + "' in " +
                      fn.name + " must have exactly one exit target");
    return *exits.begin();
  }

  int plain_successor(int b) const {
    const auto& succs = cfg.succs[b];
    if (succs.empty()) return -1;
    if (succs.size() != 1)
      throw Error(ErrorKind::Unsupported,
                  "unstructured branch at '" + fn.blocks[b].label + "' in " +
                      fn.name);
    return succs[0];
  }

  // Emits items from `b` until `stop` (exclusive) or function end.
  StructSeq walk(int b, int stop, const std::set<int>* limit) {
    StructSeq seq;
    std::set<int> visited;
    while (b != stop && b != -1) {
      if (limit && !limit->count(b))
        throw Error(ErrorKind::Unsupported,
                    "control leaves its region at '" + fn.blocks[b].label +
                        "' in " + fn.name);
      if (!visited.insert(b).second)
        throw Error(ErrorKind::Internal,
                    "structured walk revisits '" + fn.blocks[b].label + "'");
      if (Region* loop = loop_with_header(b)) {
        StructItem item;
        item.kind = StructItem::Kind::Loop;
        item.header = loop->header;
        item.latch = loop->latch;
        item.preheader = loop->preheader;
        item.exit_block = loop_exit(loop);
        item.loop_blocks = loop->blocks;
        std::set<int> in_loop(loop->blocks.begin(), loop->blocks.end());
        item.body = std::make_unique<StructSeq>(walk_loop(loop, in_loop));
        b = item.exit_block;
        seq.push_back(std::move(item));
        continue;
      }
      if (Region* cond = conditional_at(b)) {
        StructItem item;
        item.kind = StructItem::Kind::Conditional;
        item.cond_block = b;
        item.join_block = cond->join_block;
        const Instruction& br = fn.blocks[b].instrs.back();
        std::set<int> tset(cond->true_blocks.begin(), cond->true_blocks.end());
        std::set<int> fset(cond->false_blocks.begin(),
                           cond->false_blocks.end());
        int t = fn.block_index(br.label_a);
        int f = fn.block_index(br.label_b);
        item.true_seq = std::make_unique<StructSeq>(
            t == cond->join_block ? StructSeq{}
                                  : walk(t, cond->join_block, &tset));
        item.false_seq = std::make_unique<StructSeq>(
            f == cond->join_block ? StructSeq{}
                                  : walk(f, cond->join_block, &fset));
        b = cond->join_block;
        seq.push_back(std::move(item));
        continue;
      }
      StructItem item;
      item.kind = StructItem::Kind::Block;
      item.block = b;
      seq.push_back(std::move(item));
      const BasicBlock& blk = fn.blocks[b];
      if (!blk.instrs.empty() && (blk.instrs.back().op == Opcode::Ret ||
                                  blk.instrs.back().op == Opcode::Halt)) {
        b = -1;
        continue;
      }
      b = plain_successor(b);
    }
    return seq;
  }

  // Loop body: header first, then the in-loop chain to the latch.
  StructSeq walk_loop(Region* loop, const std::set<int>& in_loop) {
    StructSeq seq;
    StructItem header_item;
    header_item.kind = StructItem::Kind::Block;
    header_item.block = loop->header;
    seq.push_back(std::move(header_item));
    if (loop->header == loop->latch) return seq;

    int next = -1;
    for (int s : cfg.succs[loop->header])
      if (in_loop.count(s)) {
        if (next != -1)
          throw Error(ErrorKind::Unsupported,
                      "loop header at '" + fn.blocks[loop->header].label +
                          "' in " + fn.name + " has two in-loop successors");
        next = s;
      }
    if (next == -1)
      throw Error(ErrorKind::Internal, "loop without body path in " + fn.name);
    // Walk until the latch, then emit the latch as a plain block.
    StructSeq body = walk(next, loop->latch, &in_loop);
    for (auto& item : body) seq.push_back(std::move(item));
    StructItem latch_item;
    latch_item.kind = StructItem::Kind::Block;
    latch_item.block = loop->latch;
    seq.push_back(std::move(latch_item));
    return seq;
  }
};

}  // namespace

FunctionStructure build_structure(const Program& p, const Function& fn) {
  (void)p;
  FunctionStructure out;
  out.fn = &fn;
  out.cfg = build_cfg(fn);
  RegionTree regions = build_region_tree(out.cfg);
  Builder b{fn, out.cfg, regions};
  out.seq = b.walk(0, -1, nullptr);
  return out;
}

void for_each_block(const StructSeq& seq, const std::function<void(int)>& f) {
  for (const StructItem& item : seq) {
    switch (item.kind) {
      case StructItem::Kind::Block:
        f(item.block);
        break;
      case StructItem::Kind::Loop:
        for_each_block(*item.body, f);
        break;
      case StructItem::Kind::Conditional:
        f(item.cond_block);
        for_each_block(*item.true_seq, f);
        for_each_block(*item.false_seq, f);
        break;
    }
  }
}

bool contains_save(const Function& fn, const StructItem& item) {
  bool found = false;
  StructSeq tmp;
  switch (item.kind) {
    case StructItem::Kind::Block:
      for (const Instruction& in : fn.blocks[item.block].instrs)
        if (in.is_save()) found = true;
      return found;
    case StructItem::Kind::Loop:
      return contains_save(fn, *item.body);
    case StructItem::Kind::Conditional:
      for (const Instruction& in : fn.blocks[item.cond_block].instrs)
        if (in.is_save()) found = true;
      return found || contains_save(fn, *item.true_seq) ||
             contains_save(fn, *item.false_seq);
  }
  return false;
}

bool contains_save(const Function& fn, const StructSeq& seq) {
  for (const StructItem& item : seq)
    if (contains_save(fn, item)) return true;
  return false;
}

InstrRef find_instr(const Program& p, std::uint32_t id) {
  for (std::size_t fi = 0; fi < p.functions.size(); ++fi)
    for (std::size_t bi = 0; bi < p.functions[fi].blocks.size(); ++bi) {
      const auto& instrs = p.functions[fi].blocks[bi].instrs;
      for (std::size_t ii = 0; ii < instrs.size(); ++ii)
        if (instrs[ii].id == id)
          return {int(fi), int(bi), int(ii)};
    }
  throw Error(ErrorKind::Internal,
              "instruction id " + std::to_string(id) + " not found");
}

Instruction* instr_at(Program& p, const InstrRef& ref) {
  return &p.functions[ref.fn].blocks[ref.block].instrs[ref.index];
}

const Instruction* instr_at(const Program& p, const InstrRef& ref) {
  return &p.functions[ref.fn].blocks[ref.block].instrs[ref.index];
}

void insert_before_id(Program& p, std::uint32_t anchor,
                      std::vector<Instruction> instrs) {
  InstrRef ref = find_instr(p, anchor);
  auto& vec = p.functions[ref.fn].blocks[ref.block].instrs;
  vec.insert(vec.begin() + ref.index, instrs.begin(), instrs.end());
}

void insert_after_id(Program& p, std::uint32_t anchor,
                     std::vector<Instruction> instrs) {
  InstrRef ref = find_instr(p, anchor);
  auto& vec = p.functions[ref.fn].blocks[ref.block].instrs;
  vec.insert(vec.begin() + ref.index + 1, instrs.begin(), instrs.end());
}

void insert_at_block_end(Program& p, int fn_idx, int block_idx,
                         std::vector<Instruction> instrs) {
  auto& vec = p.functions[fn_idx].blocks[block_idx].instrs;
  std::size_t pos = vec.size();
  if (!vec.empty() && is_terminator(vec.back().op)) --pos;
  vec.insert(vec.begin() + pos, instrs.begin(), instrs.end());
}

void insert_at_block_start(Program& p, int fn_idx, int block_idx,
                           std::vector<Instruction> instrs) {
  auto& vec = p.functions[fn_idx].blocks[block_idx].instrs;
  vec.insert(vec.begin(), instrs.begin(), instrs.end());
}

void erase_instr(Program& p, std::uint32_t id) {
  InstrRef ref = find_instr(p, id);
  auto& vec = p.functions[ref.fn].blocks[ref.block].instrs;
  vec.erase(vec.begin() + ref.index);
}

Instruction make_checkpoint(Program& p) {
  Instruction in;
  in.op = Opcode::Checkpoint;
  in.id = p.fresh_id();
  return in;
}

Instruction make_load(Program& p, std::uint8_t dst, AddressExpr addr,
                      Provenance prov, MemTarget target) {
  Instruction in;
  in.op = Opcode::Load;
  in.id = p.fresh_id();
  in.dst = dst;
  in.addr = std::move(addr);
  in.prov = prov;
  in.target = target;
  return in;
}

Instruction make_store(Program& p, AddressExpr addr, std::uint8_t src,
                       Provenance prov, MemTarget target) {
  Instruction in;
  in.op = Opcode::Store;
  in.id = p.fresh_id();
  in.addr = std::move(addr);
  in.src1 = src;
  in.prov = prov;
  in.target = target;
  return in;
}

}  // namespace flashvm
