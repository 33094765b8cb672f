#ifndef FLASHVM_STRUCTURE_HPP
#define FLASHVM_STRUCTURE_HPP

#include <functional>
#include <memory>
#include <vector>

#include "flashvm/cfg.hpp"
#include "flashvm/ir.hpp"

namespace flashvm {

// Structured, execution-ordered view of a function: a sequence of plain
// blocks and regions, derived from the CFG rather than the textual block
// order. Loops must have a single exit target; conditional branches must
// rejoin. These are the canonical shapes the whole pipeline works on.
struct StructItem;
using StructSeq = std::vector<StructItem>;

struct StructItem {
  enum class Kind { Block, Loop, Conditional } kind = Kind::Block;
  int block = -1;  // Block: the block index

  // Loop
  int header = -1;
  int latch = -1;
  int preheader = -1;   // plain block emitted before the loop item
  int exit_block = -1;  // unique out-of-loop continuation
  std::vector<int> loop_blocks;
  std::unique_ptr<StructSeq> body;  // header..latch, structured

  // Conditional
  int cond_block = -1;
  int join_block = -1;
  std::unique_ptr<StructSeq> true_seq;
  std::unique_ptr<StructSeq> false_seq;
};

struct FunctionStructure {
  const Function* fn = nullptr;
  CFG cfg;
  StructSeq seq;
};

// Builds the structured view; throws Unsupported for shapes outside the
// canonical forms.
FunctionStructure build_structure(const Program& p, const Function& fn);

// Walk every block of a sequence in structured order.
void for_each_block(const StructSeq& seq, const std::function<void(int)>& f);

// Whether any instruction of the item/sequence is a checkpoint.
bool contains_save(const Function& fn, const StructSeq& seq);
bool contains_save(const Function& fn, const StructItem& item);

// Instruction lookup and insertion helpers. Positions are re-resolved by
// instruction id, so edits are stable under earlier insertions.
InstrRef find_instr(const Program& p, std::uint32_t id);
Instruction* instr_at(Program& p, const InstrRef& ref);
const Instruction* instr_at(const Program& p, const InstrRef& ref);

void insert_before_id(Program& p, std::uint32_t anchor,
                      std::vector<Instruction> instrs);
void insert_after_id(Program& p, std::uint32_t anchor,
                     std::vector<Instruction> instrs);
// Insert at the end of a block, before its terminator if it has one.
void insert_at_block_end(Program& p, int fn_idx, int block_idx,
                         std::vector<Instruction> instrs);
void insert_at_block_start(Program& p, int fn_idx, int block_idx,
                           std::vector<Instruction> instrs);
// Remove the instruction with the given id.
void erase_instr(Program& p, std::uint32_t id);

Instruction make_checkpoint(Program& p);
Instruction make_load(Program& p, std::uint8_t dst, AddressExpr addr,
                      Provenance prov, MemTarget target = MemTarget::Unassigned);
Instruction make_store(Program& p, AddressExpr addr, std::uint8_t src,
                       Provenance prov, MemTarget target = MemTarget::Unassigned);

}  // namespace flashvm

#endif
