#ifndef FLASHVM_IR_HPP
#define FLASHVM_IR_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "flashvm/diagnostics.hpp"

namespace flashvm {

// Machine word. Memory is word-addressed; one declared element is one word.
using Word = std::uint16_t;

inline constexpr int kNumRegisters = 16;
// r14 is the link register written by `call` and read by `ret`.
inline constexpr int kLinkRegister = 14;
// r15 is reserved as scratch for toolchain-inserted instructions; input
// programs must not use it.
inline constexpr int kScratchRegister = 15;

enum class Opcode : std::uint8_t {
  Const,
  Mov,
  Add,
  Sub,
  Mul,
  And,
  Or,
  Xor,
  Shl,
  Shr,
  Cmp,
  Load,
  Store,
  Jmp,
  Br,
  Call,
  Ret,
  Checkpoint,
  Out,
  Halt,
};

bool is_binop(Opcode op);
bool is_memory_op(Opcode op);
bool is_terminator(Opcode op);
const char* opcode_name(Opcode op);

// Where a memory access is directed after the mapping stages. `Unassigned`
// is the state of freshly authored programs; the emulator treats it as
// volatile, matching the initial all-volatile mapping.
enum class MemTarget : std::uint8_t {
  Unassigned,
  Volatile,
  NonVolatile,
  ReadOnlyVersion,   // non-volatile, versioned base, read-only copy
  ReadWriteVersion,  // non-volatile, versioned base, read-and-write copy
};

bool targets_nonvolatile(MemTarget t);
const char* mem_target_name(MemTarget t);

// Why an instruction exists. Inserted instructions are flagged so reports
// can separate transformation overhead from original program work.
enum class Provenance : std::uint8_t {
  Original,
  DummyWrite,
  ConsolidationCopy,
  VersioningCopy,
};

const char* provenance_name(Provenance p);

// What a checkpoint dumps. `Registers` is the flashvm form (register file +
// pc). `FullSegment` additionally dumps the allocated volatile words and is
// used by the Volatile baseline. `PcOnly` closes the copy intervals of the
// partial-update reconciliation and stores a single word.
enum class SaveScope : std::uint8_t {
  Registers,
  FullSegment,
  PcOnly,
};

enum class AddrBaseKind : std::uint8_t { Global, Local };

// base, or base[index] with a constant or register index. Stride is one
// word per element.
struct AddressExpr {
  std::string base;
  AddrBaseKind base_kind = AddrBaseKind::Global;
  bool index_is_reg = false;
  Word index_const = 0;
  std::uint8_t index_reg = 0;

  bool operator==(const AddressExpr&) const = default;
};

struct Instruction {
  Opcode op = Opcode::Halt;
  std::uint32_t id = 0;  // unique within the program, stable across passes

  std::uint8_t dst = 0;   // const/mov/binop/load destination
  std::uint8_t src1 = 0;  // mov/binop lhs, store value, br condition, out
  std::uint8_t src2 = 0;  // binop rhs register
  bool src2_is_imm = false;
  Word imm = 0;  // const value or binop rhs immediate

  AddressExpr addr;  // load/store only

  std::string label_a;  // jmp target, br true target
  std::string label_b;  // br false target
  std::string callee;   // call target

  Provenance prov = Provenance::Original;
  MemTarget target = MemTarget::Unassigned;

  // Checkpoint attributes.
  SaveScope save_scope = SaveScope::Registers;
  bool save_always = false;  // execute regardless of the Probe policy
  // Version swap words flipped when this save (or halt) commits, and bases
  // whose partial updates are reconciled at run time at this save.
  std::vector<std::string> swap_bases;
  std::vector<std::string> track_bases;

  SourcePos pos;  // where it was parsed from, 0 for inserted instructions

  bool is_load() const { return op == Opcode::Load; }
  bool is_store() const { return op == Opcode::Store; }
  bool is_mem() const { return is_memory_op(op); }
  bool is_save() const { return op == Opcode::Checkpoint; }
};

struct GlobalDecl {
  std::string name;
  std::uint32_t count = 1;  // element count >= 1
  std::vector<Word> init;   // padded with zeros to `count`
  SourcePos pos;
};

struct LocalDecl {
  std::string name;
  std::uint32_t count = 1;
  SourcePos pos;
};

struct BasicBlock {
  std::string label;
  std::vector<Instruction> instrs;
  SourcePos pos;
};

struct Function {
  std::string name;
  std::vector<std::uint8_t> params;  // registers the caller must set
  std::vector<LocalDecl> frame;      // statically allocated stack slots
  std::vector<BasicBlock> blocks;    // first block is the entry
  SourcePos pos;

  const BasicBlock* find_block(const std::string& label) const;
  int block_index(const std::string& label) const;  // -1 if absent
  const LocalDecl* find_local(const std::string& name) const;
};

struct Program {
  std::vector<GlobalDecl> globals;
  std::vector<Function> functions;
  std::string entry = "main";
  std::uint32_t next_id = 1;  // id allocator for inserted instructions

  std::uint32_t fresh_id() { return next_id++; }

  const Function* find_function(const std::string& name) const;
  Function* find_function(const std::string& name);
  int function_index(const std::string& name) const;  // -1 if absent
  const GlobalDecl* find_global(const std::string& name) const;

  // Object size in words for an address base, resolved against `fn` for
  // locals. Throws UndefinedSymbol for unknown names.
  std::uint32_t object_size(const AddressExpr& addr,
                            const Function& fn) const;
};

// Position of an instruction inside a program.
struct InstrRef {
  int fn = -1;
  int block = -1;
  int index = -1;

  bool valid() const { return fn >= 0; }
  bool operator==(const InstrRef&) const = default;
};

// Structural validation of the Program invariants: unique entry, unique
// labels and global names, defined jump/call targets, register range,
// acyclic call graph, constant indices in bounds. Throws on violation;
// appends warnings (e.g. use of the reserved scratch register) to `diags`
// when given.
void validate_program(const Program& p, Diagnostics* diags = nullptr);

// Structural equality, ignoring source positions.
bool structurally_equal(const Program& a, const Program& b);

}  // namespace flashvm

#endif
