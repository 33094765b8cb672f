#include "flashvm/ir.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace flashvm {

const char* Error::kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::Syntax: return "syntax";
    case ErrorKind::UndefinedSymbol: return "undefined-symbol";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Unsupported: return "unsupported-program";
    case ErrorKind::Config: return "config";
    case ErrorKind::Overflow: return "segment-overflow";
    case ErrorKind::MemoryFault: return "memory-fault";
    case ErrorKind::Limit: return "limit-exceeded";
    case ErrorKind::Internal: return "internal";
    case ErrorKind::Io: return "io";
  }
  return "?";
}

std::string Error::format(ErrorKind kind, const std::string& message,
                          SourcePos pos) {
  std::ostringstream os;
  os << kind_name(kind) << ": " << message;
  if (pos.line > 0) {
    os << " (line " << pos.line;
    if (pos.column > 0) os << ", col " << pos.column;
    os << ")";
  }
  return os.str();
}

bool is_binop(Opcode op) {
  switch (op) {
    case Opcode::Add:
    case Opcode::Sub:
    case Opcode::Mul:
    case Opcode::And:
    case Opcode::Or:
    case Opcode::Xor:
    case Opcode::Shl:
    case Opcode::Shr:
    case Opcode::Cmp:
      return true;
    default:
      return false;
  }
}

bool is_memory_op(Opcode op) {
  return op == Opcode::Load || op == Opcode::Store;
}

bool is_terminator(Opcode op) {
  switch (op) {
    case Opcode::Jmp:
    case Opcode::Br:
    case Opcode::Ret:
    case Opcode::Halt:
      return true;
    default:
      return false;
  }
}

const char* opcode_name(Opcode op) {
  switch (op) {
    case Opcode::Const: return "const";
    case Opcode::Mov: return "mov";
    case Opcode::Add: return "add";
    case Opcode::Sub: return "sub";
    case Opcode::Mul: return "mul";
    case Opcode::And: return "and";
    case Opcode::Or: return "or";
    case Opcode::Xor: return "xor";
    case Opcode::Shl: return "shl";
    case Opcode::Shr: return "shr";
    case Opcode::Cmp: return "cmp";
    case Opcode::Load: return "load";
    case Opcode::Store: return "store";
    case Opcode::Jmp: return "jmp";
    case Opcode::Br: return "br";
    case Opcode::Call: return "call";
    case Opcode::Ret: return "ret";
    case Opcode::Checkpoint: return "checkpoint";
    case Opcode::Out: return "out";
    case Opcode::Halt: return "halt";
  }
  return "?";
}

bool targets_nonvolatile(MemTarget t) {
  return t == MemTarget::NonVolatile || t == MemTarget::ReadOnlyVersion ||
         t == MemTarget::ReadWriteVersion;
}

const char* mem_target_name(MemTarget t) {
  switch (t) {
    case MemTarget::Unassigned: return "unassigned";
    case MemTarget::Volatile: return "volatile";
    case MemTarget::NonVolatile: return "nonvolatile";
    case MemTarget::ReadOnlyVersion: return "read-only-version";
    case MemTarget::ReadWriteVersion: return "read-write-version";
  }
  return "?";
}

const char* provenance_name(Provenance p) {
  switch (p) {
    case Provenance::Original: return "original";
    case Provenance::DummyWrite: return "dummy-write";
    case Provenance::ConsolidationCopy: return "consolidation-copy";
    case Provenance::VersioningCopy: return "versioning-copy";
  }
  return "?";
}

const BasicBlock* Function::find_block(const std::string& label) const {
  for (const auto& b : blocks)
    if (b.label == label) return &b;
  return nullptr;
}

int Function::block_index(const std::string& label) const {
  for (std::size_t i = 0; i < blocks.size(); ++i)
    if (blocks[i].label == label) return static_cast<int>(i);
  return -1;
}

const LocalDecl* Function::find_local(const std::string& name) const {
  for (const auto& l : frame)
    if (l.name == name) return &l;
  return nullptr;
}

const Function* Program::find_function(const std::string& name) const {
  for (const auto& f : functions)
    if (f.name == name) return &f;
  return nullptr;
}

Function* Program::find_function(const std::string& name) {
  for (auto& f : functions)
    if (f.name == name) return &f;
  return nullptr;
}

int Program::function_index(const std::string& name) const {
  for (std::size_t i = 0; i < functions.size(); ++i)
    if (functions[i].name == name) return static_cast<int>(i);
  return -1;
}

const GlobalDecl* Program::find_global(const std::string& name) const {
  for (const auto& g : globals)
    if (g.name == name) return &g;
  return nullptr;
}

std::uint32_t Program::object_size(const AddressExpr& addr,
                                   const Function& fn) const {
  if (addr.base_kind == AddrBaseKind::Local) {
    if (const LocalDecl* l = fn.find_local(addr.base)) return l->count;
    throw Error(ErrorKind::UndefinedSymbol,
                "unknown local '" + addr.base + "' in " + fn.name);
  }
  if (const GlobalDecl* g = find_global(addr.base)) return g->count;
  throw Error(ErrorKind::UndefinedSymbol, "unknown global '" + addr.base + "'");
}

namespace {

void validate_register(std::uint8_t r, SourcePos pos) {
  if (r >= kNumRegisters)
    throw Error(ErrorKind::Validation,
                "register r" + std::to_string(int(r)) + " out of file", pos);
}

void validate_address(const Program& p, const Function& fn,
                      const Instruction& in) {
  const AddressExpr& a = in.addr;
  std::uint32_t size = 0;
  if (a.base_kind == AddrBaseKind::Local) {
    const LocalDecl* l = fn.find_local(a.base);
    if (!l)
      throw Error(ErrorKind::UndefinedSymbol,
                  "unknown local '" + a.base + "'", in.pos);
    size = l->count;
  } else {
    const GlobalDecl* g = p.find_global(a.base);
    if (!g)
      throw Error(ErrorKind::UndefinedSymbol,
                  "unknown global '" + a.base + "'", in.pos);
    size = g->count;
  }
  if (a.index_is_reg) {
    validate_register(a.index_reg, in.pos);
  } else if (a.index_const >= size) {
    throw Error(ErrorKind::Validation,
                "constant index " + std::to_string(a.index_const) +
                    " out of bounds for '" + a.base + "' (size " +
                    std::to_string(size) + ")",
                in.pos);
  }
}

}  // namespace

void validate_program(const Program& p, Diagnostics* diags) {
  std::unordered_set<std::string> global_names;
  for (const auto& g : p.globals) {
    if (!global_names.insert(g.name).second)
      throw Error(ErrorKind::Validation, "duplicate global '" + g.name + "'",
                  g.pos);
    if (g.count < 1)
      throw Error(ErrorKind::Validation,
                  "global '" + g.name + "' has element count 0", g.pos);
    if (g.init.size() > g.count)
      throw Error(ErrorKind::Validation,
                  "global '" + g.name + "' has more initializers than elements",
                  g.pos);
  }

  if (p.functions.empty())
    throw Error(ErrorKind::Validation, "program has no functions");
  std::unordered_set<std::string> fn_names;
  for (const auto& f : p.functions)
    if (!fn_names.insert(f.name).second)
      throw Error(ErrorKind::Validation, "duplicate function '" + f.name + "'",
                  f.pos);
  if (!p.find_function(p.entry))
    throw Error(ErrorKind::UndefinedSymbol,
                "entry function '" + p.entry + "' not defined");

  for (const auto& f : p.functions) {
    if (f.blocks.empty())
      throw Error(ErrorKind::Validation, "function '" + f.name + "' is empty",
                  f.pos);
    std::unordered_set<std::string> labels;
    for (const auto& b : f.blocks)
      if (!labels.insert(b.label).second)
        throw Error(ErrorKind::Validation,
                    "duplicate label '" + b.label + "' in " + f.name, b.pos);
    std::unordered_set<std::string> locals;
    for (const auto& l : f.frame) {
      if (!locals.insert(l.name).second)
        throw Error(ErrorKind::Validation,
                    "duplicate local '" + l.name + "' in " + f.name, l.pos);
      if (l.count < 1)
        throw Error(ErrorKind::Validation,
                    "local '" + l.name + "' has element count 0", l.pos);
    }
    for (std::uint8_t r : f.params) validate_register(r, f.pos);

    for (std::size_t bi = 0; bi < f.blocks.size(); ++bi) {
      const BasicBlock& b = f.blocks[bi];
      for (std::size_t ii = 0; ii < b.instrs.size(); ++ii) {
        const Instruction& in = b.instrs[ii];
        if (is_terminator(in.op) && ii + 1 != b.instrs.size())
          throw Error(ErrorKind::Validation,
                      "instruction after terminator in block '" + b.label + "'",
                      in.pos);
        switch (in.op) {
          case Opcode::Const:
            validate_register(in.dst, in.pos);
            break;
          case Opcode::Mov:
            validate_register(in.dst, in.pos);
            validate_register(in.src1, in.pos);
            break;
          case Opcode::Load:
            validate_register(in.dst, in.pos);
            validate_address(p, f, in);
            break;
          case Opcode::Store:
            validate_register(in.src1, in.pos);
            validate_address(p, f, in);
            break;
          case Opcode::Jmp:
            if (f.block_index(in.label_a) < 0)
              throw Error(ErrorKind::UndefinedSymbol,
                          "undefined label '" + in.label_a + "'", in.pos);
            break;
          case Opcode::Br:
            validate_register(in.src1, in.pos);
            for (const std::string* l : {&in.label_a, &in.label_b})
              if (f.block_index(*l) < 0)
                throw Error(ErrorKind::UndefinedSymbol,
                            "undefined label '" + *l + "'", in.pos);
            break;
          case Opcode::Call:
            if (!p.find_function(in.callee))
              throw Error(ErrorKind::UndefinedSymbol,
                          "undefined function '" + in.callee + "'", in.pos);
            break;
          case Opcode::Out:
            validate_register(in.src1, in.pos);
            break;
          default:
            if (is_binop(in.op)) {
              validate_register(in.dst, in.pos);
              validate_register(in.src1, in.pos);
              if (!in.src2_is_imm) validate_register(in.src2, in.pos);
            }
            break;
        }
        for (const std::string& base : in.swap_bases)
          if (!p.find_global(base))
            throw Error(ErrorKind::UndefinedSymbol,
                        "swap annotation names unknown global '" + base + "'",
                        in.pos);
        for (const std::string& base : in.track_bases)
          if (!p.find_global(base))
            throw Error(ErrorKind::UndefinedSymbol,
                        "track annotation names unknown global '" + base + "'",
                        in.pos);
      }
    }
  }

  // Reject recursion: the normalization and interval analyses require an
  // acyclic call graph.
  std::unordered_map<std::string, int> state;  // 0 new, 1 open, 2 done
  struct Walker {
    const Program& p;
    std::unordered_map<std::string, int>& state;
    void walk(const Function& f) {
      state[f.name] = 1;
      for (const auto& b : f.blocks)
        for (const auto& in : b.instrs)
          if (in.op == Opcode::Call) {
            int& s = state[in.callee];
            if (s == 1)
              throw Error(ErrorKind::Unsupported,
                          "recursive call involving '" + in.callee + "'",
                          in.pos);
            if (s == 0) walk(*p.find_function(in.callee));
          }
      state[f.name] = 2;
    }
  } walker{p, state};
  for (const auto& f : p.functions)
    if (state[f.name] == 0) walker.walk(f);

  if (diags) {
    for (const auto& f : p.functions)
      for (const auto& b : f.blocks)
        for (const auto& in : b.instrs) {
          bool uses_scratch = false;
          if (in.prov == Provenance::Original) {
            switch (in.op) {
              case Opcode::Const:
                uses_scratch = in.dst == kScratchRegister;
                break;
              case Opcode::Mov:
                uses_scratch = in.dst == kScratchRegister ||
                               in.src1 == kScratchRegister;
                break;
              case Opcode::Load:
                uses_scratch = in.dst == kScratchRegister ||
                               (in.addr.index_is_reg &&
                                in.addr.index_reg == kScratchRegister);
                break;
              case Opcode::Store:
                uses_scratch = in.src1 == kScratchRegister ||
                               (in.addr.index_is_reg &&
                                in.addr.index_reg == kScratchRegister);
                break;
              default:
                if (is_binop(in.op))
                  uses_scratch = in.dst == kScratchRegister ||
                                 in.src1 == kScratchRegister ||
                                 (!in.src2_is_imm &&
                                  in.src2 == kScratchRegister);
                break;
            }
          }
          if (uses_scratch)
            diags->push_back(
                {"r15 is reserved for inserted instructions", in.pos});
        }
  }
}

namespace {

bool instr_equal(const Instruction& a, const Instruction& b) {
  return a.op == b.op && a.dst == b.dst && a.src1 == b.src1 &&
         a.src2 == b.src2 && a.src2_is_imm == b.src2_is_imm && a.imm == b.imm &&
         a.addr == b.addr && a.label_a == b.label_a && a.label_b == b.label_b &&
         a.callee == b.callee && a.prov == b.prov && a.target == b.target &&
         a.save_scope == b.save_scope && a.save_always == b.save_always &&
         a.swap_bases == b.swap_bases && a.track_bases == b.track_bases;
}

}  // namespace

bool structurally_equal(const Program& a, const Program& b) {
  if (a.entry != b.entry) return false;
  if (a.globals.size() != b.globals.size()) return false;
  for (std::size_t i = 0; i < a.globals.size(); ++i) {
    const auto& x = a.globals[i];
    const auto& y = b.globals[i];
    std::vector<Word> xi = x.init, yi = y.init;
    xi.resize(x.count, 0);
    yi.resize(y.count, 0);
    if (x.name != y.name || x.count != y.count || xi != yi) return false;
  }
  if (a.functions.size() != b.functions.size()) return false;
  for (std::size_t i = 0; i < a.functions.size(); ++i) {
    const auto& x = a.functions[i];
    const auto& y = b.functions[i];
    if (x.name != y.name || x.params != y.params) return false;
    if (x.frame.size() != y.frame.size()) return false;
    for (std::size_t j = 0; j < x.frame.size(); ++j)
      if (x.frame[j].name != y.frame[j].name ||
          x.frame[j].count != y.frame[j].count)
        return false;
    if (x.blocks.size() != y.blocks.size()) return false;
    for (std::size_t j = 0; j < x.blocks.size(); ++j) {
      if (x.blocks[j].label != y.blocks[j].label) return false;
      if (x.blocks[j].instrs.size() != y.blocks[j].instrs.size()) return false;
      for (std::size_t k = 0; k < x.blocks[j].instrs.size(); ++k)
        if (!instr_equal(x.blocks[j].instrs[k], y.blocks[j].instrs[k]))
          return false;
    }
  }
  return true;
}

}  // namespace flashvm
