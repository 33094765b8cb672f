#include <sstream>

#include "flashvm/text.hpp"

namespace flashvm {

namespace {

void print_address(std::ostringstream& os, const AddressExpr& a) {
  os << a.base;
  if (a.index_is_reg)
    os << "[r" << int(a.index_reg) << "]";
  else if (a.index_const != 0)
    os << "[" << a.index_const << "]";
}

void print_annotations(std::ostringstream& os, const Instruction& in) {
  switch (in.target) {
    case MemTarget::Unassigned: break;
    case MemTarget::Volatile: os << " @v"; break;
    case MemTarget::NonVolatile: os << " @nv"; break;
    case MemTarget::ReadOnlyVersion: os << " @ro"; break;
    case MemTarget::ReadWriteVersion: os << " @rw"; break;
  }
  if (in.save_scope == SaveScope::FullSegment) os << " @full";
  if (in.save_scope == SaveScope::PcOnly) os << " @pconly";
  if (in.save_always) os << " @always";
  for (const char* kind : {"@swap", "@track"}) {
    const auto& list =
        kind[1] == 's' ? in.swap_bases : in.track_bases;
    if (list.empty()) continue;
    os << " " << kind << "(";
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (i) os << ",";
      os << list[i];
    }
    os << ")";
  }
  if (in.prov != Provenance::Original)
    os << "  ; !" << provenance_name(in.prov);
}

void print_instruction(std::ostringstream& os, const Instruction& in) {
  os << "  " << opcode_name(in.op);
  switch (in.op) {
    case Opcode::Const:
      os << " r" << int(in.dst) << ", " << in.imm;
      break;
    case Opcode::Mov:
      os << " r" << int(in.dst) << ", r" << int(in.src1);
      break;
    case Opcode::Load:
      os << " r" << int(in.dst) << ", ";
      print_address(os, in.addr);
      break;
    case Opcode::Store:
      os << " ";
      print_address(os, in.addr);
      os << ", r" << int(in.src1);
      break;
    case Opcode::Jmp:
      os << " " << in.label_a;
      break;
    case Opcode::Br:
      os << " r" << int(in.src1) << ", " << in.label_a << ", " << in.label_b;
      break;
    case Opcode::Call:
      os << " " << in.callee;
      break;
    case Opcode::Out:
      os << " r" << int(in.src1);
      break;
    case Opcode::Ret:
    case Opcode::Checkpoint:
    case Opcode::Halt:
      break;
    default:
      os << " r" << int(in.dst) << ", r" << int(in.src1) << ", ";
      if (in.src2_is_imm)
        os << in.imm;
      else
        os << "r" << int(in.src2);
      break;
  }
  print_annotations(os, in);
  os << "\n";
}

}  // namespace

std::string print_program(const Program& p) {
  std::ostringstream os;
  if (p.entry != "main") os << "entry " << p.entry << "\n";
  for (const auto& g : p.globals) {
    os << "global " << g.name << " : word[" << g.count << "]";
    bool any = false;
    for (Word w : g.init)
      if (w != 0) any = true;
    if (any) {
      os << " = ";
      for (std::size_t i = 0; i < g.init.size(); ++i) {
        if (i) os << ", ";
        os << g.init[i];
      }
    }
    os << "\n";
  }
  for (const auto& f : p.functions) {
    os << "\nfunc " << f.name << "(";
    for (std::size_t i = 0; i < f.params.size(); ++i) {
      if (i) os << ", ";
      os << "r" << int(f.params[i]);
    }
    os << ") {\n";
    for (const auto& l : f.frame)
      os << "  local " << l.name << " : word[" << l.count << "]\n";
    for (const auto& b : f.blocks) {
      os << b.label << ":\n";
      for (const auto& in : b.instrs) print_instruction(os, in);
    }
    os << "}\n";
  }
  return os.str();
}

}  // namespace flashvm
