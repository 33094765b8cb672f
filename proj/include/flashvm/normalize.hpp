#ifndef FLASHVM_NORMALIZE_HPP
#define FLASHVM_NORMALIZE_HPP

#include <string>
#include <vector>

#include "flashvm/ir.hpp"

namespace flashvm {

enum class FindingKind {
  LoopLastWrite,
  LoopFirstRead,
  CondFirstWrite,
  CondLastWrite,
  CallOutsideFrame,
};

enum class Remedy {
  DummyWriteAfter,
  DummyWriteBefore,
  Conservative,
  NonConservative,
};

const char* finding_kind_name(FindingKind k);
const char* remedy_name(Remedy r);

struct UncertaintyFinding {
  FindingKind kind = FindingKind::LoopLastWrite;
  Remedy remedy = Remedy::Conservative;
  std::vector<std::uint32_t> instrs;   // instructions involved
  std::vector<std::uint32_t> inserted; // dummy instructions added, if any
  std::string region;                  // loop header / branch label / callee
  std::string tag;                     // printable tag
};

struct NormalizeResult {
  Program program;
  std::vector<UncertaintyFinding> findings;
  // Memory instructions that must map to non-volatile memory because the
  // conservative strategy (or an unresolvable access pattern) decided so.
  std::vector<std::uint32_t> forced_nonvolatile;
};

// Call normalization: dummy writes after calls where a save-free callee's
// outside-frame write would be the caller's final write, priming accesses
// before calls where a callee's outside-frame read would be the caller's
// first read; unresolvable non-scalar callee accesses are pinned
// non-volatile instead.
NormalizeResult normalize_calls(const Program& p);

// Loop normalization: dummy writes after (priming accesses before)
// save-free loops that control a tag's possible last write (first read).
// Arrays are normalized cell-by-cell when the swept range is statically
// known, and reported as conservative findings otherwise.
NormalizeResult normalize_loops(const Program& p);

// Conditional handling. In the default conservative mode findings are only
// recorded (the mapping consumes the same facts); a non-conservative
// request, issued by the versioning extensions, inserts a dummy write in
// the branch lacking one so exactly one branch write executes on each path.
struct NonConservativeRequest {
  std::uint32_t store_instr = 0;  // the conditionally-executed first write
};

NormalizeResult normalize_conditionals(
    const Program& p,
    const std::vector<NonConservativeRequest>& requests = {});

}  // namespace flashvm

#endif
