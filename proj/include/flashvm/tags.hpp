#ifndef FLASHVM_TAGS_HPP
#define FLASHVM_TAGS_HPP

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "flashvm/cfg.hpp"
#include "flashvm/ir.hpp"

namespace flashvm {

// Symbol appearing in a canonical affine index expression: either the
// induction variable of a loop (identified by its latch update instruction)
// or the value produced by a loop-invariant definition site. Both ids are
// instruction ids, so symbols are unique program-wide.
struct TagSym {
  enum class Kind : std::uint8_t { Induction, Def } kind = Kind::Def;
  std::uint32_t id = 0;

  auto operator<=>(const TagSym&) const = default;
};

// Identity class for the memory cells an access can touch. Affine tags are
// c0 + sum(ci * sym_i); equal affine tags within one interval iteration
// denote the same physical cell. Opaque tags are per-instruction and never
// compare equal to anything.
struct MemoryTag {
  std::string base;
  AddrBaseKind base_kind = AddrBaseKind::Global;
  std::string owner_fn;  // qualifies local bases

  bool opaque = false;
  std::uint32_t opaque_id = 0;  // instruction id when opaque

  std::int32_t c0 = 0;
  std::map<TagSym, std::int32_t> coeffs;  // zero coefficients removed

  bool same_base(const MemoryTag& o) const {
    return base == o.base && base_kind == o.base_kind &&
           (base_kind == AddrBaseKind::Global || owner_fn == o.owner_fn);
  }
  bool scalar_base() const { return coeffs.empty() && !opaque; }
};

// Decidable, symmetric tag equality: structural for affine tags, false
// whenever either side is opaque.
bool tags_equal(const MemoryTag& a, const MemoryTag& b);

// Whether two accesses may touch the same cell at some execution: same base
// unless both are affine with provably distinct expressions.
bool tags_may_alias(const MemoryTag& a, const MemoryTag& b);

std::string tag_to_string(const MemoryTag& t);

// Induction variable of a canonical loop: a register updated exactly once in
// the loop, in the latch, by `add r, r, c` or `sub r, r, c`.
struct InductionVar {
  int header = -1;
  std::uint32_t sym_id = 0;  // latch update instruction id
  std::uint8_t reg = 0;
  std::int32_t step = 1;
  bool has_const_init = false;
  Word init = 0;   // when the pre-loop value is a known constant
  bool has_const_trip = false;
  std::int64_t trip_count = 0;  // exact trip count when statically known
};

// Per-function tagging result. Tags are keyed by instruction id; memory
// instructions always have an entry.
struct TagMap {
  std::unordered_map<std::uint32_t, MemoryTag> tags;
  std::unordered_map<int, InductionVar> loop_ivs;  // by loop header block
  // diagnostics for accesses downgraded to opaque
  std::vector<std::uint32_t> conservative_instrs;

  const MemoryTag& of(std::uint32_t instr_id) const {
    return tags.at(instr_id);
  }
  bool has(std::uint32_t instr_id) const { return tags.count(instr_id) > 0; }
  const InductionVar* iv_by_symbol(std::uint32_t sym_id) const {
    for (const auto& [hdr, iv] : loop_ivs)
      if (iv.sym_id == sym_id) return &iv;
    return nullptr;
  }
};

// Computes virtual memory tags for every load/store of `fn`. Indices that
// are neither constants nor affine in loop induction variables and
// loop-invariant definitions get opaque per-instruction tags.
TagMap compute_memory_tags(const Program& p, const Function& fn,
                           const CFG& cfg, const RegionTree& regions);

// Whole-program convenience wrapper keyed by instruction id.
struct ProgramTags {
  std::unordered_map<std::uint32_t, MemoryTag> tags;
  std::unordered_map<std::string, TagMap> per_function;

  const MemoryTag& of(std::uint32_t instr_id) const {
    return tags.at(instr_id);
  }
};

ProgramTags compute_memory_tags(const Program& p);

}  // namespace flashvm

#endif
