#ifndef FLASHVM_MAPPING_HPP
#define FLASHVM_MAPPING_HPP

#include <optional>
#include <string>
#include <vector>

#include "flashvm/energy.hpp"
#include "flashvm/ir.hpp"
#include "flashvm/normalize.hpp"

namespace flashvm {

enum class DecisionReason {
  FinalWrite,     // last write of its tag in some interval
  FirstRead,      // may execute before any write of its tag
  Consolidated,   // retargeted volatile behind an inserted copy
  Conservative,   // forced non-volatile to remove uncertainty
  Intermediate,   // plain volatile data
  FramePinned,    // stack slot of a save-free function
};

const char* decision_reason_name(DecisionReason r);

struct MappingDecision {
  std::uint32_t instr = 0;
  MemTarget target = MemTarget::Unassigned;
  DecisionReason reason = DecisionReason::Intermediate;
};

struct ConsolidationRecord {
  std::string fn;
  std::uint32_t anchor = 0;
  std::string tag;
  long n = 0;             // pessimistic read count
  int n_w = 1;            // copies required
  long n_min = 0;         // threshold; -1 encodes "never beneficial"
  bool consolidated = false;
  double energy_nonvolatile = 0;  // n reads from non-volatile memory
  double energy_volatile = 0;     // n_w copies plus n volatile reads
};

struct MappingReport {
  std::vector<MappingDecision> decisions;
  std::vector<ConsolidationRecord> consolidations;
  std::vector<UncertaintyFinding> normalization;
  std::vector<std::uint32_t> inserted_copies;

  void record(std::uint32_t instr, MemTarget t, DecisionReason r);
  std::string to_json() const;  // extended by the pipeline with versioning
};

// Final-write promotion: per interval and tag the possibly-last writes
// target non-volatile memory, every other write stays volatile; stack
// frames of save-free functions are pinned volatile. Only instructions with
// unassigned targets are touched.
Program map_writes(const Program& p,
                   const std::vector<std::uint32_t>& forced_nonvolatile,
                   MappingReport* report);

// Restore elision: reads that may execute before any write of their tag
// target non-volatile memory; reads fed by volatile stores stay volatile;
// feeding stores are upgraded to non-volatile where required for a
// consistent mapping (the conservative strategy).
Program map_reads(const Program& p,
                  const std::vector<std::uint32_t>& forced_nonvolatile,
                  MappingReport* report);

// Break-even read consolidation with the iterative conditional-aware
// anchor scan; inserts volatile copies (provenance consolidation-copy) and
// retargets the covered reads, releasing conservative writes back to
// volatile memory where the consolidation removed their reason to exist.
Program consolidate_reads(const Program& p, const EnergyModel& m,
                          MappingReport* report);

}  // namespace flashvm

#endif
