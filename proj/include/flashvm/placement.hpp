#ifndef FLASHVM_PLACEMENT_HPP
#define FLASHVM_PLACEMENT_HPP

#include <string>
#include <unordered_map>
#include <vector>

#include "flashvm/cfg.hpp"
#include "flashvm/ir.hpp"

namespace flashvm {

enum class PlacementStrategy {
  LoopLatch,
  FunctionReturn,
  IdempotentBoundaries,
};

const char* placement_name(PlacementStrategy s);
PlacementStrategy placement_from_string(const std::string& s);

// How a computation interval starts or ends. Saves are checkpoint
// instruction ids; FunctionEntry/FunctionExit bound the outermost intervals;
// CallBoundary marks a call to a function that itself executes saves.
struct IntervalBoundary {
  enum class Kind : std::uint8_t {
    Save,
    FunctionEntry,
    FunctionExit,  // ret or halt
    CallBoundary,
  } kind = Kind::Save;
  std::uint32_t instr_id = 0;  // checkpoint, call, ret or halt id

  bool operator==(const IntervalBoundary&) const = default;
};

// Maximal save-free instruction set. After boundary normalization every
// instruction of a function belongs to exactly one interval; loop-iteration
// intervals carry both the pre-header save and the latch save as entries.
struct ComputationInterval {
  int id = -1;
  std::string fn;
  std::vector<std::uint32_t> instrs;  // structured order, saves excluded
  std::vector<IntervalBoundary> entries;
  std::vector<IntervalBoundary> exits;
  bool is_whole_savefree_function = false;
};

struct IntervalMap {
  std::vector<ComputationInterval> intervals;
  std::unordered_map<std::uint32_t, int> interval_of;  // instr id -> interval

  const ComputationInterval& of_instr(std::uint32_t id) const {
    return intervals[interval_of.at(id)];
  }
};

// True when `fn` or anything it calls contains a checkpoint.
bool function_executes_save(const Program& p, const std::string& fn);

// Inserts checkpoint instructions per strategy. Requires a program without
// checkpoints. IdempotentBoundaries iterates placement, boundary
// normalization and a WAR scan until no interval contains a read that
// reaches a later write of the same tag.
Program place_checkpoints(const Program& p, PlacementStrategy s);

// Computation-interval boundary normalization: a save before the header and
// one at the latch end for every loop containing saves; for conditionals
// containing saves, a save before the branch, removal of each branch's last
// save, and a save at the join when a branch still contains one. Nested
// regions are processed innermost first. Idempotent.
Program normalize_interval_boundaries(const Program& p);

// Splits every function into intervals. Requires normalized boundaries;
// any instruction that would belong to two intervals raises an Internal
// error.
IntervalMap extract_intervals(const Program& p);

}  // namespace flashvm

#endif
