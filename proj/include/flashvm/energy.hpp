#ifndef FLASHVM_ENERGY_HPP
#define FLASHVM_ENERGY_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>

#include "flashvm/ir.hpp"

namespace flashvm {

// Per-operation energy/cycle constants. Volatile accesses cost a flat
// E_read/E_write; a non-volatile access costs E_nv_*_cc per clock cycle over
// 1 + CC_* cycles, where CC_* are the extra wait cycles the non-volatile
// memory needs at the configured frequency.
struct EnergyModel {
  std::string name;
  double E_read = 0;         // nJ, volatile read
  double E_write = 0;        // nJ, volatile write
  double E_nv_read_cc = 0;   // nJ per cycle, non-volatile read
  double E_nv_write_cc = 0;  // nJ per cycle, non-volatile write
  int CC_read = 0;           // extra cycles per non-volatile read
  int CC_write = 0;          // extra cycles per non-volatile write
  double E_cpu = 0;          // nJ per non-memory cycle
  std::unordered_map<std::string, int> cycles;  // per opcode class
  int probe_cycles = 0;      // energy-probe cost at a checkpoint call
  double probe_energy = 0;   // nJ

  double nv_read_energy() const {
    return E_nv_read_cc * (1 + CC_read);
  }
  double nv_write_energy() const {
    return E_nv_write_cc * (1 + CC_write);
  }
  int opcode_cycles(Opcode op) const;

  void validate() const;  // throws Config on nonsense
};

// floor(E_write * n_w / (E_nv_read_cc * (1 + CC_read) - E_read)); nullopt
// when the denominator is not positive, meaning a volatile copy can never
// pay off (treated as an infinite threshold by callers).
std::optional<long> compute_n_min(const EnergyModel& m, int n_w = 1);

EnergyModel energy_model_from_json(const std::string& json_text);
std::string energy_model_to_json(const EnergyModel& m);

// Shipped presets: "msp430fr5969-8mhz", "msp430fr5969-16mhz". Throws Config
// for unknown names.
EnergyModel builtin_energy_model(const std::string& name);
std::vector<std::string> builtin_energy_model_names();

// Resolves a CLI argument: preset name first, then a path to a JSON file.
EnergyModel load_energy_model(const std::string& name_or_path);

}  // namespace flashvm

#endif
