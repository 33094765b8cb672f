#ifndef FLASHVM_TEXT_HPP
#define FLASHVM_TEXT_HPP

#include <string>
#include <string_view>

#include "flashvm/ir.hpp"

namespace flashvm {

// Textual IR grammar (one instruction per line, `;` comments):
//
//   entry <name>                      ; optional, defaults to main
//   global <name> : word[<n>] = <v0, v1, ...>
//   func <name>(<regs>) {
//     local <name> : word[<n>]
//   <label>:
//     <instr>
//   }
//
// Addresses are `<base>` or `<base>[<reg|int>]`. Memory instructions may
// carry a target annotation `@v`, `@nv`, `@ro`, `@rw`; checkpoints may carry
// `@always`, `@full`, `@pconly`, `@swap(a,b)` and `@track(a)`; checkpoints
// and `halt` may carry `@swap`/`@track`. Provenance of inserted instructions
// is printed as a trailing comment (`; !dummy-write`) which the parser reads
// back; all other comments are discarded.
Program parse_program(std::string_view text);

std::string print_program(const Program& p);

}  // namespace flashvm

#endif
