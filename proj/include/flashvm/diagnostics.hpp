#ifndef FLASHVM_DIAGNOSTICS_HPP
#define FLASHVM_DIAGNOSTICS_HPP

#include <stdexcept>
#include <string>
#include <vector>

namespace flashvm {

// Error categories surfaced to the CLI and to callers of individual passes.
enum class ErrorKind {
  Syntax,            // malformed IR text
  UndefinedSymbol,   // unknown label, global, local or function
  Validation,        // structural invariant violated by the input program
  Unsupported,       // recursion, irreducible CFG, non-canonical loop shape
  Config,            // bad energy model / schedule / baseline configuration
  Overflow,          // segment overflow in layout
  MemoryFault,       // out-of-bounds access at emulation time
  Limit,             // cycle limit exceeded
  Internal,          // invariant that should be unreachable
  Io,
};

struct SourcePos {
  int line = 0;    // 1-based, 0 = unknown
  int column = 0;  // 1-based, 0 = unknown
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string message, SourcePos pos = {})
      : std::runtime_error(format(kind, message, pos)),
        kind_(kind),
        pos_(pos) {}

  ErrorKind kind() const { return kind_; }
  SourcePos pos() const { return pos_; }

  static const char* kind_name(ErrorKind k);

 private:
  static std::string format(ErrorKind kind, const std::string& message,
                            SourcePos pos);

  ErrorKind kind_;
  SourcePos pos_;
};

// Non-fatal diagnostics (e.g. unreachable-block warnings from CFG
// construction) collected by passes that can continue.
struct Diagnostic {
  std::string message;
  SourcePos pos;
};

using Diagnostics = std::vector<Diagnostic>;

}  // namespace flashvm

#endif
