#include <cctype>
#include <charconv>
#include <optional>
#include <sstream>
#include <unordered_map>

#include "flashvm/text.hpp"

namespace flashvm {

namespace {

struct Token {
  std::string text;
  int column = 0;
};

// Splits one line into tokens. Punctuation `: , ( ) { } [ ] =` are single
// tokens; a comment runs to end of line and is returned separately.
struct Line {
  std::vector<Token> tokens;
  std::string comment;
};

Line tokenize(const std::string& raw) {
  Line out;
  std::size_t i = 0;
  while (i < raw.size()) {
    char c = raw[i];
    if (c == ';') {
      out.comment = raw.substr(i + 1);
      break;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    int col = static_cast<int>(i) + 1;
    if (std::string(":,(){}[]=").find(c) != std::string::npos) {
      out.tokens.push_back({std::string(1, c), col});
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < raw.size()) {
      char d = raw[j];
      if (std::isspace(static_cast<unsigned char>(d)) || d == ';' ||
          std::string(":,(){}[]=").find(d) != std::string::npos)
        break;
      ++j;
    }
    out.tokens.push_back({raw.substr(i, j - i), col});
    i = j;
  }
  return out;
}

class Parser {
 public:
  explicit Parser(std::string_view text) {
    std::string s(text);
    std::istringstream is(s);
    std::string line;
    while (std::getline(is, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      lines_.push_back(line);
    }
  }

  Program run() {
    Program p;
    while (next_meaningful()) {
      const Token& head = cur_.tokens[0];
      if (head.text == "entry") {
        p.entry = expect_name(1, "entry function name");
        expect_end(2);
      } else if (head.text == "global") {
        p.globals.push_back(parse_global());
      } else if (head.text == "func") {
        p.functions.push_back(parse_function(p));
      } else {
        fail("expected 'global', 'func' or 'entry', got '" + head.text + "'",
             head.column);
      }
    }
    assign_ids(p);
    validate_program(p);
    return p;
  }

 private:
  std::vector<std::string> lines_;
  std::size_t lineno_ = 0;  // 1-based index of the current line
  Line cur_;

  [[noreturn]] void fail(const std::string& msg, int col = 0) {
    throw Error(ErrorKind::Syntax, msg,
                {static_cast<int>(lineno_), col});
  }

  bool next_meaningful() {
    while (lineno_ < lines_.size()) {
      cur_ = tokenize(lines_[lineno_]);
      ++lineno_;
      if (!cur_.tokens.empty()) return true;
    }
    cur_ = {};
    return false;
  }

  SourcePos pos(int col = 0) const {
    return {static_cast<int>(lineno_), col};
  }

  const Token& tok(std::size_t i, const char* what) {
    if (i >= cur_.tokens.size()) fail(std::string("expected ") + what);
    return cur_.tokens[i];
  }

  void expect(std::size_t i, const char* text) {
    const Token& t = tok(i, text);
    if (t.text != text)
      fail(std::string("expected '") + text + "', got '" + t.text + "'",
           t.column);
  }

  void expect_end(std::size_t i) {
    if (i < cur_.tokens.size())
      fail("unexpected '" + cur_.tokens[i].text + "'", cur_.tokens[i].column);
  }

  std::string expect_name(std::size_t i, const char* what) {
    const Token& t = tok(i, what);
    if (t.text.empty() || (!std::isalpha(static_cast<unsigned char>(t.text[0])) &&
                           t.text[0] != '_'))
      fail(std::string("expected ") + what + ", got '" + t.text + "'",
           t.column);
    return t.text;
  }

  long parse_int(const Token& t) {
    const std::string& s = t.text;
    std::size_t start = 0;
    int base = 10;
    bool neg = false;
    if (start < s.size() && (s[start] == '-' || s[start] == '+')) {
      neg = s[start] == '-';
      ++start;
    }
    if (s.size() >= start + 2 && s[start] == '0' &&
        (s[start + 1] == 'x' || s[start + 1] == 'X')) {
      base = 16;
      start += 2;
    }
    long value = 0;
    auto [ptr, ec] = std::from_chars(s.data() + start, s.data() + s.size(),
                                     value, base);
    if (ec != std::errc() || ptr != s.data() + s.size())
      fail("expected integer, got '" + s + "'", t.column);
    return neg ? -value : value;
  }

  Word parse_word(const Token& t) {
    long v = parse_int(t);
    if (v < -0x8000L || v > 0xFFFFL)
      fail("value '" + t.text + "' does not fit in a word", t.column);
    return static_cast<Word>(v & 0xFFFF);
  }

  std::uint8_t parse_reg(const Token& t) {
    const std::string& s = t.text;
    if (s.size() < 2 || (s[0] != 'r' && s[0] != 'R'))
      fail("expected register, got '" + s + "'", t.column);
    int n = 0;
    auto [ptr, ec] = std::from_chars(s.data() + 1, s.data() + s.size(), n);
    if (ec != std::errc() || ptr != s.data() + s.size() || n < 0)
      fail("expected register, got '" + s + "'", t.column);
    if (n >= kNumRegisters)
      throw Error(ErrorKind::Validation,
                  "register " + s + " out of file (r0..r15)", pos(t.column));
    return static_cast<std::uint8_t>(n);
  }

  bool is_register(const Token& t) {
    const std::string& s = t.text;
    if (s.size() < 2 || (s[0] != 'r' && s[0] != 'R')) return false;
    return std::all_of(s.begin() + 1, s.end(), [](char c) {
      return std::isdigit(static_cast<unsigned char>(c));
    });
  }

  GlobalDecl parse_global() {
    // global <name> : word[<n>] = <v0,...>     (initializer optional)
    GlobalDecl g;
    g.pos = pos();
    g.name = expect_name(1, "global name");
    expect(2, ":");
    expect(3, "word");
    std::size_t i = 4;
    if (i < cur_.tokens.size() && cur_.tokens[i].text == "[") {
      long n = parse_int(tok(i + 1, "element count"));
      if (n < 1) fail("element count must be >= 1", cur_.tokens[i + 1].column);
      g.count = static_cast<std::uint32_t>(n);
      expect(i + 2, "]");
      i += 3;
    }
    if (i < cur_.tokens.size()) {
      expect(i, "=");
      ++i;
      bool want_value = true;
      for (; i < cur_.tokens.size(); ++i) {
        if (want_value) {
          g.init.push_back(parse_word(cur_.tokens[i]));
          want_value = false;
        } else {
          expect(i, ",");
          want_value = true;
        }
      }
      if (want_value) fail("trailing ',' in initializer");
    }
    g.init.resize(g.count, 0);
    return g;
  }

  AddressExpr parse_address(std::size_t& i) {
    AddressExpr a;
    a.base = expect_name(i, "address base");
    ++i;
    if (i < cur_.tokens.size() && cur_.tokens[i].text == "[") {
      const Token& t = tok(i + 1, "index");
      if (is_register(t)) {
        a.index_is_reg = true;
        a.index_reg = parse_reg(t);
      } else {
        a.index_const = parse_word(t);
      }
      expect(i + 2, "]");
      i += 3;
    }
    return a;
  }

  // Trailing `@...` annotations shared by memory and checkpoint/halt forms.
  void parse_annotations(std::size_t i, Instruction& in) {
    for (; i < cur_.tokens.size(); ++i) {
      const std::string& s = cur_.tokens[i].text;
      if (s == "@v") {
        in.target = MemTarget::Volatile;
      } else if (s == "@nv") {
        in.target = MemTarget::NonVolatile;
      } else if (s == "@ro") {
        in.target = MemTarget::ReadOnlyVersion;
      } else if (s == "@rw") {
        in.target = MemTarget::ReadWriteVersion;
      } else if (s == "@always") {
        in.save_always = true;
      } else if (s == "@full") {
        in.save_scope = SaveScope::FullSegment;
      } else if (s == "@pconly") {
        in.save_scope = SaveScope::PcOnly;
      } else if (s == "@swap" || s == "@track") {
        auto& list = s == "@swap" ? in.swap_bases : in.track_bases;
        expect(i + 1, "(");
        i += 2;
        while (true) {
          list.push_back(expect_name(i, "global name"));
          ++i;
          if (tok(i, "',' or ')'").text == ")") break;
          expect(i, ",");
          ++i;
        }
      } else {
        fail("unknown annotation '" + s + "'", cur_.tokens[i].column);
      }
    }
    if (in.target != MemTarget::Unassigned && !in.is_mem())
      fail("memory target annotation on non-memory instruction");
    if ((in.save_always || in.save_scope != SaveScope::Registers) &&
        in.op != Opcode::Checkpoint)
      fail("checkpoint annotation on non-checkpoint instruction");
    if ((!in.swap_bases.empty() || !in.track_bases.empty()) &&
        in.op != Opcode::Checkpoint && in.op != Opcode::Halt)
      fail("swap/track annotation allowed on checkpoint and halt only");
  }

  void parse_provenance_comment(Instruction& in) {
    // `; !dummy-write` style trailing comments carry provenance.
    std::size_t i = cur_.comment.find('!');
    if (i == std::string::npos) return;
    std::string word;
    for (++i; i < cur_.comment.size(); ++i) {
      char c = cur_.comment[i];
      if (std::isalnum(static_cast<unsigned char>(c)) || c == '-')
        word.push_back(c);
      else
        break;
    }
    if (word == "dummy-write")
      in.prov = Provenance::DummyWrite;
    else if (word == "consolidation-copy")
      in.prov = Provenance::ConsolidationCopy;
    else if (word == "versioning-copy")
      in.prov = Provenance::VersioningCopy;
  }

  static const std::unordered_map<std::string, Opcode>& opcode_table() {
    static const std::unordered_map<std::string, Opcode> table = {
        {"const", Opcode::Const}, {"mov", Opcode::Mov},
        {"add", Opcode::Add},     {"sub", Opcode::Sub},
        {"mul", Opcode::Mul},     {"and", Opcode::And},
        {"or", Opcode::Or},       {"xor", Opcode::Xor},
        {"shl", Opcode::Shl},     {"shr", Opcode::Shr},
        {"cmp", Opcode::Cmp},     {"load", Opcode::Load},
        {"store", Opcode::Store}, {"jmp", Opcode::Jmp},
        {"br", Opcode::Br},       {"call", Opcode::Call},
        {"ret", Opcode::Ret},     {"checkpoint", Opcode::Checkpoint},
        {"out", Opcode::Out},     {"halt", Opcode::Halt},
    };
    return table;
  }

  Instruction parse_instruction() {
    Instruction in;
    in.pos = pos(cur_.tokens[0].column);
    auto it = opcode_table().find(cur_.tokens[0].text);
    if (it == opcode_table().end())
      fail("unknown opcode '" + cur_.tokens[0].text + "'",
           cur_.tokens[0].column);
    in.op = it->second;
    std::size_t i = 1;
    switch (in.op) {
      case Opcode::Const:
        in.dst = parse_reg(tok(i, "register"));
        expect(i + 1, ",");
        in.imm = parse_word(tok(i + 2, "immediate"));
        i += 3;
        break;
      case Opcode::Mov:
        in.dst = parse_reg(tok(i, "register"));
        expect(i + 1, ",");
        in.src1 = parse_reg(tok(i + 2, "register"));
        i += 3;
        break;
      case Opcode::Load: {
        in.dst = parse_reg(tok(i, "register"));
        expect(i + 1, ",");
        i += 2;
        in.addr = parse_address(i);
        break;
      }
      case Opcode::Store: {
        i = 1;
        in.addr = parse_address(i);
        expect(i, ",");
        in.src1 = parse_reg(tok(i + 1, "register"));
        i += 2;
        break;
      }
      case Opcode::Jmp:
        in.label_a = expect_name(i, "label");
        ++i;
        break;
      case Opcode::Br:
        in.src1 = parse_reg(tok(i, "register"));
        expect(i + 1, ",");
        in.label_a = expect_name(i + 2, "label");
        expect(i + 3, ",");
        in.label_b = expect_name(i + 4, "label");
        i += 5;
        break;
      case Opcode::Call:
        in.callee = expect_name(i, "function name");
        ++i;
        break;
      case Opcode::Out:
        in.src1 = parse_reg(tok(i, "register"));
        ++i;
        break;
      case Opcode::Ret:
      case Opcode::Checkpoint:
      case Opcode::Halt:
        break;
      default: {  // binops
        in.dst = parse_reg(tok(i, "register"));
        expect(i + 1, ",");
        in.src1 = parse_reg(tok(i + 2, "register"));
        expect(i + 3, ",");
        const Token& rhs = tok(i + 4, "register or immediate");
        if (is_register(rhs)) {
          in.src2 = parse_reg(rhs);
        } else {
          in.src2_is_imm = true;
          in.imm = parse_word(rhs);
        }
        i += 5;
        break;
      }
    }
    parse_annotations(i, in);
    parse_provenance_comment(in);
    return in;
  }

  Function parse_function(const Program& p) {
    // func <name>(<regs>) {
    Function f;
    f.pos = pos();
    f.name = expect_name(1, "function name");
    std::size_t i = 2;
    if (i < cur_.tokens.size() && cur_.tokens[i].text == "(") {
      ++i;
      while (tok(i, "register or ')'").text != ")") {
        if (!f.params.empty()) {
          expect(i, ",");
          ++i;
        }
        f.params.push_back(parse_reg(tok(i, "register")));
        ++i;
      }
      ++i;
    }
    expect(i, "{");
    expect_end(i + 1);

    BasicBlock* block = nullptr;
    while (true) {
      if (!next_meaningful())
        throw Error(ErrorKind::Syntax, "unterminated function '" + f.name + "'",
                    f.pos);
      const Token& head = cur_.tokens[0];
      if (head.text == "}") {
        expect_end(1);
        break;
      }
      if (head.text == "local") {
        if (block)
          fail("'local' must precede the first label", head.column);
        LocalDecl l;
        l.pos = pos();
        l.name = expect_name(1, "local name");
        expect(2, ":");
        expect(3, "word");
        std::size_t j = 4;
        if (j < cur_.tokens.size() && cur_.tokens[j].text == "[") {
          long n = parse_int(tok(j + 1, "element count"));
          if (n < 1) fail("element count must be >= 1");
          l.count = static_cast<std::uint32_t>(n);
          expect(j + 2, "]");
          j += 3;
        }
        expect_end(j);
        f.frame.push_back(l);
        continue;
      }
      if (cur_.tokens.size() >= 2 && cur_.tokens[1].text == ":" &&
          opcode_table().find(head.text) == opcode_table().end()) {
        BasicBlock b;
        b.pos = pos();
        b.label = expect_name(0, "label");
        expect_end(2);
        f.blocks.push_back(b);
        block = &f.blocks.back();
        continue;
      }
      if (!block) fail("instruction before first label", head.column);
      block->instrs.push_back(parse_instruction());
    }
    (void)p;
    // Locals shadow globals within the function.
    for (auto& b : f.blocks)
      for (auto& in : b.instrs)
        if (in.is_mem() && f.find_local(in.addr.base))
          in.addr.base_kind = AddrBaseKind::Local;
    return f;
  }

  static void assign_ids(Program& p) {
    std::uint32_t id = 1;
    for (auto& f : p.functions)
      for (auto& b : f.blocks)
        for (auto& in : b.instrs) in.id = id++;
    p.next_id = id;
  }
};

}  // namespace

Program parse_program(std::string_view text) { return Parser(text).run(); }

}  // namespace flashvm
