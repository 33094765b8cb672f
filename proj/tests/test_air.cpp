#include <doctest.h>

#include <set>

#include "flashvm/analysis.hpp"
#include "flashvm/cfg.hpp"
#include "flashvm/tags.hpp"
#include "flashvm/text.hpp"

using namespace flashvm;

TEST_CASE("smallest legal program") {
  Program p = parse_program("func main() {\nentry:\n  halt\n}\n");
  CHECK(p.functions.size() == 1);
  CHECK(p.functions[0].blocks.size() == 1);
  CHECK(p.functions[0].blocks[0].instrs.size() == 1);
  CHECK(p.functions[0].blocks[0].instrs[0].op == Opcode::Halt);
}

TEST_CASE("two-store one-load interval shape") {
  // The canonical write-mapping example: two stores of the same scalar and
  // reads after the final one, inside a single save-delimited interval.
  const char* src = R"(
global a : word[1]

func main() {
entry:
  const r1, 5
  store a, r1
  add r1, r1, 1
  store a, r1
  load r2, a
  load r3, a
  checkpoint
  halt
}
)";
  Program p = parse_program(src);
  int mem_ops = 0;
  for (const auto& in : p.functions[0].blocks[0].instrs)
    if (in.is_mem()) ++mem_ops;
  CHECK(mem_ops == 4);
  IntervalMap m = extract_intervals(p);
  // one interval before the save, one after
  int with_mem = 0;
  for (const auto& ci : m.intervals) {
    bool any = false;
    for (auto id : ci.instrs) {
      InstrRef r = find_instr(p, id);
      if (instr_at(p, r)->is_mem()) any = true;
    }
    if (any) ++with_mem;
  }
  CHECK(with_mem == 1);
}

TEST_CASE("undefined label is rejected") {
  CHECK_THROWS_AS(parse_program("func main() {\nentry:\n  jmp missing\n}\n"),
                  Error);
}

TEST_CASE("register out of file is rejected") {
  CHECK_THROWS_AS(parse_program("func main() {\nentry:\n  const r16, 1\n  halt\n}\n"),
                  Error);
}

TEST_CASE("print/parse round trip") {
  const char* src = R"(
global buf : word[4] = 1, 2, 3, 4
global sum : word[1]

func main() {
entry:
  const r0, 0
  const r1, 0
  jmp head
head:
  cmp r2, r0, 4
  br r2, body, done
body:
  load r3, buf[r0]
  add r1, r1, r3
  store sum, r1
  jmp latch
latch:
  add r0, r0, 1
  jmp head
done:
  out r1
  halt
}

func helper(r0, r1) {
  local tmp : word[2]
entry:
  store tmp[1], r0
  load r2, tmp[1]
  ret
}
)";
  Program p = parse_program(src);
  std::string printed = print_program(p);
  Program q = parse_program(printed);
  CHECK(structurally_equal(p, q));
  CHECK(print_program(q) == printed);
}

TEST_CASE("annotations and provenance round trip") {
  Program p = parse_program(R"(
global a : word[2]

func main() {
entry:
  const r1, 1
  store a[0], r1 @nv
  load r2, a[1] @ro
  checkpoint @always @swap(a)
  halt @swap(a)
}
)");
  const auto& instrs = p.functions[0].blocks[0].instrs;
  CHECK(instrs[1].target == MemTarget::NonVolatile);
  CHECK(instrs[2].target == MemTarget::ReadOnlyVersion);
  CHECK(instrs[3].save_always);
  CHECK(instrs[3].swap_bases == std::vector<std::string>{"a"});
  CHECK(instrs[4].swap_bases == std::vector<std::string>{"a"});

  // provenance survives a print/parse cycle as a trailing comment
  Program q = p;
  q.functions[0].blocks[0].instrs[1].prov = Provenance::ConsolidationCopy;
  Program r = parse_program(print_program(q));
  CHECK(r.functions[0].blocks[0].instrs[1].prov ==
        Provenance::ConsolidationCopy);
  CHECK(structurally_equal(q, r));
}

TEST_CASE("straight-line CFG is a path") {
  Program p = parse_program(R"(
func main() {
a:
  const r0, 1
b:
  const r1, 2
c:
  halt
}
)");
  CFG cfg = build_cfg(p.functions[0]);
  CHECK(cfg.succs[0] == std::vector<int>{1});
  CHECK(cfg.succs[1] == std::vector<int>{2});
  CHECK(cfg.succs[2].empty());
  RegionTree t = build_region_tree(cfg);
  CHECK(t.root->children.empty());
}

TEST_CASE("if/else becomes a diamond with a join") {
  Program p = parse_program(R"(
global a : word[1]

func main() {
entry:
  load r1, a
  br r1, t, f
t:
  const r2, 1
  jmp join
f:
  const r2, 2
  jmp join
join:
  out r2
  halt
}
)");
  CFG cfg = build_cfg(p.functions[0]);
  RegionTree t = build_region_tree(cfg);
  REQUIRE(t.root->children.size() == 1);
  const Region& c = *t.root->children[0];
  CHECK(c.is_conditional());
  CHECK(c.cond_block == 0);
  CHECK(c.join_block == p.functions[0].block_index("join"));
  CHECK(c.true_blocks == std::vector<int>{1});
  CHECK(c.false_blocks == std::vector<int>{2});
}

TEST_CASE("loop with back edge forms a loop region") {
  Program p = parse_program(R"(
func main() {
entry:
  const r0, 0
  jmp head
head:
  cmp r1, r0, 8
  br r1, body, done
body:
  add r2, r2, 1
  jmp latch
latch:
  add r0, r0, 1
  jmp head
done:
  halt
}
)");
  CFG cfg = build_cfg(p.functions[0]);
  RegionTree t = build_region_tree(cfg);
  auto loops = t.loops_innermost_first();
  REQUIRE(loops.size() == 1);
  CHECK(loops[0]->header == p.functions[0].block_index("head"));
  CHECK(loops[0]->latch == p.functions[0].block_index("latch"));
  CHECK(loops[0]->preheader == p.functions[0].block_index("entry"));
}

TEST_CASE("loop containing a conditional nests properly") {
  Program p = parse_program(R"(
global crc : word[1]

func main() {
entry:
  const r0, 0
  jmp head
head:
  cmp r1, r0, 8
  br r1, body, done
body:
  load r2, crc
  and r3, r2, 1
  br r3, odd, even
odd:
  shr r2, r2, 1
  xor r2, r2, 0x1021
  jmp bjoin
even:
  shr r2, r2, 1
bjoin:
  store crc, r2
  jmp latch
latch:
  add r0, r0, 1
  jmp head
done:
  halt
}
)");
  CFG cfg = build_cfg(p.functions[0]);
  RegionTree t = build_region_tree(cfg);
  auto loops = t.loops_innermost_first();
  REQUIRE(loops.size() == 1);
  auto conds = t.conditionals_innermost_first();
  REQUIRE(conds.size() == 1);
  CHECK(conds[0]->parent == loops[0]);
}

TEST_CASE("irreducible CFG is rejected") {
  Program p = parse_program(R"(
func main() {
entry:
  const r0, 0
  br r0, one, two
one:
  const r1, 1
  jmp two
two:
  const r2, 2
  br r2, one, fin
fin:
  halt
}
)");
  CFG cfg = build_cfg(p.functions[0]);
  CHECK_THROWS_AS(build_region_tree(cfg), Error);
}

TEST_CASE("memory tags: same cell same tag, reversed index distinct") {
  Program p = parse_program(R"(
global a : word[8]
global n : word[1] = 8

func main() {
entry:
  load r5, n
  const r0, 0
  jmp head
head:
  cmp r1, r0, r5
  br r1, body, done
body:
  load r2, a[r0]
  add r2, r2, 1
  store a[r0], r2
  sub r3, r5, r0
  sub r3, r3, 1
  load r4, a[r3]
  out r4
  jmp latch
latch:
  add r0, r0, 1
  jmp head
done:
  halt
}
)");
  ProgramTags tags = compute_memory_tags(p);
  const Function& f = p.functions[0];
  const auto& body = f.blocks[f.block_index("body")].instrs;
  const MemoryTag& t_load = tags.of(body[0].id);   // a[i]
  const MemoryTag& t_store = tags.of(body[2].id);  // a[i]
  const MemoryTag& t_rev = tags.of(body[5].id);    // a[n-i-1]
  CHECK(tags_equal(t_load, t_store));
  CHECK_FALSE(tags_equal(t_load, t_rev));
  CHECK_FALSE(t_load.opaque);
  CHECK_FALSE(t_rev.opaque);
}

TEST_CASE("scalar loads share a tag anywhere in a function") {
  Program p = parse_program(R"(
global sum : word[1]

func main() {
entry:
  load r1, sum
  add r1, r1, 1
  store sum, r1
  load r2, sum
  halt
}
)");
  ProgramTags tags = compute_memory_tags(p);
  const auto& instrs = p.functions[0].blocks[0].instrs;
  CHECK(tags_equal(tags.of(instrs[0].id), tags.of(instrs[3].id)));
}

TEST_CASE("table-indexed access gets an opaque conservative tag") {
  Program p = parse_program(R"(
global tbl : word[4] = 7, 6, 5, 4
global a : word[4]

func main() {
entry:
  const r0, 1
  load r2, tbl[r0]
  load r7, a[r2]
  halt
}
)");
  ProgramTags tags = compute_memory_tags(p);
  const auto& instrs = p.functions[0].blocks[0].instrs;
  const MemoryTag& t = tags.of(instrs[2].id);
  CHECK_FALSE(t.opaque);  // r2 is a known definition site value
  // but an index loaded inside the loop is opaque:
  Program q = parse_program(R"(
global tbl : word[4] = 7, 6, 5, 4
global a : word[8]

func main() {
entry:
  const r0, 0
  jmp head
head:
  cmp r1, r0, 4
  br r1, body, done
body:
  load r2, tbl[r0]
  load r7, a[r2]
  jmp latch
latch:
  add r0, r0, 1
  jmp head
done:
  halt
}
)");
  ProgramTags qt = compute_memory_tags(q);
  const Function& qf = q.functions[0];
  const auto& qb = qf.blocks[qf.block_index("body")].instrs;
  const MemoryTag& t2 = qt.of(qb[1].id);
  CHECK(t2.opaque);
  CHECK_FALSE(tags_equal(t2, t2));  // opaque never equals anything
}

TEST_CASE("recursion is rejected") {
  CHECK_THROWS_AS(parse_program(R"(
func main() {
entry:
  call f
  halt
}

func f() {
entry:
  call f
  ret
}
)"),
                  Error);
}
