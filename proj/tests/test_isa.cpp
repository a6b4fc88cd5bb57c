#include <doctest.h>

#include <random>

#include "pmusim/isa.hpp"

using namespace pmusim;

namespace {

Instruction ins(Opcode op, std::vector<Operand> operands) {
  Instruction i;
  i.opcode = op;
  i.operands = std::move(operands);
  return i;
}

}  // namespace

TEST_CASE("div computes quotient and remainder: 5/2") {
  ArchState s;
  s.regs[0] = 5;  // implicit dividend
  s.regs[2] = 2;
  auto r = retire(s, ins(Opcode::DIV, {RegOperand{2}}));
  CHECK(r.fault == FaultKind::None);
  CHECK(r.state.regs[0] == 2);
  CHECK(r.state.regs[3] == 1);
}

TEST_CASE("div by zero faults and retires nothing") {
  ArchState s;
  s.regs[0] = 5;
  s.regs[2] = 0;
  auto r = retire(s, ins(Opcode::DIV, {RegOperand{2}}));
  CHECK(r.fault == FaultKind::DivideByZero);
  CHECK(r.state == s);
}

TEST_CASE("add overflow observed at masked width") {
  // 240+100 wraps an 8-bit view but not the 64-bit registers
  ArchState s;
  s.regs[0] = 240;
  auto r = retire(s, ins(Opcode::ADD, {ImmOperand{100}, RegOperand{0}}));
  CHECK(r.state.regs[0] == 340);
  CHECK_FALSE(r.state.flags.overflow);
  CHECK(masked_add_overflows(240, 100, 8));
  CHECK_FALSE(masked_add_overflows(5, 6, 8));
  CHECK_FALSE(masked_add_overflows(12, 8, 8));
}

TEST_CASE("add and sub set overflow on 64-bit wraparound") {
  ArchState s;
  s.regs[1] = ~0ull;
  auto r = retire(s, ins(Opcode::ADD, {ImmOperand{2}, RegOperand{1}}));
  CHECK(r.state.flags.overflow);
  CHECK(r.state.regs[1] == 1);

  ArchState t;
  t.regs[1] = 3;
  auto r2 = retire(t, ins(Opcode::SUB, {ImmOperand{5}, RegOperand{1}}));
  CHECK(r2.state.flags.overflow);  // borrow
}

TEST_CASE("mul truncates to 64 bits") {
  ArchState s;
  s.regs[0] = 1ull << 40;
  s.regs[1] = 1ull << 30;
  auto r = retire(s, ins(Opcode::MUL, {RegOperand{1}, RegOperand{0}}));
  CHECK(r.state.regs[0] == 0);  // 2^70 truncated to 64 bits
  CHECK(r.state.flags.overflow);
}

TEST_CASE("shl shifts in zeros") {
  ArchState s;
  s.regs[0] = 0x41;
  auto r = retire(s, ins(Opcode::SHL, {ImmOperand{12}, RegOperand{0}}));
  CHECK(r.state.regs[0] == 0x41000);
}

TEST_CASE("xor r,r always yields zero and never faults") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 1000; ++i) {
    ArchState s;
    for (auto& r : s.regs) r = rng();
    s.flags.overflow = rng() & 1;
    s.flags.sign = rng() & 1;
    uint8_t reg = rng() % kNumRegs;
    auto out = retire(s, ins(Opcode::XOR, {RegOperand{reg}, RegOperand{reg}}));
    CHECK(out.fault == FaultKind::None);
    CHECK(out.state.regs[reg] == 0);
    CHECK(out.state.flags.zero);
  }
}

TEST_CASE("retire is deterministic") {
  ArchState s;
  s.regs[0] = 17;
  s.regs[2] = 3;
  auto in = ins(Opcode::DIV, {RegOperand{2}});
  auto a = retire(s, in);
  auto b = retire(s, in);
  CHECK(a.state == b.state);
  CHECK(a.fault == b.fault);
}

TEST_CASE("permission violation iff kernel page and user mode") {
  ArchState s;
  s.poke(0x40000000, 0x5A);
  s.tag_kernel_page(0x40000000);
  s.regs[4] = 0x40000000;
  auto load = ins(Opcode::MOV_LOAD, {MemOperand{.base = 4}, RegOperand{0}});

  auto user = retire(s, load, ExecMode::User);
  CHECK(user.fault == FaultKind::PermissionViolation);
  CHECK(user.state == s);

  auto kernel = retire(s, load, ExecMode::Kernel);
  CHECK(kernel.fault == FaultKind::None);
  CHECK(kernel.state.regs[0] == 0x5A);

  // same page, any offset
  s.regs[4] = 0x40000000 + 4095;
  CHECK(retire(s, load).fault == FaultKind::PermissionViolation);
  // user page is fine
  s.regs[4] = 0x1000;
  CHECK(retire(s, load).fault == FaultKind::None);
}

TEST_CASE("unwritten user bytes read as zero") {
  ArchState s;
  s.regs[4] = 0x12345;
  auto r = retire(s, ins(Opcode::MOV_LOAD, {MemOperand{.base = 4}, RegOperand{1}}));
  CHECK(r.state.regs[1] == 0);
}

TEST_CASE("loads are byte-wide and zero-extended") {
  ArchState s;
  s.poke(0x2000, 0xFF);
  s.poke(0x2001, 0xAB);  // must not bleed in
  s.regs[4] = 0x2000;
  s.regs[1] = ~0ull;
  auto r = retire(s, ins(Opcode::MOV_LOAD, {MemOperand{.base = 4}, RegOperand{1}}));
  CHECK(r.state.regs[1] == 0xFF);
}

TEST_CASE("assemble: single xor") {
  auto p = assemble("xor r0, r0");
  REQUIRE(p.code.size() == 1);
  CHECK(p.code[0].opcode == Opcode::XOR);
}

TEST_CASE("assemble: v1 meltdown body shape") {
  // xor/xor/mov-imm/load/load/sub/div, x86 aliases mapped onto r0..r15
  auto p = assemble(R"(
    ; division gadget body
    xor rbx, rbx
    xor rcx, rcx
    mov 0x9, rax
    mov (rdx), rbx
    mov (rsi), rcx
    sub rbx, rcx
    div rcx
  )");
  REQUIRE(p.code.size() == 7);
  CHECK(p.kind == GadgetKind::V1_DIV);
  Opcode expect[] = {Opcode::XOR,      Opcode::XOR, Opcode::MOV_IMM, Opcode::MOV_LOAD,
                     Opcode::MOV_LOAD, Opcode::SUB, Opcode::DIV};
  for (size_t i = 0; i < 7; ++i) CHECK(p.code[i].opcode == expect[i]);
  CHECK(std::get<RegOperand>(p.code[6].operands[0]).id == 2);  // rcx -> r2
}

TEST_CASE("assemble: v2 scaled-index load classifies as v2") {
  auto p = assemble(R"(
    .set mem 0x50000000
    xor rax, rax
    mov (rsi), rax
    shl 0xc, rax
    movzx (mem, (rax), 1), rbx
  )");
  REQUIRE(p.code.size() == 4);
  CHECK(p.kind == GadgetKind::V2_MOV);
  const auto& m = std::get<MemOperand>(p.code[3].operands[0]);
  REQUIRE(m.index.has_value());
  CHECK(*m.index == 0);
  CHECK(m.disp == 0x50000000);
  CHECK(m.scale == 1);
}

TEST_CASE("assemble: directives set gadget metadata") {
  auto p = assemble(R"(
    .secret 0x40000000
    .guess r2
    .probe 0x50000000
    .attack meltdown
    nop
  )");
  CHECK(p.secret_addr == 0x40000000);
  CHECK(p.guess_reg == 2);
  CHECK(p.probe_base == 0x50000000);
  CHECK(p.attack == AttackKind::MELTDOWN);
}

TEST_CASE("assemble: labels resolve for jl") {
  auto p = assemble(R"(
    cmp r5, r6
    jl body
    cmp r15, 2
    jl end
  body:
    nop
  end:
    nop
  )");
  REQUIRE(p.code.size() == 6);
  CHECK(p.code[1].target == 4);
  CHECK(p.code[3].target == 5);
}

TEST_CASE("assemble: errors carry codes and positions") {
  auto code_of = [](const char* text) {
    try {
      assemble(text);
    } catch (const SimError& e) {
      return e.code();
    }
    return Errc::BadConfig;
  };
  CHECK(code_of("frobnicate r1, r2") == Errc::UnknownMnemonic);
  CHECK(code_of("div") == Errc::BadOperandCount);
  CHECK(code_of("div r1, r2") == Errc::BadOperandCount);
  CHECK(code_of("jl nowhere\n") == Errc::UndefinedLabel);
  CHECK(code_of("mov (mem, (rax), 1), rbx") == Errc::UndefinedLabel);

  try {
    assemble("nop\nbadop r1");
  } catch (const SimError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("maccess function-call spelling") {
  auto p = assemble("maccess(0)");
  REQUIRE(p.code.size() == 1);
  CHECK(p.code[0].opcode == Opcode::MACCESS);
  const auto& m = std::get<MemOperand>(p.code[0].operands[0]);
  CHECK(m.base == kNumRegs - 1);
  CHECK(m.disp == 0);
}

TEST_CASE("disassemble round-trips through assemble") {
  auto p = assemble(R"(
    xor r1, r1
    mov 0x20, r0
    mov (r4), r2
    sub r1, r2
    div r2
  )");
  auto q = assemble(disassemble(p));
  REQUIRE(q.code.size() == p.code.size());
  for (size_t i = 0; i < p.code.size(); ++i) CHECK(q.code[i].opcode == p.code[i].opcode);
}
