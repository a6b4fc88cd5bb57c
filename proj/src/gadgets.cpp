#include "pmusim/gadgets.hpp"

namespace pmusim {

const char* category_name(Category c) {
  switch (c) {
    case Category::ADDITION: return "addition";
    case Category::SUBTRACTION: return "subtraction";
    case Category::DIVISION: return "division";
    case Category::MULTIPLICATION: return "multiplication";
    case Category::DATA_MOVING: return "data_moving";
  }
  return "?";
}

const AttackLayout& AttackLayout::standard() {
  static const AttackLayout layout{};
  return layout;
}

namespace {

Instruction mk_imm(uint64_t imm, uint8_t dst) {
  return {Opcode::MOV_IMM, {ImmOperand{imm}, RegOperand{dst}}};
}

Instruction mk_load(uint8_t base, uint8_t dst) {
  return {Opcode::MOV_LOAD, {MemOperand{.base = base}, RegOperand{dst}}};
}

Instruction mk_load_indexed(uint8_t base, uint8_t index, uint8_t dst) {
  MemOperand m{.base = base};
  m.index = index;
  return {Opcode::MOV_LOAD, {m, RegOperand{dst}}};
}

Instruction mk_store(uint8_t src, uint8_t base) {
  return {Opcode::MOV_STORE, {RegOperand{src}, MemOperand{.base = base}}};
}

Instruction mk_alu(Opcode op, uint8_t src, uint8_t dst) {
  return {op, {RegOperand{src}, RegOperand{dst}}};
}

Instruction mk_jl(uint32_t target) {
  Instruction in{Opcode::JL, {}};
  in.target = target;
  return in;
}

// bounds-check prologue: JL into the body on x < size, otherwise an
// always-taken JL (r15 == 0 < 2) skips it. Returns the body start index.
void emit_bounds_check(GadgetProgram& p, uint32_t body_len) {
  p.code.push_back({Opcode::CMP, {RegOperand{5}, RegOperand{6}}});
  p.code.push_back(mk_jl(4));
  p.code.push_back({Opcode::CMP, {RegOperand{kZeroReg}, ImmOperand{2}}});
  p.code.push_back(mk_jl(4 + body_len));
}

}  // namespace

GadgetProgram build_v1(AttackKind attack, uint64_t secret_addr, uint8_t guess_reg,
                       const AttackLayout& layout) {
  GadgetProgram p;
  p.kind = GadgetKind::V1_DIV;
  p.attack = attack;
  p.secret_addr = secret_addr;
  p.guess_reg = guess_reg;

  switch (attack) {
    case AttackKind::MELTDOWN:
      // xor / xor / mov-imm / load t / load secret / sub / div
      p.guess_via = GuessVia::Mem;
      p.guess_mem_addr = layout.attacker_var_addr;
      p.reg_init[3] = layout.attacker_var_addr;
      p.reg_init[4] = secret_addr;
      p.code = {
          mk_alu(Opcode::XOR, 1, 1),
          mk_alu(Opcode::XOR, 2, 2),
          mk_imm(0x9, 0),      // dividend
          mk_load(3, 1),       // t
          mk_load(4, 2),       // secret: faulting kernel load opens the window
          mk_alu(Opcode::SUB, 1, 2),
          {Opcode::DIV, {RegOperand{2}}},
      };
      break;

    case AttackKind::SPECTRE_PHT: {
      // if (x < array1_size) temp = 32 / (array1[x] - t)
      p.guess_via = GuessVia::Reg;
      p.reg_init[5] = secret_addr - layout.array1_base;  // x, out of bounds
      p.reg_init[6] = layout.array1_size;
      p.reg_init[7] = secret_addr;  // &array1[x]
      emit_bounds_check(p, 4);
      p.code.push_back(mk_imm(32, 0));  // dividend
      p.code.push_back(mk_load(7, 1));  // array1[x]
      p.code.push_back(mk_alu(Opcode::SUB, guess_reg, 1));
      p.code.push_back({Opcode::DIV, {RegOperand{1}}});
      break;
    }

    case AttackKind::ZOMBIELOAD:
      // maccess(0); temp = 32 / (target[0] - t)
      p.guess_via = GuessVia::Reg;
      p.assist_addr = layout.assist_addr;
      p.lfb_line = layout.target_addr;
      p.reg_init[8] = layout.assist_addr;
      p.reg_init[9] = layout.target_addr;
      p.code = {
          {Opcode::MACCESS, {MemOperand{.base = 8}}},
          mk_imm(32, 0),
          mk_load(9, 1),  // forwarded from the line fill buffer
          mk_alu(Opcode::SUB, guess_reg, 1),
          {Opcode::DIV, {RegOperand{1}}},
      };
      break;

    case AttackKind::NONE:
      throw SimError(Errc::BadConfig, "v1 gadget needs an attack kind");
  }
  return p;
}

GadgetProgram build_v2(AttackKind attack, uint64_t secret_addr, uint8_t guess_reg,
                       uint64_t probe_base, const AttackLayout& layout) {
  GadgetProgram p;
  p.kind = GadgetKind::V2_MOV;
  p.attack = attack;
  p.secret_addr = secret_addr;
  p.guess_reg = guess_reg;
  p.probe_base = probe_base;
  p.guess_via = GuessVia::FlushIdx;

  switch (attack) {
    case AttackKind::MELTDOWN:
      // xor / load secret / shl 0xc / movzx (mem, (rax), 1)
      p.reg_init[4] = secret_addr;
      p.reg_init[5] = probe_base;
      p.code = {
          mk_alu(Opcode::XOR, 0, 0),
          mk_load(4, 0),  // faulting kernel load opens the window
          {Opcode::SHL, {ImmOperand{0xc}, RegOperand{0}}},
          mk_load_indexed(5, 0, 1),
      };
      break;

    case AttackKind::SPECTRE_PHT:
      // if (x < array1_size) temp = array2[array1[x] * 4096]
      p.reg_init[5] = secret_addr - layout.array1_base;
      p.reg_init[6] = layout.array1_size;
      p.reg_init[7] = secret_addr;
      p.reg_init[10] = probe_base;
      p.reg_init[11] = layout.temp_addr;
      p.store_addr = layout.temp_addr;
      emit_bounds_check(p, 4);
      p.code.push_back(mk_load(7, 0));
      p.code.push_back({Opcode::SHL, {ImmOperand{0xc}, RegOperand{0}}});
      p.code.push_back(mk_load_indexed(10, 0, 1));
      p.code.push_back(mk_store(1, 11));  // temp =
      break;

    case AttackKind::ZOMBIELOAD:
      // maccess(0); maccess(mem + target[0] * 4096)
      p.assist_addr = layout.assist_addr;
      p.lfb_line = layout.target_addr;
      p.reg_init[8] = layout.assist_addr;
      p.reg_init[9] = layout.target_addr;
      p.reg_init[10] = probe_base;
      p.code = {
          {Opcode::MACCESS, {MemOperand{.base = 8}}},
          mk_load(9, 0),  // forwarded from the line fill buffer
          {Opcode::SHL, {ImmOperand{0xc}, RegOperand{0}}},
          mk_load_indexed(10, 0, 1),
      };
      break;

    case AttackKind::NONE:
      throw SimError(Errc::BadConfig, "v2 gadget needs an attack kind");
  }
  return p;
}

GadgetProgram build_category_probe(Category category, const std::vector<uint64_t>& operands,
                                   const AttackLayout& layout) {
  auto need = [&](size_t n) {
    if (operands.size() != n)
      throw SimError(Errc::BadOperandCount,
                     std::string(category_name(category)) + " probe takes " +
                         std::to_string(n) + " operand(s)");
  };

  GadgetProgram p;
  p.kind = GadgetKind::CATEGORY_PROBE;
  p.attack = AttackKind::NONE;
  p.guess_via = GuessVia::Operand;

  switch (category) {
    case Category::ADDITION:
    case Category::SUBTRACTION:
    case Category::MULTIPLICATION: {
      need(2);
      Opcode op = category == Category::ADDITION      ? Opcode::ADD
                  : category == Category::SUBTRACTION ? Opcode::SUB
                                                      : Opcode::MUL;
      p.code = {mk_imm(operands[0], 0), mk_imm(operands[1], 1), mk_alu(op, 1, 0)};
      break;
    }
    case Category::DIVISION:
      need(2);
      p.code = {mk_imm(operands[0], 0), mk_imm(operands[1], 1),
                {Opcode::DIV, {RegOperand{1}}}};
      break;
    case Category::DATA_MOVING:
      // load from the prepared area, with a dependent add and store
      need(1);
      p.probe_base = layout.probe_area_addr;
      p.store_addr = layout.temp_addr;
      p.reg_init[5] = layout.probe_area_addr;
      p.reg_init[6] = layout.temp_addr;
      p.code = {
          mk_imm(operands[0], 0),
          {Opcode::SHL, {ImmOperand{0xc}, RegOperand{0}}},
          mk_load_indexed(5, 0, 1),
          mk_alu(Opcode::ADD, 1, 2),
          mk_store(2, 6),
      };
      break;
  }
  return p;
}

}  // namespace pmusim
