#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "pmusim/error.hpp"

namespace pmusim {

inline constexpr int kNumRegs = 16;
inline constexpr uint64_t kPageSize = 4096;
inline constexpr uint64_t kLineSize = 64;

enum class Opcode : uint8_t {
  MOV_LOAD,
  MOV_STORE,
  MOV_IMM,
  XOR,
  ADD,
  SUB,
  MUL,
  DIV,
  SHL,
  CMP,
  JL,
  FLUSH,
  MACCESS,
  NOP,
};

const char* opcode_name(Opcode op);

struct RegOperand {
  uint8_t id = 0;
};

struct ImmOperand {
  uint64_t value = 0;
};

// base + disp + optional index*scale ("(mem, (rax), 1)" style)
struct MemOperand {
  uint8_t base = 0;
  int64_t disp = 0;
  std::optional<uint8_t> index;
  uint8_t scale = 1;
};

using Operand = std::variant<RegOperand, ImmOperand, MemOperand>;

struct Instruction {
  Opcode opcode = Opcode::NOP;
  std::vector<Operand> operands;

  // JL only: target instruction index.
  uint32_t target = 0;
};

enum class FaultKind : uint8_t {
  None,
  DivideByZero,
  PermissionViolation,
};

enum class PagePerm : uint8_t { User, Kernel };
enum class ExecMode : uint8_t { User, Kernel };

struct Flags {
  bool zero = false;
  bool overflow = false;  // unsigned wrap / borrow
  bool sign = false;

  bool operator==(const Flags&) const = default;
};

// Architectural state: 16 flat 64-bit registers, flags, sparse byte memory
// with per-page permission tags. Unwritten user bytes read as 0.
struct ArchState {
  std::array<uint64_t, kNumRegs> regs{};
  Flags flags;
  std::map<uint64_t, uint8_t> mem;
  std::map<uint64_t, PagePerm> page_perms;

  static uint64_t page_of(uint64_t addr) { return addr / kPageSize; }

  PagePerm perm_at(uint64_t addr) const {
    auto it = page_perms.find(page_of(addr));
    return it == page_perms.end() ? PagePerm::User : it->second;
  }

  void tag_kernel_page(uint64_t addr) { page_perms[page_of(addr)] = PagePerm::Kernel; }

  uint8_t peek(uint64_t addr) const {
    auto it = mem.find(addr);
    return it == mem.end() ? 0 : it->second;
  }

  // Direct write, no permission check (harness/victim plants data this way).
  void poke(uint64_t addr, uint8_t byte) { mem[addr] = byte; }

  void poke_bytes(uint64_t addr, const std::vector<uint8_t>& bytes) {
    for (size_t i = 0; i < bytes.size(); ++i) mem[addr + i] = bytes[i];
  }

  bool operator==(const ArchState&) const = default;
};

enum class GadgetKind : uint8_t { V1_DIV, V2_MOV, CATEGORY_PROBE };
enum class AttackKind : uint8_t { MELTDOWN, SPECTRE_PHT, ZOMBIELOAD, NONE };

const char* attack_name(AttackKind k);
const char* gadget_kind_name(GadgetKind k);

// How the harness plants the guess value t for one measurement.
enum class GuessVia : uint8_t {
  Reg,       // reg_init[guess_reg] = t
  Mem,       // mem[guess_mem_addr] = t (Meltdown v1: t lives behind rdx)
  FlushIdx,  // flush(probe_base + t*4096), nothing planted in the program
  Operand,   // category probes: program is rebuilt per (secret, guess)
};

struct GadgetProgram {
  std::vector<Instruction> code;
  uint64_t secret_addr = 0;
  uint8_t guess_reg = 0;
  std::optional<uint64_t> probe_base;
  GadgetKind kind = GadgetKind::CATEGORY_PROBE;
  AttackKind attack = AttackKind::NONE;

  // Harness metadata (register presets stand in for victim context).
  std::array<uint64_t, kNumRegs> reg_init{};
  GuessVia guess_via = GuessVia::Reg;
  uint64_t guess_mem_addr = 0;
  std::optional<uint64_t> assist_addr;  // Zombieload trigger page
  std::optional<uint64_t> lfb_line;     // Zombieload staged target line
  std::optional<uint64_t> store_addr;   // temp= destination, if any
};

// Retirement result: either the updated state or a fault (state unchanged).
struct RetireResult {
  ArchState state;
  FaultKind fault = FaultKind::None;
};

// Pure architectural semantics of one instruction; no timing. JL is handled
// by the caller (control flow); retiring a JL only validates it.
RetireResult retire(const ArchState& state, const Instruction& instr,
                    ExecMode mode = ExecMode::User);

// Effective address of a memory operand under a given state.
uint64_t effective_addr(const ArchState& state, const MemOperand& m);

// True when a + b wraps at the given bit width (the §-style "8-bit view":
// masked_add_overflows(240, 100, 8) is true while the 64-bit add is exact).
bool masked_add_overflows(uint64_t a, uint64_t b, int width_bits);

// --- assembler -------------------------------------------------------------
//
// One instruction per line, `;` comments, AT&T-ish operand order
// (source(s) first, destination last). Registers r0..r15 or the x86 aliases
// rax rbx rcx rdx rsi rdi rbp rsp r8..r15. Memory operands: (rN),
// disp(rN), or (base, (rN), scale). Labels end with ':'.
// Directives: .secret A  .guess rN  .probe A  .attack name  .set name value
GadgetProgram assemble(std::string_view text);

std::string disassemble(const GadgetProgram& prog);

std::optional<uint8_t> reg_by_name(std::string_view name);
std::string reg_name(uint8_t id);

}  // namespace pmusim
