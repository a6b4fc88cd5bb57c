#pragma once

#include <cstdint>
#include <vector>

#include "pmusim/isa.hpp"

namespace pmusim {

// Instruction categories probed for operand-dependent traces.
enum class Category : uint8_t {
  ADDITION,
  SUBTRACTION,
  DIVISION,
  MULTIPLICATION,
  DATA_MOVING,
};

const char* category_name(Category c);

// Fixed address plan shared by builders, harness and tests. Pages are
// disjoint; the probe area spans 256 pages at stride 4096.
struct AttackLayout {
  uint64_t kernel_secret_addr = 0x40000000;  // Meltdown target (kernel page)
  uint64_t user_secret_addr = 0x20000000;    // Spectre victim data
  uint64_t attacker_var_addr = 0x1000;       // v1 Meltdown: t lives here
  uint64_t array1_base = 0x10000;            // Spectre bounds-checked array
  uint64_t array1_size = 16;
  uint64_t assist_addr = 0x0;                // Zombieload trigger (kernel page)
  uint64_t target_addr = 0x3000;             // Zombieload: staged+flushed line
  uint64_t probe_base = 0x50000000;          // v2 probe area, 256 x 4096
  uint64_t temp_addr = 0x1100;               // temp= store destination
  uint64_t pad_base = 0x60000000;            // L2 eviction victims (C,D,C)
  uint64_t junk_base = 0x70000000;           // L2 capacity filler
  uint64_t probe_area_addr = 0x58000000;     // data-moving category probe area

  static const AttackLayout& standard();
};

// Guess register by convention: t is handed to v1 Spectre/Zombieload in r2.
inline constexpr uint8_t kGuessReg = 2;
// r15 is reserved zero in builder output (absolute addressing, skip branches).
inline constexpr uint8_t kZeroReg = 15;

// Division gadget: computes (secret - t) and divides by it; divide-by-zero
// marks t == secret. Dividend constants follow the published gadgets
// (9 for Meltdown, 32 for Spectre/Zombieload).
GadgetProgram build_v1(AttackKind attack, uint64_t secret_addr, uint8_t guess_reg,
                       const AttackLayout& layout = AttackLayout::standard());

// Data-moving gadget: loads the secret, shifts by 12 and touches
// probe_base + secret*4096; the harness flushes probe line t per guess.
GadgetProgram build_v2(AttackKind attack, uint64_t secret_addr, uint8_t guess_reg,
                       uint64_t probe_base,
                       const AttackLayout& layout = AttackLayout::standard());

// Straight-line category probe, one category exercise per run; control flow
// is identical for all operand values.
//   ADDITION/SUBTRACTION: operands {a, b}
//   MULTIPLICATION:       operands {a, factor}
//   DIVISION:             operands {dividend, divisor}
//   DATA_MOVING:          operands {access_index} (byte offset access_index*4096)
GadgetProgram build_category_probe(Category category, const std::vector<uint64_t>& operands,
                                   const AttackLayout& layout = AttackLayout::standard());

}  // namespace pmusim
