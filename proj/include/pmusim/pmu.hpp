#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pmusim/uarch.hpp"

namespace pmusim {

// (attack, suppression mode) columns an event can serve, mirroring the five
// measured columns of the event table: Meltdown and Zombieload each under
// transactional or signal suppression, Spectre under signal only.
enum AvailBit : uint8_t {
  AVAIL_M_TSX = 1 << 0,
  AVAIL_M_SIG = 1 << 1,
  AVAIL_Z_TSX = 1 << 2,
  AVAIL_Z_SIG = 1 << 3,
  AVAIL_S_SIG = 1 << 4,
};

std::optional<uint8_t> avail_bit_by_name(std::string_view name);
std::string avail_to_string(uint8_t mask);

// COUNT(sig) | CYCLES_WITH(sig), summable with '+'.
struct ExprTerm {
  enum Kind : uint8_t { COUNT, CYCLES_WITH } kind;
  Signal signal;
};

struct SignalExpr {
  std::vector<ExprTerm> terms;

  uint64_t eval(const SignalTrace& trace, std::optional<uint8_t> ctx_filter) const;
  std::string to_string() const;
  static SignalExpr parse(std::string_view text);  // throws UnknownSignal/BadConfig
  bool uses(Signal s) const;
};

struct PmuEventDesc {
  std::string name;
  uint8_t event_code = 0;
  uint8_t umask = 0;
  SignalExpr expr;
  uint8_t avail = 0;

  bool available(AttackKind attack, SuppressionMode mode) const;
  bool is_arith() const { return expr.uses(Signal::DIVIDER_BUSY); }
  GadgetKind variant() const { return is_arith() ? GadgetKind::V1_DIV : GadgetKind::V2_MOV; }
};

class Catalog {
 public:
  static Catalog builtin();
  static Catalog parse(std::string_view text);   // throws DuplicateEvent/UnknownSignal
  static Catalog load_file(const std::string& path);
  static const char* builtin_text();

  const std::vector<PmuEventDesc>& events() const { return events_; }
  size_t size() const { return events_.size(); }
  const PmuEventDesc* find(uint8_t code, uint8_t umask) const;
  const PmuEventDesc* find(std::string_view name) const;
  const PmuEventDesc& at(size_t i) const { return events_[i]; }

  std::string to_text() const;

 private:
  std::vector<PmuEventDesc> events_;
};

struct PerfEvtSel {
  uint8_t event_code = 0;
  uint8_t umask = 0;
  bool enabled = true;
  bool any_thread = false;
};

// 48-bit hardware counter: wraps modulo 2^48, resets to zero.
class Counter48 {
 public:
  static constexpr uint64_t kMask = (1ull << 48) - 1;
  void add(uint64_t delta) { value_ = (value_ + delta) & kMask; }
  void reset() { value_ = 0; }
  uint64_t value() const { return value_; }

 private:
  uint64_t value_ = 0;
};

inline constexpr int kNumSlots = 4;

// Four programmable slots. Each armed slot accumulates its event's
// signal-expression over traces, filtered to its owning context unless the
// ANY bit is set. Availability gating: traces tagged with an attack kind the
// event cannot serve contribute nothing.
class CounterBank {
 public:
  explicit CounterBank(const Catalog& catalog) : catalog_(&catalog) {}

  void configure(int slot, PerfEvtSel sel, uint8_t owner_ctx = 0);  // UnknownEvent
  void reset(int slot);
  uint64_t read(int slot) const;  // UnconfiguredSlot
  void accumulate(const SignalTrace& trace);

  bool configured(int slot) const;
  const PmuEventDesc& event_of(int slot) const;
  const PerfEvtSel& sel_of(int slot) const;

 private:
  struct Slot {
    PerfEvtSel sel;
    Counter48 counter;
    uint8_t owner_ctx = 0;
    const PmuEventDesc* desc = nullptr;
  };
  const Catalog* catalog_;
  std::array<Slot, kNumSlots> slots_{};

  void check_slot(int slot) const;
};

}  // namespace pmusim
