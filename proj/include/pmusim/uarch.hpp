#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "pmusim/isa.hpp"

namespace pmusim {

// Microarchitectural signals observable by PMU events. Per-cycle multiset,
// each occurrence tagged with the originating logical context.
enum class Signal : uint8_t {
  DIVIDER_BUSY,
  L1D_MISS,
  L2_REF,
  L2_HIT,
  L2_MISS,
  L3_REF,
  L3_MISS,
  LFB_PEND,
  OFFCORE_RD,
  OFFCORE_PEND,
  PORT0_UOP,
  PORT4_UOP,
  EXEC_STALL,
  RS_EMPTY,
  L2_LINE_IN,
  L2_LINE_OUT_SILENT,
  L2_LINE_OUT_NONSILENT,
  L2_WB,
  PF_HIT,
  PF_MISS,
  UOP_EXEC,
};

inline constexpr int kNumSignals = 21;

const char* signal_name(Signal s);
std::optional<Signal> signal_by_name(std::string_view name);

enum class TransientCause : uint8_t { NONE, EXCEPTION, MISPREDICTION, ASSIST };
enum class SuppressionMode : uint8_t { TSX_MODEL, SIGNAL_MODEL };

const char* cause_name(TransientCause c);
const char* suppression_name(SuppressionMode m);

struct TracedSignal {
  Signal kind;
  uint8_t ctx;
};

// Per-cycle record of signals from one simulated run, plus the run context
// the PMU needs for availability gating.
struct SignalTrace {
  std::vector<std::vector<TracedSignal>> rows;
  AttackKind attack = AttackKind::NONE;
  SuppressionMode mode = SuppressionMode::SIGNAL_MODEL;
  bool window_opened = false;

  // opcodes actually executed, in order (control-flow invariance checks)
  std::vector<Opcode> executed;

  size_t num_cycles() const { return rows.size(); }

  uint64_t count(Signal s) const;
  uint64_t count(Signal s, uint8_t ctx) const;
  uint64_t cycles_with(Signal s) const;
  uint64_t cycles_with(Signal s, uint8_t ctx) const;
};

struct CacheGeometry {
  uint32_t sets = 1;
  uint32_t ways = 64;
};

struct UarchConfig {
  CacheGeometry l1{1, 64};
  CacheGeometry l2{1, 512};
  CacheGeometry l3{1, 8192};
  uint32_t l1_latency = 4;
  uint32_t l2_latency = 12;
  uint32_t l3_latency = 40;
  uint32_t mem_latency = 200;
  uint32_t divider_latency = 10;
  uint32_t window_uops = 64;     // transient window budget, in micro-ops
  uint32_t horizon_cycles = 128; // squash / counter-read horizon
  uint32_t prefetch_degree = 2;
  uint64_t tsx_cost = 1000;      // suppression overhead per attempt
  uint64_t signal_cost = 8000;

  void validate() const;  // throws SimError(BadConfig)
  uint64_t suppression_cost(SuppressionMode m) const {
    return m == SuppressionMode::TSX_MODEL ? tsx_cost : signal_cost;
  }

  // key = value serialization, '#' comments
  static UarchConfig parse(std::istream& in);
  static UarchConfig parse_file(const std::string& path);
  void write(std::ostream& out) const;
  bool set_field(const std::string& key, const std::string& value);
};

// Set-associative LRU cache level. Lines are identified by line number
// (address / 64). Default geometry is single-set.
class CacheLevel {
 public:
  CacheLevel() = default;
  CacheLevel(CacheGeometry geom) : geom_(geom), sets_(geom.sets) {}

  struct Evicted {
    uint64_t line;
    bool dirty;
  };

  bool contains(uint64_t line) const;
  bool lookup(uint64_t line);                    // touches LRU on hit
  std::optional<Evicted> install(uint64_t line, bool dirty);
  bool remove(uint64_t line);
  bool mark_dirty(uint64_t line);
  void clear();
  size_t occupancy() const;
  uint32_t capacity() const { return geom_.sets * geom_.ways; }
  std::vector<uint64_t> lines() const;

 private:
  struct Line {
    uint64_t line;
    bool dirty;
  };
  CacheGeometry geom_;
  // per set, MRU first
  std::vector<std::deque<Line>> sets_ = std::vector<std::deque<Line>>(1);

  std::deque<Line>& set_of(uint64_t line) { return sets_[line % geom_.sets]; }
  const std::deque<Line>& set_of(uint64_t line) const { return sets_[line % geom_.sets]; }
};

struct LfbEntry {
  uint64_t line = 0;
  std::array<uint8_t, kLineSize> data{};
  bool valid = false;
};

inline constexpr size_t kLfbEntries = 10;

enum : uint8_t { PRIME_L1 = 1, PRIME_L2 = 2, PRIME_L3 = 4, PRIME_ALL = 7 };

struct ExecutionOutcome {
  ArchState final_state;      // pre-window state if squashed
  ArchState pre_window;       // snapshot at window open (== final for squashed runs)
  SignalTrace trace;
  uint64_t cycles = 0;        // total simulated cycles incl. suppression overhead
  bool squashed = false;
  FaultKind fault = FaultKind::None;  // suppressed/absorbed fault, if any
  uint32_t window_uops = 0;
};

struct RunOptions {
  SuppressionMode mode = SuppressionMode::SIGNAL_MODEL;
  bool absorb_faults = false;  // architectural faults absorbed signal-handler style
};

// Cycle-stepped execution engine. One instance is single-threaded and fully
// deterministic; memory and page tags persist across runs, cache/LFB/predictor
// state persists until reset_uarch().
class Simulator {
 public:
  explicit Simulator(UarchConfig cfg = {});

  const UarchConfig& config() const { return cfg_; }

  // persistent architectural memory (registers are per-run, from reg_init)
  void plant_byte(uint64_t addr, uint8_t b) { mem_.poke(addr, b); }
  void plant_bytes(uint64_t addr, const std::vector<uint8_t>& b) { mem_.poke_bytes(addr, b); }
  uint8_t peek_byte(uint64_t addr) const { return mem_.peek(addr); }
  void tag_kernel_page(uint64_t addr) { mem_.tag_kernel_page(addr); }

  // harness state setup
  void prime(uint64_t addr, uint8_t levels = PRIME_ALL, bool dirty = false);
  void flush(uint64_t addr);
  bool cached_anywhere(uint64_t addr) const;
  bool cached_at(int level, uint64_t addr) const;  // level 1..3

  size_t l2_occupancy() const { return l2_.occupancy(); }
  const CacheLevel& level(int n) const { return n == 1 ? l1_ : n == 2 ? l2_ : l3_; }

  void lfb_stage(const std::array<uint8_t, kLineSize>& data, uint64_t line_addr);
  void lfb_clear();
  bool lfb_has_valid() const;

  void train_branch(bool taken) { trained_ = taken; }
  void clear_training() { trained_.reset(); }

  void reset_uarch();  // caches, LFB, predictor; memory untouched

  ExecutionOutcome run(const GadgetProgram& prog, TransientCause cause,
                       uint8_t ctx = 0, RunOptions opts = {});

 private:
  struct MemAccessResult {
    uint32_t latency;
    bool l1_miss;
    bool l3_miss;
    uint32_t offcore_at;  // relative to dispatch, valid if l3_miss
  };

  struct Emitter;
  MemAccessResult cache_access(uint64_t addr, uint64_t at, uint8_t ctx, Emitter& em);
  void install_l2(uint64_t line, uint64_t at, uint8_t ctx, Emitter& em);
  void install_l3(uint64_t line);

  UarchConfig cfg_;
  CacheLevel l1_, l2_, l3_;
  std::deque<LfbEntry> lfb_;
  std::optional<bool> trained_;
  ArchState mem_;  // regs/flags unused between runs; mem + page perms persist
};

}  // namespace pmusim
