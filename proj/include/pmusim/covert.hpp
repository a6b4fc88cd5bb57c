#pragma once

#include <cstdint>
#include <vector>

#include "pmusim/attack.hpp"

namespace pmusim {

enum class ChannelMode : uint8_t { SAME_CONTEXT, SMT };

const char* channel_mode_name(ChannelMode m);

struct ChannelConfig {
  ChannelMode mode = ChannelMode::SAME_CONTEXT;
  uint8_t event_code = 0x14;  // divider-active by default
  uint8_t umask = 0x01;
  uint64_t bit_period_cycles = 16384;  // simulated cycles per symbol
  double threshold = 5.0;              // counter delta separating 0 from 1
  bool any_thread = true;              // receiver slot ANY bit (SMT needs it)
  const AttackLayout* layout = &AttackLayout::standard();
};

struct ChannelReport {
  std::vector<uint8_t> sent;
  std::vector<uint8_t> received;
  double bit_error_rate = 0.0;
  double throughput_bps = 0.0;  // bytes per simulated second
  uint64_t simulated_cycles = 0;
  std::vector<uint64_t> deltas;  // per-bit receiver deltas (diagnostics)
};

// Sends one bit through the divider: 0 divides by zero (no busy cycles),
// 1 divides by a nonzero value (divider_latency busy cycles). Returns the
// transmitter's run outcome for the period.
ExecutionOutcome transmit_bit(Simulator& sim, bool bit, uint8_t ctx,
                              const AttackLayout& layout = AttackLayout::standard());

// Transmits the payload MSB-first per byte; the receiver thresholds
// per-period counter deltas. Both endpoints share one simulator instance as
// two logical contexts in SMT mode.
ChannelReport run_channel(Simulator& sim, const Catalog& catalog,
                          const std::vector<uint8_t>& payload, const ChannelConfig& cfg);

std::vector<uint8_t> seeded_payload(size_t bytes, uint64_t seed);

}  // namespace pmusim
