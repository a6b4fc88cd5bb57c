#include "pmusim/covert.hpp"

#include <random>

namespace pmusim {

const char* channel_mode_name(ChannelMode m) {
  return m == ChannelMode::SAME_CONTEXT ? "same_context" : "smt";
}

ExecutionOutcome transmit_bit(Simulator& sim, bool bit, uint8_t ctx,
                              const AttackLayout& layout) {
  GadgetProgram prog =
      build_category_probe(Category::DIVISION, {32, bit ? 1ull : 0ull}, layout);
  RunOptions ro;
  ro.mode = SuppressionMode::SIGNAL_MODEL;  // divide-by-zero lands in a handler
  ro.absorb_faults = true;
  return sim.run(prog, TransientCause::NONE, ctx, ro);
}

ChannelReport run_channel(Simulator& sim, const Catalog& catalog,
                          const std::vector<uint8_t>& payload, const ChannelConfig& cfg) {
  if (payload.empty()) throw SimError(Errc::EmptyPayload, "covert channel payload");

  CounterBank bank(catalog);
  PerfEvtSel sel{cfg.event_code, cfg.umask, true, cfg.any_thread};
  bank.configure(0, sel, /*owner_ctx=*/0);
  bank.reset(0);

  uint8_t tx_ctx = cfg.mode == ChannelMode::SMT ? 1 : 0;

  ChannelReport report;
  report.sent = payload;
  report.received.assign(payload.size(), 0);

  uint64_t prev = bank.read(0);
  size_t wrong_bits = 0;
  for (size_t i = 0; i < payload.size(); ++i) {
    uint8_t rx_byte = 0;
    for (int b = 7; b >= 0; --b) {  // MSB first
      bool bit = (payload[i] >> b) & 1;
      auto outcome = transmit_bit(sim, bit, tx_ctx, *cfg.layout);
      bank.accumulate(outcome.trace);
      uint64_t now = bank.read(0);
      uint64_t delta = (now - prev) & Counter48::kMask;
      prev = now;
      report.deltas.push_back(delta);

      bool rx = static_cast<double>(delta) >= cfg.threshold;
      rx_byte = static_cast<uint8_t>((rx_byte << 1) | rx);
      if (rx != bit) wrong_bits++;
      report.simulated_cycles += std::max<uint64_t>(outcome.cycles, cfg.bit_period_cycles);
    }
    report.received[i] = rx_byte;
  }

  size_t total_bits = payload.size() * 8;
  report.bit_error_rate = double(wrong_bits) / double(total_bits);
  report.throughput_bps =
      double(payload.size()) / (double(report.simulated_cycles) / kNominalHz);
  return report;
}

std::vector<uint8_t> seeded_payload(size_t bytes, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<uint8_t> out(bytes);
  for (auto& b : out) b = static_cast<uint8_t>(rng());
  return out;
}

}  // namespace pmusim
