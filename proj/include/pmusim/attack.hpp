#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "pmusim/gadgets.hpp"
#include "pmusim/pmu.hpp"
#include "pmusim/uarch.hpp"

namespace pmusim {

enum class DecodeMethod : uint8_t { MIN_POINT, MAX_POINT, DROP_BOUNDARY, RISE_BOUNDARY };

const char* decode_method_name(DecodeMethod m);

// 256 counter readings, one per guess value.
struct MeasurementTrace {
  std::array<double, 256> values{};
  const PmuEventDesc* event = nullptr;
  int repeats = 1;
  uint64_t cycles = 0;  // simulated cycles spent producing it
};

struct MeasureOptions {
  SuppressionMode mode = SuppressionMode::TSX_MODEL;
  double noise_sigma = 0.0;
  int repeats = 1;
  uint64_t seed = 0;
  uint8_t ctx = 0;
  const AttackLayout* layout = &AttackLayout::standard();
};

// Per-guess state preparation: uarch reset, cache priming (eviction pads
// first, then hot lines, probe area and capacity filler), guess planting,
// per-variant flush/stage/train.
void prepare_guess(Simulator& sim, GadgetProgram& prog, uint8_t guess,
                   const AttackLayout& layout);

TransientCause cause_of(AttackKind attack);

// One gadget run under the right transient cause for its attack kind.
ExecutionOutcome run_gadget(Simulator& sim, const GadgetProgram& prog,
                            const MeasureOptions& opts);

// Steps 1-4 for one secret byte: per guess t, reset the counter, prepare
// state, run the gadget in its window, read the counter.
MeasurementTrace measure_byte(Simulator& sim, CounterBank& bank, int slot,
                              const GadgetProgram& prog, const PmuEventDesc& event,
                              const MeasureOptions& opts = {});

// Step 5. MIN/MAX: extremum, lowest index on ties. DROP: largest fall
// values[t-1]-values[t] over t>=1; RISE symmetric. FlatTrace when all 256
// readings are equal.
uint8_t decode(const MeasurementTrace& trace, DecodeMethod method);

// Builds the gadget for one secret byte of the configured variant.
struct GadgetSpec {
  GadgetKind variant = GadgetKind::V1_DIV;
  AttackKind attack = AttackKind::MELTDOWN;
  const AttackLayout* layout = &AttackLayout::standard();

  uint64_t secret_addr(size_t byte_index) const;
  GadgetProgram build(size_t byte_index) const;
  // plants one secret byte where the gadget will look for it
  void plant(Simulator& sim, size_t byte_index, uint8_t value) const;
};

// Finds a decode method that recovers a planted calibration byte, trying
// MIN, MAX, DROP, RISE in that order. NoWorkingMethod if the event does not
// leak for this gadget.
DecodeMethod calibrate(Simulator& sim, CounterBank& bank, int slot, const GadgetSpec& spec,
                       const PmuEventDesc& event, const MeasureOptions& opts = {});

struct AttackConfig {
  GadgetKind variant = GadgetKind::V1_DIV;
  AttackKind attack = AttackKind::MELTDOWN;
  uint8_t event_code = 0x14;
  uint8_t umask = 0x01;
  SuppressionMode mode = SuppressionMode::TSX_MODEL;
  std::vector<uint8_t> secret;  // planted truth
  double noise_sigma = 0.0;
  int repeats = 0;  // 0: default (1 noiseless, 8 under noise)
  uint64_t seed = 1;
  std::optional<DecodeMethod> method;  // unset: calibrate
  const AttackLayout* layout = &AttackLayout::standard();
};

struct AttackReport {
  std::vector<uint8_t> recovered;
  std::vector<uint8_t> truth;
  double error_rate = 0.0;
  uint64_t simulated_cycles = 0;
  double throughput_bps = 0.0;  // bytes per simulated second at 1 GHz
  SuppressionMode suppression_mode = SuppressionMode::TSX_MODEL;
  DecodeMethod method = DecodeMethod::MIN_POINT;
  std::string event_name;
  uint8_t event_code = 0;
  uint8_t umask = 0;
  GadgetKind variant = GadgetKind::V1_DIV;
  AttackKind attack = AttackKind::MELTDOWN;
};

inline constexpr double kNominalHz = 1e9;

// Full pipeline: configure counter, calibrate, then measure+decode every
// secret byte. EventUnavailable if the catalog gates the event off for this
// attack and suppression mode.
AttackReport run_attack(Simulator& sim, const Catalog& catalog, const AttackConfig& cfg);

}  // namespace pmusim
