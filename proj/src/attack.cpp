#include "pmusim/attack.hpp"

#include <algorithm>
#include <random>

namespace pmusim {

const char* decode_method_name(DecodeMethod m) {
  switch (m) {
    case DecodeMethod::MIN_POINT: return "min_point";
    case DecodeMethod::MAX_POINT: return "max_point";
    case DecodeMethod::DROP_BOUNDARY: return "drop_boundary";
    case DecodeMethod::RISE_BOUNDARY: return "rise_boundary";
  }
  return "?";
}

TransientCause cause_of(AttackKind attack) {
  switch (attack) {
    case AttackKind::MELTDOWN: return TransientCause::EXCEPTION;
    case AttackKind::SPECTRE_PHT: return TransientCause::MISPREDICTION;
    case AttackKind::ZOMBIELOAD: return TransientCause::ASSIST;
    case AttackKind::NONE: return TransientCause::NONE;
  }
  return TransientCause::NONE;
}

namespace {

// Primes the L2 to capacity with a deterministic LRU order: three eviction
// pads oldest (clean, dirty, clean), then hot lines, probe lines, filler.
void prime_caches(Simulator& sim, const GadgetProgram& prog, const AttackLayout& layout) {
  sim.prime(layout.pad_base, PRIME_L2);
  sim.prime(layout.pad_base + kPageSize, PRIME_L2, /*dirty=*/true);
  sim.prime(layout.pad_base + 2 * kPageSize, PRIME_L2);

  sim.prime(prog.secret_addr);
  sim.prime(layout.attacker_var_addr);
  sim.prime(layout.temp_addr);
  if (prog.assist_addr) sim.prime(*prog.assist_addr);

  if (prog.probe_base)
    for (int t = 0; t < 256; ++t)
      sim.prime(*prog.probe_base + uint64_t(t) * kPageSize, PRIME_L2);

  size_t cap = sim.config().l2.sets * size_t(sim.config().l2.ways);
  uint64_t junk = layout.junk_base;
  for (size_t i = 0; sim.l2_occupancy() < cap && i < cap; ++i, junk += kPageSize)
    sim.prime(junk, PRIME_L2);
}

}  // namespace

void prepare_guess(Simulator& sim, GadgetProgram& prog, uint8_t guess,
                   const AttackLayout& layout) {
  sim.reset_uarch();
  prime_caches(sim, prog, layout);

  switch (prog.guess_via) {
    case GuessVia::Reg:
      prog.reg_init[prog.guess_reg] = guess;
      break;
    case GuessVia::Mem:
      sim.plant_byte(prog.guess_mem_addr, guess);
      break;
    case GuessVia::FlushIdx:
      sim.flush(*prog.probe_base + uint64_t(guess) * kPageSize);
      break;
    case GuessVia::Operand:
      break;  // probes are rebuilt per guess by the caller
  }

  if (prog.attack == AttackKind::SPECTRE_PHT) sim.train_branch(true);
  if (prog.attack == AttackKind::ZOMBIELOAD) {
    // stale secret sits in the fill buffer; its line is flushed so the
    // in-window load has nothing newer to take
    std::array<uint8_t, kLineSize> stale{};
    stale[*prog.lfb_line % kLineSize] = sim.peek_byte(prog.secret_addr);
    sim.lfb_stage(stale, *prog.lfb_line);
    sim.flush(*prog.lfb_line);
  }
}

ExecutionOutcome run_gadget(Simulator& sim, const GadgetProgram& prog,
                            const MeasureOptions& opts) {
  RunOptions ro;
  ro.mode = opts.mode;
  ro.absorb_faults = prog.attack == AttackKind::NONE;  // probe runs absorb
  return sim.run(prog, cause_of(prog.attack), opts.ctx, ro);
}

MeasurementTrace measure_byte(Simulator& sim, CounterBank& bank, int slot,
                              const GadgetProgram& prog, const PmuEventDesc& event,
                              const MeasureOptions& opts) {
  if (!event.available(prog.attack, opts.mode))
    throw SimError(Errc::EventUnavailable,
                   event.name + " for " + attack_name(prog.attack) + "/" +
                       suppression_name(opts.mode));

  int repeats = opts.repeats > 0 ? opts.repeats : 1;
  MeasurementTrace trace;
  trace.event = &event;
  trace.repeats = repeats;

  GadgetProgram run_prog = prog;
  for (int t = 0; t < 256; ++t) {
    bank.reset(slot);
    prepare_guess(sim, run_prog, static_cast<uint8_t>(t), *opts.layout);
    auto outcome = run_gadget(sim, run_prog, opts);
    bank.accumulate(outcome.trace);
    double value = static_cast<double>(bank.read(slot));
    trace.cycles += outcome.cycles * repeats;  // hardware would rerun per repeat

    if (opts.noise_sigma > 0.0) {
      std::mt19937_64 rng(opts.seed * 0x9E3779B97F4A7C15ull + (uint64_t(t) << 8) + 1);
      std::normal_distribution<double> gauss(0.0, opts.noise_sigma);
      double noisy = 0.0;
      for (int r = 0; r < repeats; ++r) noisy += value + gauss(rng);
      value = noisy / repeats;
    }
    trace.values[t] = value;
  }
  return trace;
}

uint8_t decode(const MeasurementTrace& trace, DecodeMethod method) {
  const auto& v = trace.values;
  bool flat = std::all_of(v.begin(), v.end(), [&](double x) { return x == v[0]; });
  if (flat) throw SimError(Errc::FlatTrace, "all 256 readings equal");

  auto arg_extreme = [&](bool max) {
    int best = 0;
    for (int t = 1; t < 256; ++t)
      if (max ? v[t] > v[best] : v[t] < v[best]) best = t;
    return static_cast<uint8_t>(best);
  };

  switch (method) {
    case DecodeMethod::MIN_POINT: return arg_extreme(false);
    case DecodeMethod::MAX_POINT: return arg_extreme(true);
    case DecodeMethod::DROP_BOUNDARY: {
      int best = 1;
      for (int t = 2; t < 256; ++t)
        if (v[t - 1] - v[t] > v[best - 1] - v[best]) best = t;
      return static_cast<uint8_t>(best);
    }
    case DecodeMethod::RISE_BOUNDARY: {
      int best = 1;
      for (int t = 2; t < 256; ++t)
        if (v[t] - v[t - 1] > v[best] - v[best - 1]) best = t;
      return static_cast<uint8_t>(best);
    }
  }
  throw SimError(Errc::BadConfig, "bad decode method");
}

uint64_t GadgetSpec::secret_addr(size_t byte_index) const {
  switch (attack) {
    case AttackKind::MELTDOWN: return layout->kernel_secret_addr + byte_index;
    case AttackKind::SPECTRE_PHT: return layout->user_secret_addr + byte_index;
    case AttackKind::ZOMBIELOAD: return layout->target_addr;  // via the LFB
    case AttackKind::NONE: break;
  }
  throw SimError(Errc::BadConfig, "category probes have no per-byte secret");
}

GadgetProgram GadgetSpec::build(size_t byte_index) const {
  uint64_t addr = secret_addr(byte_index);
  if (variant == GadgetKind::V1_DIV) return build_v1(attack, addr, kGuessReg, *layout);
  return build_v2(attack, addr, kGuessReg, layout->probe_base, *layout);
}

void GadgetSpec::plant(Simulator& sim, size_t byte_index, uint8_t value) const {
  uint64_t addr = secret_addr(byte_index);
  sim.plant_byte(addr, value);
  if (attack == AttackKind::MELTDOWN) sim.tag_kernel_page(addr);
  if (attack == AttackKind::ZOMBIELOAD) sim.tag_kernel_page(layout->assist_addr);
}

DecodeMethod calibrate(Simulator& sim, CounterBank& bank, int slot, const GadgetSpec& spec,
                       const PmuEventDesc& event, const MeasureOptions& opts) {
  constexpr uint8_t kKnown = 0xA5;
  spec.plant(sim, 0, kKnown);
  GadgetProgram prog = spec.build(0);
  MeasurementTrace trace = measure_byte(sim, bank, slot, prog, event, opts);

  for (DecodeMethod m : {DecodeMethod::MIN_POINT, DecodeMethod::MAX_POINT,
                         DecodeMethod::DROP_BOUNDARY, DecodeMethod::RISE_BOUNDARY}) {
    try {
      if (decode(trace, m) == kKnown) return m;
    } catch (const SimError& e) {
      if (e.code() != Errc::FlatTrace) throw;
      break;  // flat: no method can work
    }
  }
  throw SimError(Errc::NoWorkingMethod, event.name + " does not leak for this gadget");
}

AttackReport run_attack(Simulator& sim, const Catalog& catalog, const AttackConfig& cfg) {
  const PmuEventDesc* event = catalog.find(cfg.event_code, cfg.umask);
  if (!event) {
    char buf[32];
    snprintf(buf, sizeof buf, "0x%02X/0x%02X", cfg.event_code, cfg.umask);
    throw SimError(Errc::UnknownEvent, buf);
  }
  if (!event->available(cfg.attack, cfg.mode))
    throw SimError(Errc::EventUnavailable,
                   event->name + " for " + attack_name(cfg.attack) + "/" +
                       suppression_name(cfg.mode));

  CounterBank bank(catalog);
  bank.configure(0, PerfEvtSel{cfg.event_code, cfg.umask, true, false});

  MeasureOptions opts;
  opts.mode = cfg.mode;
  opts.noise_sigma = cfg.noise_sigma;
  opts.repeats = cfg.repeats > 0 ? cfg.repeats : (cfg.noise_sigma > 0 ? 8 : 1);
  opts.seed = cfg.seed;
  opts.layout = cfg.layout;

  GadgetSpec spec{cfg.variant, cfg.attack, cfg.layout};

  AttackReport report;
  report.truth = cfg.secret;
  report.suppression_mode = cfg.mode;
  report.event_name = event->name;
  report.event_code = cfg.event_code;
  report.umask = cfg.umask;
  report.variant = cfg.variant;
  report.attack = cfg.attack;

  DecodeMethod method;
  if (cfg.method) {
    method = *cfg.method;
  } else {
    MeasureOptions cal = opts;
    cal.noise_sigma = 0.0;  // calibration byte is known; measure it clean
    method = calibrate(sim, bank, 0, spec, *event, cal);
  }
  report.method = method;

  for (size_t i = 0; i < cfg.secret.size(); ++i) {
    spec.plant(sim, i, cfg.secret[i]);
    GadgetProgram prog = spec.build(i);
    MeasureOptions byte_opts = opts;
    byte_opts.seed = cfg.seed + i * 0x10001;
    MeasurementTrace trace = measure_byte(sim, bank, 0, prog, *event, byte_opts);
    report.recovered.push_back(decode(trace, method));
    report.simulated_cycles += trace.cycles;
  }

  size_t wrong = 0;
  for (size_t i = 0; i < cfg.secret.size(); ++i)
    if (report.recovered[i] != cfg.secret[i]) wrong++;
  report.error_rate = cfg.secret.empty() ? 0.0 : double(wrong) / double(cfg.secret.size());
  if (report.simulated_cycles > 0)
    report.throughput_bps =
        double(cfg.secret.size()) / (double(report.simulated_cycles) / kNominalHz);
  return report;
}

}  // namespace pmusim
