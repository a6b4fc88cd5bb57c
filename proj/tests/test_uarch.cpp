#include <doctest.h>

#include <map>
#include <random>
#include <sstream>

#include "pmusim/uarch.hpp"

using namespace pmusim;

namespace {

GadgetProgram single_access(uint64_t addr) {
  GadgetProgram p;
  p.reg_init[8] = addr;
  p.code = {{Opcode::MACCESS, {MemOperand{.base = 8}}}};
  return p;
}

std::map<Signal, uint64_t> histogram(const SignalTrace& t) {
  std::map<Signal, uint64_t> h;
  for (const auto& row : t.rows)
    for (const auto& s : row) h[s.kind]++;
  return h;
}

bool same_trace(const SignalTrace& a, const SignalTrace& b) {
  if (a.rows.size() != b.rows.size()) return false;
  for (size_t c = 0; c < a.rows.size(); ++c) {
    std::map<int, int> ha, hb;
    for (const auto& s : a.rows[c]) ha[int(s.kind) * 4 + s.ctx]++;
    for (const auto& s : b.rows[c]) hb[int(s.kind) * 4 + s.ctx]++;
    if (ha != hb) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("uncached access emits the full miss chain") {
  // hand-stepped oracle for a single load dispatched at cycle 0
  Simulator sim;
  const auto& cfg = sim.config();
  auto out = sim.run(single_access(0x9000000), TransientCause::NONE);
  auto h = histogram(out.trace);

  CHECK(h[Signal::L1D_MISS] == 2);  // demand + DCU next-line lookup
  CHECK(h[Signal::L2_REF] == 2);    // demand + MSHR replay
  CHECK(h[Signal::L2_MISS] == 1);
  CHECK(h[Signal::L3_REF] == 1 + cfg.prefetch_degree);
  CHECK(h[Signal::L3_MISS] == 1 + cfg.prefetch_degree);
  CHECK(h[Signal::OFFCORE_RD] == 1);
  CHECK(h[Signal::L2_LINE_IN] == 1 + cfg.prefetch_degree);
  CHECK(h[Signal::PF_MISS] == cfg.prefetch_degree);
  CHECK(h[Signal::PF_HIT] == 1);
  // pend intervals truncate at the horizon
  CHECK(h[Signal::LFB_PEND] == cfg.horizon_cycles);
  CHECK(h[Signal::OFFCORE_PEND] == cfg.horizon_cycles - (cfg.l2_latency + 1));
  // one uop executes at cycle 0, the miss is outstanding for the rest
  CHECK(h[Signal::EXEC_STALL] == cfg.horizon_cycles - 1);
  CHECK(h[Signal::UOP_EXEC] == 1);
}

TEST_CASE("flush then access misses, other lines unaffected") {
  Simulator sim;
  uint64_t a = 0x50000000 + 0x41 * kPageSize;
  uint64_t b = 0x50000000 + 0x42 * kPageSize;
  sim.prime(a);
  sim.prime(b);

  SUBCASE("same line misses through every level") {
    sim.flush(a);
    CHECK_FALSE(sim.cached_anywhere(a));
    auto h = histogram(sim.run(single_access(a), TransientCause::NONE).trace);
    CHECK(h[Signal::L1D_MISS] >= 1);
    CHECK(h[Signal::L2_MISS] == 1);
    CHECK(h[Signal::L3_MISS] >= 1);
  }

  SUBCASE("different cached line leaves normal traces") {
    sim.flush(a);
    auto h = histogram(sim.run(single_access(b), TransientCause::NONE).trace);
    CHECK(h[Signal::L1D_MISS] == 0);
    CHECK(h[Signal::L2_MISS] == 0);
    CHECK(h[Signal::L3_MISS] == 0);
  }

  SUBCASE("flush of an absent line is idempotent") {
    sim.flush(a);
    sim.flush(a);
    CHECK_FALSE(sim.cached_anywhere(a));
    CHECK(sim.cached_anywhere(b));
  }
}

TEST_CASE("L2-resident access hits L2 with pend cycles at L2 latency") {
  Simulator sim;
  uint64_t a = 0x1234000;
  sim.prime(a, PRIME_L2);
  auto h = histogram(sim.run(single_access(a), TransientCause::NONE).trace);
  CHECK(h[Signal::L1D_MISS] == 1);
  CHECK(h[Signal::L2_REF] == 1);
  CHECK(h[Signal::L2_HIT] == 1);
  CHECK(h[Signal::L2_MISS] == 0);
  CHECK(h[Signal::LFB_PEND] == sim.config().l2_latency);
}

TEST_CASE("divider busy count per executed div") {
  Simulator sim;
  GadgetProgram p;
  p.code = {
      {Opcode::MOV_IMM, {ImmOperand{5}, RegOperand{0}}},
      {Opcode::MOV_IMM, {ImmOperand{2}, RegOperand{1}}},
      {Opcode::DIV, {RegOperand{1}}},
  };
  auto out = sim.run(p, TransientCause::NONE);
  CHECK(out.trace.count(Signal::DIVIDER_BUSY) == sim.config().divider_latency);
  CHECK(out.final_state.regs[0] == 2);
  CHECK(out.final_state.regs[3] == 1);

  // suppressed divide: zero busy cycles
  GadgetProgram z = p;
  z.code[1] = {Opcode::MOV_IMM, {ImmOperand{0}, RegOperand{1}}};
  RunOptions ro;
  ro.absorb_faults = true;
  auto out2 = sim.run(z, TransientCause::NONE, 0, ro);
  CHECK(out2.trace.count(Signal::DIVIDER_BUSY) == 0);
  CHECK(out2.fault == FaultKind::DivideByZero);
}

TEST_CASE("architectural fault without absorb is an error") {
  Simulator sim;
  GadgetProgram p;
  p.code = {
      {Opcode::MOV_IMM, {ImmOperand{5}, RegOperand{0}}},
      {Opcode::MOV_IMM, {ImmOperand{0}, RegOperand{1}}},
      {Opcode::DIV, {RegOperand{1}}},
  };
  CHECK_THROWS_AS(sim.run(p, TransientCause::NONE), SimError);
  try {
    sim.run(p, TransientCause::NONE);
  } catch (const SimError& e) {
    CHECK(e.code() == Errc::UnhandledFault);
  }
}

TEST_CASE("exception window squashes architectural effects") {
  Simulator sim;
  uint64_t secret = 0x40000000;
  sim.plant_byte(secret, 0x5A);
  sim.tag_kernel_page(secret);
  sim.prime(secret);

  GadgetProgram p;
  p.attack = AttackKind::MELTDOWN;
  p.reg_init[4] = secret;
  p.reg_init[1] = 77;
  p.code = {
      {Opcode::MOV_LOAD, {MemOperand{.base = 4}, RegOperand{1}}},  // faults
      {Opcode::MOV_IMM, {ImmOperand{99}, RegOperand{2}}},
  };
  auto out = sim.run(p, TransientCause::EXCEPTION);
  CHECK(out.squashed);
  CHECK(out.trace.window_opened);
  CHECK(out.fault == FaultKind::PermissionViolation);
  // architectural state identical to the pre-window snapshot
  CHECK(out.final_state.regs[1] == 77);
  CHECK(out.final_state.regs[2] == 0);
  CHECK(out.final_state == out.pre_window);
  // but the transient work really executed
  CHECK(out.trace.executed.size() == 2);
  // suppression overhead included
  CHECK(out.cycles >= sim.config().signal_cost);

  RunOptions tsx;
  tsx.mode = SuppressionMode::TSX_MODEL;
  auto out_tsx = sim.run(p, TransientCause::EXCEPTION, 0, tsx);
  CHECK(out_tsx.cycles < out.cycles);
}

TEST_CASE("transient stores are squashed from memory") {
  Simulator sim;
  uint64_t secret = 0x40000000;
  sim.plant_byte(secret, 1);
  sim.tag_kernel_page(secret);
  sim.prime(secret);
  sim.plant_byte(0x2000, 0xAA);

  GadgetProgram p;
  p.attack = AttackKind::MELTDOWN;
  p.reg_init[4] = secret;
  p.reg_init[5] = 0x2000;
  p.reg_init[6] = 0x17;
  p.code = {
      {Opcode::MOV_LOAD, {MemOperand{.base = 4}, RegOperand{1}}},  // window
      {Opcode::MOV_STORE, {RegOperand{6}, MemOperand{.base = 5}}},
  };
  auto out = sim.run(p, TransientCause::EXCEPTION);
  CHECK(out.squashed);
  CHECK(out.final_state.peek(0x2000) == 0xAA);
  CHECK(sim.peek_byte(0x2000) == 0xAA);
}

TEST_CASE("train_branch steers the misprediction window") {
  auto mk = [](uint64_t x, uint64_t size) {
    GadgetProgram p;
    p.attack = AttackKind::SPECTRE_PHT;
    p.reg_init[5] = x;
    p.reg_init[6] = size;
    p.reg_init[1] = 77;
    Instruction jl_body{Opcode::JL, {}};
    jl_body.target = 4;
    Instruction jl_end{Opcode::JL, {}};
    jl_end.target = 5;
    p.code = {
        {Opcode::CMP, {RegOperand{5}, RegOperand{6}}},
        jl_body,
        {Opcode::CMP, {RegOperand{15}, ImmOperand{2}}},
        jl_end,
        {Opcode::XOR, {RegOperand{1}, RegOperand{1}}},  // body
    };
    return p;
  };

  SUBCASE("trained taken, out of bounds: window opens, body runs transiently") {
    Simulator sim;
    sim.train_branch(true);
    auto out = sim.run(mk(20, 16), TransientCause::MISPREDICTION);
    CHECK(out.trace.window_opened);
    CHECK(out.squashed);
    CHECK(out.final_state.regs[1] == 77);  // body effect rolled back
    bool body_ran = false;
    for (auto op : out.trace.executed)
      if (op == Opcode::XOR) body_ran = true;
    CHECK(body_ran);
  }

  SUBCASE("trained not-taken, out of bounds: no window") {
    Simulator sim;
    sim.train_branch(false);
    auto out = sim.run(mk(20, 16), TransientCause::MISPREDICTION);
    CHECK_FALSE(out.trace.window_opened);
    CHECK(out.final_state.regs[1] == 77);
    for (auto op : out.trace.executed) CHECK(op != Opcode::XOR);
  }

  SUBCASE("trained taken, in bounds: architectural body, no squash") {
    Simulator sim;
    sim.train_branch(true);
    auto out = sim.run(mk(5, 16), TransientCause::MISPREDICTION);
    CHECK_FALSE(out.squashed);
    CHECK(out.final_state.regs[1] == 0);  // body retired
  }
}

TEST_CASE("assist run requires a staged LFB entry") {
  Simulator sim;
  sim.tag_kernel_page(0);
  GadgetProgram p = single_access(0);
  p.attack = AttackKind::ZOMBIELOAD;
  CHECK_THROWS_AS(sim.run(p, TransientCause::ASSIST), SimError);
  try {
    sim.run(p, TransientCause::ASSIST);
  } catch (const SimError& e) {
    CHECK(e.code() == Errc::Unstaged);
  }
}

TEST_CASE("lfb forwards the newest matching entry to in-window loads") {
  Simulator sim;
  sim.tag_kernel_page(0);
  sim.prime(0);
  uint64_t target = 0x3000;

  std::array<uint8_t, kLineSize> first{};
  first[0] = 0x11;
  std::array<uint8_t, kLineSize> second{};
  second[0] = 0x5A;
  sim.lfb_stage(first, target);
  sim.lfb_stage(second, target);  // newest wins
  sim.flush(target);

  GadgetProgram p;
  p.attack = AttackKind::ZOMBIELOAD;
  p.reg_init[8] = 0;
  p.reg_init[9] = target;
  p.reg_init[12] = 0x8000;
  p.code = {
      {Opcode::MACCESS, {MemOperand{.base = 8}}},                  // trigger
      {Opcode::MOV_LOAD, {MemOperand{.base = 9}, RegOperand{1}}},  // forwarded
      {Opcode::MOV_STORE, {RegOperand{1}, MemOperand{.base = 12}}},
  };
  auto out = sim.run(p, TransientCause::ASSIST);
  CHECK(out.squashed);
  // forwarded value visible only through the in-window store's squash test:
  // run again and observe via the trace that no memory fetch happened
  CHECK(out.trace.count(Signal::L3_MISS) == 0);
  CHECK(out.final_state.peek(0x8000) == 0);  // squash kept memory clean
}

TEST_CASE("window respects the micro-op budget") {
  UarchConfig cfg;
  cfg.window_uops = 16;
  Simulator sim(cfg);
  uint64_t secret = 0x40000000;
  sim.tag_kernel_page(secret);
  sim.prime(secret);

  GadgetProgram p;
  p.attack = AttackKind::MELTDOWN;
  p.reg_init[4] = secret;
  p.code = {{Opcode::MOV_LOAD, {MemOperand{.base = 4}, RegOperand{1}}}};
  for (int i = 0; i < 40; ++i)
    p.code.push_back({Opcode::ADD, {ImmOperand{1}, RegOperand{2}}});
  auto out = sim.run(p, TransientCause::EXCEPTION);
  CHECK(out.squashed);
  CHECK(out.window_uops <= cfg.window_uops);
  CHECK(out.trace.executed.size() <= 1 + cfg.window_uops);
}

TEST_CASE("identical run sequences yield identical traces") {
  auto do_runs = [] {
    Simulator sim;
    sim.plant_byte(0x7000, 3);
    sim.prime(0x7000, PRIME_L2);
    std::vector<SignalTrace> traces;
    for (int i = 0; i < 3; ++i) {
      auto out = sim.run(single_access(0x7000 + 64 * i), TransientCause::NONE);
      traces.push_back(out.trace);
    }
    return traces;
  };
  auto a = do_runs(), b = do_runs();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(same_trace(a[i], b[i]));
}

TEST_CASE("cache inclusion holds under random prime/flush/access") {
  UarchConfig cfg;
  cfg.l1 = {2, 4};
  cfg.l2 = {4, 8};
  cfg.l3 = {8, 16};
  Simulator sim(cfg);
  std::mt19937_64 rng(42);
  for (int step = 0; step < 2000; ++step) {
    uint64_t addr = (rng() % 64) * kLineSize;
    switch (rng() % 3) {
      case 0: sim.prime(addr, rng() % 2 ? PRIME_ALL : PRIME_L2); break;
      case 1: sim.flush(addr); break;
      case 2: sim.run(single_access(addr), TransientCause::NONE); break;
    }
    for (uint64_t line : sim.level(1).lines()) {
      CHECK(sim.level(2).contains(line));
      CHECK(sim.level(3).contains(line));
    }
    for (uint64_t line : sim.level(2).lines()) CHECK(sim.level(3).contains(line));
  }
}

TEST_CASE("set-associative eviction picks the set-local LRU") {
  CacheLevel cache(CacheGeometry{2, 2});
  // lines 0,2,4 all map to set 0
  CHECK_FALSE(cache.install(0, false).has_value());
  CHECK_FALSE(cache.install(2, false).has_value());
  CHECK_FALSE(cache.install(1, false).has_value());  // set 1
  cache.lookup(0);                                   // 0 becomes MRU
  auto ev = cache.install(4, true);
  REQUIRE(ev.has_value());
  CHECK(ev->line == 2);
  CHECK_FALSE(ev->dirty);
  CHECK(cache.contains(0));
  CHECK(cache.contains(4));
  CHECK(cache.contains(1));
}

TEST_CASE("config parses, serializes and validates") {
  UarchConfig cfg;
  cfg.l2_latency = 14;
  cfg.tsx_cost = 500;
  std::ostringstream os;
  cfg.write(os);
  std::istringstream is(os.str());
  auto back = UarchConfig::parse(is);
  CHECK(back.l2_latency == 14);
  CHECK(back.tsx_cost == 500);

  std::istringstream bad("l1_latency = 50\n");  // >= l2: not monotone
  CHECK_THROWS_AS(UarchConfig::parse(bad), SimError);
  std::istringstream unknown("no_such_key = 1\n");
  CHECK_THROWS_AS(UarchConfig::parse(unknown), SimError);
}

TEST_CASE("signals carry their logical context id") {
  Simulator sim;
  GadgetProgram p;
  p.code = {
      {Opcode::MOV_IMM, {ImmOperand{6}, RegOperand{0}}},
      {Opcode::MOV_IMM, {ImmOperand{3}, RegOperand{1}}},
      {Opcode::DIV, {RegOperand{1}}},
  };
  auto out = sim.run(p, TransientCause::NONE, /*ctx=*/1);
  CHECK(out.trace.count(Signal::DIVIDER_BUSY, 1) == sim.config().divider_latency);
  CHECK(out.trace.count(Signal::DIVIDER_BUSY, 0) == 0);
}
