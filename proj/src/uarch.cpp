#include "pmusim/uarch.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace pmusim {

namespace {
constexpr uint64_t kNever = std::numeric_limits<uint64_t>::max() / 4;

uint64_t line_of(uint64_t addr) { return addr / kLineSize; }
}  // namespace

const char* signal_name(Signal s) {
  switch (s) {
    case Signal::DIVIDER_BUSY: return "DIVIDER_BUSY";
    case Signal::L1D_MISS: return "L1D_MISS";
    case Signal::L2_REF: return "L2_REF";
    case Signal::L2_HIT: return "L2_HIT";
    case Signal::L2_MISS: return "L2_MISS";
    case Signal::L3_REF: return "L3_REF";
    case Signal::L3_MISS: return "L3_MISS";
    case Signal::LFB_PEND: return "LFB_PEND";
    case Signal::OFFCORE_RD: return "OFFCORE_RD";
    case Signal::OFFCORE_PEND: return "OFFCORE_PEND";
    case Signal::PORT0_UOP: return "PORT0_UOP";
    case Signal::PORT4_UOP: return "PORT4_UOP";
    case Signal::EXEC_STALL: return "EXEC_STALL";
    case Signal::RS_EMPTY: return "RS_EMPTY";
    case Signal::L2_LINE_IN: return "L2_LINE_IN";
    case Signal::L2_LINE_OUT_SILENT: return "L2_LINE_OUT_SILENT";
    case Signal::L2_LINE_OUT_NONSILENT: return "L2_LINE_OUT_NONSILENT";
    case Signal::L2_WB: return "L2_WB";
    case Signal::PF_HIT: return "PF_HIT";
    case Signal::PF_MISS: return "PF_MISS";
    case Signal::UOP_EXEC: return "UOP_EXEC";
  }
  return "?";
}

std::optional<Signal> signal_by_name(std::string_view name) {
  for (int i = 0; i < kNumSignals; ++i) {
    Signal s = static_cast<Signal>(i);
    if (name == signal_name(s)) return s;
  }
  return std::nullopt;
}

const char* cause_name(TransientCause c) {
  switch (c) {
    case TransientCause::NONE: return "none";
    case TransientCause::EXCEPTION: return "exception";
    case TransientCause::MISPREDICTION: return "misprediction";
    case TransientCause::ASSIST: return "assist";
  }
  return "?";
}

const char* suppression_name(SuppressionMode m) {
  return m == SuppressionMode::TSX_MODEL ? "tsx" : "signal";
}

uint64_t SignalTrace::count(Signal s) const {
  uint64_t n = 0;
  for (const auto& row : rows)
    for (const auto& sig : row)
      if (sig.kind == s) n++;
  return n;
}

uint64_t SignalTrace::count(Signal s, uint8_t ctx) const {
  uint64_t n = 0;
  for (const auto& row : rows)
    for (const auto& sig : row)
      if (sig.kind == s && sig.ctx == ctx) n++;
  return n;
}

uint64_t SignalTrace::cycles_with(Signal s) const {
  uint64_t n = 0;
  for (const auto& row : rows)
    n += std::any_of(row.begin(), row.end(),
                     [&](const TracedSignal& t) { return t.kind == s; });
  return n;
}

uint64_t SignalTrace::cycles_with(Signal s, uint8_t ctx) const {
  uint64_t n = 0;
  for (const auto& row : rows)
    n += std::any_of(row.begin(), row.end(), [&](const TracedSignal& t) {
      return t.kind == s && t.ctx == ctx;
    });
  return n;
}

// --- config ------------------------------------------------------------------

void UarchConfig::validate() const {
  auto fail = [](const std::string& m) { throw SimError(Errc::BadConfig, m); };
  if (!(l1_latency < l2_latency && l2_latency < l3_latency && l3_latency < mem_latency))
    fail("latencies must strictly increase by level");
  if (window_uops < 16) fail("window_uops must cover the built-in gadgets (>= 16)");
  if (horizon_cycles <= l3_latency)
    fail("horizon_cycles must exceed the L3 hit latency");
  for (auto g : {l1, l2, l3}) {
    if (g.sets == 0 || (g.sets & (g.sets - 1)) != 0) fail("cache sets must be a power of two");
    if (g.ways == 0) fail("cache ways must be positive");
  }
  if (divider_latency == 0) fail("divider_latency must be positive");
  if (prefetch_degree == 0) fail("prefetch_degree must be positive");
}

bool UarchConfig::set_field(const std::string& key, const std::string& value) {
  auto u32 = [&] { return static_cast<uint32_t>(std::stoull(value)); };
  auto u64v = [&] { return std::stoull(value); };
  if (key == "l1_sets") l1.sets = u32();
  else if (key == "l1_ways") l1.ways = u32();
  else if (key == "l2_sets") l2.sets = u32();
  else if (key == "l2_ways") l2.ways = u32();
  else if (key == "l3_sets") l3.sets = u32();
  else if (key == "l3_ways") l3.ways = u32();
  else if (key == "l1_latency") l1_latency = u32();
  else if (key == "l2_latency") l2_latency = u32();
  else if (key == "l3_latency") l3_latency = u32();
  else if (key == "mem_latency") mem_latency = u32();
  else if (key == "divider_latency") divider_latency = u32();
  else if (key == "window_uops") window_uops = u32();
  else if (key == "horizon_cycles") horizon_cycles = u32();
  else if (key == "prefetch_degree") prefetch_degree = u32();
  else if (key == "tsx_cost") tsx_cost = u64v();
  else if (key == "signal_cost") signal_cost = u64v();
  else return false;
  return true;
}

UarchConfig UarchConfig::parse(std::istream& in) {
  UarchConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    line_no++;
    if (auto pos = line.find('#'); pos != std::string::npos) line.resize(pos);
    std::istringstream is(line);
    std::string key, eq, value;
    if (!(is >> key)) continue;
    if (!(is >> eq >> value) || eq != "=")
      throw SimError(Errc::BadConfig, "line " + std::to_string(line_no) + ": expected key = value");
    if (!cfg.set_field(key, value))
      throw SimError(Errc::BadConfig, "line " + std::to_string(line_no) + ": unknown key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

UarchConfig UarchConfig::parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw SimError(Errc::BadConfig, "cannot open config file " + path);
  return parse(f);
}

void UarchConfig::write(std::ostream& out) const {
  out << "l1_sets = " << l1.sets << "\nl1_ways = " << l1.ways
      << "\nl2_sets = " << l2.sets << "\nl2_ways = " << l2.ways
      << "\nl3_sets = " << l3.sets << "\nl3_ways = " << l3.ways
      << "\nl1_latency = " << l1_latency << "\nl2_latency = " << l2_latency
      << "\nl3_latency = " << l3_latency << "\nmem_latency = " << mem_latency
      << "\ndivider_latency = " << divider_latency
      << "\nwindow_uops = " << window_uops
      << "\nhorizon_cycles = " << horizon_cycles
      << "\nprefetch_degree = " << prefetch_degree
      << "\ntsx_cost = " << tsx_cost << "\nsignal_cost = " << signal_cost << "\n";
}

// --- cache -------------------------------------------------------------------

bool CacheLevel::contains(uint64_t line) const {
  const auto& set = set_of(line);
  return std::any_of(set.begin(), set.end(), [&](const Line& l) { return l.line == line; });
}

bool CacheLevel::lookup(uint64_t line) {
  auto& set = set_of(line);
  for (auto it = set.begin(); it != set.end(); ++it) {
    if (it->line == line) {
      Line l = *it;
      set.erase(it);
      set.push_front(l);
      return true;
    }
  }
  return false;
}

std::optional<CacheLevel::Evicted> CacheLevel::install(uint64_t line, bool dirty) {
  auto& set = set_of(line);
  for (auto it = set.begin(); it != set.end(); ++it) {
    if (it->line == line) {  // refresh in place
      it->dirty = it->dirty || dirty;
      Line l = *it;
      set.erase(it);
      set.push_front(l);
      return std::nullopt;
    }
  }
  std::optional<Evicted> ev;
  if (set.size() >= geom_.ways) {
    ev = Evicted{set.back().line, set.back().dirty};
    set.pop_back();
  }
  set.push_front(Line{line, dirty});
  return ev;
}

bool CacheLevel::remove(uint64_t line) {
  auto& set = set_of(line);
  for (auto it = set.begin(); it != set.end(); ++it) {
    if (it->line == line) {
      set.erase(it);
      return true;
    }
  }
  return false;
}

bool CacheLevel::mark_dirty(uint64_t line) {
  auto& set = set_of(line);
  for (auto& l : set)
    if (l.line == line) {
      l.dirty = true;
      return true;
    }
  return false;
}

void CacheLevel::clear() {
  sets_.assign(geom_.sets, {});
}

size_t CacheLevel::occupancy() const {
  size_t n = 0;
  for (const auto& s : sets_) n += s.size();
  return n;
}

std::vector<uint64_t> CacheLevel::lines() const {
  std::vector<uint64_t> out;
  for (const auto& s : sets_)
    for (const auto& l : s) out.push_back(l.line);
  return out;
}

// --- simulator ---------------------------------------------------------------

Simulator::Simulator(UarchConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  l1_ = CacheLevel(cfg_.l1);
  l2_ = CacheLevel(cfg_.l2);
  l3_ = CacheLevel(cfg_.l3);
  l1_.clear();
  l2_.clear();
  l3_.clear();
}

void Simulator::prime(uint64_t addr, uint8_t levels, bool dirty) {
  uint64_t line = line_of(addr);
  // inclusive hierarchy: priming an inner level implies the outer ones
  if (levels & PRIME_L1) levels |= PRIME_L2;
  if (levels & PRIME_L2) levels |= PRIME_L3;
  if (levels & PRIME_L3) {
    if (auto ev = l3_.install(line, dirty)) {  // silent back-invalidation
      l2_.remove(ev->line);
      l1_.remove(ev->line);
    }
  }
  if (levels & PRIME_L2) {
    if (auto ev = l2_.install(line, dirty)) l1_.remove(ev->line);
  }
  if (levels & PRIME_L1) l1_.install(line, dirty);
}

void Simulator::flush(uint64_t addr) {
  uint64_t line = line_of(addr);
  l1_.remove(line);
  l2_.remove(line);
  l3_.remove(line);
}

bool Simulator::cached_anywhere(uint64_t addr) const {
  return l3_.contains(line_of(addr));  // inclusion: L3 superset
}

bool Simulator::cached_at(int level, uint64_t addr) const {
  uint64_t line = line_of(addr);
  switch (level) {
    case 1: return l1_.contains(line);
    case 2: return l2_.contains(line);
    case 3: return l3_.contains(line);
  }
  return false;
}

void Simulator::lfb_stage(const std::array<uint8_t, kLineSize>& data, uint64_t line_addr) {
  lfb_.push_front(LfbEntry{line_of(line_addr), data, true});
  if (lfb_.size() > kLfbEntries) lfb_.pop_back();
}

void Simulator::lfb_clear() { lfb_.clear(); }

bool Simulator::lfb_has_valid() const {
  return std::any_of(lfb_.begin(), lfb_.end(), [](const LfbEntry& e) { return e.valid; });
}

void Simulator::reset_uarch() {
  l1_.clear();
  l2_.clear();
  l3_.clear();
  lfb_.clear();
  trained_.reset();
}

// Collects raw (cycle, signal) emissions plus pend/RS intervals; the trace is
// materialized once the horizon is known.
struct Simulator::Emitter {
  struct Event {
    uint64_t cycle;
    Signal kind;
  };
  struct Interval {
    uint64_t begin, end;
    Signal kind;
  };
  std::vector<Event> events;
  std::vector<Interval> intervals;       // LFB_PEND / OFFCORE_PEND
  std::vector<std::pair<uint64_t, uint64_t>> rs_busy;       // [enter_rs, dispatch)
  std::vector<std::pair<uint64_t, uint64_t>> outstanding;   // demand misses
  std::vector<uint64_t> exec_cycles;     // cycles with a UOP_EXEC

  void emit(uint64_t cycle, Signal s) { events.push_back({cycle, s}); }
  void pend(uint64_t b, uint64_t e, Signal s) {
    if (e > b) intervals.push_back({b, e, s});
  }
};

Simulator::MemAccessResult Simulator::cache_access(uint64_t addr, uint64_t at,
                                                   uint8_t /*ctx*/, Emitter& em) {
  uint64_t line = line_of(addr);
  MemAccessResult res{cfg_.l1_latency, false, false, 0};

  if (l1_.lookup(line)) return res;

  res.l1_miss = true;
  em.emit(at, Signal::L1D_MISS);
  uint64_t l2_at = at + cfg_.l1_latency;
  em.emit(l2_at, Signal::L2_REF);

  if (l2_.lookup(line)) {
    em.emit(l2_at, Signal::L2_HIT);
    res.latency = cfg_.l2_latency;
    l1_.install(line, false);
    return res;
  }

  em.emit(l2_at, Signal::L2_MISS);
  em.emit(l2_at + 2, Signal::L2_REF);  // MSHR replay of the demand request
  uint64_t l3_at = at + cfg_.l2_latency;
  em.emit(l3_at, Signal::L3_REF);

  if (l3_.lookup(line)) {
    res.latency = cfg_.l3_latency;
    install_l2(line, l3_at, 0, em);
    l1_.install(line, false);
    return res;
  }

  em.emit(l3_at, Signal::L3_MISS);
  uint64_t off_at = l3_at + 1;
  em.emit(off_at, Signal::OFFCORE_RD);
  res.l3_miss = true;
  res.offcore_at = static_cast<uint32_t>(off_at - at);
  res.latency = cfg_.mem_latency;

  // allocate-on-miss: the fill is claimed at miss time, so line state and
  // eviction traffic land inside the observation window even for deep misses
  install_l3(line);
  install_l2(line, off_at, 0, em);
  l1_.install(line, false);

  // L2 streamer: fetch the next lines, then re-reference the stream head
  uint64_t pf_at = off_at + 1;
  for (uint32_t d = 1; d <= cfg_.prefetch_degree; ++d) {
    uint64_t next = line + d;
    if (l2_.contains(next)) {
      em.emit(pf_at + d, Signal::PF_HIT);
    } else {
      em.emit(pf_at + d, Signal::PF_MISS);
      install_l3(next);
      em.emit(pf_at + d, Signal::L3_REF);
      em.emit(pf_at + d, Signal::L3_MISS);
      install_l2(next, pf_at + d, 0, em);
    }
  }
  em.emit(pf_at + cfg_.prefetch_degree + 1, Signal::PF_HIT);

  // DCU next-line prefetch: one extra L1 lookup+replacement on a deep miss
  em.emit(pf_at, Signal::L1D_MISS);
  l1_.install(line + 1, false);
  return res;
}

void Simulator::install_l3(uint64_t line) {
  if (auto ev = l3_.install(line, false)) {  // inclusion: back-invalidate
    l2_.remove(ev->line);
    l1_.remove(ev->line);
  }
}

void Simulator::install_l2(uint64_t line, uint64_t at, uint8_t /*ctx*/, Emitter& em) {
  em.emit(at, Signal::L2_LINE_IN);
  if (auto ev = l2_.install(line, false)) {
    l1_.remove(ev->line);  // inclusion
    if (ev->dirty) {
      em.emit(at, Signal::L2_LINE_OUT_NONSILENT);
      em.emit(at, Signal::L2_WB);
    } else {
      em.emit(at, Signal::L2_LINE_OUT_SILENT);
    }
  }
}

ExecutionOutcome Simulator::run(const GadgetProgram& prog, TransientCause cause,
                                uint8_t ctx, RunOptions opts) {
  if (cause == TransientCause::ASSIST && !lfb_has_valid())
    throw SimError(Errc::Unstaged, "ASSIST run requires a staged LFB entry");

  ExecutionOutcome out;
  Emitter em;

  ArchState st = mem_;  // persistent memory + page tags
  st.regs = prog.reg_init;
  st.flags = Flags{};

  std::array<uint64_t, kNumRegs> reg_ready{};
  uint64_t flags_ready = 0;
  uint64_t divider_free = 0;
  uint64_t next_issue = 0;
  uint64_t last_complete = 0;

  enum class Phase { Arch, Transient } phase = Phase::Arch;
  ArchState snapshot;
  uint64_t window_open = 0;
  uint64_t squash_at = kNever;
  uint32_t transient_uops = 0;
  bool budget_exhausted = false;
  bool first_jl_pending = (cause == TransientCause::MISPREDICTION);
  std::optional<uint32_t> arch_resume_pc;
  bool fault_absorbed = false;
  FaultKind absorbed_kind = FaultKind::None;

  auto src_ready = [&](const Instruction& in) -> uint64_t {
    uint64_t r = 0;
    auto consider = [&](const Operand& op) {
      if (auto* reg = std::get_if<RegOperand>(&op)) r = std::max(r, reg_ready[reg->id]);
      if (auto* m = std::get_if<MemOperand>(&op)) {
        r = std::max(r, reg_ready[m->base]);
        if (m->index) r = std::max(r, reg_ready[*m->index]);
      }
    };
    // pure-write destinations are not sources
    size_t nsrc = in.operands.size();
    if ((in.opcode == Opcode::MOV_IMM || in.opcode == Opcode::MOV_LOAD) && nsrc == 2)
      nsrc = 1;
    for (size_t i = 0; i < nsrc; ++i) consider(in.operands[i]);
    if (in.opcode == Opcode::JL) r = std::max(r, flags_ready);
    if (in.opcode == Opcode::DIV) r = std::max(r, reg_ready[0]);  // implicit dividend
    return r;
  };

  auto open_window = [&](uint64_t at) {
    snapshot = st;
    window_open = at;
    squash_at = at + cfg_.horizon_cycles;
    phase = Phase::Transient;
    transient_uops = 0;
    out.trace.window_opened = true;
  };

  uint32_t pc = 0;
  const uint32_t n = static_cast<uint32_t>(prog.code.size());
  while (pc < n) {
    const Instruction& in = prog.code[pc];
    uint64_t issue_c = next_issue++;
    uint64_t dispatch = std::max(issue_c, src_ready(in));
    if (in.opcode == Opcode::DIV) dispatch = std::max(dispatch, divider_free);

    if (phase == Phase::Transient) {
      transient_uops++;
      if (transient_uops > cfg_.window_uops) {
        budget_exhausted = true;
        break;
      }
      if (dispatch >= squash_at) {
        // squashed before it could dispatch: no signals, no effects; record
        // the RS occupancy of the doomed micro-op and move on
        em.rs_busy.emplace_back(issue_c, squash_at);
        pc++;
        continue;
      }
    }
    em.rs_busy.emplace_back(issue_c, dispatch);

    auto exec_uop = [&](uint64_t at) {
      em.emit(at, Signal::UOP_EXEC);
      em.exec_cycles.push_back(at);
      out.trace.executed.push_back(in.opcode);
    };

    switch (in.opcode) {
      case Opcode::MOV_LOAD:
      case Opcode::MACCESS: {
        const auto& m = std::get<MemOperand>(in.operands[0]);
        uint64_t addr = effective_addr(st, m);
        bool faulting = st.perm_at(addr) == PagePerm::Kernel;

        if (faulting && phase == Phase::Arch) {
          if (cause == TransientCause::EXCEPTION || cause == TransientCause::ASSIST) {
            open_window(dispatch);
            // the trigger retires nothing but transiently forwards data
          } else {
            if (!opts.absorb_faults)
              throw SimError(Errc::UnhandledFault,
                             std::string("PermissionViolation at instruction ") +
                                 std::to_string(pc));
            fault_absorbed = true;
            absorbed_kind = FaultKind::PermissionViolation;
            exec_uop(dispatch);
            last_complete = std::max(last_complete, dispatch + 1);
            pc = n;  // handler unwinds past the gadget
            continue;
          }
        } else if (faulting && phase == Phase::Transient) {
          // nested transient fault: the micro-op is cancelled quietly
          out.fault = FaultKind::PermissionViolation;
          if (in.opcode == Opcode::MOV_LOAD)
            reg_ready[std::get<RegOperand>(in.operands[1]).id] = kNever;
          pc++;
          continue;
        }

        exec_uop(dispatch);
        uint64_t data = 0;
        uint64_t complete;
        bool forwarded = false;
        if (phase == Phase::Transient && cause == TransientCause::ASSIST) {
          uint64_t line = line_of(addr);
          for (const auto& e : lfb_) {
            if (e.valid && e.line == line) {  // newest staged entry wins
              data = e.data[addr % kLineSize];
              forwarded = true;
              break;
            }
          }
        }
        if (forwarded) {
          complete = dispatch + cfg_.l1_latency;
        } else {
          auto res = cache_access(addr, dispatch, ctx, em);
          complete = dispatch + res.latency;
          if (res.l1_miss) {
            em.pend(dispatch, complete, Signal::LFB_PEND);
            em.outstanding.emplace_back(dispatch, complete);
          }
          if (res.l3_miss)
            em.pend(dispatch + res.offcore_at, complete, Signal::OFFCORE_PEND);
          data = st.peek(addr);
        }
        if (faulting) out.fault = FaultKind::PermissionViolation;
        if (in.opcode == Opcode::MOV_LOAD) {
          uint8_t dst = std::get<RegOperand>(in.operands[1]).id;
          st.regs[dst] = data & 0xFF;  // byte load, zero-extended
          reg_ready[dst] = complete;
        }
        last_complete = std::max(last_complete, complete);
        break;
      }

      case Opcode::MOV_STORE: {
        const auto& m = std::get<MemOperand>(in.operands[1]);
        uint64_t addr = effective_addr(st, m);
        if (st.perm_at(addr) == PagePerm::Kernel && phase == Phase::Transient) {
          out.fault = FaultKind::PermissionViolation;
          pc++;
          continue;
        }
        auto rr = retire(st, in);
        if (rr.fault != FaultKind::None) {
          if (!opts.absorb_faults)
            throw SimError(Errc::UnhandledFault, "store fault");
          fault_absorbed = true;
          absorbed_kind = rr.fault;
          pc = n;
          continue;
        }
        st = rr.state;
        exec_uop(dispatch);
        em.emit(dispatch, Signal::PORT0_UOP);  // address generation
        em.emit(dispatch, Signal::PORT4_UOP);  // store data
        uint64_t line = line_of(addr);
        l1_.mark_dirty(line);
        l2_.mark_dirty(line);
        last_complete = std::max(last_complete, dispatch + 1);
        break;
      }

      case Opcode::DIV: {
        uint64_t divisor = st.regs[std::get<RegOperand>(in.operands[0]).id];
        exec_uop(dispatch);  // the uop always issues to the divider
        if (divisor == 0) {
          // zero detected up front: the divide unit never spins
          if (phase == Phase::Arch) {
            if (!opts.absorb_faults)
              throw SimError(Errc::UnhandledFault, "DivideByZero at instruction " +
                                                       std::to_string(pc));
            fault_absorbed = true;
            absorbed_kind = FaultKind::DivideByZero;
            last_complete = std::max(last_complete, dispatch + 1);
            pc = n;
            continue;
          }
          out.fault = FaultKind::DivideByZero;
          reg_ready[0] = kNever;
          reg_ready[3] = kNever;
          pc++;
          continue;
        }
        for (uint32_t c = 0; c < cfg_.divider_latency; ++c)
          em.emit(dispatch + c, Signal::DIVIDER_BUSY);
        divider_free = dispatch + cfg_.divider_latency;
        uint64_t complete = dispatch + cfg_.divider_latency;
        st = retire(st, in).state;
        reg_ready[0] = complete;
        reg_ready[3] = complete;
        flags_ready = complete;
        last_complete = std::max(last_complete, complete);
        break;
      }

      case Opcode::JL: {
        bool actual = st.flags.overflow;  // unsigned below
        exec_uop(dispatch);
        last_complete = std::max(last_complete, dispatch + 1);
        if (phase == Phase::Arch && first_jl_pending) {
          first_jl_pending = false;
          bool predicted = trained_.value_or(actual);
          if (predicted != actual) {
            open_window(dispatch);
            arch_resume_pc = actual ? in.target : pc + 1;
            pc = predicted ? in.target : pc + 1;
            continue;
          }
        }
        pc = actual ? in.target : pc + 1;
        continue;
      }

      case Opcode::FLUSH: {
        const auto& m = std::get<MemOperand>(in.operands[0]);
        flush(effective_addr(st, m));
        exec_uop(dispatch);
        last_complete = std::max(last_complete, dispatch + 1);
        break;
      }

      case Opcode::MUL: {
        // constant-factor multiplies decay to shift/add sequences: latency
        // only, never an event
        uint64_t f = std::holds_alternative<RegOperand>(in.operands[0])
                         ? st.regs[std::get<RegOperand>(in.operands[0]).id]
                         : std::get<ImmOperand>(in.operands[0]).value;
        uint32_t lat = (f == 0 || (f & (f - 1)) == 0) ? 1 : 3;
        exec_uop(dispatch);
        st = retire(st, in).state;
        uint64_t complete = dispatch + lat;
        reg_ready[std::get<RegOperand>(in.operands[1]).id] = complete;
        flags_ready = complete;
        last_complete = std::max(last_complete, complete);
        break;
      }

      case Opcode::MOV_IMM:
      case Opcode::XOR:
      case Opcode::ADD:
      case Opcode::SUB:
      case Opcode::SHL:
      case Opcode::CMP:
      case Opcode::NOP: {
        exec_uop(dispatch);
        st = retire(st, in).state;
        uint64_t complete = dispatch + 1;
        if (in.opcode != Opcode::NOP && in.opcode != Opcode::CMP) {
          uint8_t dst = std::get<RegOperand>(in.operands[1]).id;
          reg_ready[dst] = complete;
        }
        if (in.opcode != Opcode::NOP && in.opcode != Opcode::MOV_IMM)
          flags_ready = complete;
        last_complete = std::max(last_complete, complete);
        break;
      }
    }
    pc++;
  }

  // resolve the run
  uint64_t sim_cycles;
  if (phase == Phase::Transient) {
    out.squashed = true;
    out.window_uops = transient_uops - (budget_exhausted ? 1 : 0);
    out.pre_window = snapshot;
    st = snapshot;
    if (cause == TransientCause::MISPREDICTION && arch_resume_pc) {
      // correct path retires after the squash; too late for the horizon
      uint32_t rpc = *arch_resume_pc;
      while (rpc < n) {
        const Instruction& in = prog.code[rpc];
        if (in.opcode == Opcode::JL) {
          rpc = st.flags.overflow ? in.target : rpc + 1;
          out.trace.executed.push_back(in.opcode);
          continue;
        }
        auto rr = retire(st, in);
        if (rr.fault != FaultKind::None) {
          if (!opts.absorb_faults) throw SimError(Errc::UnhandledFault, "fault on resume path");
          fault_absorbed = true;
          absorbed_kind = rr.fault;
          break;
        }
        st = rr.state;
        out.trace.executed.push_back(in.opcode);
        rpc++;
      }
    }
    sim_cycles = squash_at;
    if (cause != TransientCause::MISPREDICTION)
      sim_cycles += cfg_.suppression_cost(opts.mode);
  } else {
    out.pre_window = st;
    sim_cycles = std::max(last_complete, uint64_t(1));
    if (fault_absorbed) {
      out.fault = absorbed_kind;
      sim_cycles += cfg_.suppression_cost(opts.mode);
    }
  }

  // materialize the trace over [0, anchor + horizon)
  uint64_t anchor = out.trace.window_opened ? window_open : 0;
  uint64_t trace_end = anchor + cfg_.horizon_cycles;
  auto& rows = out.trace.rows;
  rows.assign(trace_end, {});
  for (const auto& ev : em.events)
    if (ev.cycle < trace_end) rows[ev.cycle].push_back({ev.kind, ctx});
  for (const auto& iv : em.intervals)
    for (uint64_t c = iv.begin; c < std::min(iv.end, trace_end); ++c)
      rows[c].push_back({iv.kind, ctx});

  std::vector<uint8_t> execed(trace_end, 0), busy(trace_end, 0), outst(trace_end, 0);
  for (uint64_t c : em.exec_cycles)
    if (c < trace_end) execed[c] = 1;
  for (auto [b, e] : em.rs_busy)
    for (uint64_t c = b; c < std::min(e, trace_end); ++c) busy[c] = 1;
  for (auto [b, e] : em.outstanding)
    for (uint64_t c = b; c < std::min(e, trace_end); ++c) outst[c] = 1;
  for (uint64_t c = 0; c < trace_end; ++c) {
    if (!busy[c]) rows[c].push_back({Signal::RS_EMPTY, ctx});
    if (!execed[c] && outst[c]) rows[c].push_back({Signal::EXEC_STALL, ctx});
  }

  out.trace.attack = prog.attack;
  out.trace.mode = opts.mode;
  out.cycles = std::max(sim_cycles, trace_end);

  // commit architectural results to persistent memory
  mem_.mem = st.mem;
  out.final_state = std::move(st);
  if (!out.squashed) out.pre_window = out.final_state;
  return out;
}

}  // namespace pmusim
