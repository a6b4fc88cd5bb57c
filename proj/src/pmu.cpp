#include "pmusim/pmu.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace pmusim {

std::optional<uint8_t> avail_bit_by_name(std::string_view name) {
  if (name == "M_TSX") return AVAIL_M_TSX;
  if (name == "M_SIG") return AVAIL_M_SIG;
  if (name == "Z_TSX") return AVAIL_Z_TSX;
  if (name == "Z_SIG") return AVAIL_Z_SIG;
  if (name == "S_SIG") return AVAIL_S_SIG;
  return std::nullopt;
}

std::string avail_to_string(uint8_t mask) {
  std::string out;
  auto add = [&](uint8_t bit, const char* n) {
    if (mask & bit) {
      if (!out.empty()) out += '|';
      out += n;
    }
  };
  add(AVAIL_M_TSX, "M_TSX");
  add(AVAIL_M_SIG, "M_SIG");
  add(AVAIL_Z_TSX, "Z_TSX");
  add(AVAIL_Z_SIG, "Z_SIG");
  add(AVAIL_S_SIG, "S_SIG");
  if (out.empty()) out = "-";
  return out;
}

uint64_t SignalExpr::eval(const SignalTrace& trace, std::optional<uint8_t> ctx_filter) const {
  uint64_t total = 0;
  for (const auto& t : terms) {
    if (t.kind == ExprTerm::COUNT)
      total += ctx_filter ? trace.count(t.signal, *ctx_filter) : trace.count(t.signal);
    else
      total += ctx_filter ? trace.cycles_with(t.signal, *ctx_filter)
                          : trace.cycles_with(t.signal);
  }
  return total;
}

bool SignalExpr::uses(Signal s) const {
  return std::any_of(terms.begin(), terms.end(),
                     [&](const ExprTerm& t) { return t.signal == s; });
}

std::string SignalExpr::to_string() const {
  std::string out;
  for (const auto& t : terms) {
    if (!out.empty()) out += '+';
    out += t.kind == ExprTerm::COUNT ? "COUNT(" : "CYCLES_WITH(";
    out += signal_name(t.signal);
    out += ')';
  }
  return out;
}

SignalExpr SignalExpr::parse(std::string_view text) {
  SignalExpr expr;
  size_t pos = 0;
  while (pos < text.size()) {
    size_t plus = text.find('+', pos);
    std::string_view term = text.substr(pos, plus == std::string_view::npos ? std::string_view::npos
                                                                            : plus - pos);
    size_t open = term.find('(');
    size_t close = term.rfind(')');
    if (open == std::string_view::npos || close == std::string_view::npos || close < open)
      throw SimError(Errc::BadConfig, "malformed expression term: " + std::string(term));
    std::string_view fn = term.substr(0, open);
    std::string_view sig = term.substr(open + 1, close - open - 1);
    ExprTerm t;
    if (fn == "COUNT") t.kind = ExprTerm::COUNT;
    else if (fn == "CYCLES_WITH") t.kind = ExprTerm::CYCLES_WITH;
    else throw SimError(Errc::BadConfig, "unknown aggregate: " + std::string(fn));
    auto s = signal_by_name(sig);
    if (!s) throw SimError(Errc::UnknownSignal, std::string(sig));
    t.signal = *s;
    expr.terms.push_back(t);
    if (plus == std::string_view::npos) break;
    pos = plus + 1;
  }
  if (expr.terms.empty()) throw SimError(Errc::BadConfig, "empty expression");
  return expr;
}

bool PmuEventDesc::available(AttackKind attack, SuppressionMode mode) const {
  switch (attack) {
    case AttackKind::MELTDOWN:
      return avail & (mode == SuppressionMode::TSX_MODEL ? AVAIL_M_TSX : AVAIL_M_SIG);
    case AttackKind::ZOMBIELOAD:
      return avail & (mode == SuppressionMode::TSX_MODEL ? AVAIL_Z_TSX : AVAIL_Z_SIG);
    case AttackKind::SPECTRE_PHT:
      return mode == SuppressionMode::SIGNAL_MODEL && (avail & AVAIL_S_SIG);
    case AttackKind::NONE:
      return true;  // architectural probe runs are never gated
  }
  return false;
}

// The shipped event table: 40 events, (code, umask) pairs as documented for
// the modeled client core. Availability flags encode which measured columns
// each event can serve.
const char* Catalog::builtin_text() {
  return R"(# PMU event catalog
# event <name> code=<hex> umask=<hex> expr=<signal expression> avail=<flags|->
event ARITH.DIVIDER_ACTIVE code=0x14 umask=0x01 expr=CYCLES_WITH(DIVIDER_BUSY) avail=M_TSX|Z_TSX|Z_SIG|S_SIG
event L2_RQSTS.DEMAND_DATA_RD_MISS code=0x24 umask=0x21 expr=COUNT(L2_MISS) avail=M_TSX|M_SIG|S_SIG
event L2_RQSTS.ALL_DEMAND_MISS code=0x24 umask=0x27 expr=COUNT(L2_MISS) avail=M_TSX|M_SIG|S_SIG
event L2_RQSTS.PF_MISS code=0x24 umask=0x38 expr=COUNT(PF_MISS) avail=M_TSX|M_SIG
event L2_RQSTS.MISS code=0x24 umask=0x3F expr=COUNT(L2_MISS)+COUNT(PF_MISS) avail=M_TSX|M_SIG|S_SIG
event L2_RQSTS.DEMAND_DATA_RD_HIT code=0x24 umask=0xC1 expr=COUNT(L2_HIT) avail=S_SIG
event L2_RQSTS.PF_HIT code=0x24 umask=0xD8 expr=COUNT(PF_HIT) avail=M_TSX|M_SIG|S_SIG
event L2_RQSTS.ALL_DEMAND_DATA_RD code=0x24 umask=0xE1 expr=COUNT(L2_REF) avail=M_TSX|M_SIG|S_SIG
event L2_RQSTS.ALL_DEMAND_REFERENCES code=0x24 umask=0xE7 expr=COUNT(L2_REF) avail=M_TSX|S_SIG
event L2_RQSTS.ALL_PF code=0x24 umask=0xF8 expr=COUNT(PF_HIT)+COUNT(PF_MISS) avail=M_TSX|M_SIG|S_SIG
event L2_RQSTS.REFERENCES code=0x24 umask=0xFF expr=COUNT(L2_REF)+COUNT(PF_HIT)+COUNT(PF_MISS) avail=M_TSX|M_SIG|S_SIG
event LONGEST_LAT_CACHE.MISS code=0x2E umask=0x41 expr=COUNT(L3_MISS) avail=M_TSX|M_SIG|Z_TSX|Z_SIG|S_SIG
event LONGEST_LAT_CACHE.REFERENCE code=0x2E umask=0x4F expr=COUNT(L3_REF) avail=M_TSX|M_SIG|S_SIG
event L1D_PEND_MISS.PENDING code=0x48 umask=0x01 expr=COUNT(LFB_PEND) avail=M_TSX|M_SIG|Z_TSX|Z_SIG|S_SIG
event L1D.REPLACEMENT code=0x51 umask=0x01 expr=COUNT(L1D_MISS) avail=M_TSX|M_SIG|S_SIG
event RS_EVENTS.EMPTY_CYCLES code=0x5E umask=0x01 expr=CYCLES_WITH(RS_EMPTY) avail=S_SIG
event OFFCORE_REQUESTS_OUTSTANDING.DEMAND_DATA_RD code=0x60 umask=0x01 expr=CYCLES_WITH(OFFCORE_PEND) avail=M_TSX|M_SIG|Z_TSX|Z_SIG|S_SIG
event OFFCORE_REQUESTS_OUTSTANDING.ALL_DATA_RD code=0x60 umask=0x08 expr=COUNT(OFFCORE_PEND) avail=M_TSX|M_SIG|Z_TSX|Z_SIG|S_SIG
event OFFCORE_REQUESTS_OUTSTANDING.L3_MISS_DEMAND_DATA_RD code=0x60 umask=0x10 expr=CYCLES_WITH(OFFCORE_PEND) avail=M_TSX|M_SIG|Z_TSX|Z_SIG|S_SIG
event UOPS_DISPATCHED_PORT.PORT_0 code=0xA1 umask=0x01 expr=COUNT(PORT0_UOP) avail=S_SIG
event UOPS_DISPATCHED_PORT.PORT_4 code=0xA1 umask=0x10 expr=COUNT(PORT4_UOP) avail=S_SIG
event CYCLE_ACTIVITY.CYCLES_L2_MISS code=0xA3 umask=0x01 expr=CYCLES_WITH(OFFCORE_PEND) avail=M_TSX|M_SIG|Z_TSX|Z_SIG
event CYCLE_ACTIVITY.CYCLES_L3_MISS code=0xA3 umask=0x02 expr=CYCLES_WITH(OFFCORE_PEND) avail=M_TSX|M_SIG|Z_TSX|Z_SIG
event CYCLE_ACTIVITY.STALLS_L2_MISS code=0xA3 umask=0x05 expr=CYCLES_WITH(EXEC_STALL) avail=M_TSX|M_SIG|Z_TSX|Z_SIG
event CYCLE_ACTIVITY.STALLS_L3_MISS code=0xA3 umask=0x06 expr=CYCLES_WITH(EXEC_STALL) avail=M_TSX|M_SIG|Z_TSX|Z_SIG
event CYCLE_ACTIVITY.CYCLES_L1D_MISS code=0xA3 umask=0x08 expr=CYCLES_WITH(LFB_PEND) avail=M_TSX|M_SIG|Z_TSX|Z_SIG|S_SIG
event CYCLE_ACTIVITY.STALLS_L1D_MISS code=0xA3 umask=0x0C expr=CYCLES_WITH(EXEC_STALL) avail=M_TSX|M_SIG|Z_TSX|Z_SIG
event EXE_ACTIVITY.EXE_BOUND_0_PORTS code=0xA6 umask=0x01 expr=CYCLES_WITH(EXEC_STALL) avail=S_SIG
event EXE_ACTIVITY.1_PORTS_UTIL code=0xA6 umask=0x02 expr=CYCLES_WITH(UOP_EXEC) avail=S_SIG
event OFFCORE_REQUESTS.DEMAND_DATA_RD code=0xB0 umask=0x01 expr=COUNT(OFFCORE_RD) avail=M_TSX|M_SIG|S_SIG
event OFFCORE_REQUESTS.ALL_DATA_RD code=0xB0 umask=0x08 expr=COUNT(OFFCORE_RD)+COUNT(PF_MISS) avail=M_TSX|M_SIG|S_SIG
event OFFCORE_REQUESTS.L3_MISS_DEMAND_DATA_RD code=0xB0 umask=0x10 expr=COUNT(OFFCORE_RD) avail=M_TSX|M_SIG|Z_TSX|Z_SIG|S_SIG
event OFFCORE_REQUESTS.ALL_REQUESTS code=0xB0 umask=0x80 expr=COUNT(OFFCORE_RD)+COUNT(PF_MISS)+COUNT(L2_WB) avail=M_TSX|M_SIG|S_SIG
event UOPS_EXECUTED.THREAD code=0xB1 umask=0x01 expr=COUNT(UOP_EXEC) avail=S_SIG
event UOPS_EXECUTED.STALL_CYCLES code=0xB1 umask=0x02 expr=CYCLES_WITH(EXEC_STALL) avail=S_SIG
event L2_TRANS.L2_WB code=0xF0 umask=0x40 expr=COUNT(L2_WB) avail=M_SIG
event L2_LINES_IN.ALL code=0xF1 umask=0x1F expr=COUNT(L2_LINE_IN) avail=M_TSX|M_SIG|S_SIG
event L2_LINES_OUT.SILENT code=0xF2 umask=0x01 expr=COUNT(L2_LINE_OUT_SILENT) avail=M_TSX|M_SIG|S_SIG
event L2_LINES_OUT.NON_SILENT code=0xF2 umask=0x02 expr=COUNT(L2_LINE_OUT_NONSILENT) avail=M_TSX|M_SIG
event L2_LINES_OUT.USELESS_HWPF code=0xF2 umask=0x04 expr=COUNT(PF_MISS) avail=M_TSX
)";
}

Catalog Catalog::builtin() { return parse(builtin_text()); }

Catalog Catalog::load_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw SimError(Errc::BadConfig, "cannot open catalog file " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return parse(os.str());
}

Catalog Catalog::parse(std::string_view text) {
  Catalog cat;
  std::istringstream stream{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(stream, line)) {
    line_no++;
    if (auto pos = line.find('#'); pos != std::string::npos) line.resize(pos);
    std::istringstream is(line);
    std::string kw;
    if (!(is >> kw)) continue;
    if (kw != "event")
      throw SimError(Errc::BadConfig,
                     "line " + std::to_string(line_no) + ": expected 'event', got '" + kw + "'");
    PmuEventDesc ev;
    if (!(is >> ev.name))
      throw SimError(Errc::BadConfig, "line " + std::to_string(line_no) + ": missing event name");
    std::string field;
    bool have_code = false, have_umask = false, have_expr = false;
    while (is >> field) {
      auto eq = field.find('=');
      if (eq == std::string::npos)
        throw SimError(Errc::BadConfig,
                       "line " + std::to_string(line_no) + ": bad field '" + field + "'");
      std::string key = field.substr(0, eq), value = field.substr(eq + 1);
      if (key == "code") {
        ev.event_code = static_cast<uint8_t>(std::stoul(value, nullptr, 0));
        have_code = true;
      } else if (key == "umask") {
        ev.umask = static_cast<uint8_t>(std::stoul(value, nullptr, 0));
        have_umask = true;
      } else if (key == "expr") {
        ev.expr = SignalExpr::parse(value);
        have_expr = true;
      } else if (key == "avail") {
        if (value != "-") {
          size_t pos = 0;
          while (pos <= value.size()) {
            size_t bar = value.find('|', pos);
            std::string flag = value.substr(pos, bar == std::string::npos ? std::string::npos
                                                                          : bar - pos);
            auto bit = avail_bit_by_name(flag);
            if (!bit)
              throw SimError(Errc::BadConfig, "line " + std::to_string(line_no) +
                                                  ": unknown availability flag '" + flag + "'");
            ev.avail |= *bit;
            if (bar == std::string::npos) break;
            pos = bar + 1;
          }
        }
      } else {
        throw SimError(Errc::BadConfig,
                       "line " + std::to_string(line_no) + ": unknown field '" + key + "'");
      }
    }
    if (!have_code || !have_umask || !have_expr)
      throw SimError(Errc::BadConfig,
                     "line " + std::to_string(line_no) + ": event needs code, umask and expr");
    if (cat.find(ev.event_code, ev.umask))
      throw SimError(Errc::DuplicateEvent, ev.name);
    cat.events_.push_back(std::move(ev));
  }
  return cat;
}

const PmuEventDesc* Catalog::find(uint8_t code, uint8_t umask) const {
  for (const auto& e : events_)
    if (e.event_code == code && e.umask == umask) return &e;
  return nullptr;
}

const PmuEventDesc* Catalog::find(std::string_view name) const {
  for (const auto& e : events_)
    if (e.name == name) return &e;
  return nullptr;
}

std::string Catalog::to_text() const {
  std::ostringstream os;
  char buf[16];
  for (const auto& e : events_) {
    snprintf(buf, sizeof buf, "0x%02X", e.event_code);
    os << "event " << e.name << " code=" << buf;
    snprintf(buf, sizeof buf, "0x%02X", e.umask);
    os << " umask=" << buf << " expr=" << e.expr.to_string()
       << " avail=" << avail_to_string(e.avail) << "\n";
  }
  return os.str();
}

// --- counter bank --------------------------------------------------------------

void CounterBank::check_slot(int slot) const {
  if (slot < 0 || slot >= kNumSlots)
    throw SimError(Errc::UnconfiguredSlot, "slot index " + std::to_string(slot));
  if (!slots_[slot].desc)
    throw SimError(Errc::UnconfiguredSlot, "slot " + std::to_string(slot) + " not configured");
}

void CounterBank::configure(int slot, PerfEvtSel sel, uint8_t owner_ctx) {
  if (slot < 0 || slot >= kNumSlots)
    throw SimError(Errc::UnconfiguredSlot, "slot index " + std::to_string(slot));
  const PmuEventDesc* desc = catalog_->find(sel.event_code, sel.umask);
  if (!desc) {
    char buf[32];
    snprintf(buf, sizeof buf, "0x%02X/0x%02X", sel.event_code, sel.umask);
    throw SimError(Errc::UnknownEvent, buf);
  }
  slots_[slot].sel = sel;
  slots_[slot].owner_ctx = owner_ctx;
  slots_[slot].desc = desc;  // counter value deliberately unchanged
}

void CounterBank::reset(int slot) {
  check_slot(slot);
  slots_[slot].counter.reset();
}

uint64_t CounterBank::read(int slot) const {
  check_slot(slot);
  return slots_[slot].counter.value();
}

bool CounterBank::configured(int slot) const {
  return slot >= 0 && slot < kNumSlots && slots_[slot].desc != nullptr;
}

const PmuEventDesc& CounterBank::event_of(int slot) const {
  check_slot(slot);
  return *slots_[slot].desc;
}

const PerfEvtSel& CounterBank::sel_of(int slot) const {
  check_slot(slot);
  return slots_[slot].sel;
}

void CounterBank::accumulate(const SignalTrace& trace) {
  for (auto& slot : slots_) {
    if (!slot.desc || !slot.sel.enabled) continue;
    if (!slot.desc->available(trace.attack, trace.mode)) continue;
    std::optional<uint8_t> filter;
    if (!slot.sel.any_thread) filter = slot.owner_ctx;
    slot.counter.add(slot.desc->expr.eval(trace, filter));
  }
}

}  // namespace pmusim
