#include "pmusim/report.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include <json.hpp>

namespace pmusim {

namespace {

std::string fmt(const char* f, auto... args) {
  char buf[256];
  snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string fixed6(double v) { return fmt("%.6f", v); }

nlohmann::json report_to_json(const AttackReport& r) {
  return {
      {"variant", gadget_kind_name(r.variant)},
      {"attack", attack_name(r.attack)},
      {"event", r.event_name},
      {"code", fmt("0x%02X", r.event_code)},
      {"umask", fmt("0x%02X", r.umask)},
      {"suppression", suppression_name(r.suppression_mode)},
      {"method", decode_method_name(r.method)},
      {"recovered_hex", hex_string(r.recovered)},
      {"truth_hex", hex_string(r.truth)},
      {"error_rate", r.error_rate},
      {"cycles", r.simulated_cycles},
      {"throughput_bps", r.throughput_bps},
  };
}

}  // namespace

std::string hex_string(const std::vector<uint8_t>& bytes) {
  std::string out;
  out.reserve(bytes.size() * 2);
  for (uint8_t b : bytes) out += fmt("%02x", b);
  return out;
}

std::vector<uint8_t> parse_hex(const std::string& hex) {
  if (hex.size() % 2)
    throw SimError(Errc::BadConfig, "hex string needs an even number of digits");
  std::vector<uint8_t> out;
  for (size_t i = 0; i < hex.size(); i += 2) {
    auto nyb = [&](char c) -> int {
      if (c >= '0' && c <= '9') return c - '0';
      if (c >= 'a' && c <= 'f') return c - 'a' + 10;
      if (c >= 'A' && c <= 'F') return c - 'A' + 10;
      throw SimError(Errc::BadConfig, std::string("bad hex digit '") + c + "'");
    };
    out.push_back(static_cast<uint8_t>(nyb(hex[i]) * 16 + nyb(hex[i + 1])));
  }
  return out;
}

std::string attack_csv(const std::vector<AttackReport>& reports) {
  std::ostringstream os;
  os << "variant,attack,event,code,umask,suppression,method,secret_len,"
        "recovered_hex,truth_hex,error_rate,cycles,throughput_bps\n";
  for (const auto& r : reports) {
    os << gadget_kind_name(r.variant) << ',' << attack_name(r.attack) << ','
       << r.event_name << ',' << fmt("0x%02X", r.event_code) << ','
       << fmt("0x%02X", r.umask) << ',' << suppression_name(r.suppression_mode) << ','
       << decode_method_name(r.method) << ',' << r.truth.size() << ','
       << hex_string(r.recovered) << ',' << hex_string(r.truth) << ','
       << fixed6(r.error_rate) << ',' << r.simulated_cycles << ','
       << fixed6(r.throughput_bps) << '\n';
  }
  return os.str();
}

std::string attack_json(const std::vector<AttackReport>& reports) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : reports) arr.push_back(report_to_json(r));
  return arr.dump(2) + "\n";
}

std::string attack_table(const std::vector<AttackReport>& reports) {
  std::ostringstream os;
  size_t name_w = 5;
  for (const auto& r : reports) name_w = std::max(name_w, r.event_name.size());
  os << fmt("%-*s  %-5s  %-5s  %-10s  %-7s  %12s  %8s\n", int(name_w), "event", "code",
            "umask", "attack", "suppr", "T(B/s)", "E(%)");
  for (const auto& r : reports) {
    os << fmt("%-*s  0x%02X  0x%02X  %-10s  %-7s  %12.2f  %8.2f\n", int(name_w),
              r.event_name.c_str(), r.event_code, r.umask, attack_name(r.attack),
              suppression_name(r.suppression_mode), r.throughput_bps,
              r.error_rate * 100.0);
  }
  return os.str();
}

namespace {
std::string cell_str(const ScanCell& c) {
  switch (c.state) {
    case CellState::LEAKS: return std::string("LEAKS:") + decode_method_name(c.method);
    case CellState::FLAT: return "FLAT";
    case CellState::UNAVAILABLE: return "UNAVAILABLE";
  }
  return "?";
}
}  // namespace

std::string scan_csv(const ScanMatrix& matrix, const Catalog& catalog) {
  std::ostringstream os;
  os << "row";
  for (const auto& e : catalog.events()) os << ',' << e.name;
  os << '\n';
  for (size_t r = 0; r < matrix.rows.size(); ++r) {
    os << matrix.rows[r].label();
    for (size_t c = 0; c < catalog.size(); ++c) os << ',' << cell_str(matrix.at(r, c));
    os << '\n';
  }
  return os.str();
}

std::string scan_json(const ScanMatrix& matrix, const Catalog& catalog) {
  nlohmann::json rows = nlohmann::json::array();
  for (size_t r = 0; r < matrix.rows.size(); ++r) {
    nlohmann::json cells = nlohmann::json::object();
    for (size_t c = 0; c < catalog.size(); ++c)
      cells[catalog.at(c).name] = cell_str(matrix.at(r, c));
    rows.push_back({{"row", matrix.rows[r].label()},
                    {"leaks", matrix.leak_count(r)},
                    {"cells", cells}});
  }
  return rows.dump(2) + "\n";
}

std::string scan_table(const ScanMatrix& matrix, const Catalog& catalog) {
  // events down, rows across: mirrors the published table's shape
  std::ostringstream os;
  size_t name_w = 5;
  for (const auto& e : catalog.events()) name_w = std::max(name_w, e.name.size());
  os << fmt("%-*s  %-5s", int(name_w), "event", "umask");
  for (const auto& row : matrix.rows) os << fmt("  %-22s", row.label().c_str());
  os << '\n';
  for (size_t c = 0; c < catalog.size(); ++c) {
    const auto& e = catalog.at(c);
    os << fmt("%-*s  0x%02X ", int(name_w), e.name.c_str(), e.umask);
    for (size_t r = 0; r < matrix.rows.size(); ++r) {
      const auto& cell = matrix.at(r, c);
      const char* s = cell.state == CellState::LEAKS        ? "leak"
                      : cell.state == CellState::UNAVAILABLE ? "-"
                                                             : "flat";
      os << fmt("  %-22s", s);
    }
    os << '\n';
  }
  return os.str();
}

std::string covert_csv(const ChannelReport& report, const ChannelConfig& cfg) {
  size_t wrong = 0;
  for (size_t i = 0; i < report.sent.size(); ++i) {
    uint8_t diff = report.sent[i] ^ report.received[i];
    wrong += __builtin_popcount(diff);
  }
  std::ostringstream os;
  os << "mode,code,umask,any_thread,payload_bytes,bit_errors,ber,cycles,throughput_bps\n"
     << channel_mode_name(cfg.mode) << ',' << fmt("0x%02X", cfg.event_code) << ','
     << fmt("0x%02X", cfg.umask) << ',' << (cfg.any_thread ? 1 : 0) << ','
     << report.sent.size() << ',' << wrong << ',' << fixed6(report.bit_error_rate) << ','
     << report.simulated_cycles << ',' << fixed6(report.throughput_bps) << '\n';
  return os.str();
}

std::string covert_json(const ChannelReport& report, const ChannelConfig& cfg) {
  nlohmann::json j = {
      {"mode", channel_mode_name(cfg.mode)},
      {"code", fmt("0x%02X", cfg.event_code)},
      {"umask", fmt("0x%02X", cfg.umask)},
      {"any_thread", cfg.any_thread},
      {"payload_bytes", report.sent.size()},
      {"sent_hex", hex_string(report.sent)},
      {"received_hex", hex_string(report.received)},
      {"ber", report.bit_error_rate},
      {"cycles", report.simulated_cycles},
      {"throughput_bps", report.throughput_bps},
  };
  return j.dump(2) + "\n";
}

}  // namespace pmusim
