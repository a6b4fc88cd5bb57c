#pragma once

#include <string>
#include <vector>

#include "pmusim/attack.hpp"
#include "pmusim/covert.hpp"
#include "pmusim/scanner.hpp"

namespace pmusim {

// CSV / JSON emission. Formats are stable: identical inputs produce
// byte-identical text.
//
// attack CSV header:
//   variant,attack,event,code,umask,suppression,method,secret_len,
//   recovered_hex,truth_hex,error_rate,cycles,throughput_bps
// scan CSV header: row,<event name>,... with LEAKS:<method>/FLAT/UNAVAILABLE
// covert CSV header:
//   mode,event,any_thread,payload_bytes,bit_errors,ber,cycles,throughput_bps

std::string hex_string(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> parse_hex(const std::string& hex);  // throws BadConfig

std::string attack_csv(const std::vector<AttackReport>& reports);
std::string attack_json(const std::vector<AttackReport>& reports);
// aligned table, one row per report: event umask T E columns per attack
std::string attack_table(const std::vector<AttackReport>& reports);

std::string scan_csv(const ScanMatrix& matrix, const Catalog& catalog);
std::string scan_json(const ScanMatrix& matrix, const Catalog& catalog);
std::string scan_table(const ScanMatrix& matrix, const Catalog& catalog);

std::string covert_csv(const ChannelReport& report, const ChannelConfig& cfg);
std::string covert_json(const ChannelReport& report, const ChannelConfig& cfg);

}  // namespace pmusim
