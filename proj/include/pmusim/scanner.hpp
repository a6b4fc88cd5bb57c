#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pmusim/attack.hpp"

namespace pmusim {

// One scanned gadget row: the five instruction categories plus each attack
// variant under its measured suppression mode.
struct ScanRow {
  enum class Type : uint8_t { CategoryProbe, AttackGadget } type;
  Category category = Category::ADDITION;        // CategoryProbe rows
  GadgetKind variant = GadgetKind::V1_DIV;       // AttackGadget rows
  AttackKind attack = AttackKind::MELTDOWN;
  SuppressionMode mode = SuppressionMode::TSX_MODEL;

  std::string label() const;
};

enum class CellState : uint8_t { LEAKS, FLAT, UNAVAILABLE };

struct ScanCell {
  CellState state = CellState::FLAT;
  DecodeMethod method = DecodeMethod::MIN_POINT;  // valid when LEAKS
};

struct ScanMatrix {
  std::vector<ScanRow> rows;
  std::vector<std::vector<ScanCell>> cells;  // rows x catalog events

  const ScanCell& at(size_t row, size_t col) const { return cells[row][col]; }
  size_t leak_count(size_t row) const;
};

struct ScanOptions {
  SuppressionMode meltdown_mode = SuppressionMode::TSX_MODEL;
  SuppressionMode zombieload_mode = SuppressionMode::TSX_MODEL;
  uint8_t planted = 0xA5;
  bool parallel = true;
  const AttackLayout* layout = &AttackLayout::standard();
};

std::vector<ScanRow> standard_scan_rows(const ScanOptions& opts);

// Plants a known byte behind every row's gadget and classifies each
// (row, event) cell by whether any of the four decode methods recovers it.
// Cells are independent; the parallel path evaluates them on separate
// simulator instances and merges in (row, column) order.
ScanMatrix scan(const Catalog& catalog, const ScanOptions& opts = {});

// Serial reference implementation (kept for testing the parallel kernel).
ScanMatrix scan_serial(const Catalog& catalog, ScanOptions opts = {});

// Evaluates one cell on a fresh simulator; the unit both paths share.
ScanCell scan_cell(const Catalog& catalog, const ScanRow& row, const PmuEventDesc& event,
                   const ScanOptions& opts);

struct Discrepancy {
  size_t row;
  size_t col;
  CellState got;
  bool expected_leak;
  std::string detail;
};

// Compares the empirical matrix against the catalog: an attack-row cell must
// LEAK exactly when the event is available for that attack+mode and belongs
// to the row's variant (the divider event drives v1, the memory events v2).
std::vector<Discrepancy> diff_against_catalog(const ScanMatrix& matrix, const Catalog& catalog);

}  // namespace pmusim
