#include "pmusim/scanner.hpp"

#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace pmusim {

std::string ScanRow::label() const {
  if (type == Type::CategoryProbe) return category_name(category);
  std::ostringstream os;
  os << gadget_kind_name(variant) << "/" << attack_name(attack) << "/"
     << suppression_name(mode);
  return os.str();
}

size_t ScanMatrix::leak_count(size_t row) const {
  size_t n = 0;
  for (const auto& c : cells[row]) n += c.state == CellState::LEAKS;
  return n;
}

std::vector<ScanRow> standard_scan_rows(const ScanOptions& opts) {
  std::vector<ScanRow> rows;
  for (Category c : {Category::ADDITION, Category::SUBTRACTION, Category::DIVISION,
                     Category::MULTIPLICATION, Category::DATA_MOVING})
    rows.push_back({ScanRow::Type::CategoryProbe, c, GadgetKind::V1_DIV,
                    AttackKind::NONE, SuppressionMode::SIGNAL_MODEL});
  for (GadgetKind v : {GadgetKind::V1_DIV, GadgetKind::V2_MOV}) {
    rows.push_back({ScanRow::Type::AttackGadget, Category::ADDITION, v,
                    AttackKind::MELTDOWN, opts.meltdown_mode});
    rows.push_back({ScanRow::Type::AttackGadget, Category::ADDITION, v,
                    AttackKind::SPECTRE_PHT, SuppressionMode::SIGNAL_MODEL});
    rows.push_back({ScanRow::Type::AttackGadget, Category::ADDITION, v,
                    AttackKind::ZOMBIELOAD, opts.zombieload_mode});
  }
  return rows;
}

namespace {

// category rows: measure by sweeping the guessed operand against the planted
// byte, mirroring how the attack variants sweep t
MeasurementTrace measure_category(Simulator& sim, CounterBank& bank, int slot,
                                  Category cat, uint8_t planted, const ScanOptions& opts) {
  MeasurementTrace trace;
  trace.event = &bank.event_of(slot);
  const AttackLayout& layout = *opts.layout;

  for (int t = 0; t < 256; ++t) {
    std::vector<uint64_t> operands;
    switch (cat) {
      case Category::ADDITION:
      case Category::SUBTRACTION:
        operands = {planted, uint64_t(t)};
        break;
      case Category::MULTIPLICATION:
      case Category::DIVISION:
        operands = {planted == 0 ? 5u : planted, uint64_t((planted - t) & 0xFF)};
        break;
      case Category::DATA_MOVING:
        operands = {planted};
        break;
    }
    GadgetProgram prog = build_category_probe(cat, operands, layout);

    bank.reset(slot);
    sim.reset_uarch();
    if (cat == Category::DATA_MOVING) {
      GadgetProgram primer = prog;  // same probe area
      prepare_guess(sim, primer, 0, layout);
      sim.flush(layout.probe_area_addr + uint64_t(t) * kPageSize);
    }
    MeasureOptions mo;
    mo.mode = SuppressionMode::SIGNAL_MODEL;
    auto outcome = run_gadget(sim, prog, mo);
    bank.accumulate(outcome.trace);
    trace.values[t] = static_cast<double>(bank.read(slot));
    trace.cycles += outcome.cycles;
  }
  return trace;
}

ScanCell classify(const MeasurementTrace& trace, uint8_t planted) {
  for (DecodeMethod m : {DecodeMethod::MIN_POINT, DecodeMethod::MAX_POINT,
                         DecodeMethod::DROP_BOUNDARY, DecodeMethod::RISE_BOUNDARY}) {
    try {
      if (decode(trace, m) == planted) return {CellState::LEAKS, m};
    } catch (const SimError& e) {
      if (e.code() != Errc::FlatTrace) throw;
      return {CellState::FLAT, DecodeMethod::MIN_POINT};
    }
  }
  return {CellState::FLAT, DecodeMethod::MIN_POINT};
}

}  // namespace

ScanCell scan_cell(const Catalog& catalog, const ScanRow& row, const PmuEventDesc& event,
                   const ScanOptions& opts) {
  Simulator sim;
  CounterBank bank(catalog);
  bank.configure(0, PerfEvtSel{event.event_code, event.umask, true, false});

  if (row.type == ScanRow::Type::CategoryProbe) {
    auto trace = measure_category(sim, bank, 0, row.category, opts.planted, opts);
    return classify(trace, opts.planted);
  }

  if (!event.available(row.attack, row.mode))
    return {CellState::UNAVAILABLE, DecodeMethod::MIN_POINT};

  GadgetSpec spec{row.variant, row.attack, opts.layout};
  spec.plant(sim, 0, opts.planted);
  GadgetProgram prog = spec.build(0);
  MeasureOptions mo;
  mo.mode = row.mode;
  mo.layout = opts.layout;
  auto trace = measure_byte(sim, bank, 0, prog, event, mo);
  return classify(trace, opts.planted);
}

ScanMatrix scan(const Catalog& catalog, const ScanOptions& opts) {
  if (!opts.parallel) return scan_serial(catalog, opts);

  ScanMatrix m;
  m.rows = standard_scan_rows(opts);
  const size_t ncols = catalog.size();
  m.cells.assign(m.rows.size(), std::vector<ScanCell>(ncols));

  const long total = static_cast<long>(m.rows.size() * ncols);
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < total; ++i) {
    size_t r = static_cast<size_t>(i) / ncols;
    size_t c = static_cast<size_t>(i) % ncols;
    m.cells[r][c] = scan_cell(catalog, m.rows[r], catalog.at(c), opts);
  }
  return m;
}

ScanMatrix scan_serial(const Catalog& catalog, ScanOptions opts) {
  opts.parallel = false;
  ScanMatrix m;
  m.rows = standard_scan_rows(opts);
  m.cells.assign(m.rows.size(), std::vector<ScanCell>(catalog.size()));
  for (size_t r = 0; r < m.rows.size(); ++r)
    for (size_t c = 0; c < catalog.size(); ++c)
      m.cells[r][c] = scan_cell(catalog, m.rows[r], catalog.at(c), opts);
  return m;
}

std::vector<Discrepancy> diff_against_catalog(const ScanMatrix& matrix, const Catalog& catalog) {
  std::vector<Discrepancy> out;
  for (size_t r = 0; r < matrix.rows.size(); ++r) {
    const ScanRow& row = matrix.rows[r];
    if (row.type != ScanRow::Type::AttackGadget) continue;
    for (size_t c = 0; c < catalog.size(); ++c) {
      const PmuEventDesc& ev = catalog.at(c);
      bool avail = ev.available(row.attack, row.mode);
      bool expected_leak = avail && ev.variant() == row.variant;
      const ScanCell& cell = matrix.at(r, c);

      bool mismatch;
      if (!avail)
        mismatch = cell.state != CellState::UNAVAILABLE;
      else
        mismatch = (cell.state == CellState::LEAKS) != expected_leak ||
                   cell.state == CellState::UNAVAILABLE;
      if (mismatch) {
        std::ostringstream os;
        os << row.label() << " x " << ev.name;
        out.push_back({r, c, cell.state, expected_leak, os.str()});
      }
    }
  }
  return out;
}

}  // namespace pmusim
