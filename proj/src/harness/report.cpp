#include "wsi/harness/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "wsi/error.hpp"

namespace wsi::harness {

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// Round-trip precision for machine-readable columns.
std::string exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

const RunRecord* find(const std::vector<RunRecord>& records, const Cell& cell) {
  for (const auto& r : records)
    if (r.cell == cell) return &r;
  return nullptr;
}

std::string grid_entry(const std::vector<RunRecord>& records, const Cell& cell) {
  if (is_na(cell)) return "N/A";
  const RunRecord* r = find(records, cell);
  if (!r) return "-";
  const auto m = r->report();
  return fixed(m.mean, 3) + " ± " + fixed(m.stddev, 3);
}

const char* kRowNames[] = {"most", "medium", "none"};
const char* kColNames[] = {"frozen", "finetune", "random_init"};

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::Io, "cannot write " + path.string());
  os << text;
}

}  // namespace

std::string results_csv(const std::vector<RunRecord>& records) {
  std::size_t folds = 0;
  for (const auto& r : records) folds = std::max(folds, r.per_fold.size());
  std::ostringstream os;
  os << "cell,structure,l2_mode,config,metric,mean,std";
  for (std::size_t f = 0; f < folds; ++f) os << ",fold_" << f;
  os << '\n';
  for (const auto& r : records) {
    os << to_string(r.cell) << ',' << agg::to_string(r.cell.structure) << ',' << agg::to_string(r.cell.mode) << ','
       << r.fingerprint << ',' << r.metric;
    if (r.na) {
      for (std::size_t c = 0; c < folds + 2; ++c) os << ",N/A";
    } else {
      const auto m = r.report();
      os << ',' << exact(m.mean) << ',' << exact(m.stddev);
      for (std::size_t f = 0; f < folds; ++f) os << ',' << (f < r.per_fold.size() ? exact(r.per_fold[f]) : "");
    }
    os << '\n';
  }
  return os.str();
}

std::string grid_csv(const std::vector<RunRecord>& records) {
  const auto cells = grid_cells();
  std::ostringstream os;
  os << "structure";
  for (const char* c : kColNames) os << ',' << c;
  os << '\n';
  for (std::size_t row = 0; row < 3; ++row) {
    os << kRowNames[row];
    for (std::size_t col = 0; col < 3; ++col) os << ',' << grid_entry(records, cells[row * 3 + col]);
    os << '\n';
  }
  return os.str();
}

std::string grid_text(const std::vector<RunRecord>& records) {
  const auto cells = grid_cells();
  std::vector<std::vector<std::string>> table{{"structure", kColNames[0], kColNames[1], kColNames[2]}};
  for (std::size_t row = 0; row < 3; ++row) {
    table.push_back({kRowNames[row]});
    for (std::size_t col = 0; col < 3; ++col) table.back().push_back(grid_entry(records, cells[row * 3 + col]));
  }
  // Column widths in code points; "±" is two bytes.
  auto width = [](const std::string& s) {
    std::size_t n = 0;
    for (unsigned char c : s) n += (c & 0xc0) != 0x80;
    return n;
  };
  std::vector<std::size_t> widths(4, 0);
  for (const auto& line : table)
    for (std::size_t c = 0; c < line.size(); ++c) widths[c] = std::max(widths[c], width(line[c]));
  std::string metric = records.empty() ? "metric" : records.front().metric;
  std::ostringstream os;
  os << metric << " (mean ± std over folds)\n";
  for (std::size_t i = 0; i < table.size(); ++i) {
    for (std::size_t c = 0; c < table[i].size(); ++c) {
      const std::string& s = table[i][c];
      os << s << std::string(widths[c] - width(s), ' ');
      if (c + 1 < table[i].size()) os << "  ";
    }
    os << '\n';
    if (i == 0) {
      std::size_t total = 0;
      for (std::size_t w : widths) total += w;
      os << std::string(total + 6, '-') << '\n';
    }
  }
  return os.str();
}

std::string loss_svg(const std::vector<RunRecord>& records) {
  std::vector<const RunRecord*> curves;
  std::size_t epochs = 0;
  double lo = 0, hi = 0;
  bool first = true;
  for (const auto& r : records) {
    if (r.na || r.epoch_loss.empty()) continue;
    curves.push_back(&r);
    epochs = std::max(epochs, r.epoch_loss.size());
    for (double v : r.epoch_loss) {
      lo = first ? v : std::min(lo, v);
      hi = first ? v : std::max(hi, v);
      first = false;
    }
  }
  if (hi <= lo) hi = lo + 1;
  const double w = 640, h = 400, left = 60, right = 180, top = 20, bottom = 40;
  const double pw = w - left - right, ph = h - top - bottom;
  auto px = [&](std::size_t epoch) {  // epoch is 1-based
    return left + (epochs > 1 ? pw * static_cast<double>(epoch - 1) / static_cast<double>(epochs - 1) : pw / 2);
  };
  auto py = [&](double v) { return top + ph * (hi - v) / (hi - lo); };
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2"};

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
     << ' ' << h << "\" data-epochs=\"" << epochs << "\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
     << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 8 << "\" text-anchor=\"middle\" font-size=\"12\">epoch (1-"
     << epochs << ")</text>\n";
  os << "<text x=\"" << left - 8 << "\" y=\"" << top + 10 << "\" text-anchor=\"end\" font-size=\"10\">" << fixed(hi, 3)
     << "</text>\n";
  os << "<text x=\"" << left - 8 << "\" y=\"" << top + ph << "\" text-anchor=\"end\" font-size=\"10\">" << fixed(lo, 3)
     << "</text>\n";
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const RunRecord& r = *curves[i];
    const char* color = colors[i % 7];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" data-cell=\"" << to_string(r.cell)
       << "\" points=\"";
    for (std::size_t e = 0; e < r.epoch_loss.size(); ++e)
      os << (e ? " " : "") << fixed(px(e + 1), 2) << ',' << fixed(py(r.epoch_loss[e]), 2);
    os << "\"/>\n";
    os << "<text x=\"" << left + pw + 10 << "\" y=\"" << top + 14 + 16 * static_cast<double>(i)
       << "\" font-size=\"11\" fill=\"" << color << "\">" << to_string(r.cell) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void emit_report(const std::vector<RunRecord>& records, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  write_file(out_dir / kResultsCsv, results_csv(records));
  write_file(out_dir / kGridCsv, grid_csv(records));
  write_file(out_dir / kGridText, grid_text(records));
  write_file(out_dir / kLossPlot, loss_svg(records));
  std::vector<eval::MetricsReport> reports;
  for (const auto& r : records)
    if (!r.na) reports.push_back(r.report());
  eval::write_metrics_csv(out_dir / kMetricsCsv, reports);
}

}  // namespace wsi::harness
