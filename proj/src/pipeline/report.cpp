#include "mop/pipeline/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mop/error.hpp"
#include "mop/nn/checkpoint.hpp"
#include "mop/text.hpp"

namespace mop::pipeline {

void write_atomic(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << text;
    if (!out) throw DataError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void CsvTable::add(std::vector<std::string> row) {
  if (row.size() != header_.size()) throw DataError("CSV row width does not match the header");
  rows_.push_back(std::move(row));
}

std::string CsvTable::str() const {
  std::string s;
  auto line = [&s](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) s += ',';
      s += cells[i];
    }
    s += '\n';
  };
  line(header_);
  for (const auto& r : rows_) line(r);
  return s;
}

std::size_t CsvData::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw DataError("CSV has no column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

CsvData read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  CsvData d;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split(trim(line), ',');
    if (d.header.empty()) {
      d.header = std::move(cells);
      continue;
    }
    if (cells.size() != d.header.size()) throw ParseError(path.string(), line_no, "ragged CSV row");
    d.rows.push_back(std::move(cells));
  }
  if (d.header.empty()) throw DataError(path.string() + ": empty CSV");
  return d;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd m;
  if (values.empty()) return m;
  double sum = 0;
  for (double v : values) sum += v;
  m.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0;
    for (double v : values) ss += (v - m.mean) * (v - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return m;
}

std::string format_accuracy(const MeanStd& m) {
  return fixed(100.0 * m.mean, 2) + "±" + fixed(100.0 * m.std, 1);
}

namespace {

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

}  // namespace

std::string line_plot_svg(const std::string& title, const std::string& x_label,
                          const std::string& y_label, std::span<const PlotSeries> series) {
  constexpr double W = 640, H = 420, L = 70, R = 20, T = 40, B = 60;
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const double sd = s.std.empty() ? 0.0 : s.std[i];
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.mean[i] - sd);
      y1 = std::max(y1, s.mean[i] + sd);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape_xml(title)
    << "</text>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = x0 + (x1 - x0) * i / 5, yv = y0 + (y1 - y0) * i / 5;
    o << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">" << fixed(xv, 2)
      << "</text>\n";
    o << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << fixed(yv, 3)
      << "</text>\n";
    o << "<line x1=\"" << L << "\" y1=\"" << py(yv) << "\" x2=\"" << W - R << "\" y2=\"" << py(yv)
      << "\" stroke=\"#eeeeee\"/>\n";
  }
  o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 18 << "\" text-anchor=\"middle\">"
    << escape_xml(x_label) << "</text>\n";
  o << "<text transform=\"translate(18," << (T + H - B) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << escape_xml(y_label) << "</text>\n";

  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* color = kPalette[si % std::size(kPalette)];
    if (!s.std.empty() && !s.x.empty()) {
      o << "<polygon fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
      for (std::size_t i = 0; i < s.x.size(); ++i) o << px(s.x[i]) << ',' << py(s.mean[i] + s.std[i]) << ' ';
      for (std::size_t i = s.x.size(); i-- > 0;) o << px(s.x[i]) << ',' << py(s.mean[i] - s.std[i]) << ' ';
      o << "\"/>\n";
    }
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) o << px(s.x[i]) << ',' << py(s.mean[i]) << ' ';
    o << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      o << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.mean[i]) << "\" r=\"3\" fill=\"" << color
        << "\"/>\n";
    o << "<text x=\"" << W - R - 150 << "\" y=\"" << T + 16 * (si + 1) << "\" fill=\"" << color << "\">"
      << escape_xml(s.label) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

void RunManifest::add_stage(const std::string& name, double seconds) { stages_.emplace_back(name, seconds); }

void RunManifest::add_artifact(const std::filesystem::path& path) {
  if (std::find(artifacts_.begin(), artifacts_.end(), path) == artifacts_.end()) artifacts_.push_back(path);
}

void RunManifest::set_metric(const std::string& name, nlohmann::ordered_json value) {
  metrics_[name] = std::move(value);
}

nlohmann::ordered_json RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["command"] = command_;
  j["tool_version"] = kToolVersion;
  j["config"] = config_;
  auto& stages = j["stages"] = nlohmann::ordered_json::array();
  for (const auto& [name, sec] : stages_) stages.push_back({{"name", name}, {"seconds", sec}});
  auto& arts = j["artifacts"] = nlohmann::ordered_json::array();
  for (const auto& p : artifacts_) {
    nlohmann::ordered_json a{{"path", p.string()}};
    if (std::filesystem::exists(p)) a["sha256"] = sha256_file(p);
    arts.push_back(std::move(a));
  }
  j["metrics"] = metrics_;
  return j;
}

void RunManifest::write(const std::filesystem::path& path) const { write_atomic(path, to_json().dump(2) + "\n"); }

}  // namespace mop::pipeline
