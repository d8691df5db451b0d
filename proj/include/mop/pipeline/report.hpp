#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace mop::pipeline {

inline constexpr const char* kToolVersion = "0.1.0";

/// Writes `text` to `path.tmp` then renames it over `path`.
void write_atomic(const std::filesystem::path& path, const std::string& text);

/// Header plus rows, comma separated, newline terminated.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}
  void add(std::vector<std::string> row);
  std::size_t rows() const noexcept { return rows_.size(); }
  std::string str() const;
  void write(const std::filesystem::path& path) const { write_atomic(path, str()); }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// Parsed CSV: header names and string cells. Throws DataError on ragged rows.
struct CsvData {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::size_t column(const std::string& name) const;
};
CsvData read_csv(const std::filesystem::path& path);

struct MeanStd {
  double mean = 0.0;
  /// Sample standard deviation; 0 for fewer than two values.
  double std = 0.0;
};
MeanStd mean_std(std::span<const double> values);

/// Accuracy cell in percent, e.g. `88.64±3.0`.
std::string format_accuracy(const MeanStd& m);

struct PlotSeries {
  std::string label;
  std::vector<double> x, mean, std;
};

/// Static SVG line chart; non-empty `std` draws a shaded band of mean±std.
std::string line_plot_svg(const std::string& title, const std::string& x_label,
                          const std::string& y_label, std::span<const PlotSeries> series);

/// Config echo, stage timings, artifact digests and headline metrics of one
/// command invocation.
class RunManifest {
 public:
  explicit RunManifest(std::string command) : command_(std::move(command)) {}

  void set_config(std::map<std::string, std::string> echo) { config_ = std::move(echo); }
  void add_stage(const std::string& name, double seconds);
  void add_artifact(const std::filesystem::path& path);
  void set_metric(const std::string& name, nlohmann::ordered_json value);
  const std::vector<std::filesystem::path>& artifacts() const noexcept { return artifacts_; }

  nlohmann::ordered_json to_json() const;
  /// Hashes every artifact and writes the manifest atomically.
  void write(const std::filesystem::path& path) const;

 private:
  std::string command_;
  std::map<std::string, std::string> config_;
  std::vector<std::pair<std::string, double>> stages_;
  std::vector<std::filesystem::path> artifacts_;
  nlohmann::ordered_json metrics_ = nlohmann::ordered_json::object();
};

/// Records the wall-clock time of a scope as a manifest stage.
class StageTimer {
 public:
  StageTimer(RunManifest& m, std::string name)
      : manifest_(m), name_(std::move(name)), start_(std::chrono::steady_clock::now()) {}
  ~StageTimer() {
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start_;
    manifest_.add_stage(name_, dt.count());
  }
  StageTimer(const StageTimer&) = delete;
  StageTimer& operator=(const StageTimer&) = delete;

 private:
  RunManifest& manifest_;
  std::string name_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace mop::pipeline
