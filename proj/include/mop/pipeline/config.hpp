#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mop/kg.hpp"
#include "mop/mixture.hpp"
#include "mop/nn/infusion.hpp"
#include "mop/nn/model.hpp"

namespace mop::pipeline {

/// `[section]` headers and `key = value` lines, flattened to "section.key".
/// `#` and `;` start comments. Duplicate keys are an error.
std::map<std::string, std::string> parse_ini(std::string_view text, const std::string& origin);

struct TaskSettings {
  /// Optional `head<TAB>relation<TAB>label<TAB>split` file; empty = synthetic.
  std::filesystem::path path;
  /// Fraction of KG triples withheld from infusion and turned into task examples.
  double fraction = 0.2;
  int num_labels = 4;
  double train_fraction = 0.6;
  double dev_fraction = 0.2;
  bool shuffle_labels = false;
};

struct SweepSettings {
  std::vector<double> ratios{0.0, 0.1, 0.2, 0.4, 0.8, 1.0};
  int seeds = 20;
  std::vector<int> k_values{5, 10, 20, 40, 60};
};

struct ExperimentConfig {
  std::uint64_t seed = 0;

  std::filesystem::path kg_path;
  SyntheticKgParams synthetic;

  int k = 20;
  double epsilon = 0.03;
  std::uint64_t partition_seed = 0;

  nn::ModelConfig model;
  nn::TrainConfig infusion;
  /// Share of each partition's triples held out for hits@1.
  double infusion_holdout = 0.1;
  int threads = 1;

  nn::TrainConfig finetune;
  int finetune_seeds = 5;
  nn::MixtureConfig mixture;

  TaskSettings task;
  SweepSettings sweep;

  std::filesystem::path out_dir = "out";

  /// Seed keys set explicitly in the file; the rest follow the master seed.
  std::set<std::string> pinned_seeds;

  /// Every key after defaults and overrides, for the run manifest.
  std::map<std::string, std::string> echo;

  bool synthetic_kg() const { return kg_path.empty(); }
};

/// Builds a config from INI text. Relative paths resolve against `base_dir`.
/// Unknown keys and malformed values raise ConfigError.
ExperimentConfig parse_config(std::string_view text, const std::string& origin,
                              const std::filesystem::path& base_dir);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Re-derives every seed that was not pinned explicitly from a new master.
void apply_master_seed(ExperimentConfig& cfg, std::uint64_t seed);

}  // namespace mop::pipeline
