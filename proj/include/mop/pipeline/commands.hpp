#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mop/nn/checkpoint.hpp"
#include "mop/partition.hpp"
#include "mop/pipeline/config.hpp"
#include "mop/pipeline/report.hpp"
#include "mop/pipeline/task.hpp"

namespace mop::pipeline {

/// Artifact names relative to the output directory.
namespace files {
inline constexpr const char* assignment = "assignment.tsv";
inline constexpr const char* partition_metrics = "partition_metrics.csv";
inline constexpr const char* base_checkpoint = "checkpoints/base.ckpt";
inline constexpr const char* adapter_dir = "checkpoints/adapters";
inline constexpr const char* infusion_eval = "infusion_eval.csv";
inline constexpr const char* finetune_results = "finetune_results.csv";
inline constexpr const char* finetune_summary = "finetune_summary.csv";
inline constexpr const char* mixture_weights = "mixture_weights.csv";
inline constexpr const char* finetuned_checkpoint = "checkpoints/finetuned.ckpt";
inline constexpr const char* shuffle_sweep = "shuffle_sweep.csv";
inline constexpr const char* shuffle_summary = "shuffle_summary.csv";
inline constexpr const char* shuffle_plot = "shuffle_sweep.svg";
inline constexpr const char* shuffle_finetune = "shuffle_finetune.csv";
inline constexpr const char* shuffle_finetune_summary = "shuffle_finetune_summary.csv";
inline constexpr const char* shuffle_finetune_plot = "shuffle_finetune.svg";
inline constexpr const char* k_sweep = "k_sweep.csv";
inline constexpr const char* k_sweep_plot = "k_sweep.svg";
inline constexpr const char* group_ablation = "group_ablation.csv";
inline constexpr const char* group_summary = "group_summary.csv";
inline constexpr const char* partition_ranking = "partition_ranking.csv";
}  // namespace files

std::filesystem::path adapter_checkpoint_path(const std::filesystem::path& out_dir, int partition);

/// `k,seed,shuffle_ratio,retained,retained_frac,edge_cut,balance` row.
std::vector<std::string> metrics_row(const PartitionAssignment& a, double ratio, const PartitionMetrics& m);
std::vector<std::string> metrics_header();

struct PartitionOutcome {
  PartitionAssignment assignment;
  PartitionMetrics metrics;
};
PartitionOutcome cmd_partition(const ExperimentConfig& cfg, RunManifest& manifest);

struct PartitionEval {
  int partition = 0;
  std::size_t entities = 0, triples = 0, train = 0, heldout = 0, tail_vocab = 0;
  double final_loss = 0.0;
  /// NaN when nothing was held out.
  double hits_at_1 = 0.0;
  double cross_entropy = 0.0;
  bool skipped = false;
};
std::vector<PartitionEval> cmd_infuse(const ExperimentConfig& cfg, RunManifest& manifest);

struct FinetuneRun {
  std::string model;
  int run = 0;
  std::uint64_t seed = 0;
  double dev_accuracy = 0.0;
  double test_accuracy = 0.0;
};
struct FinetuneOutcome {
  std::vector<FinetuneRun> runs;
  std::map<std::string, MeanStd> summary;
  double chance = 0.0;
  double chance_sigma = 0.0;
};
/// Fine-tunes on the checkpoints cmd_infuse wrote. `baseline` adds
/// no-adapter runs with the same seeds.
FinetuneOutcome cmd_finetune(const ExperimentConfig& cfg, bool baseline, RunManifest& manifest);

struct ShuffleOutcome {
  /// Per ratio, the retained fraction of every seed.
  std::vector<std::vector<double>> retained_frac;
  std::vector<MeanStd> summary;
  double unshuffled = 0.0;
  /// Retention of a uniformly random labelling with the same part sizes.
  double random_expectation = 0.0;
  double random_sigma = 0.0;
};
ShuffleOutcome cmd_shuffle_sweep(const ExperimentConfig& cfg, bool with_finetune, RunManifest& manifest);

std::vector<PartitionMetrics> cmd_k_sweep(const ExperimentConfig& cfg, RunManifest& manifest);

struct GroupResult {
  std::string group;
  std::vector<int> partitions;
  std::vector<double> accuracy;
  MeanStd summary;
};
std::vector<GroupResult> cmd_group_ablation(const ExperimentConfig& cfg, RunManifest& manifest);

void cmd_full(const ExperimentConfig& cfg, RunManifest& manifest);

/// Writes the synthetic KG, its planted clusters and the task file. Loading
/// the KG with that task file withholds the same triples from infusion.
void cmd_generate(const ExperimentConfig& cfg, RunManifest& manifest);

/// Mean and standard deviation of the retention of a uniformly random
/// labelling with the part sizes of `a`: sum over parts of (n_i / n)^2 per
/// triple, with the binomial spread over the triple count.
MeanStd random_retention(const KnowledgeGraph& g, const PartitionAssignment& a);

}  // namespace mop::pipeline
