#pragma once

#include <array>
#include <utility>
#include <vector>

#include "mop/kg.hpp"
#include "mop/mixture.hpp"
#include "mop/pipeline/config.hpp"

namespace mop::pipeline {

struct TaskSplits {
  nn::TaskDataset train, dev, test;
  /// (head, relation) behind every example, indexed train, dev, test.
  std::array<std::vector<std::pair<int, int>>, 3> queries;
  /// Share of the most frequent label in the test split.
  double chance = 0.0;
  /// Binomial standard deviation of the chance accuracy over the test split.
  double chance_sigma = 0.0;
};

/// Everything downstream stages read: the full KG, the infusion KG (triples
/// answering a task query removed, entity and relation ids unchanged), the shared vocabulary
/// and the task splits.
struct PreparedData {
  KnowledgeGraph full;
  KnowledgeGraph infusion;
  /// Planted cluster per entity; empty for file-backed KGs.
  std::vector<int> cluster;
  TokenVocabulary vocab;
  TaskSplits task;
};

/// Copy of `g` restricted to the triples whose `keep` flag is set. Entities
/// and relations keep their ids.
KnowledgeGraph filter_triples(const KnowledgeGraph& g, const std::vector<char>& keep);

/// Copy of `g` without every triple whose (head, relation) is a task query.
KnowledgeGraph withhold_queries(const KnowledgeGraph& g, const TaskSplits& t);

/// Synthetic KG-fact task. A `fraction` of the triples become task examples
/// `[CLS] h [SEP] r [SEP]` labelled by `cluster[tail] % num_labels`; heads are
/// split into train/dev/test so no head crosses splits. `is_task` receives the
/// per-triple selection.
TaskSplits build_synthetic_task(const KnowledgeGraph& g, const TokenVocabulary& v,
                                const std::vector<int>& cluster, const TaskSettings& s,
                                int max_len, std::uint64_t seed, std::vector<char>& is_task);

/// Reads `head<TAB>relation<TAB>label<TAB>split` lines (split in
/// train|dev|test). Unknown entities or relations raise DataError.
TaskSplits load_task_file(const std::filesystem::path& path, const KnowledgeGraph& g,
                          const TokenVocabulary& v, int num_labels, int max_len);

/// Permutes labels within each split.
void shuffle_task_labels(TaskSplits& t, std::uint64_t seed);

void write_task_file(const TaskSplits& t, const KnowledgeGraph& g, const std::filesystem::path& path);

struct LoadedKg {
  KnowledgeGraph graph;
  /// Planted cluster per entity; empty for file-backed KGs.
  std::vector<int> cluster;
};

/// Reads `kg.path` or generates the synthetic KG.
LoadedKg load_kg(const ExperimentConfig& cfg);

/// Loads or generates the KG, builds the task and fixes `cfg.model.vocab_size`.
PreparedData prepare_data(ExperimentConfig& cfg);

}  // namespace mop::pipeline
