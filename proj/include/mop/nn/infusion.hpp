#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mop/kg.hpp"
#include "mop/nn/model.hpp"
#include "mop/partition.hpp"

namespace mop::nn {

struct TrainConfig {
  double learning_rate = 1e-4;
  int epochs = 2;
  int batch_size = 16;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  }
};

/// Serialized `[CLS] h [SEP] r [SEP]` queries with their partition-local tail
/// class.
struct InfusionExamples {
  std::vector<TokenSeq> inputs;
  std::vector<int> targets;
  int num_classes = 0;

  std::size_t size() const noexcept { return inputs.size(); }
};

InfusionExamples make_infusion_examples(const KnowledgeGraph& g, const TokenVocabulary& v,
                                        const SubGraph& sg, std::size_t max_len);

/// Moves roughly `fraction` of the examples to a held-out set, only taking
/// examples whose tail class still occurs in the training part.
std::pair<InfusionExamples, InfusionExamples> split_holdout(const InfusionExamples& all,
                                                            double fraction, std::uint64_t seed);

struct InfusionGradients {
  AdapterStack<Real> adapters;
  EntityHead<Real> head;
};

struct LossResult {
  double loss = 0.0;
  int correct = 0;
  InfusionGradients grads;
};

/// Mean softmax cross-entropy over the local tail vocabulary. Gradients cover
/// the adapters and the entity head only; the base model is read-only.
LossResult infusion_loss(const EncoderModel<Real>& model, const AdapterStack<Real>& adapters,
                         const EntityHead<Real>& head, std::span<const TokenSeq> inputs,
                         std::span<const int> targets);

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct InfusionResult {
  AdapterStack<Real> adapters;
  EntityHead<Real> head;
  std::vector<EpochLog> log;
  bool skipped = false;
  std::string warning;
};

InfusionResult train_adapter(const EncoderModel<Real>& model, const InfusionExamples& data,
                             const TrainConfig& cfg);

InfusionResult train_adapter(const EncoderModel<Real>& model, const KnowledgeGraph& g,
                             const TokenVocabulary& v, const SubGraph& sg, const TrainConfig& cfg);

struct HeadEvaluation {
  double hits_at_1 = 0.0;
  double mean_cross_entropy = 0.0;
  std::size_t count = 0;
};

/// Throws DataError on an empty evaluation set.
HeadEvaluation evaluate_head(const EncoderModel<Real>& model, const AdapterStack<Real>& adapters,
                             const EntityHead<Real>& head, const InfusionExamples& data);

}  // namespace mop::nn
