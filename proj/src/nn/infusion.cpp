#include "mop/nn/infusion.hpp"

#include <algorithm>
#include <numeric>

#include "mop/nn/optim.hpp"

namespace mop::nn {

InfusionExamples make_infusion_examples(const KnowledgeGraph& g, const TokenVocabulary& v,
                                        const SubGraph& sg, std::size_t max_len) {
  InfusionExamples ex;
  ex.num_classes = static_cast<int>(sg.tail_vocab.size());
  ex.inputs.reserve(sg.triple_ids.size());
  for (std::size_t i = 0; i < sg.triple_ids.size(); ++i) {
    ex.inputs.push_back(serialize_triple(g, v, sg.triple_ids[i], max_len));
    ex.targets.push_back(sg.tail_class[i]);
  }
  return ex;
}

std::pair<InfusionExamples, InfusionExamples> split_holdout(const InfusionExamples& all,
                                                            double fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<int> remaining(static_cast<std::size_t>(all.num_classes), 0);
  for (int t : all.targets) ++remaining[t];
  const auto wanted = static_cast<std::size_t>(fraction * static_cast<double>(all.size()));

  InfusionExamples train, held;
  train.num_classes = held.num_classes = all.num_classes;
  std::vector<char> is_held(all.size(), 0);
  std::size_t taken = 0;
  for (auto i : order) {
    if (taken >= wanted) break;
    if (remaining[all.targets[i]] > 1) {
      --remaining[all.targets[i]];
      is_held[i] = 1;
      ++taken;
    }
  }
  for (std::size_t i = 0; i < all.size(); ++i) {
    auto& dst = is_held[i] ? held : train;
    dst.inputs.push_back(all.inputs[i]);
    dst.targets.push_back(all.targets[i]);
  }
  return {std::move(train), std::move(held)};
}

LossResult infusion_loss(const EncoderModel<Real>& model, const AdapterStack<Real>& adapters,
                         const EntityHead<Real>& head, std::span<const TokenSeq> inputs,
                         std::span<const int> targets) {
  if (inputs.size() != targets.size()) throw DataError("inputs/targets length mismatch");
  if (inputs.empty()) throw DataError("empty infusion batch");
  LossResult out;
  out.grads.adapters = zeros_like(adapters);
  out.grads.head = zeros_like(head);
  const AdapterBlock<Real> block{&adapters, &out.grads.adapters};
  const double inv_batch = 1.0 / static_cast<double>(inputs.size());

  EncoderCache<Real, AdapterBlock<Real>> cache;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const int y = targets[i];
    if (y < 0 || y >= head.num_classes())
      throw DataError("tail class " + std::to_string(y) + " outside the entity head");
    const MatrixR hidden = encode(model, block, inputs[i], cache);
    const RowVector<Real> cls = hidden.row(0);
    const RowVector<Real> logits = cls * head.weight + head.bias.transpose();
    out.loss += (log_sum_exp(logits) - logits(y)) * inv_batch;
    Eigen::Index arg;
    logits.maxCoeff(&arg);
    out.correct += arg == y;

    RowVector<Real> d_logits = softmax(logits);
    d_logits(y) -= 1.0;
    d_logits *= inv_batch;
    out.grads.head.weight.noalias() += cls.transpose() * d_logits;
    out.grads.head.bias += d_logits.transpose();
    const RowVector<Real> d_cls = d_logits * head.weight.transpose();
    encode_backward<Real>(model, block, cache, cls_gradient<Real>(hidden.rows(), d_cls), nullptr);
  }
  return out;
}

InfusionResult train_adapter(const EncoderModel<Real>& model, const InfusionExamples& data,
                             const TrainConfig& cfg) {
  cfg.validate();
  InfusionResult res;
  if (data.size() == 0 || data.num_classes == 0) {
    res.skipped = true;
    res.warning = "sub-graph has no triples; adapter training skipped";
    return res;
  }
  res.adapters = init_adapters<Real>(model.config, derive_seed(cfg.seed, "adapter"));
  res.head = init_entity_head<Real>(model.config, data.num_classes, derive_seed(cfg.seed, "head"));

  auto params = tensor_spans(res.adapters);
  for (auto s : tensor_spans(res.head)) params.push_back(s);
  AdamW opt(params, {cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay});

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(cfg.seed, "batches"));
  std::vector<TokenSeq> batch_inputs;
  std::vector<int> batch_targets;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int correct = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const auto end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      batch_inputs.clear();
      batch_targets.clear();
      for (auto i = start; i < end; ++i) {
        batch_inputs.push_back(data.inputs[order[i]]);
        batch_targets.push_back(data.targets[order[i]]);
      }
      auto step = infusion_loss(model, res.adapters, res.head, batch_inputs, batch_targets);
      loss_sum += step.loss * static_cast<double>(end - start);
      correct += step.correct;
      auto grads = tensor_spans(step.grads.adapters);
      for (auto s : tensor_spans(step.grads.head)) grads.push_back(s);
      opt.step(grads);
    }
    const auto n = static_cast<double>(data.size());
    res.log.push_back({epoch + 1, loss_sum / n, correct / n});
  }
  if (!all_finite(res.adapters) || !all_finite(res.head))
    throw NumericError("adapter training produced non-finite parameters");
  return res;
}

InfusionResult train_adapter(const EncoderModel<Real>& model, const KnowledgeGraph& g,
                             const TokenVocabulary& v, const SubGraph& sg, const TrainConfig& cfg) {
  return train_adapter(model,
                       make_infusion_examples(g, v, sg, static_cast<std::size_t>(model.config.max_len)),
                       cfg);
}

HeadEvaluation evaluate_head(const EncoderModel<Real>& model, const AdapterStack<Real>& adapters,
                             const EntityHead<Real>& head, const InfusionExamples& data) {
  if (data.size() == 0) throw DataError("cannot evaluate an entity head on an empty set");
  const AdapterBlock<Real> block{&adapters, nullptr};
  EncoderCache<Real, AdapterBlock<Real>> cache;
  HeadEvaluation ev;
  ev.count = data.size();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int y = data.targets[i];
    if (y < 0 || y >= head.num_classes()) throw DataError("held-out tail outside the entity head");
    const RowVector<Real> logits =
        encode(model, block, data.inputs[i], cache).row(0) * head.weight + head.bias.transpose();
    Eigen::Index arg;
    logits.maxCoeff(&arg);
    ev.hits_at_1 += arg == y;
    ev.mean_cross_entropy += log_sum_exp(logits) - logits(y);
  }
  ev.hits_at_1 /= static_cast<double>(ev.count);
  ev.mean_cross_entropy /= static_cast<double>(ev.count);
  return ev;
}

}  // namespace mop::nn
