#include "mop/mixture.hpp"

#include <fstream>
#include <numeric>

#include "mop/nn/optim.hpp"
#include "mop/text.hpp"

namespace mop::nn {

Mechanism parse_mechanism(std::string_view name) {
  if (name == "softmax") return Mechanism::softmax;
  if (name == "gumbel") return Mechanism::gumbel;
  if (name == "moe") return Mechanism::moe;
  throw ConfigError("unknown mixture mechanism '" + std::string(name) + "'");
}

std::string to_string(Mechanism m) {
  switch (m) {
    case Mechanism::softmax: return "softmax";
    case Mechanism::gumbel: return "gumbel";
    case Mechanism::moe: return "moe";
  }
  return "softmax";
}

namespace {

struct Logits {
  RowVector<Real> logits;
  RowVector<Real> d_logits;  // d(loss)/d(logits), unscaled
  double loss = 0.0;
  bool correct = false;
};

Logits head_loss(const TaskHead<Real>& head, const RowVector<Real>& cls, const TaskDataset& data,
                 std::size_t i) {
  Logits out;
  out.logits = cls * head.weight + head.bias.transpose();
  const auto L = out.logits.size();
  if (data.type == TaskType::multiclass) {
    const int y = data.labels[i];
    if (y < 0 || y >= L) throw DataError("task label " + std::to_string(y) + " out of range");
    out.loss = log_sum_exp(out.logits) - out.logits(y);
    out.d_logits = softmax(out.logits);
    out.d_logits(y) -= 1.0;
    Eigen::Index arg;
    out.logits.maxCoeff(&arg);
    out.correct = arg == y;
  } else {
    RowVector<Real> target = RowVector<Real>::Zero(L);
    for (int y : data.label_sets[i]) {
      if (y < 0 || y >= L) throw DataError("task label " + std::to_string(y) + " out of range");
      target(y) = 1.0;
    }
    bool all = true;
    out.d_logits.resize(L);
    for (Eigen::Index j = 0; j < L; ++j) {
      const double z = out.logits(j);
      // Stable BCE-with-logits.
      out.loss += std::max(z, 0.0) - z * target(j) + std::log1p(std::exp(-std::abs(z)));
      out.d_logits(j) = sigmoid(z) - target(j);
      all = all && ((z > 0) == (target(j) > 0.5));
    }
    out.loss /= static_cast<double>(L);
    out.d_logits /= static_cast<double>(L);
    out.correct = all;
  }
  return out;
}

template <typename Block>
RowVector<Real> encode_cls(const EncoderModel<Real>& base, const Block& block, const TokenSeq& in,
                           EncoderCache<Real, Block>& cache, Eigen::Index* length) {
  const MatrixR hidden = encode(base, block, in, cache);
  if (length) *length = hidden.rows();
  return hidden.row(0);
}

FusionBlock<Real> make_block(const FusionModel<Real>& s, NoiseSpec noise, FusionModel<Real>* grads) {
  FusionBlock<Real> b;
  b.adapters = std::span<const AdapterStack<Real>>(s.adapters);
  b.mixture = &s.mixture;
  b.config = s.config;
  b.noise = noise;
  if (grads) {
    b.adapter_grads = std::span<AdapterStack<Real>>(grads->adapters);
    b.mixture_grads = &grads->mixture;
  }
  return b;
}

void check_dataset(const TaskDataset& d) {
  if (d.type == TaskType::multiclass ? d.labels.size() != d.inputs.size()
                                     : d.label_sets.size() != d.inputs.size())
    throw DataError("task inputs/labels length mismatch");
}

void check_compatible(const EncoderModel<Real>& model, const std::vector<AdapterStack<Real>>& adapters) {
  const auto& cfg = model.config;
  for (std::size_t k = 0; k < adapters.size(); ++k) {
    const auto& st = adapters[k];
    bool ok = st.layers.size() == static_cast<std::size_t>(cfg.n_layers);
    for (const auto& a : st.layers)
      ok = ok && a.down.rows() == cfg.d_model && a.down.cols() == cfg.bottleneck() &&
           a.up.rows() == cfg.bottleneck() && a.up.cols() == cfg.d_model;
    if (!ok)
      throw ConfigError("adapter " + std::to_string(k) +
                        " does not match the base model configuration");
  }
}

}  // namespace

TaskLoss task_loss(const FusionModel<Real>& system, const TaskDataset& data,
                   std::span<const std::size_t> indices, NoiseSpec noise) {
  check_dataset(data);
  if (indices.empty()) throw DataError("empty fine-tuning batch");
  TaskLoss out;
  out.grads = zeros_like(system);
  const double inv = 1.0 / static_cast<double>(indices.size());

  auto step = [&](const auto& block, auto& cache, std::size_t i) {
    Eigen::Index len = 0;
    const RowVector<Real> cls = encode_cls(system.base, block, data.inputs[i], cache, &len);
    Logits lg = head_loss(system.head, cls, data, i);
    out.loss += lg.loss * inv;
    out.correct += lg.correct;
    const RowVector<Real> d_logits = lg.d_logits * inv;
    out.grads.head.weight.noalias() += cls.transpose() * d_logits;
    out.grads.head.bias += d_logits.transpose();
    const RowVector<Real> d_cls = d_logits * system.head.weight.transpose();
    encode_backward<Real>(system.base, block, cache, cls_gradient<Real>(len, d_cls), &out.grads.base);
  };

  if (system.adapters.empty()) {
    const AdapterBlock<Real> block{nullptr, nullptr};
    EncoderCache<Real, AdapterBlock<Real>> cache;
    for (auto i : indices) step(block, cache, i);
  } else {
    EncoderCache<Real, FusionBlock<Real>> cache;
    for (auto i : indices) {
      NoiseSpec ns = noise;
      ns.key = splitmix64(noise.key ^ splitmix64(static_cast<std::uint64_t>(i)));
      step(make_block(system, ns, &out.grads), cache, i);
    }
  }
  return out;
}

std::vector<int> predict(const FusionModel<Real>& system, const TaskDataset& data) {
  std::vector<int> out;
  auto run = [&](const auto& block, auto& cache) {
    for (const auto& in : data.inputs) {
      const RowVector<Real> logits =
          encode_cls(system.base, block, in, cache, nullptr) * system.head.weight +
          system.head.bias.transpose();
      Eigen::Index arg;
      logits.maxCoeff(&arg);
      out.push_back(static_cast<int>(arg));
    }
  };
  if (system.adapters.empty()) {
    const AdapterBlock<Real> block{nullptr, nullptr};
    EncoderCache<Real, AdapterBlock<Real>> cache;
    run(block, cache);
  } else {
    EncoderCache<Real, FusionBlock<Real>> cache;
    run(make_block(system, {}, nullptr), cache);
  }
  return out;
}

double evaluate_task(const FusionModel<Real>& system, const TaskDataset& data) {
  check_dataset(data);
  if (data.size() == 0) throw DataError("cannot evaluate on an empty task split");
  if (data.type == TaskType::multiclass) {
    const auto pred = predict(system, data);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == data.labels[i];
    return static_cast<double>(hit) / static_cast<double>(pred.size());
  }
  std::size_t hit = 0, total = 0;
  auto run = [&](const auto& block, auto& cache) {
    for (std::size_t i = 0; i < data.size(); ++i) {
      const RowVector<Real> logits =
          encode_cls(system.base, block, data.inputs[i], cache, nullptr) * system.head.weight +
          system.head.bias.transpose();
      std::vector<char> active(static_cast<std::size_t>(logits.size()), 0);
      for (int y : data.label_sets[i]) active[static_cast<std::size_t>(y)] = 1;
      for (Eigen::Index j = 0; j < logits.size(); ++j, ++total)
        hit += (logits(j) > 0) == static_cast<bool>(active[static_cast<std::size_t>(j)]);
    }
  };
  if (system.adapters.empty()) {
    const AdapterBlock<Real> block{nullptr, nullptr};
    EncoderCache<Real, AdapterBlock<Real>> cache;
    run(block, cache);
  } else {
    EncoderCache<Real, FusionBlock<Real>> cache;
    run(make_block(system, {}, nullptr), cache);
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

FinetuneResult finetune(const EncoderModel<Real>& model, std::vector<AdapterStack<Real>> adapters,
                        const MixtureConfig& mc, const TaskDataset& train, const TaskDataset& dev,
                        const TrainConfig& cfg) {
  cfg.validate();
  check_dataset(train);
  check_dataset(dev);
  if (train.size() == 0) throw DataError("empty fine-tuning training split");
  if (train.num_labels < 1) throw DataError("task has no labels");
  check_compatible(model, adapters);
  if (!adapters.empty()) mc.validate(static_cast<int>(adapters.size()));

  FinetuneResult res;
  auto& s = res.system;
  s.base = model;
  s.adapters = std::move(adapters);
  s.config = mc;
  if (!s.adapters.empty())
    s.mixture = init_mixture<Real>(model.config, s.num_adapters(), derive_seed(cfg.seed, "mixture"));
  s.head = init_task_head<Real>(model.config, train.num_labels, train.type, derive_seed(cfg.seed, "task"));

  AdamW opt(tensor_spans(s), {cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay});
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(cfg.seed, "finetune-batches"));
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  std::uint64_t step_index = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int correct = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const auto end = std::min(order.size(), start + bs);
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      const NoiseSpec noise{true, derive_seed(cfg.seed, "mixture-noise", step_index++)};
      auto step = task_loss(s, train, batch, noise);
      loss_sum += step.loss * static_cast<double>(batch.size());
      correct += step.correct;
      opt.step(tensor_spans(step.grads));
    }
    FinetuneEpoch log;
    log.epoch = epoch + 1;
    log.train_loss = loss_sum / static_cast<double>(train.size());
    log.train_accuracy = correct / static_cast<double>(train.size());
    log.dev_accuracy = dev.size() ? evaluate_task(s, dev) : 0.0;
    res.log.push_back(log);
    if (!std::isfinite(log.train_loss)) throw NumericError("fine-tuning loss became non-finite");
  }
  if (!all_finite(s)) throw NumericError("fine-tuning produced non-finite parameters");
  return res;
}

std::vector<MixtureWeightRow> inspect_mixture_weights(const FusionModel<Real>& system,
                                                      std::span<const TokenSeq> inputs) {
  if (system.adapters.empty()) throw ConfigError("the system has no mixture layers to inspect");
  std::vector<MixtureWeightRow> rows;
  const auto block = make_block(system, {}, nullptr);
  EncoderCache<Real, FusionBlock<Real>> cache;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    encode(system.base, block, inputs[i], cache);
    for (std::size_t l = 0; l < cache.layers.size(); ++l) {
      const auto& w = cache.layers[l].block.weights;
      for (Eigen::Index k = 0; k < w.cols(); ++k)
        rows.push_back({i, static_cast<int>(l), static_cast<int>(k), w(0, k)});
    }
  }
  return rows;
}

void write_mixture_weights(const std::vector<MixtureWeightRow>& rows,
                           const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "input_id,layer,adapter_id,weight\n";
  for (const auto& r : rows)
    out << r.input_id << ',' << r.layer << ',' << r.adapter << ',' << fixed(r.weight, 6) << '\n';
}

}  // namespace mop::nn
