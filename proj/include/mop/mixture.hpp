#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mop/nn/infusion.hpp"
#include "mop/nn/model.hpp"

namespace mop::nn {

enum class Mechanism { softmax, gumbel, moe };

Mechanism parse_mechanism(std::string_view name);
std::string to_string(Mechanism m);

struct MixtureConfig {
  Mechanism mechanism = Mechanism::softmax;
  /// Gumbel temperature.
  double tau = 1.0;
  /// Number of adapters kept by the sparse gate.
  int k_top = 1;
  /// Multiplier on the gate's Gaussian noise term during training.
  double noise_scale = 1.0;

  void validate(int num_adapters) const {
    if (num_adapters < 1) throw ConfigError("a mixture needs at least one adapter");
    if (!(tau > 0)) throw ConfigError("tau must be > 0");
    if (mechanism == Mechanism::moe && (k_top < 1 || k_top > num_adapters))
      throw ConfigError("k_top must lie in [1, number of adapters]");
  }
};

/// Per-layer attention over adapter outputs: the query reads the layer's
/// feed-forward output, keys and values read each adapter's output.
template <typename S>
struct FusionLayer {
  using Scalar = S;
  Matrix<S> query, key, value;
  Vector<S> query_bias, key_bias, value_bias;

  template <typename F>
  void visit(F&& f) { visit_fields(*this, f); }
  template <typename F>
  void visit(F&& f) const { visit_fields(*this, f); }

 private:
  template <typename Self, typename F>
  static void visit_fields(Self& s, F& f) {
    f("query", s.query);
    f("query_bias", s.query_bias);
    f("key", s.key);
    f("key_bias", s.key_bias);
    f("value", s.value);
    f("value_bias", s.value_bias);
  }
};

/// Noisy top-k gate: H(x) = x W_gate + noise_scale * eps * softplus(x W_noise).
template <typename S>
struct MoEGate {
  using Scalar = S;
  Matrix<S> gate;   // d x K
  Matrix<S> noise;  // d x K

  template <typename F>
  void visit(F&& f) { f("gate", gate); f("noise", noise); }
  template <typename F>
  void visit(F&& f) const { f("gate", gate); f("noise", noise); }
};

template <typename S>
struct MixtureLayers {
  using Scalar = S;
  std::vector<FusionLayer<S>> fusion;
  std::vector<MoEGate<S>> gates;

  template <typename F>
  void visit(F&& f) { visit_fields(*this, f); }
  template <typename F>
  void visit(F&& f) const { visit_fields(*this, f); }

 private:
  template <typename Self, typename F>
  static void visit_fields(Self& s, F& f) {
    for (std::size_t i = 0; i < s.fusion.size(); ++i)
      s.fusion[i].visit(detail::prefixed("fusion." + std::to_string(i) + ".", f));
    for (std::size_t i = 0; i < s.gates.size(); ++i)
      s.gates[i].visit(detail::prefixed("moe." + std::to_string(i) + ".", f));
  }
};

enum class TaskType { multiclass, multilabel };

template <typename S>
struct TaskHead {
  using Scalar = S;
  Matrix<S> weight;  // d x labels
  Vector<S> bias;
  TaskType type = TaskType::multiclass;

  Eigen::Index num_labels() const { return weight.cols(); }

  template <typename F>
  void visit(F&& f) { f("task.weight", weight); f("task.bias", bias); }
  template <typename F>
  void visit(F&& f) const { f("task.weight", weight); f("task.bias", bias); }
};

template <typename S = Real>
MixtureLayers<S> init_mixture(const ModelConfig& cfg, int num_adapters, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "init-mixture"));
  const auto d = cfg.d_model;
  MixtureLayers<S> mix;
  for (int l = 0; l < cfg.n_layers; ++l) {
    FusionLayer<S> f;
    f.query = normal_matrix<S>(d, d, S(0.02), rng);
    f.key = normal_matrix<S>(d, d, S(0.02), rng);
    f.value = Matrix<S>::Identity(d, d) + normal_matrix<S>(d, d, S(1e-3), rng);
    f.query_bias = f.key_bias = f.value_bias = Vector<S>::Zero(d);
    mix.fusion.push_back(std::move(f));
    MoEGate<S> g;
    g.gate = normal_matrix<S>(d, num_adapters, S(0.02), rng);
    g.noise = Matrix<S>::Zero(d, num_adapters);
    mix.gates.push_back(std::move(g));
  }
  return mix;
}

template <typename S = Real>
TaskHead<S> init_task_head(const ModelConfig& cfg, int num_labels, TaskType type,
                           std::uint64_t seed) {
  Rng rng(derive_seed(seed, "init-task-head"));
  TaskHead<S> h;
  h.weight = normal_matrix<S>(cfg.d_model, num_labels, S(1) / std::sqrt(S(cfg.d_model)), rng);
  h.bias = Vector<S>::Zero(num_labels);
  h.type = type;
  return h;
}

// ---------------------------------------------------------------------------
// Mixture weights

template <typename S>
struct FusionOutput {
  Matrix<S> weights;  // positions x K
  Matrix<S> mixed;    // positions x d
};

/// Dot-product attention over K adapter outputs, softmax over adapters per
/// position; the mix is the weighted sum of value projections.
template <typename S>
FusionOutput<S> fusion_weights_softmax(const Matrix<S>& layer_output,
                                       std::span<const Matrix<S>> adapter_outputs,
                                       const FusionLayer<S>& fl) {
  const auto K = static_cast<Eigen::Index>(adapter_outputs.size());
  if (K == 0) throw ConfigError("fusion needs at least one adapter output");
  const Matrix<S> q = affine(layer_output, fl.query, fl.query_bias);
  Matrix<S> scores(layer_output.rows(), K);
  std::vector<Matrix<S>> values;
  for (Eigen::Index k = 0; k < K; ++k) {
    const Matrix<S> key = affine(adapter_outputs[k], fl.key, fl.key_bias);
    scores.col(k) = (q.array() * key.array()).rowwise().sum();
    values.push_back(affine(adapter_outputs[k], fl.value, fl.value_bias));
  }
  FusionOutput<S> out;
  out.weights = softmax_rows(scores);
  out.mixed = Matrix<S>::Zero(layer_output.rows(), layer_output.cols());
  for (Eigen::Index k = 0; k < K; ++k)
    out.mixed += (values[k].array().colwise() * out.weights.col(k).array()).matrix();
  return out;
}

/// softmax((scores + noise) / tau).
template <typename S>
RowVector<S> gumbel_softmax(const RowVector<S>& scores, const RowVector<S>& noise, S tau) {
  return softmax(((scores + noise) / tau).eval());
}

struct GumbelParams {
  double tau = 1.0;
  std::uint64_t seed = 0;
};

/// Gumbel-softmax weights with g_k drawn from Gumbel(0,1) keyed by
/// (seed, k), so a fixed seed reproduces the same draw.
template <typename S>
RowVector<S> fusion_weights_gumbel(const RowVector<S>& scores, const GumbelParams& gp) {
  if (!(gp.tau > 0)) throw ConfigError("tau must be > 0");
  RowVector<S> noise(scores.size());
  for (Eigen::Index k = 0; k < scores.size(); ++k)
    noise(k) = static_cast<S>(hash_gumbel(derive_seed(gp.seed, "gumbel", static_cast<std::uint64_t>(k))));
  return gumbel_softmax<S>(scores, noise, static_cast<S>(gp.tau));
}

/// Keeps the k_top largest entries (ties: lower index) and softmaxes them;
/// all other weights are exactly zero.
template <typename S>
RowVector<S> top_k_softmax(const RowVector<S>& h, int k_top, std::vector<char>* kept = nullptr) {
  const auto K = h.size();
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(K));
  for (Eigen::Index k = 0; k < K; ++k) idx[static_cast<std::size_t>(k)] = k;
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return h(a) > h(b); });
  RowVector<S> masked = RowVector<S>::Constant(K, -std::numeric_limits<S>::infinity());
  if (kept) kept->assign(static_cast<std::size_t>(K), 0);
  for (int j = 0; j < k_top && j < K; ++j) {
    masked(idx[static_cast<std::size_t>(j)]) = h(idx[static_cast<std::size_t>(j)]);
    if (kept) (*kept)[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])] = 1;
  }
  return softmax(masked);
}

/// Sparse gate weights for every row of `inputs`. `eps` (rows x K) is the
/// standard-normal noise; pass nullptr for the noiseless inference path.
template <typename S>
Matrix<S> fusion_weights_moe(const Matrix<S>& inputs, const MoEGate<S>& gate, int k_top,
                             const Matrix<S>* eps = nullptr, S noise_scale = S(1)) {
  const auto K = gate.gate.cols();
  if (k_top < 1 || k_top > K) throw ConfigError("k_top must lie in [1, number of adapters]");
  Matrix<S> h = inputs * gate.gate;
  if (eps) {
    const Matrix<S> sp = (inputs * gate.noise).unaryExpr([](S v) { return softplus(v); });
    h += noise_scale * eps->cwiseProduct(sp);
  }
  Matrix<S> w(inputs.rows(), K);
  for (Eigen::Index t = 0; t < inputs.rows(); ++t) w.row(t) = top_k_softmax<S>(h.row(t), k_top);
  return w;
}

// ---------------------------------------------------------------------------
// Fusion block: K adapters mixed after each feed-forward block.

/// Noise is drawn only when `active` (training); inference is deterministic.
struct NoiseSpec {
  bool active = false;
  std::uint64_t key = 0;
};

inline std::uint64_t noise_key(std::uint64_t key, std::size_t layer, Eigen::Index t, Eigen::Index k) {
  return splitmix64(key ^ splitmix64((static_cast<std::uint64_t>(layer) << 42) ^
                                     (static_cast<std::uint64_t>(t) << 21) ^
                                     static_cast<std::uint64_t>(k)));
}

template <typename S>
struct FusionCache {
  Matrix<S> input;
  std::vector<AdapterCache<S>> adapters;
  std::vector<Matrix<S>> adapter_out, keys, values;
  Matrix<S> query;
  Matrix<S> weights;
  Matrix<S> noise;         // Gumbel g, or gate eps
  Matrix<S> noise_logits;  // x W_noise (moe)
  std::vector<std::vector<char>> kept;
};

template <typename S>
struct FusionBlock {
  using Cache = FusionCache<S>;
  std::span<const AdapterStack<S>> adapters;
  const MixtureLayers<S>* mixture = nullptr;
  MixtureConfig config;
  NoiseSpec noise;
  std::span<AdapterStack<S>> adapter_grads;
  MixtureLayers<S>* mixture_grads = nullptr;

  Matrix<S> forward(std::size_t layer, const Matrix<S>& x, Cache& c) const {
    const auto K = static_cast<Eigen::Index>(adapters.size());
    const auto T = x.rows();
    const auto& fl = mixture->fusion[layer];
    c.input = x;
    c.adapters.resize(static_cast<std::size_t>(K));
    c.adapter_out.resize(static_cast<std::size_t>(K));
    c.keys.resize(static_cast<std::size_t>(K));
    c.values.resize(static_cast<std::size_t>(K));
    for (Eigen::Index k = 0; k < K; ++k) {
      c.adapter_out[k] = adapter_forward(adapters[k].layers[layer], x, c.adapters[k]);
      c.values[k] = affine(c.adapter_out[k], fl.value, fl.value_bias);
    }
    c.noise = Matrix<S>::Zero(T, K);
    if (noise.active && config.mechanism != Mechanism::softmax) {
      for (Eigen::Index t = 0; t < T; ++t)
        for (Eigen::Index k = 0; k < K; ++k) {
          const auto key = noise_key(noise.key, layer, t, k);
          c.noise(t, k) = static_cast<S>(config.mechanism == Mechanism::gumbel ? hash_gumbel(key)
                                                                                : hash_normal(key));
        }
    }

    c.weights.resize(T, K);
    if (config.mechanism == Mechanism::moe) {
      const auto& g = mixture->gates[layer];
      Matrix<S> h = x * g.gate;
      c.noise_logits = x * g.noise;
      h += S(config.noise_scale) *
           c.noise.cwiseProduct(c.noise_logits.unaryExpr([](S v) { return softplus(v); }));
      c.kept.resize(static_cast<std::size_t>(T));
      for (Eigen::Index t = 0; t < T; ++t)
        c.weights.row(t) = top_k_softmax<S>(h.row(t), config.k_top, &c.kept[static_cast<std::size_t>(t)]);
    } else {
      c.query = affine(x, fl.query, fl.query_bias);
      Matrix<S> scores(T, K);
      for (Eigen::Index k = 0; k < K; ++k) {
        c.keys[k] = affine(c.adapter_out[k], fl.key, fl.key_bias);
        scores.col(k) = (c.query.array() * c.keys[k].array()).rowwise().sum();
      }
      if (config.mechanism == Mechanism::gumbel)
        c.weights = softmax_rows<S>((scores + c.noise) / S(config.tau));
      else
        c.weights = softmax_rows<S>(scores);
    }

    Matrix<S> mixed = Matrix<S>::Zero(T, x.cols());
    for (Eigen::Index k = 0; k < K; ++k)
      mixed += (c.values[k].array().colwise() * c.weights.col(k).array()).matrix();
    return mixed;
  }

  Matrix<S> backward(std::size_t layer, const Matrix<S>& d_mixed, const Cache& c) const {
    const auto K = static_cast<Eigen::Index>(adapters.size());
    const auto T = d_mixed.rows();
    const auto& fl = mixture->fusion[layer];
    FusionLayer<S>* gf = mixture_grads ? &mixture_grads->fusion[layer] : nullptr;

    Matrix<S> d_weights(T, K);
    std::vector<Matrix<S>> d_adapter(static_cast<std::size_t>(K));
    for (Eigen::Index k = 0; k < K; ++k) {
      d_weights.col(k) = (d_mixed.array() * c.values[k].array()).rowwise().sum();
      const Matrix<S> d_value = d_mixed.array().colwise() * c.weights.col(k).array();
      d_adapter[k] = affine_backward<S>(c.adapter_out[k], fl.value, d_value,
                                        gf ? &gf->value : nullptr, gf ? &gf->value_bias : nullptr);
    }
    const Matrix<S> d_logits = softmax_rows_backward<S>(c.weights, d_weights);

    Matrix<S> d_x = Matrix<S>::Zero(T, c.input.cols());
    if (config.mechanism == Mechanism::moe) {
      const auto& g = mixture->gates[layer];
      MoEGate<S>* gg = mixture_grads ? &mixture_grads->gates[layer] : nullptr;
      // Dropped entries have zero weight, hence zero logit gradient.
      const Matrix<S> d_noise_logits =
          (S(config.noise_scale) * d_logits.cwiseProduct(c.noise))
              .cwiseProduct(c.noise_logits.unaryExpr([](S v) { return sigmoid(v); }));
      if (gg) {
        gg->gate.noalias() += c.input.transpose() * d_logits;
        gg->noise.noalias() += c.input.transpose() * d_noise_logits;
      }
      d_x += d_logits * g.gate.transpose() + d_noise_logits * g.noise.transpose();
    } else {
      const Matrix<S> d_scores =
          config.mechanism == Mechanism::gumbel ? Matrix<S>(d_logits / S(config.tau)) : d_logits;
      Matrix<S> d_query = Matrix<S>::Zero(T, c.query.cols());
      for (Eigen::Index k = 0; k < K; ++k) {
        d_query += (c.keys[k].array().colwise() * d_scores.col(k).array()).matrix();
        const Matrix<S> d_key = c.query.array().colwise() * d_scores.col(k).array();
        d_adapter[k] += affine_backward<S>(c.adapter_out[k], fl.key, d_key, gf ? &gf->key : nullptr,
                                           gf ? &gf->key_bias : nullptr);
      }
      d_x += affine_backward<S>(c.input, fl.query, d_query, gf ? &gf->query : nullptr,
                                gf ? &gf->query_bias : nullptr);
    }

    for (Eigen::Index k = 0; k < K; ++k) {
      Adapter<S>* ga = adapter_grads.empty() ? nullptr : &adapter_grads[k].layers[layer];
      d_x += adapter_backward(adapters[k].layers[layer], c.adapters[k], d_adapter[k], ga);
    }
    return d_x;
  }
};

// ---------------------------------------------------------------------------
// Downstream system

/// Base encoder + K knowledge adapters + mixture layers + task head. With no
/// adapters it is the plain fine-tuning baseline.
template <typename S>
struct FusionModel {
  using Scalar = S;
  EncoderModel<S> base;
  std::vector<AdapterStack<S>> adapters;
  MixtureLayers<S> mixture;
  TaskHead<S> head;
  MixtureConfig config;

  int num_adapters() const { return static_cast<int>(adapters.size()); }

  template <typename F>
  void visit(F&& f) { visit_fields(*this, f); }
  template <typename F>
  void visit(F&& f) const { visit_fields(*this, f); }

 private:
  template <typename Self, typename F>
  static void visit_fields(Self& s, F& f) {
    s.base.visit(detail::prefixed("base.", f));
    for (std::size_t k = 0; k < s.adapters.size(); ++k)
      s.adapters[k].visit(detail::prefixed("kg" + std::to_string(k) + ".", f));
    if (!s.adapters.empty()) s.mixture.visit(detail::prefixed("mix.", f));
    s.head.visit(f);
  }
};

struct TaskDataset {
  std::vector<TokenSeq> inputs;
  /// Multiclass targets.
  std::vector<int> labels;
  /// Multilabel targets (sets of active label ids).
  std::vector<std::vector<int>> label_sets;
  int num_labels = 0;
  TaskType type = TaskType::multiclass;

  std::size_t size() const noexcept { return inputs.size(); }
};

struct TaskLoss {
  double loss = 0.0;
  int correct = 0;
  FusionModel<Real> grads;
};

/// Mean task loss and gradients over every trainable tensor (base, adapters,
/// mixture, head). `noise` controls Gumbel / gate noise.
TaskLoss task_loss(const FusionModel<Real>& system, const TaskDataset& data,
                   std::span<const std::size_t> indices, NoiseSpec noise);

struct FinetuneEpoch {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double dev_accuracy = 0.0;
};

struct FinetuneResult {
  FusionModel<Real> system;
  std::vector<FinetuneEpoch> log;
};

/// End-to-end training of the base model, adapters, mixture, and task head.
/// Pass no adapters for the baseline. `dev` may be empty.
FinetuneResult finetune(const EncoderModel<Real>& model, std::vector<AdapterStack<Real>> adapters,
                        const MixtureConfig& mc, const TaskDataset& train, const TaskDataset& dev,
                        const TrainConfig& cfg);

/// Multiclass: accuracy. Multilabel: per-label accuracy.
double evaluate_task(const FusionModel<Real>& system, const TaskDataset& data);

std::vector<int> predict(const FusionModel<Real>& system, const TaskDataset& data);

struct MixtureWeightRow {
  std::size_t input_id = 0;
  int layer = 0;
  int adapter = 0;
  double weight = 0.0;
};

/// [CLS]-position mixture weights for every layer and adapter (inference mode).
std::vector<MixtureWeightRow> inspect_mixture_weights(const FusionModel<Real>& system,
                                                      std::span<const TokenSeq> inputs);

/// CSV `input_id,layer,adapter_id,weight`.
void write_mixture_weights(const std::vector<MixtureWeightRow>& rows,
                           const std::filesystem::path& path);

}  // namespace mop::nn
