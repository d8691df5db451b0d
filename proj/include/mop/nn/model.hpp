#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mop/error.hpp"
#include "mop/kg.hpp"
#include "mop/nn/tensor.hpp"
#include "mop/rng.hpp"

namespace mop::nn {

struct ModelConfig {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 2;
  int d_ff = 256;
  int max_len = 32;
  int vocab_size = 0;
  /// Adapter compression rate; bottleneck width is d_model / crate.
  int crate = 8;
  std::uint64_t seed = 0;

  int head_dim() const { return d_model / n_heads; }
  int bottleneck() const { return d_model / crate; }

  void validate() const {
    if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0 || vocab_size <= 0 || crate <= 0)
      throw ConfigError("model dimensions must be positive");
    if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
    if (d_model % crate != 0) throw ConfigError("d_model must be divisible by crate");
    if (max_len < 4) throw ConfigError("max_len must be at least 4");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

namespace detail {

template <typename F>
auto prefixed(std::string prefix, F& f) {
  return [prefix = std::move(prefix), &f](std::string_view name, auto& t) {
    f(prefix + std::string(name), t);
  };
}

}  // namespace detail

template <typename S>
struct EncoderLayer {
  using Scalar = S;
  Matrix<S> query, key, value, output;
  Vector<S> query_bias, key_bias, value_bias, output_bias;
  Vector<S> ln1_gain, ln1_bias;
  Matrix<S> ff_in, ff_out;
  Vector<S> ff_in_bias, ff_out_bias;
  Vector<S> ln2_gain, ln2_bias;

  template <typename F>
  void visit(F&& f) { visit_fields(*this, f); }
  template <typename F>
  void visit(F&& f) const { visit_fields(*this, f); }

 private:
  template <typename Self, typename F>
  static void visit_fields(Self& s, F& f) {
    f("attn.query", s.query);
    f("attn.query_bias", s.query_bias);
    f("attn.key", s.key);
    f("attn.key_bias", s.key_bias);
    f("attn.value", s.value);
    f("attn.value_bias", s.value_bias);
    f("attn.output", s.output);
    f("attn.output_bias", s.output_bias);
    f("ln1.gain", s.ln1_gain);
    f("ln1.bias", s.ln1_bias);
    f("ffn.in", s.ff_in);
    f("ffn.in_bias", s.ff_in_bias);
    f("ffn.out", s.ff_out);
    f("ffn.out_bias", s.ff_out_bias);
    f("ln2.gain", s.ln2_gain);
    f("ln2.bias", s.ln2_bias);
  }
};

/// Post-norm transformer encoder. Treated as frozen during knowledge infusion.
template <typename S>
struct EncoderModel {
  using Scalar = S;
  ModelConfig config;
  Matrix<S> token_embedding;     // vocab x d
  Matrix<S> position_embedding;  // max_len x d
  std::vector<EncoderLayer<S>> layers;

  template <typename F>
  void visit(F&& f) { visit_fields(*this, f); }
  template <typename F>
  void visit(F&& f) const { visit_fields(*this, f); }

 private:
  template <typename Self, typename F>
  static void visit_fields(Self& s, F& f) {
    f("embed.token", s.token_embedding);
    f("embed.position", s.position_embedding);
    for (std::size_t i = 0; i < s.layers.size(); ++i)
      s.layers[i].visit(detail::prefixed("layers." + std::to_string(i) + ".", f));
  }
};

/// Bottleneck adapter: x + up(relu(down(x))).
template <typename S>
struct Adapter {
  using Scalar = S;
  Matrix<S> down;  // d x bottleneck
  Vector<S> down_bias;
  Matrix<S> up;  // bottleneck x d
  Vector<S> up_bias;

  template <typename F>
  void visit(F&& f) { visit_fields(*this, f); }
  template <typename F>
  void visit(F&& f) const { visit_fields(*this, f); }

 private:
  template <typename Self, typename F>
  static void visit_fields(Self& s, F& f) {
    f("down", s.down);
    f("down_bias", s.down_bias);
    f("up", s.up);
    f("up_bias", s.up_bias);
  }
};

/// One adapter per encoder layer, placed after the feed-forward block.
template <typename S>
struct AdapterStack {
  using Scalar = S;
  std::vector<Adapter<S>> layers;

  template <typename F>
  void visit(F&& f) { visit_fields(*this, f); }
  template <typename F>
  void visit(F&& f) const { visit_fields(*this, f); }

 private:
  template <typename Self, typename F>
  static void visit_fields(Self& s, F& f) {
    for (std::size_t i = 0; i < s.layers.size(); ++i)
      s.layers[i].visit(detail::prefixed("adapter." + std::to_string(i) + ".", f));
  }
};

/// Linear classifier over a partition-local tail vocabulary.
template <typename S>
struct EntityHead {
  using Scalar = S;
  Matrix<S> weight;  // d x local tails
  Vector<S> bias;

  Eigen::Index num_classes() const { return weight.cols(); }

  template <typename F>
  void visit(F&& f) { f("head.weight", weight); f("head.bias", bias); }
  template <typename F>
  void visit(F&& f) const { f("head.weight", weight); f("head.bias", bias); }
};

template <typename S = Real>
EncoderModel<S> init_model(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, "init-model"));
  const auto d = cfg.d_model;
  const S wd = S(1) / std::sqrt(S(d));
  EncoderModel<S> m;
  m.config = cfg;
  m.token_embedding = normal_matrix<S>(cfg.vocab_size, d, S(1), rng);
  m.position_embedding = normal_matrix<S>(cfg.max_len, d, S(0.1), rng);
  for (int l = 0; l < cfg.n_layers; ++l) {
    EncoderLayer<S> layer;
    layer.query = normal_matrix<S>(d, d, wd, rng);
    layer.key = normal_matrix<S>(d, d, wd, rng);
    layer.value = normal_matrix<S>(d, d, wd, rng);
    layer.output = normal_matrix<S>(d, d, wd, rng);
    layer.query_bias = layer.key_bias = layer.value_bias = layer.output_bias = Vector<S>::Zero(d);
    layer.ln1_gain = layer.ln2_gain = Vector<S>::Ones(d);
    layer.ln1_bias = layer.ln2_bias = Vector<S>::Zero(d);
    layer.ff_in = normal_matrix<S>(d, cfg.d_ff, wd, rng);
    layer.ff_in_bias = Vector<S>::Zero(cfg.d_ff);
    layer.ff_out = normal_matrix<S>(cfg.d_ff, d, S(1) / std::sqrt(S(cfg.d_ff)), rng);
    layer.ff_out_bias = Vector<S>::Zero(d);
    m.layers.push_back(std::move(layer));
  }
  return m;
}

/// Fresh adapters: scaled-normal down-projection, zero up-projection, so the
/// stack starts as the identity map.
template <typename S = Real>
AdapterStack<S> init_adapters(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, "init-adapters"));
  const auto d = cfg.d_model;
  const auto b = cfg.bottleneck();
  AdapterStack<S> stack;
  for (int l = 0; l < cfg.n_layers; ++l) {
    Adapter<S> a;
    a.down = normal_matrix<S>(d, b, S(1) / std::sqrt(S(d)), rng);
    a.down_bias = Vector<S>::Zero(b);
    a.up = Matrix<S>::Zero(b, d);
    a.up_bias = Vector<S>::Zero(d);
    stack.layers.push_back(std::move(a));
  }
  return stack;
}

template <typename S = Real>
EntityHead<S> init_entity_head(const ModelConfig& cfg, Eigen::Index num_classes,
                               std::uint64_t seed) {
  Rng rng(derive_seed(seed, "init-entity-head"));
  EntityHead<S> h;
  h.weight = normal_matrix<S>(cfg.d_model, num_classes, S(1) / std::sqrt(S(cfg.d_model)), rng);
  h.bias = Vector<S>::Zero(num_classes);
  return h;
}

// ---------------------------------------------------------------------------
// Adapter block

template <typename S>
struct AdapterCache {
  Matrix<S> input;
  Matrix<S> pre;  // down-projection before the ReLU
  Matrix<S> hidden;
};

template <typename S>
Matrix<S> adapter_forward(const Adapter<S>& a, const Matrix<S>& x, AdapterCache<S>& cache) {
  cache.input = x;
  cache.pre = affine(x, a.down, a.down_bias);
  cache.hidden = relu(cache.pre);
  return x + affine(cache.hidden, a.up, a.up_bias);
}

/// Returns d(input); accumulates parameter gradients into `grads` if non-null.
template <typename S>
Matrix<S> adapter_backward(const Adapter<S>& a, const AdapterCache<S>& cache,
                           const Matrix<S>& d_out, Adapter<S>* grads) {
  Matrix<S> d_hidden = affine_backward<S>(cache.hidden, a.up, d_out, grads ? &grads->up : nullptr,
                                          grads ? &grads->up_bias : nullptr);
  const Matrix<S> d_pre = (cache.pre.array() > S(0)).select(d_hidden, S(0));
  return d_out + affine_backward<S>(cache.input, a.down, d_pre, grads ? &grads->down : nullptr,
                                    grads ? &grads->down_bias : nullptr);
}

/// Post-FFN hook used by the encoder. With no adapters it is the identity.
template <typename S>
struct AdapterBlock {
  using Cache = AdapterCache<S>;
  const AdapterStack<S>* adapters = nullptr;
  AdapterStack<S>* grads = nullptr;

  Matrix<S> forward(std::size_t layer, const Matrix<S>& x, Cache& cache) const {
    if (!adapters) return x;
    return adapter_forward(adapters->layers[layer], x, cache);
  }

  Matrix<S> backward(std::size_t layer, const Matrix<S>& d_out, const Cache& cache) const {
    if (!adapters) return d_out;
    return adapter_backward(adapters->layers[layer], cache, d_out,
                            grads ? &grads->layers[layer] : nullptr);
  }
};

// ---------------------------------------------------------------------------
// Encoder

template <typename S, typename BlockCache>
struct LayerCache {
  Matrix<S> input;
  Matrix<S> q, k, v, context;
  std::vector<Matrix<S>> probs;  // per head, T x T
  LayerNormCache<S> ln1;
  Matrix<S> x1;
  Matrix<S> ff_pre, ff_act;
  BlockCache block;
  LayerNormCache<S> ln2;
};

template <typename S, typename Block>
struct EncoderCache {
  std::vector<int> tokens;  // trailing padding removed
  std::vector<char> masked;  // key positions that hold PAD
  std::vector<LayerCache<S, typename Block::Cache>> layers;
};

inline void check_tokens(const ModelConfig& cfg, std::span<const int> tokens) {
  if (tokens.empty()) throw DataError("empty token sequence");
  if (static_cast<int>(tokens.size()) > cfg.max_len)
    throw DataError("sequence length " + std::to_string(tokens.size()) + " exceeds max_len " +
                    std::to_string(cfg.max_len));
  for (int id : tokens)
    if (id < 0 || id >= cfg.vocab_size)
      throw DataError("token id " + std::to_string(id) + " outside vocabulary");
}

/// Encodes one sequence and returns its hidden states (rows = positions, with
/// trailing PAD positions dropped: PAD keys are masked, so they never
/// influence other positions).
template <typename S, typename Block>
Matrix<S> encode(const EncoderModel<S>& m, const Block& block, std::span<const int> tokens,
                 EncoderCache<S, Block>& cache) {
  const auto& cfg = m.config;
  check_tokens(cfg, tokens);
  std::size_t len = tokens.size();
  while (len > 1 && tokens[len - 1] == TokenVocabulary::kPad) --len;
  cache.tokens.assign(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(len));
  cache.masked.resize(len);
  for (std::size_t t = 0; t < len; ++t) cache.masked[t] = cache.tokens[t] == TokenVocabulary::kPad;
  cache.layers.resize(m.layers.size());

  const auto T = static_cast<Eigen::Index>(len);
  const int dh = cfg.head_dim();
  const S scale = S(1) / std::sqrt(S(dh));

  Matrix<S> x(T, cfg.d_model);
  for (Eigen::Index t = 0; t < T; ++t)
    x.row(t) = m.token_embedding.row(cache.tokens[t]) + m.position_embedding.row(t);

  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const auto& p = m.layers[l];
    auto& c = cache.layers[l];
    c.input = x;
    c.q = affine(x, p.query, p.query_bias);
    c.k = affine(x, p.key, p.key_bias);
    c.v = affine(x, p.value, p.value_bias);
    c.context.resize(T, cfg.d_model);
    c.probs.resize(static_cast<std::size_t>(cfg.n_heads));
    for (int h = 0; h < cfg.n_heads; ++h) {
      Matrix<S> scores = c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose() * scale;
      for (Eigen::Index j = 0; j < T; ++j)
        if (cache.masked[j]) scores.col(j).setConstant(-std::numeric_limits<S>::infinity());
      c.probs[h] = softmax_rows(scores);
      c.context.middleCols(h * dh, dh) = c.probs[h] * c.v.middleCols(h * dh, dh);
    }
    c.x1 = layer_norm<S>(x + affine(c.context, p.output, p.output_bias), p.ln1_gain, p.ln1_bias,
                         c.ln1);
    c.ff_pre = affine(c.x1, p.ff_in, p.ff_in_bias);
    c.ff_act = c.ff_pre.unaryExpr([](S v) { return gelu(v); });
    const Matrix<S> ffn = affine(c.ff_act, p.ff_out, p.ff_out_bias);
    const Matrix<S> mixed = block.forward(l, ffn, c.block);
    x = layer_norm<S>(c.x1 + mixed, p.ln2_gain, p.ln2_bias, c.ln2);
    if (!x.allFinite()) throw NumericError("non-finite activation in encoder layer " + std::to_string(l));
  }
  return x;
}

/// Backpropagates d(hidden states). Base-model gradients are accumulated only
/// when `grads` is non-null; block gradients go wherever the block points.
template <typename S, typename Block>
void encode_backward(const EncoderModel<S>& m, const Block& block,
                     const EncoderCache<S, Block>& cache, Matrix<S> d_x, EncoderModel<S>* grads) {
  const auto& cfg = m.config;
  const int dh = cfg.head_dim();
  const S scale = S(1) / std::sqrt(S(dh));

  for (std::size_t l = m.layers.size(); l-- > 0;) {
    const auto& p = m.layers[l];
    const auto& c = cache.layers[l];
    EncoderLayer<S>* g = grads ? &grads->layers[l] : nullptr;

    const Matrix<S> d_r2 = layer_norm_backward<S>(d_x, p.ln2_gain, c.ln2, g ? &g->ln2_gain : nullptr,
                                                  g ? &g->ln2_bias : nullptr);
    const Matrix<S> d_ffn = block.backward(l, d_r2, c.block);
    const Matrix<S> d_act = affine_backward<S>(c.ff_act, p.ff_out, d_ffn, g ? &g->ff_out : nullptr,
                                               g ? &g->ff_out_bias : nullptr);
    const Matrix<S> d_pre =
        d_act.cwiseProduct(c.ff_pre.unaryExpr([](S v) { return gelu_grad(v); }));
    Matrix<S> d_x1 = d_r2 + affine_backward<S>(c.x1, p.ff_in, d_pre, g ? &g->ff_in : nullptr,
                                               g ? &g->ff_in_bias : nullptr);

    const Matrix<S> d_r1 = layer_norm_backward<S>(d_x1, p.ln1_gain, c.ln1, g ? &g->ln1_gain : nullptr,
                                                  g ? &g->ln1_bias : nullptr);
    const Matrix<S> d_context = affine_backward<S>(c.context, p.output, d_r1,
                                                   g ? &g->output : nullptr,
                                                   g ? &g->output_bias : nullptr);
    Matrix<S> d_q(c.q.rows(), c.q.cols()), d_k(c.k.rows(), c.k.cols()), d_v(c.v.rows(), c.v.cols());
    for (int h = 0; h < cfg.n_heads; ++h) {
      const auto& P = c.probs[h];
      const Matrix<S> d_ctx_h = d_context.middleCols(h * dh, dh);
      const Matrix<S> d_p = d_ctx_h * c.v.middleCols(h * dh, dh).transpose();
      d_v.middleCols(h * dh, dh) = P.transpose() * d_ctx_h;
      const Matrix<S> d_scores = softmax_rows_backward<S>(P, d_p) * scale;
      d_q.middleCols(h * dh, dh) = d_scores * c.k.middleCols(h * dh, dh);
      d_k.middleCols(h * dh, dh) = d_scores.transpose() * c.q.middleCols(h * dh, dh);
    }
    d_x = d_r1;
    d_x += affine_backward<S>(c.input, p.query, d_q, g ? &g->query : nullptr, g ? &g->query_bias : nullptr);
    d_x += affine_backward<S>(c.input, p.key, d_k, g ? &g->key : nullptr, g ? &g->key_bias : nullptr);
    d_x += affine_backward<S>(c.input, p.value, d_v, g ? &g->value : nullptr, g ? &g->value_bias : nullptr);
  }

  if (grads) {
    for (std::size_t t = 0; t < cache.tokens.size(); ++t) {
      const auto row = static_cast<Eigen::Index>(t);
      grads->token_embedding.row(cache.tokens[t]) += d_x.row(row);
      grads->position_embedding.row(row) += d_x.row(row);
    }
  }
}

/// Batched [CLS] encoding with an optional adapter stack.
template <typename S>
struct ForwardResult {
  Matrix<S> cls;  // batch x d
  std::vector<EncoderCache<S, AdapterBlock<S>>> caches;
};

template <typename S>
ForwardResult<S> forward(const EncoderModel<S>& m, const AdapterStack<S>* adapters,
                         std::span<const TokenSeq> batch) {
  ForwardResult<S> out;
  out.cls.resize(static_cast<Eigen::Index>(batch.size()), m.config.d_model);
  out.caches.resize(batch.size());
  const AdapterBlock<S> block{adapters, nullptr};
  for (std::size_t i = 0; i < batch.size(); ++i)
    out.cls.row(static_cast<Eigen::Index>(i)) = encode(m, block, batch[i], out.caches[i]).row(0);
  return out;
}

/// Gradient of a [CLS]-only loss with respect to the full hidden-state matrix.
template <typename S, typename Derived>
Matrix<S> cls_gradient(Eigen::Index length, const Eigen::MatrixBase<Derived>& d_cls) {
  Matrix<S> d = Matrix<S>::Zero(length, d_cls.size());
  d.row(0) = d_cls;
  return d;
}

}  // namespace mop::nn
