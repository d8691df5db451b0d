#include <doctest.h>

#include "gradcheck.hpp"
#include "mop/mixture.hpp"
#include "mop/nn/infusion.hpp"

using namespace mop;
using namespace mop::nn;

namespace {

ModelConfig grad_config() {
  ModelConfig c;
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 24;
  c.max_len = 8;
  c.vocab_size = 12;
  c.crate = 4;
  c.seed = 1;
  return c;
}

const std::vector<TokenSeq> kInputs{{0, 5, 1, 7, 1, 2, 2, 2}, {0, 9, 2, 4, 1, 6, 1}, {0, 11, 1, 8, 1}};

TaskDataset multiclass_data() {
  TaskDataset d;
  d.inputs = kInputs;
  d.labels = {2, 0, 1};
  d.num_labels = 3;
  return d;
}

FusionModel<Real> make_system(int K, Mechanism mech, std::uint64_t seed) {
  const auto cfg = grad_config();
  FusionModel<Real> s;
  s.base = init_model(cfg);
  for (int k = 0; k < K; ++k) s.adapters.push_back(init_adapters(cfg, seed + static_cast<std::uint64_t>(k)));
  s.mixture = init_mixture(cfg, std::max(K, 1), seed);
  s.head = init_task_head(cfg, 3, TaskType::multiclass, seed);
  s.config.mechanism = mech;
  s.config.tau = 0.7;
  s.config.k_top = 2;
  s.config.noise_scale = 0.8;
  test::randomize(s, seed, 0.5);
  return s;
}

void check_system(FusionModel<Real>& s, const TaskDataset& data, NoiseSpec noise) {
  const std::vector<std::size_t> idx{0, 1, 2};
  const auto analytic = task_loss(s, data, idx, noise).grads;
  const auto rep = test::check_gradients(s, analytic, [&] { return task_loss(s, data, idx, noise).loss; });
  MESSAGE("max relative error " << rep.max_error << " in " << rep.max_tensor << " over "
                                << rep.checked << " entries");
  for (const auto& [name, err] : rep.worst) {
    INFO(name);
    CHECK(err < 1e-4);
  }
}

/// Adapters and entity head viewed as one parameter set.
struct InfusionParams {
  using Scalar = Real;
  AdapterStack<Real>* adapters;
  EntityHead<Real>* head;
  template <typename F>
  void visit(F&& f) const { adapters->visit(f); head->visit(f); }
};

}  // namespace

TEST_CASE("gradients: infusion loss over adapters and entity head") {
  const auto cfg = grad_config();
  auto model = init_model(cfg);
  test::randomize(model, 2);
  auto adapters = init_adapters(cfg, 3);
  test::randomize(adapters, 4);
  auto head = init_entity_head(cfg, 4, 5);
  test::randomize(head, 6);
  const std::vector<int> targets{3, 0, 2};
  const auto res = infusion_loss(model, adapters, head, kInputs, targets);

  auto g = res.grads;
  InfusionParams p{&adapters, &head}, an{&g.adapters, &g.head};
  const auto rep = test::check_gradients(p, an, [&] { return infusion_loss(model, adapters, head, kInputs, targets).loss; });
  MESSAGE("infusion max relative error " << rep.max_error << " in " << rep.max_tensor);
  CHECK(rep.max_error < 1e-4);
}

TEST_CASE("gradients: baseline fine-tuning reaches every base tensor") {
  auto s = make_system(0, Mechanism::softmax, 10);
  check_system(s, multiclass_data(), {});
}

TEST_CASE("gradients: softmax fusion") {
  auto s = make_system(3, Mechanism::softmax, 20);
  check_system(s, multiclass_data(), {});
}

TEST_CASE("gradients: Gumbel fusion with active noise") {
  auto s = make_system(3, Mechanism::gumbel, 30);
  check_system(s, multiclass_data(), {true, 77});
}

TEST_CASE("gradients: sparse gate with active noise") {
  auto s = make_system(3, Mechanism::moe, 40);
  check_system(s, multiclass_data(), {true, 88});
}

TEST_CASE("gradients: multilabel task head") {
  auto s = make_system(2, Mechanism::softmax, 50);
  TaskDataset d;
  d.inputs = kInputs;
  d.type = TaskType::multilabel;
  d.num_labels = 3;
  d.label_sets = {{0, 2}, {}, {1}};
  s.head.type = TaskType::multilabel;
  check_system(s, d, {});
}

TEST_CASE("gradient checker flags a corrupted gradient") {
  auto s = make_system(1, Mechanism::softmax, 60);
  const auto data = multiclass_data();
  const std::vector<std::size_t> idx{0, 1, 2};
  auto analytic = task_loss(s, data, idx, {}).grads;
  analytic.head.bias(0) *= 1.01;
  const auto rep = test::check_gradients(s, analytic, [&] { return task_loss(s, data, idx, {}).loss; });
  CHECK(rep.max_error > 1e-3);
  CHECK(rep.max_tensor == "task.bias");
}
