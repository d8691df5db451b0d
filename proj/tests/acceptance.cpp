// Acceptance run: one PASS/FAIL line per criterion. Usage: mop_acceptance [work_dir]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>

#include "gradcheck.hpp"
#include "mop/mixture.hpp"
#include "mop/nn/checkpoint.hpp"
#include "mop/nn/infusion.hpp"
#include "mop/pipeline/commands.hpp"
#include "support.hpp"

using namespace mop;
using namespace mop::nn;
using namespace mop::pipeline;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = MOP_SOURCE_DIR;
fs::path g_work;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

/// Retained share of triples whose endpoints share a label.
double retained(const KnowledgeGraph& g, const std::vector<int>& label) {
  std::size_t kept = 0;
  for (const auto& t : g.triples())
    kept += label[static_cast<std::size_t>(t.head)] == label[static_cast<std::size_t>(t.tail)];
  return static_cast<double>(kept) / static_cast<double>(g.num_triples());
}

std::vector<int> uniform_balanced(int n, int k, std::uint64_t seed) {
  std::vector<int> label(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) label[static_cast<std::size_t>(i)] = i % k;
  Rng rng(seed);
  std::shuffle(label.begin(), label.end(), rng);
  return label;
}

// ---------------------------------------------------------------------------

Verdict balance() {
  Rng rng(2025);
  const int ks[] = {2, 5, 10, 20};
  int ok = 0;
  double worst = 0;
  for (int i = 0; i < 50; ++i) {
    const int n = std::uniform_int_distribution<int>(100, 5000)(rng);
    const int k = ks[std::uniform_int_distribution<int>(0, 3)(rng)];
    const int m = std::uniform_int_distribution<int>(n, 4 * n)(rng);
    KnowledgeGraph::Builder b;
    for (int e = 0; e < n; ++e) b.entity("e" + std::to_string(e));
    for (int r = 0; r < 3; ++r) b.relation("r" + std::to_string(r));
    std::uniform_int_distribution<int> node(0, n - 1), rel(0, 2);
    for (int t = 0; t < m; ++t) b.triple(node(rng), rel(rng), node(rng));
    const auto g = std::move(b).build();
    const auto a = partition(g, k, 0.03, static_cast<std::uint64_t>(i));
    std::vector<int> size(static_cast<std::size_t>(k), 0);
    for (int p : a.part) ++size.at(static_cast<std::size_t>(p));
    const double bound = 1.03 * std::ceil(static_cast<double>(n) / k);
    const double largest = *std::max_element(size.begin(), size.end());
    worst = std::max(worst, largest / bound);
    ok += largest <= bound;
  }
  return {ok == 50, fmt("%d/50 graphs within (1+0.03)*ceil(n/k); worst max/bound %.3f", ok, worst)};
}

std::string planted_csv() {
  std::ostringstream csv;
  csv << "seed,partition_retained,random_mean,planted_retained\n";
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto kg = generate_synthetic_kg({4, 100, 0.2, 0.005, 5, s, {}});
    const auto a = partition(kg.graph, 4, 0.03, s);
    double rnd = 0;
    for (std::uint64_t j = 0; j < 20; ++j) rnd += retained(kg.graph, uniform_balanced(400, 4, s * 100 + j));
    csv << s << ',' << fmt("%.6f,%.6f,%.6f", retained(kg.graph, a.part), rnd / 20, retained(kg.graph, kg.cluster))
        << '\n';
  }
  return csv.str();
}

Verdict quality(const fs::path& out) {
  const auto text = planted_csv();
  test::write_file(out, text);
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  int ok = 0;
  double min_vs_random = 1e9, min_vs_planted = 1e9;
  while (std::getline(in, line)) {
    double s, part, rnd, planted;
    std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf", &s, &part, &rnd, &planted);
    min_vs_random = std::min(min_vs_random, part / rnd);
    min_vs_planted = std::min(min_vs_planted, part / planted);
    ok += part >= 2 * rnd && part >= 0.9 * planted;
  }
  return {ok == 10, fmt("%d/10 seeds; min ratio to random %.2f (need 2), to planted %.3f (need 0.9)", ok,
                        min_vs_random, min_vs_planted)};
}

ShuffleOutcome run_shuffle(const fs::path& out) {
  auto cfg = load_config(kSource / "configs/default.ini");
  cfg.k = 20;
  cfg.sweep.seeds = 20;
  cfg.sweep.ratios = {0.0, 0.1, 0.2, 0.4, 0.8, 1.0};
  cfg.out_dir = out;
  RunManifest m("shuffle-sweep");
  return cmd_shuffle_sweep(cfg, false, m);
}

Verdict shuffle_trend(const fs::path& out) {
  const auto r = run_shuffle(out);
  bool decreasing = true;
  for (std::size_t i = 1; i < r.summary.size(); ++i) decreasing &= r.summary[i].mean < r.summary[i - 1].mean;
  const bool starts = r.summary.front().mean == r.unshuffled;

  auto cfg = load_config(kSource / "configs/default.ini");
  const auto g = load_kg(cfg).graph;
  const auto a = read_assignment(g, out / files::assignment);
  std::vector<double> size(20, 0.0);
  for (int p : a.part) size.at(static_cast<std::size_t>(p)) += 1;
  double expect = 0;
  for (double s : size) expect += (s / g.num_entities()) * (s / g.num_entities());
  const auto& last = r.summary.back();
  const bool near = std::abs(last.mean - expect) <= 3 * last.std;
  std::string means;
  for (const auto& s : r.summary) means += fmt("%.4f ", s.mean);
  return {decreasing && starts && near,
          fmt("means %sstrictly decreasing=%d, starts at unshuffled=%d, ratio 1 %.4f vs sum(n_i/n)^2 %.4f "
              "(3 sigma %.4f)", means.c_str(), decreasing, starts, last.mean, expect, 3 * last.std)};
}

// ---------------------------------------------------------------------------

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

FusionModel<Real> grad_system(int K, Mechanism mech, std::uint64_t seed) {
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

struct InfusionParams {
  using Scalar = Real;
  AdapterStack<Real>* adapters;
  EntityHead<Real>* head;
  template <typename F>
  void visit(F&& f) const { adapters->visit(f); head->visit(f); }
};

Verdict gradients() {
  std::map<std::string, double> worst;
  auto merge = [&](const test::GradReport& rep) {
    for (const auto& [name, err] : rep.worst) worst[name] = std::max(worst[name], err);
    return rep.max_error;
  };
  TaskDataset data;
  data.inputs = kInputs;
  data.labels = {2, 0, 1};
  data.num_labels = 3;
  const std::vector<std::size_t> idx{0, 1, 2};
  const std::pair<Mechanism, NoiseSpec> systems[] = {
      {Mechanism::softmax, {}}, {Mechanism::gumbel, {true, 77}}, {Mechanism::moe, {true, 88}}};
  {
    auto s = grad_system(0, Mechanism::softmax, 10);
    const auto an = task_loss(s, data, idx, {}).grads;
    merge(test::check_gradients(s, an, [&] { return task_loss(s, data, idx, {}).loss; }));
  }
  std::uint64_t seed = 20;
  double gumbel = -1;
  for (const auto& [mech, noise] : systems) {
    auto s = grad_system(3, mech, seed += 10);
    const auto an = task_loss(s, data, idx, noise).grads;
    const double e =
        merge(test::check_gradients(s, an, [&, noise = noise] { return task_loss(s, data, idx, noise).loss; }));
    if (mech == Mechanism::gumbel) gumbel = e;
  }
  {
    const auto cfg = grad_config();
    auto model = init_model(cfg);
    test::randomize(model, 2);
    auto adapters = init_adapters(cfg, 3);
    test::randomize(adapters, 4);
    auto head = init_entity_head(cfg, 4, 5);
    test::randomize(head, 6);
    const std::vector<int> targets{3, 0, 2};
    auto g = infusion_loss(model, adapters, head, kInputs, targets).grads;
    InfusionParams p{&adapters, &head}, an{&g.adapters, &g.head};
    merge(test::check_gradients(p, an, [&] { return infusion_loss(model, adapters, head, kInputs, targets).loss; }));
  }
  // Group tensor names into the classes the criterion lists.
  const std::pair<const char*, const char*> classes[] = {
      {"embeddings", "embed"}, {"attention", "attn"}, {"ffn", "ffn"},       {"layer-norm", "ln"},
      {"adapter", "adapter"},  {"entity head", "head."}, {"fusion q/k/v", "fusion"}, {"moe gate", "moe."},
      {"task head", "task."}};
  std::string detail;
  bool covered = true;
  double max_err = 0;
  for (const auto& [label, key] : classes) {
    double w = -1;
    for (const auto& [name, err] : worst)
      if (name.find(key) != std::string::npos) w = std::max(w, err);
    covered &= w >= 0;
    max_err = std::max(max_err, w);
    detail += fmt("%s %.1e, ", label, w);
  }
  detail += fmt("gumbel path %.1e, %zu tensors", gumbel, worst.size());
  max_err = std::max(max_err, gumbel);
  return {covered && gumbel >= 0 && max_err < 1e-4, "max relative error per class: " + detail};
}

Verdict frozen_base() {
  const auto kg = generate_synthetic_kg(5, 20, 0.3, 0.01, 3, 5);
  const TokenVocabulary v(kg.graph);
  const auto subs = extract_subgraphs(kg.graph, partition(kg.graph, 5, 0.03, 5));
  ModelConfig mc;
  mc.d_model = 16;
  mc.n_layers = 2;
  mc.n_heads = 2;
  mc.d_ff = 32;
  mc.max_len = 8;
  mc.crate = 4;
  mc.vocab_size = static_cast<int>(v.size());
  mc.seed = 3;
  const auto model = init_model(mc);
  auto raw = [&] {
    std::string bytes;
    model.visit([&](std::string_view, const auto& t) {
      bytes.append(reinterpret_cast<const char*>(t.data()), static_cast<std::size_t>(t.size()) * sizeof(Real));
    });
    return sha256_hex(bytes);
  };
  const auto before = raw();
  TrainConfig tc;
  tc.learning_rate = 1e-2;
  tc.epochs = 3;
  int trained = 0;
  for (const auto& sg : subs) {
    tc.seed = static_cast<std::uint64_t>(sg.part);
    trained += !train_adapter(model, kg.graph, v, sg, tc).skipped;
  }
  const auto after = raw();
  return {before == after && trained == 5,
          fmt("%d partitions infused; base SHA-256 %.16s... before, %.16s... after", trained, before.c_str(),
              after.c_str())};
}

Verdict mixture_invariants() {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_ff = 16;
  cfg.max_len = 8;
  cfg.vocab_size = 16;
  cfg.crate = 2;
  cfg.seed = 5;
  const int K = 4, k_top = 2;
  std::vector<AdapterStack<Real>> adapters;
  for (int k = 0; k < K; ++k) {
    adapters.push_back(init_adapters(cfg, 40 + static_cast<std::uint64_t>(k)));
    test::randomize(adapters.back(), 60 + static_cast<std::uint64_t>(k));
  }
  auto mix = init_mixture(cfg, K, 9);
  test::randomize(mix, 10);
  const auto base = init_model(cfg);
  Rng rng(12);
  std::uniform_int_distribution<int> tok(4, 15), len(1, 6);

  double worst_sum = 0;
  bool counts_ok = true;
  for (auto m : {Mechanism::softmax, Mechanism::gumbel, Mechanism::moe}) {
    FusionBlock<Real> block;
    block.adapters = adapters;
    block.mixture = &mix;
    block.config.mechanism = m;
    block.config.k_top = k_top;
    block.config.tau = 0.5;
    for (int i = 0; i < 1000; ++i) {
      block.noise = {true, static_cast<std::uint64_t>(i)};
      TokenSeq in{0};
      for (int j = len(rng); j > 0; --j) in.push_back(tok(rng));
      in.push_back(1);
      EncoderCache<Real, FusionBlock<Real>> cache;
      encode(base, block, in, cache);
      for (const auto& layer : cache.layers) {
        const auto& w = layer.block.weights;
        if ((w.array() < 0).any()) worst_sum = std::max(worst_sum, 1.0);
        worst_sum = std::max(worst_sum, (w.rowwise().sum().array() - 1.0).abs().maxCoeff());
        if (m == Mechanism::moe) counts_ok &= ((w.array() > 0).rowwise().count() == k_top).all();
      }
    }
  }

  std::vector<RowVector<Real>> scores;
  for (int i = 0; i < 1000; ++i) scores.push_back(normal_matrix<Real>(1, K, 1.0, rng));
  std::string entropies;
  bool monotone = true;
  double previous = -1;
  for (double tau : {0.1, 0.25, 0.5, 0.75}) {
    double h = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const auto w = fusion_weights_gumbel<Real>(scores[i], {tau, i});
      for (Eigen::Index j = 0; j < w.size(); ++j)
        if (w(j) > 0) h -= w(j) * std::log(w(j));
    }
    h /= 1000;
    monotone &= h >= previous;
    previous = h;
    entropies += fmt("%.3f ", h);
  }
  return {worst_sum <= 1e-8 && counts_ok && monotone,
          fmt("max |sum-1| %.1e over 3x1000 inputs, moe nonzero==%d: %d, gumbel entropy by tau %s", worst_sum,
              k_top, counts_ok, entropies.c_str())};
}

// ---------------------------------------------------------------------------

ExperimentConfig experiment(const fs::path& out) {
  auto cfg = load_config(kSource / "configs/experiment.ini");
  cfg.k = 8;
  cfg.finetune_seeds = 5;
  cfg.mixture.mechanism = Mechanism::softmax;
  cfg.out_dir = out;
  return cfg;
}

FinetuneOutcome run_benefit(const fs::path& out) {
  const auto cfg = experiment(out);
  RunManifest m("acceptance");
  cmd_infuse(cfg, m);
  return cmd_finetune(cfg, true, m);
}

Verdict benefit(const fs::path& out) {
  const auto r = run_benefit(out);
  const auto control_dir = out.parent_path() / (out.filename().string() + "_control");
  fs::remove_all(control_dir);
  fs::create_directories(control_dir);
  fs::copy(out / "checkpoints", control_dir / "checkpoints", fs::copy_options::recursive);
  auto cfg = experiment(control_dir);
  cfg.task.shuffle_labels = true;
  RunManifest m("acceptance");
  const auto c = cmd_finetune(cfg, true, m);

  const auto& mop = r.summary.at("mop");
  const auto& base = r.summary.at("baseline");
  const double gain = 100 * (mop.mean - base.mean);
  auto excess = [&](const char* model) { return (c.summary.at(model).mean - c.chance) / c.chance_sigma; };
  return {gain >= 5 && excess("mop") < 3 && excess("baseline") < 3,
          fmt("MoP %s vs baseline %s: gain %.2f points (need >= 5); shuffled-label control vs chance %.1f: "
              "MoP %s (%.2f sigma above), baseline %s (%.2f sigma above), need < 3",
              format_accuracy(mop).c_str(), format_accuracy(base).c_str(), gain, 100 * c.chance,
              format_accuracy(c.summary.at("mop")).c_str(), excess("mop"),
              format_accuracy(c.summary.at("baseline")).c_str(), excess("baseline"))};
}

Verdict groups(const fs::path& out) {
  const auto cfg = experiment(out);
  RunManifest m("acceptance");
  const auto g = cmd_group_ablation(cfg, m);
  auto find = [&](const std::string& n) {
    return std::find_if(g.begin(), g.end(), [&](const auto& x) { return x.group == n; })->summary;
  };
  const auto all = find("all"), top = find("top_half"), bottom = find("bottom_half");
  auto geq = [](const MeanStd& a, const MeanStd& b) { return a.mean + std::max(a.std, b.std) >= b.mean; };
  return {geq(all, top) && geq(top, bottom),
          fmt("all %s, top half %s, bottom half %s", format_accuracy(all).c_str(), format_accuracy(top).c_str(),
              format_accuracy(bottom).c_str())};
}

Verdict determinism() {
  const auto a = g_work / "c2_planted.csv", b = g_work / "c9_planted.csv";
  test::write_file(b, planted_csv());
  std::vector<std::pair<fs::path, fs::path>> pairs{{a, b}};
  run_shuffle(g_work / "c9_shuffle");
  for (const char* f : {files::shuffle_sweep, files::shuffle_summary})
    pairs.emplace_back(g_work / "c3_shuffle" / f, g_work / "c9_shuffle" / f);
  run_benefit(g_work / "c9_experiment");
  for (const char* f : {files::infusion_eval, files::finetune_results, files::finetune_summary})
    pairs.emplace_back(g_work / "c7_experiment" / f, g_work / "c9_experiment" / f);
  int same = 0;
  std::string differ;
  for (const auto& [x, y] : pairs) {
    const bool eq = fs::exists(x) && test::read_file(x) == test::read_file(y);
    same += eq;
    if (!eq) differ += " " + x.filename().string();
  }
  return {same == static_cast<int>(pairs.size()),
          fmt("%d/%zu CSVs byte-identical on rerun%s", same, pairs.size(), differ.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  g_work = fs::absolute(argc > 1 ? argv[1] : "acceptance_out");
  fs::remove_all(g_work);
  fs::create_directories(g_work);
  std::ofstream log(g_work / "pipeline.log");
  auto* console = std::clog.rdbuf(log.rdbuf());

  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Verdict()> run;
  };
  const Criterion criteria[] = {
      {1, "partition balance", 60, balance},
      {2, "partition quality", 30, [] { return quality(g_work / "c2_planted.csv"); }},
      {3, "shuffle trend", 60, [] { return shuffle_trend(g_work / "c3_shuffle"); }},
      {4, "gradient correctness", 300, gradients},
      {5, "frozen base", 120, frozen_base},
      {6, "mixture invariants", 60, mixture_invariants},
      {7, "end-to-end benefit", 600, [] { return benefit(g_work / "c7_experiment"); }},
      {8, "group ablation", 900, [] { return groups(g_work / "c7_experiment"); }},
      {9, "determinism", 0, determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = c.budget_s == 0 || s < c.budget_s;
    const bool pass = v.pass && in_time;
    failed += !pass;
    std::cout << "criterion " << c.id << ' ' << (pass ? "PASS" : "FAIL") << "  " << c.name << ": " << v.detail
              << fmt(" [%.1f s", s) << (c.budget_s > 0 ? fmt(" of %.0f s]", c.budget_s) : std::string("]"))
              << std::endl;
  }
  std::cout << (failed == 0 ? "all criteria pass" : fmt("%d criteria fail", failed)) << std::endl;
  std::clog.rdbuf(console);
  return failed == 0 ? 0 : 1;
}
