#include "mop/pipeline/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <thread>

#include "mop/error.hpp"
#include "mop/nn/infusion.hpp"
#include "mop/rng.hpp"
#include "mop/text.hpp"

namespace mop::pipeline {

namespace fs = std::filesystem;
using nn::Real;

namespace {

void note(const std::string& msg) { std::clog << "[mop] " << msg << '\n'; }

std::string num(double x) { return std::isnan(x) ? "nan" : fixed(x, 6); }

fs::path at(const ExperimentConfig& c, const char* name) { return c.out_dir / name; }

void write_csv(const CsvTable& t, const fs::path& path, RunManifest& m) {
  t.write(path);
  m.add_artifact(path);
}

void write_svg(const std::string& svg, const fs::path& path, RunManifest& m) {
  write_atomic(path, svg);
  m.add_artifact(path);
}

PartitionAssignment fresh_assignment(const ExperimentConfig& c, const KnowledgeGraph& g, RunManifest& m) {
  PartitionAssignment a;
  {
    StageTimer t(m, "partition");
    a = partition(g, c.k, c.epsilon, c.partition_seed);
  }
  fs::create_directories(c.out_dir);
  write_assignment(g, a, at(c, files::assignment));
  m.add_artifact(at(c, files::assignment));
  return a;
}

/// Reuses the assignment on disk when it was produced with the same k,
/// epsilon and seed for this KG; partitions otherwise.
PartitionAssignment ensure_assignment(const ExperimentConfig& c, const KnowledgeGraph& g, RunManifest& m) {
  const auto path = at(c, files::assignment);
  if (fs::exists(path)) {
    try {
      auto a = read_assignment(g, path);
      if (a.k == c.k && a.epsilon == c.epsilon && a.seed == c.partition_seed) {
        m.add_artifact(path);
        return a;
      }
    } catch (const DataError&) {
    }
  }
  return fresh_assignment(c, g, m);
}

struct Infused {
  std::vector<PartitionEval> evals;
  std::vector<nn::AdapterCheckpoint> checkpoints;
};

Infused infuse_all(const ExperimentConfig& c, const PreparedData& d, const PartitionAssignment& a,
                   const nn::EncoderModel<Real>& base, const std::string& base_sha) {
  const auto subs = extract_subgraphs(d.infusion, a);
  const auto K = subs.size();
  std::vector<PartitionEval> evals(K);
  std::vector<std::optional<nn::AdapterCheckpoint>> cks(K);
  std::vector<std::exception_ptr> errors(K);
  std::atomic<std::size_t> next{0};

  auto work = [&] {
    for (std::size_t p; (p = next.fetch_add(1)) < K;) {
      try {
        const auto& sg = subs[p];
        auto& ev = evals[p];
        ev.partition = static_cast<int>(p);
        ev.entities = sg.entities.size();
        ev.triples = sg.triples.size();
        ev.tail_vocab = sg.tail_vocab.size();
        const auto all = nn::make_infusion_examples(d.infusion, d.vocab, sg, static_cast<std::size_t>(c.model.max_len));
        if (all.size() == 0) {
          ev.skipped = true;
          ev.hits_at_1 = ev.cross_entropy = ev.final_loss = std::nan("");
          note("partition " + std::to_string(p) + " has no triples; skipped");
          continue;
        }
        auto [train, held] = nn::split_holdout(all, c.infusion_holdout, derive_seed(c.infusion.seed, "holdout", p));
        auto tc = c.infusion;
        tc.seed = derive_seed(c.infusion.seed, "partition", p);
        auto res = nn::train_adapter(base, train, tc);
        ev.train = train.size();
        ev.heldout = held.size();
        ev.final_loss = res.log.back().loss;
        if (held.size() > 0) {
          const auto h = nn::evaluate_head(base, res.adapters, res.head, held);
          ev.hits_at_1 = h.hits_at_1;
          ev.cross_entropy = h.mean_cross_entropy;
        } else {
          ev.hits_at_1 = ev.cross_entropy = std::nan("");
        }
        nn::AdapterCheckpoint ck;
        ck.config = base.config;
        ck.base_sha256 = base_sha;
        ck.partition = static_cast<int>(p);
        ck.seed = tc.seed;
        ck.epoch = tc.epochs;
        ck.adapters = std::move(res.adapters);
        ck.head = std::move(res.head);
        cks[p] = std::move(ck);
      } catch (...) {
        errors[p] = std::current_exception();
      }
    }
  };
  const auto n_threads = std::min<std::size_t>(static_cast<std::size_t>(c.threads), std::max<std::size_t>(K, 1));
  std::vector<std::thread> pool;
  for (std::size_t i = 1; i < n_threads; ++i) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  Infused out;
  out.evals = std::move(evals);
  for (auto& ck : cks)
    if (ck) out.checkpoints.push_back(std::move(*ck));
  return out;
}

CsvTable eval_table(const std::vector<PartitionEval>& evals) {
  CsvTable t({"partition", "entities", "triples", "train", "heldout", "tail_vocab", "final_loss", "hits_at_1",
              "cross_entropy", "skipped"});
  for (const auto& e : evals)
    t.add({std::to_string(e.partition), std::to_string(e.entities), std::to_string(e.triples),
           std::to_string(e.train), std::to_string(e.heldout), std::to_string(e.tail_vocab), num(e.final_loss),
           num(e.hits_at_1), num(e.cross_entropy), e.skipped ? "1" : "0"});
  return t;
}

struct Loaded {
  nn::EncoderModel<Real> base;
  std::string base_sha;
  std::vector<int> partitions;
  std::vector<nn::AdapterStack<Real>> adapters;
};

/// Pre-flight: the base checkpoint and every adapter must match the config
/// and each other.
Loaded load_checkpoints(const ExperimentConfig& c) {
  const auto base_path = at(c, files::base_checkpoint);
  if (!fs::exists(base_path))
    throw ConfigError("no base checkpoint at " + base_path.string() + "; run `mop infuse` first");
  Loaded l;
  l.base = nn::load_base_model(base_path);
  if (!(l.base.config == c.model))
    throw ConfigError("base checkpoint " + base_path.string() + " was built with a different model config");
  l.base_sha = nn::parameter_digest(l.base);
  std::vector<fs::path> paths;
  if (fs::exists(at(c, files::adapter_dir)))
    for (const auto& e : fs::directory_iterator(at(c, files::adapter_dir)))
      if (e.path().extension() == ".ckpt") paths.push_back(e.path());
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) throw ConfigError("no adapter checkpoints under " + at(c, files::adapter_dir).string());
  for (const auto& p : paths) {
    auto ck = nn::load_adapter(p);
    nn::check_adapter_compatible(ck, c.model, l.base_sha);
    l.partitions.push_back(ck.partition);
    l.adapters.push_back(std::move(ck.adapters));
  }
  return l;
}

struct SeedRuns {
  std::vector<FinetuneRun> runs;
  std::optional<nn::FusionModel<Real>> first;
};

SeedRuns run_seeds(const ExperimentConfig& c, const nn::EncoderModel<Real>& base,
                   const std::vector<nn::AdapterStack<Real>>& adapters, const TaskSplits& task,
                   const std::string& name, int n, bool keep_first = false) {
  SeedRuns out;
  for (int r = 0; r < n; ++r) {
    auto tc = c.finetune;
    tc.seed = derive_seed(c.finetune.seed, "run", static_cast<std::uint64_t>(r));
    auto res = nn::finetune(base, adapters, c.mixture, task.train, task.dev, tc);
    FinetuneRun run{name, r, tc.seed, res.log.back().dev_accuracy, nn::evaluate_task(res.system, task.test)};
    note(name + " run " + std::to_string(r) + ": test accuracy " + fixed(run.test_accuracy, 4));
    out.runs.push_back(run);
    if (keep_first && r == 0) out.first = std::move(res.system);
  }
  return out;
}

std::vector<double> test_accuracies(const std::vector<FinetuneRun>& runs) {
  std::vector<double> v;
  for (const auto& r : runs) v.push_back(r.test_accuracy);
  return v;
}

std::vector<std::string> summary_row(const std::string& name, std::size_t n, const MeanStd& m) {
  return {name, std::to_string(n), num(m.mean), num(m.std), format_accuracy(m)};
}

std::string join_ids(const std::vector<int>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? ";" : "") + std::to_string(ids[i]);
  return s;
}

}  // namespace

fs::path adapter_checkpoint_path(const fs::path& out_dir, int partition) {
  char name[32];
  std::snprintf(name, sizeof name, "adapter_%03d.ckpt", partition);
  return out_dir / files::adapter_dir / name;
}

std::vector<std::string> metrics_header() {
  return {"k", "seed", "shuffle_ratio", "retained", "retained_frac", "edge_cut", "balance"};
}

std::vector<std::string> metrics_row(const PartitionAssignment& a, double ratio, const PartitionMetrics& m) {
  return {std::to_string(a.k), std::to_string(a.seed), fixed(ratio, 2), std::to_string(m.retained_triples),
          num(m.retained_fraction), std::to_string(m.edge_cut), num(m.balance)};
}

MeanStd random_retention(const KnowledgeGraph& g, const PartitionAssignment& a) {
  std::vector<double> sizes(static_cast<std::size_t>(a.k), 0.0);
  for (int p : a.part) sizes[static_cast<std::size_t>(p)] += 1.0;
  const double n = static_cast<double>(a.part.size());
  double p = 0;
  for (double s : sizes) p += (s / n) * (s / n);
  const double t = static_cast<double>(std::max<std::size_t>(g.num_triples(), 1));
  return {p, std::sqrt(p * (1 - p) / t)};
}

PartitionOutcome cmd_partition(const ExperimentConfig& cfg, RunManifest& m) {
  LoadedKg kg;
  {
    StageTimer t(m, "load");
    kg = load_kg(cfg);
  }
  PartitionOutcome out;
  out.assignment = fresh_assignment(cfg, kg.graph, m);
  out.metrics = compute_metrics(kg.graph, out.assignment);
  CsvTable t(metrics_header());
  t.add(metrics_row(out.assignment, 0.0, out.metrics));
  write_csv(t, at(cfg, files::partition_metrics), m);
  m.set_metric("retained_frac", out.metrics.retained_fraction);
  m.set_metric("edge_cut", out.metrics.edge_cut);
  m.set_metric("balance", out.metrics.balance);
  note("k=" + std::to_string(cfg.k) + " retained " + fixed(out.metrics.retained_fraction, 4));
  return out;
}

std::vector<PartitionEval> cmd_infuse(const ExperimentConfig& cfg, RunManifest& m) {
  auto c = cfg;
  PreparedData d;
  {
    StageTimer t(m, "load");
    d = prepare_data(c);
  }
  const auto a = ensure_assignment(c, d.full, m);
  const auto base = nn::init_model(c.model);
  const auto sha = nn::parameter_digest(base);
  Infused inf;
  {
    StageTimer t(m, "infuse");
    inf = infuse_all(c, d, a, base, sha);
  }
  if (nn::parameter_digest(base) != sha) throw NumericError("base model changed during infusion");

  nn::save_base_model(at(c, files::base_checkpoint), base);
  m.add_artifact(at(c, files::base_checkpoint));
  const auto dir = at(c, files::adapter_dir);
  if (fs::exists(dir))
    for (const auto& e : fs::directory_iterator(dir))
      if (e.path().extension() == ".ckpt") fs::remove(e.path());
  fs::create_directories(dir);
  for (const auto& ck : inf.checkpoints) {
    const auto path = adapter_checkpoint_path(c.out_dir, ck.partition);
    nn::save_adapter(path, ck);
    m.add_artifact(path);
  }
  write_csv(eval_table(inf.evals), at(c, files::infusion_eval), m);
  m.set_metric("base_sha256", sha);
  m.set_metric("adapters", inf.checkpoints.size());
  return inf.evals;
}

FinetuneOutcome cmd_finetune(const ExperimentConfig& cfg, bool baseline, RunManifest& m) {
  auto c = cfg;
  PreparedData d;
  {
    StageTimer t(m, "load");
    d = prepare_data(c);
  }
  const auto l = load_checkpoints(c);
  FinetuneOutcome out;
  out.chance = d.task.chance;
  out.chance_sigma = d.task.chance_sigma;

  SeedRuns mop;
  {
    StageTimer t(m, "finetune");
    mop = run_seeds(c, l.base, l.adapters, d.task, "mop", c.finetune_seeds, true);
  }
  out.runs = mop.runs;
  if (baseline) {
    StageTimer t(m, "baseline");
    const auto b = run_seeds(c, l.base, {}, d.task, "baseline", c.finetune_seeds);
    out.runs.insert(out.runs.end(), b.runs.begin(), b.runs.end());
  }

  CsvTable runs({"model", "run", "seed", "dev_accuracy", "test_accuracy"});
  for (const auto& r : out.runs)
    runs.add({r.model, std::to_string(r.run), std::to_string(r.seed), num(r.dev_accuracy), num(r.test_accuracy)});
  write_csv(runs, at(c, files::finetune_results), m);

  CsvTable summary({"model", "runs", "mean_accuracy", "std_accuracy", "formatted"});
  for (const std::string name : {"mop", "baseline"}) {
    std::vector<FinetuneRun> sel;
    for (const auto& r : out.runs)
      if (r.model == name) sel.push_back(r);
    if (sel.empty()) continue;
    const auto acc = test_accuracies(sel);
    out.summary[name] = mean_std(acc);
    summary.add(summary_row(name, sel.size(), out.summary[name]));
    m.set_metric(name + "_accuracy", format_accuracy(out.summary[name]));
  }
  summary.add({"chance", "0", num(out.chance), num(out.chance_sigma), format_accuracy({out.chance, out.chance_sigma})});
  write_csv(summary, at(c, files::finetune_summary), m);

  nn::write_mixture_weights(nn::inspect_mixture_weights(*mop.first, d.task.test.inputs), at(c, files::mixture_weights));
  m.add_artifact(at(c, files::mixture_weights));

  nn::Checkpoint ck;
  ck.manifest = {{"kind", "finetuned"},
                 {"config", nn::to_json(c.model)},
                 {"base_sha256", l.base_sha},
                 {"mechanism", nn::to_string(c.mixture.mechanism)},
                 {"partitions", l.partitions},
                 {"num_labels", d.task.train.num_labels}};
  nn::append_tensors(*mop.first, ck);
  nn::write_checkpoint(at(c, files::finetuned_checkpoint), ck);
  m.add_artifact(at(c, files::finetuned_checkpoint));
  m.set_metric("chance", out.chance);
  return out;
}

ShuffleOutcome cmd_shuffle_sweep(const ExperimentConfig& cfg, bool with_finetune, RunManifest& m) {
  auto c = cfg;
  LoadedKg kg;
  {
    StageTimer t(m, "load");
    kg = load_kg(c);
  }
  const auto a = ensure_assignment(c, kg.graph, m);
  ShuffleOutcome out;
  out.unshuffled = compute_metrics(kg.graph, a).retained_fraction;
  const auto rnd = random_retention(kg.graph, a);
  out.random_expectation = rnd.mean;
  out.random_sigma = rnd.std;

  CsvTable rows(metrics_header());
  CsvTable summary({"shuffle_ratio", "seeds", "mean_retained_frac", "std_retained_frac", "retained_pct"});
  PlotSeries series{"retained fraction (mean ± std)", {}, {}, {}};
  {
    StageTimer t(m, "shuffle");
    for (double ratio : c.sweep.ratios) {
      std::vector<double> fr;
      for (int s = 0; s < c.sweep.seeds; ++s) {
        auto sa = shuffle_assignment(a, ratio, derive_seed(c.partition_seed, "shuffle", static_cast<std::uint64_t>(s)));
        sa.seed = static_cast<std::uint64_t>(s);
        const auto mt = compute_metrics(kg.graph, sa);
        rows.add(metrics_row(sa, ratio, mt));
        fr.push_back(mt.retained_fraction);
      }
      const auto ms = mean_std(fr);
      summary.add({fixed(ratio, 2), std::to_string(fr.size()), num(ms.mean), num(ms.std), fixed(100 * ms.mean, 2)});
      series.x.push_back(ratio);
      series.mean.push_back(ms.mean);
      series.std.push_back(ms.std);
      out.retained_frac.push_back(std::move(fr));
      out.summary.push_back(ms);
    }
  }
  write_csv(rows, at(c, files::shuffle_sweep), m);
  write_csv(summary, at(c, files::shuffle_summary), m);
  const PlotSeries random_line{"uniform random labelling",
                               {series.x.front(), series.x.back()},
                               {rnd.mean, rnd.mean},
                               {}};
  const std::vector<PlotSeries> plot{series, random_line};
  write_svg(line_plot_svg("Retained triples vs shuffling ratio", "shuffling ratio", "retained fraction", plot),
            at(c, files::shuffle_plot), m);
  m.set_metric("unshuffled_retained_frac", out.unshuffled);
  m.set_metric("random_expectation", out.random_expectation);

  if (with_finetune) {
    StageTimer t(m, "shuffle-finetune");
    const auto d = prepare_data(c);
    const auto base = nn::init_model(c.model);
    const auto sha = nn::parameter_digest(base);
    CsvTable ft({"shuffle_ratio", "run", "seed", "test_accuracy"});
    CsvTable fs_summary({"shuffle_ratio", "runs", "mean_accuracy", "std_accuracy", "formatted"});
    PlotSeries acc{"test accuracy (mean ± std)", {}, {}, {}};
    for (double ratio : c.sweep.ratios) {
      const auto sa = shuffle_assignment(a, ratio, derive_seed(c.partition_seed, "shuffle", 0));
      auto inf = infuse_all(c, d, sa, base, sha);
      std::vector<nn::AdapterStack<Real>> adapters;
      for (auto& ck : inf.checkpoints) adapters.push_back(std::move(ck.adapters));
      const auto runs = run_seeds(c, base, adapters, d.task, "mop", c.finetune_seeds);
      for (const auto& r : runs.runs)
        ft.add({fixed(ratio, 2), std::to_string(r.run), std::to_string(r.seed), num(r.test_accuracy)});
      const auto ms = mean_std(test_accuracies(runs.runs));
      fs_summary.add({fixed(ratio, 2), std::to_string(runs.runs.size()), num(ms.mean), num(ms.std), format_accuracy(ms)});
      acc.x.push_back(ratio);
      acc.mean.push_back(ms.mean);
      acc.std.push_back(ms.std);
    }
    write_csv(ft, at(c, files::shuffle_finetune), m);
    write_csv(fs_summary, at(c, files::shuffle_finetune_summary), m);
    const std::vector<PlotSeries> plot2{acc};
    write_svg(line_plot_svg("Downstream accuracy vs shuffling ratio", "shuffling ratio", "test accuracy", plot2),
              at(c, files::shuffle_finetune_plot), m);
  }
  return out;
}

std::vector<PartitionMetrics> cmd_k_sweep(const ExperimentConfig& cfg, RunManifest& m) {
  LoadedKg kg;
  {
    StageTimer t(m, "load");
    kg = load_kg(cfg);
  }
  std::vector<PartitionMetrics> out;
  CsvTable rows(metrics_header());
  PlotSeries series{"retained fraction", {}, {}, {}};
  {
    StageTimer t(m, "k-sweep");
    for (int k : cfg.sweep.k_values) {
      const auto a = partition(kg.graph, k, cfg.epsilon, cfg.partition_seed);
      const auto mt = compute_metrics(kg.graph, a);
      rows.add(metrics_row(a, 0.0, mt));
      series.x.push_back(k);
      series.mean.push_back(mt.retained_fraction);
      out.push_back(mt);
    }
  }
  write_csv(rows, at(cfg, files::k_sweep), m);
  const std::vector<PlotSeries> plot{series};
  write_svg(line_plot_svg("Retained triples vs number of partitions", "k", "retained fraction", plot),
            at(cfg, files::k_sweep_plot), m);
  return out;
}

std::vector<GroupResult> cmd_group_ablation(const ExperimentConfig& cfg, RunManifest& m) {
  auto c = cfg;
  const auto eval_path = at(c, files::infusion_eval);
  if (!fs::exists(eval_path)) throw ConfigError("no per-partition evaluation at " + eval_path.string() + "; run `mop infuse` first");
  const auto csv = read_csv(eval_path);
  std::map<int, double> hits, xent;
  for (const auto& row : csv.rows) {
    if (row[csv.column("skipped")] == "1") continue;
    const int p = std::stoi(row[csv.column("partition")]);
    hits[p] = std::stod(row[csv.column("hits_at_1")]);
    xent[p] = std::stod(row[csv.column("cross_entropy")]);
  }
  PreparedData d;
  {
    StageTimer t(m, "load");
    d = prepare_data(c);
  }
  const auto l = load_checkpoints(c);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < l.partitions.size(); ++i)
    if (hits.contains(l.partitions[i])) order.push_back(i);
  if (order.size() < 2) throw ConfigError("group ablation needs at least 2 infused partitions");
  // Higher hits@1 first, lower held-out cross-entropy breaks ties, NaN last.
  auto score = [&](std::size_t i) {
    const double h = hits.at(l.partitions[i]), ce = xent.at(l.partitions[i]);
    return std::pair{std::isnan(h) ? -1.0 : h, std::isnan(ce) ? -1e300 : -ce};
  };
  std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return score(x) > score(y); });

  // Downstream accuracy of every single-adapter model, the second ranking.
  std::vector<double> single(l.partitions.size(), std::nan(""));
  {
    StageTimer t(m, "single-adapter");
    for (auto i : order) single[i] = run_seeds(c, l.base, {l.adapters[i]}, d.task, "single", 1).runs[0].test_accuracy;
  }
  auto by_downstream = order;
  std::stable_sort(by_downstream.begin(), by_downstream.end(), [&](auto x, auto y) { return single[x] > single[y]; });
  CsvTable ranking({"partition", "hits_at_1", "hits_rank", "single_adapter_accuracy", "downstream_rank"});
  for (std::size_t r = 0; r < order.size(); ++r) {
    const auto i = order[r];
    const auto dr = std::find(by_downstream.begin(), by_downstream.end(), i) - by_downstream.begin();
    ranking.add({std::to_string(l.partitions[i]), num(hits.at(l.partitions[i])), std::to_string(r + 1),
                 num(single[i]), std::to_string(dr + 1)});
  }
  write_csv(ranking, at(c, files::partition_ranking), m);

  const auto K = order.size();
  const auto half = K / 2;
  std::vector<std::pair<std::string, std::vector<std::size_t>>> groups{
      {"all", order},
      {"top_half", {order.begin(), order.begin() + static_cast<long>(half)}},
      {"bottom_half", {order.end() - static_cast<long>(half), order.end()}}};
  if (K > 10) groups.emplace_back("top_10", std::vector<std::size_t>(order.begin(), order.begin() + 10));

  std::vector<GroupResult> out;
  CsvTable rows({"group", "num_adapters", "partitions", "run", "seed", "test_accuracy"});
  {
    StageTimer t(m, "groups");
    for (const auto& [name, idx] : groups) {
      GroupResult g;
      g.group = name;
      std::vector<nn::AdapterStack<Real>> adapters;
      for (auto i : idx) {
        g.partitions.push_back(l.partitions[i]);
        adapters.push_back(l.adapters[i]);
      }
      const auto runs = run_seeds(c, l.base, adapters, d.task, name, c.finetune_seeds);
      g.accuracy = test_accuracies(runs.runs);
      g.summary = mean_std(g.accuracy);
      for (const auto& r : runs.runs)
        rows.add({name, std::to_string(idx.size()), join_ids(g.partitions), std::to_string(r.run),
                  std::to_string(r.seed), num(r.test_accuracy)});
      out.push_back(std::move(g));
    }
  }
  write_csv(rows, at(c, files::group_ablation), m);
  CsvTable summary({"group", "num_adapters", "mean_accuracy", "std_accuracy", "formatted", "delta_vs_all"});
  for (const auto& g : out) {
    summary.add({g.group, std::to_string(g.partitions.size()), num(g.summary.mean), num(g.summary.std),
                 format_accuracy(g.summary), fixed(100 * (g.summary.mean - out.front().summary.mean), 2)});
    m.set_metric(g.group + "_accuracy", format_accuracy(g.summary));
  }
  write_csv(summary, at(c, files::group_summary), m);
  return out;
}

void cmd_full(const ExperimentConfig& cfg, RunManifest& m) {
  cmd_partition(cfg, m);
  cmd_infuse(cfg, m);
  cmd_finetune(cfg, true, m);
  cmd_shuffle_sweep(cfg, false, m);
  cmd_k_sweep(cfg, m);
  cmd_group_ablation(cfg, m);
}

void cmd_generate(const ExperimentConfig& cfg, RunManifest& m) {
  if (!cfg.synthetic_kg()) throw ConfigError("generate needs a synthetic KG config (no kg.path)");
  auto c = cfg;
  const auto d = prepare_data(c);
  fs::create_directories(c.out_dir);
  const auto kg_path = c.out_dir / "kg.tsv";
  write_triples(d.full, kg_path);
  std::string clusters;
  for (std::size_t e = 0; e < d.full.num_entities(); ++e)
    clusters += d.full.entities()[e].surface + '\t' + std::to_string(d.cluster[e]) + '\n';
  write_atomic(c.out_dir / "clusters.tsv", clusters);
  write_task_file(d.task, d.full, c.out_dir / "task.tsv");
  for (const char* f : {"kg.tsv", "clusters.tsv", "task.tsv"}) m.add_artifact(c.out_dir / f);
  m.set_metric("triples", d.full.num_triples());
  m.set_metric("task_examples", d.task.train.size() + d.task.dev.size() + d.task.test.size());
}

}  // namespace mop::pipeline
