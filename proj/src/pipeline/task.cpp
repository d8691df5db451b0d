#include "mop/pipeline/task.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "mop/error.hpp"
#include "mop/rng.hpp"
#include "mop/text.hpp"

namespace mop::pipeline {

namespace {

/// Fisher-Yates driven by hashed uniforms, independent of the standard
/// library's distribution implementations.
template <typename T>
void hash_shuffle(std::vector<T>& v, std::uint64_t seed) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(hash_uniform(derive_seed(seed, "shuffle", i)) * static_cast<double>(i));
    std::swap(v[i - 1], v[std::min(j, i - 1)]);
  }
}

void finish(TaskSplits& t, int num_labels) {
  for (auto* d : {&t.train, &t.dev, &t.test}) {
    d->num_labels = num_labels;
    d->type = nn::TaskType::multiclass;
  }
  if (t.test.size() == 0) throw DataError("task test split is empty");
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_labels), 0);
  for (int y : t.test.labels) ++counts[static_cast<std::size_t>(y)];
  const double n = static_cast<double>(t.test.size());
  t.chance = static_cast<double>(*std::max_element(counts.begin(), counts.end())) / n;
  t.chance_sigma = std::sqrt(t.chance * (1.0 - t.chance) / n);
}

}  // namespace

KnowledgeGraph filter_triples(const KnowledgeGraph& g, const std::vector<char>& keep) {
  KnowledgeGraph::Builder b;
  for (const auto& e : g.entities()) b.entity(e.surface);
  for (const auto& r : g.relations()) b.relation(r.surface);
  for (std::size_t i = 0; i < g.num_triples(); ++i)
    if (keep[i]) b.triple(g.triples()[i].head, g.triples()[i].relation, g.triples()[i].tail);
  return std::move(b).build();
}

KnowledgeGraph withhold_queries(const KnowledgeGraph& g, const TaskSplits& t) {
  std::set<std::pair<int, int>> asked;
  for (const auto& q : t.queries) asked.insert(q.begin(), q.end());
  std::vector<char> keep(g.num_triples());
  for (std::size_t i = 0; i < keep.size(); ++i)
    keep[i] = !asked.contains({g.triples()[i].head, g.triples()[i].relation});
  return filter_triples(g, keep);
}

TaskSplits build_synthetic_task(const KnowledgeGraph& g, const TokenVocabulary& v,
                                const std::vector<int>& cluster, const TaskSettings& s,
                                int max_len, std::uint64_t seed, std::vector<char>& is_task) {
  if (cluster.size() != g.num_entities()) throw DataError("cluster labels do not cover every entity");
  const auto& triples = g.triples();
  is_task.assign(triples.size(), 0);
  std::vector<int> heads;
  for (std::size_t i = 0; i < triples.size(); ++i) {
    if (hash_uniform(derive_seed(seed, "task-triple", i)) < s.fraction) {
      is_task[i] = 1;
      heads.push_back(triples[i].head);
    }
  }
  std::sort(heads.begin(), heads.end());
  heads.erase(std::unique(heads.begin(), heads.end()), heads.end());
  hash_shuffle(heads, derive_seed(seed, "task-heads"));
  const auto n = heads.size();
  const auto n_train = static_cast<std::size_t>(std::llround(s.train_fraction * static_cast<double>(n)));
  const auto n_dev = static_cast<std::size_t>(std::llround(s.dev_fraction * static_cast<double>(n)));
  std::map<int, int> split_of;
  for (std::size_t i = 0; i < n; ++i) split_of[heads[i]] = i < n_train ? 0 : i < n_train + n_dev ? 1 : 2;

  TaskSplits t;
  nn::TaskDataset* sets[] = {&t.train, &t.dev, &t.test};
  for (std::size_t i = 0; i < triples.size(); ++i) {
    if (!is_task[i]) continue;
    const auto& tr = triples[i];
    const int sp = split_of.at(tr.head);
    sets[sp]->inputs.push_back(serialize_query(g, v, tr.head, tr.relation, static_cast<std::size_t>(max_len)));
    sets[sp]->labels.push_back(cluster[static_cast<std::size_t>(tr.tail)] % s.num_labels);
    t.queries[static_cast<std::size_t>(sp)].emplace_back(tr.head, tr.relation);
  }
  if (t.train.size() == 0) throw DataError("task train split is empty; raise task.fraction");
  finish(t, s.num_labels);
  return t;
}

TaskSplits load_task_file(const std::filesystem::path& path, const KnowledgeGraph& g,
                          const TokenVocabulary& v, int num_labels, int max_len) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open task file " + path.string());
  TaskSplits t;
  nn::TaskDataset* sets[] = {&t.train, &t.dev, &t.test};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty() || line.front() == '#') continue;
    const auto cells = split(line, '\t');
    if (cells.size() != 4) throw ParseError(path.string(), line_no, "expected 4 tab-separated fields");
    const auto h = g.find_entity(cells[0]);
    const auto r = g.find_relation(cells[1]);
    if (!h) throw ParseError(path.string(), line_no, "unknown entity '" + cells[0] + "'");
    if (!r) throw ParseError(path.string(), line_no, "unknown relation '" + cells[1] + "'");
    int label = 0;
    const auto lt = trim(cells[2]);
    const auto [ptr, ec] = std::from_chars(lt.data(), lt.data() + lt.size(), label);
    if (ec != std::errc{} || ptr != lt.data() + lt.size() || label < 0 || label >= num_labels)
      throw ParseError(path.string(), line_no, "label must be an integer in [0, num_labels)");
    const auto split_name = std::string(trim(cells[3]));
    const int sp = split_name == "train" ? 0 : split_name == "dev" ? 1 : split_name == "test" ? 2 : -1;
    if (sp < 0) throw ParseError(path.string(), line_no, "split must be train, dev or test");
    sets[sp]->inputs.push_back(serialize_query(g, v, *h, *r, static_cast<std::size_t>(max_len)));
    sets[sp]->labels.push_back(label);
    t.queries[static_cast<std::size_t>(sp)].emplace_back(*h, *r);
  }
  if (t.train.size() == 0) throw DataError(path.string() + ": no training examples");
  finish(t, num_labels);
  return t;
}

void shuffle_task_labels(TaskSplits& t, std::uint64_t seed) {
  std::uint64_t i = 0;
  for (auto* d : {&t.train, &t.dev, &t.test}) hash_shuffle(d->labels, derive_seed(seed, "labels", i++));
  finish(t, t.train.num_labels);
}

void write_task_file(const TaskSplits& t, const KnowledgeGraph& g, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  const char* names[] = {"train", "dev", "test"};
  const nn::TaskDataset* sets[] = {&t.train, &t.dev, &t.test};
  for (std::size_t sp = 0; sp < 3; ++sp) {
    for (std::size_t i = 0; i < t.queries[sp].size(); ++i) {
      const auto [h, r] = t.queries[sp][i];
      out << g.entities()[static_cast<std::size_t>(h)].surface << '\t'
          << g.relations()[static_cast<std::size_t>(r)].surface << '\t' << sets[sp]->labels[i] << '\t'
          << names[sp] << '\n';
    }
  }
}

LoadedKg load_kg(const ExperimentConfig& cfg) {
  if (cfg.synthetic_kg()) {
    auto kg = generate_synthetic_kg(cfg.synthetic);
    return {std::move(kg.graph), std::move(kg.cluster)};
  }
  if (!std::filesystem::exists(cfg.kg_path)) throw DataError("KG file not found: " + cfg.kg_path.string());
  return {load_triples(cfg.kg_path), {}};
}

PreparedData prepare_data(ExperimentConfig& cfg) {
  PreparedData d;
  auto kg = load_kg(cfg);
  d.full = std::move(kg.graph);
  d.cluster = std::move(kg.cluster);
  d.vocab = TokenVocabulary(d.full);
  cfg.model.vocab_size = static_cast<int>(d.vocab.size());
  const auto task_seed = derive_seed(cfg.seed, "task");
  if (!cfg.task.path.empty()) {
    d.task = load_task_file(cfg.task.path, d.full, d.vocab, cfg.task.num_labels, cfg.model.max_len);
  } else {
    if (d.cluster.empty()) throw ConfigError("a file-backed KG needs task.path");
    std::vector<char> is_task;
    d.task = build_synthetic_task(d.full, d.vocab, d.cluster, cfg.task, cfg.model.max_len, task_seed, is_task);
  }
  d.infusion = withhold_queries(d.full, d.task);
  if (cfg.task.shuffle_labels) shuffle_task_labels(d.task, derive_seed(task_seed, "shuffle-labels"));
  return d;
}

}  // namespace mop::pipeline
