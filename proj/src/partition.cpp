#include "mop/partition.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "mop/error.hpp"
#include "mop/rng.hpp"
#include "mop/text.hpp"

namespace mop {

long PartitionGraph::total_edge_weight() const {
  return std::accumulate(edge_weights.begin(), edge_weights.end(), 0L) / 2;
}

long PartitionGraph::total_node_weight() const {
  return std::accumulate(node_weights.begin(), node_weights.end(), 0L);
}

PartitionGraph PartitionGraph::from_edges(int n, std::span<const std::tuple<int, int, long>> edges,
                                          std::vector<long> node_weights) {
  std::vector<std::tuple<int, int, long>> canon;
  canon.reserve(edges.size());
  for (auto [u, v, w] : edges) {
    if (u < 0 || v < 0 || u >= n || v >= n) throw DataError("edge endpoint out of range");
    if (u == v) continue;
    if (u > v) std::swap(u, v);
    canon.emplace_back(u, v, w);
  }
  std::sort(canon.begin(), canon.end());
  std::vector<std::tuple<int, int, long>> merged;
  for (const auto& [u, v, w] : canon) {
    if (!merged.empty() && std::get<0>(merged.back()) == u && std::get<1>(merged.back()) == v)
      std::get<2>(merged.back()) += w;
    else
      merged.emplace_back(u, v, w);
  }

  PartitionGraph pg;
  pg.node_weights = node_weights.empty() ? std::vector<long>(static_cast<std::size_t>(n), 1L)
                                         : std::move(node_weights);
  if (pg.num_nodes() != n) throw DataError("node weight count does not match node count");
  std::vector<int> degree(static_cast<std::size_t>(n), 0);
  for (const auto& [u, v, w] : merged) {
    ++degree[u];
    ++degree[v];
  }
  pg.offsets.assign(static_cast<std::size_t>(n) + 1, 0);
  for (int v = 0; v < n; ++v) pg.offsets[v + 1] = pg.offsets[v] + degree[v];
  pg.neighbors.resize(static_cast<std::size_t>(pg.offsets[n]));
  pg.edge_weights.resize(pg.neighbors.size());
  // Edges are sorted by (u, v), so filling in this order leaves every
  // adjacency list sorted by neighbour id.
  std::vector<int> cursor(pg.offsets.begin(), pg.offsets.end() - 1);
  for (const auto& [u, v, w] : merged) {
    pg.neighbors[cursor[u]] = v;
    pg.edge_weights[cursor[u]++] = w;
    pg.neighbors[cursor[v]] = u;
    pg.edge_weights[cursor[v]++] = w;
  }
  return pg;
}

PartitionGraph build_partition_graph(const KnowledgeGraph& g) {
  std::vector<std::tuple<int, int, long>> edges;
  edges.reserve(g.num_triples());
  for (const auto& t : g.triples())
    if (t.head != t.tail) edges.emplace_back(t.head, t.tail, 1L);
  return PartitionGraph::from_edges(static_cast<int>(g.num_entities()), edges);
}

CoarseningResult coarsen_in_order(const PartitionGraph& pg, std::span<const int> order,
                                  long max_node_weight) {
  const int n = pg.num_nodes();
  std::vector<int> match(static_cast<std::size_t>(n), -1);
  for (int v : order) {
    if (match[v] != -1) continue;
    int best = -1;
    long best_w = -1;
    const auto nbrs = pg.adj(v);
    const auto wts = pg.adj_weights(v);
    for (std::size_t i = 0; i < nbrs.size(); ++i) {
      const int u = nbrs[i];
      if (match[u] != -1) continue;
      if (pg.node_weights[u] > max_node_weight - pg.node_weights[v]) continue;
      if (wts[i] > best_w || (wts[i] == best_w && u < best)) {
        best = u;
        best_w = wts[i];
      }
    }
    if (best >= 0) {
      match[v] = best;
      match[best] = v;
    } else {
      match[v] = v;
    }
  }

  CoarseningResult out;
  out.mapping.assign(static_cast<std::size_t>(n), -1);
  int next = 0;
  std::vector<long> coarse_weights;
  for (int v = 0; v < n; ++v) {
    if (out.mapping[v] != -1) continue;
    const int m = match[v] == -1 ? v : match[v];
    out.mapping[v] = next;
    out.mapping[m] = next;
    coarse_weights.push_back(pg.node_weights[v] + (m != v ? pg.node_weights[m] : 0));
    ++next;
  }

  std::vector<std::tuple<int, int, long>> edges;
  edges.reserve(pg.num_edges());
  for (int v = 0; v < n; ++v) {
    const auto nbrs = pg.adj(v);
    const auto wts = pg.adj_weights(v);
    for (std::size_t i = 0; i < nbrs.size(); ++i) {
      const int u = nbrs[i];
      if (u < v) continue;
      const int cv = out.mapping[v];
      const int cu = out.mapping[u];
      if (cv == cu)
        out.absorbed_weight += wts[i];
      else
        edges.emplace_back(cv, cu, wts[i]);
    }
  }
  out.graph = PartitionGraph::from_edges(next, edges, std::move(coarse_weights));
  out.progressed = next < n;
  return out;
}

CoarseningResult coarsen(const PartitionGraph& pg, std::uint64_t seed, long max_node_weight) {
  std::vector<int> order(static_cast<std::size_t>(pg.num_nodes()));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  return coarsen_in_order(pg, order, max_node_weight);
}

long max_part_weight(long total_weight, int k, double epsilon) {
  const long ideal = (total_weight + k - 1) / k;
  return static_cast<long>(std::floor((1.0 + epsilon) * static_cast<double>(ideal) + 1e-9));
}

std::vector<long> part_weights(const PartitionGraph& pg, const PartitionAssignment& a) {
  std::vector<long> w(static_cast<std::size_t>(a.k), 0L);
  for (int v = 0; v < pg.num_nodes(); ++v) w[a.part[v]] += pg.node_weights[v];
  return w;
}

long edge_cut(const PartitionGraph& pg, std::span<const int> part) {
  long cut = 0;
  for (int v = 0; v < pg.num_nodes(); ++v) {
    const auto nbrs = pg.adj(v);
    const auto wts = pg.adj_weights(v);
    for (std::size_t i = 0; i < nbrs.size(); ++i)
      if (nbrs[i] > v && part[nbrs[i]] != part[v]) cut += wts[i];
  }
  return cut;
}

bool is_balanced(const PartitionGraph& pg, const PartitionAssignment& a) {
  const long limit = max_part_weight(pg.total_node_weight(), a.k, a.epsilon);
  const auto w = part_weights(pg, a);
  const bool fits = std::all_of(w.begin(), w.end(), [&](long x) { return x <= limit; });
  const bool non_empty = pg.num_nodes() < a.k ||
                         std::all_of(w.begin(), w.end(), [](long x) { return x > 0; });
  return fits && non_empty;
}

PartitionAssignment initial_partition(const PartitionGraph& pg, int k, double epsilon,
                                      std::uint64_t seed) {
  const int n = pg.num_nodes();
  if (k < 1) throw ConfigError("k must be >= 1");
  if (k > n) throw ConfigError("k (" + std::to_string(k) + ") exceeds node count (" +
                               std::to_string(n) + ")");

  PartitionAssignment a;
  a.k = k;
  a.epsilon = epsilon;
  a.seed = seed;
  a.part.assign(static_cast<std::size_t>(n), -1);
  if (k == 1) {
    std::fill(a.part.begin(), a.part.end(), 0);
    return a;
  }

  Rng rng(seed);
  const long limit = max_part_weight(pg.total_node_weight(), k, epsilon);
  long remaining_weight = pg.total_node_weight();
  int remaining_nodes = n;
  std::vector<long> conn(static_cast<std::size_t>(n), 0);
  std::vector<char> skipped(static_cast<std::size_t>(n), 0);

  auto random_unassigned = [&]() -> int {
    std::vector<int> pool;
    for (int v = 0; v < n; ++v)
      if (a.part[v] == -1 && !skipped[v]) pool.push_back(v);
    if (pool.empty()) return -1;
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    return pool[pick(rng)];
  };

  for (int p = 0; p + 1 < k; ++p) {
    const int parts_left = k - p;
    const long target = remaining_weight / parts_left;
    long region = 0;
    std::fill(conn.begin(), conn.end(), 0);
    std::fill(skipped.begin(), skipped.end(), 0);
    // Ordered by (-connectivity, id): begin() is the best candidate.
    std::set<std::pair<long, int>> frontier;

    while (region < target || region == 0) {
      // Leave at least one node for every part still to be grown.
      if (remaining_nodes <= parts_left - 1) break;
      int v;
      if (frontier.empty()) {
        v = random_unassigned();
        if (v < 0) break;
      } else {
        v = frontier.begin()->second;
        frontier.erase(frontier.begin());
      }
      if (region > 0 && region + pg.node_weights[v] > limit) {
        skipped[v] = 1;
        continue;
      }
      a.part[v] = p;
      region += pg.node_weights[v];
      --remaining_nodes;
      const auto nbrs = pg.adj(v);
      const auto wts = pg.adj_weights(v);
      for (std::size_t i = 0; i < nbrs.size(); ++i) {
        const int u = nbrs[i];
        if (a.part[u] != -1 || skipped[u]) continue;
        if (conn[u] > 0) frontier.erase({-conn[u], u});
        conn[u] += wts[i];
        frontier.insert({-conn[u], u});
      }
    }
    remaining_weight -= region;
  }
  for (auto& p : a.part)
    if (p == -1) p = k - 1;
  return a;
}

namespace {

struct Connectivity {
  std::vector<long> to_part;
  std::vector<int> touched;

  explicit Connectivity(int k) : to_part(static_cast<std::size_t>(k), 0) {}

  void gather(const PartitionGraph& pg, std::span<const int> part, int v) {
    for (int q : touched) to_part[q] = 0;
    touched.clear();
    const auto nbrs = pg.adj(v);
    const auto wts = pg.adj_weights(v);
    for (std::size_t i = 0; i < nbrs.size(); ++i) {
      const int q = part[nbrs[i]];
      if (to_part[q] == 0) touched.push_back(q);
      to_part[q] += wts[i];
    }
  }
};

}  // namespace

PartitionAssignment refine(const PartitionGraph& pg, PartitionAssignment a, int max_passes) {
  const int n = pg.num_nodes();
  if (a.k <= 1 || n == 0) return a;
  const long limit = max_part_weight(pg.total_node_weight(), a.k, a.epsilon);
  auto weights = part_weights(pg, a);
  Connectivity conn(a.k);

  for (int pass = 0; pass < max_passes; ++pass) {
    int moves = 0;
    for (int v = 0; v < n; ++v) {
      const int from = a.part[v];
      conn.gather(pg, a.part, v);
      const long internal = conn.to_part[from];
      int best = -1;
      long best_conn = -1;
      for (int q : conn.touched) {
        if (q == from) continue;
        if (weights[q] + pg.node_weights[v] > limit) continue;
        const long c = conn.to_part[q];
        if (c > best_conn || (c == best_conn && q < best)) {
          best = q;
          best_conn = c;
        }
      }
      if (best < 0 || best_conn - internal <= 0) continue;
      if (weights[from] - pg.node_weights[v] <= 0) continue;
      a.part[v] = best;
      weights[from] -= pg.node_weights[v];
      weights[best] += pg.node_weights[v];
      ++moves;
    }
    if (moves == 0) break;
  }
  return a;
}

PartitionAssignment rebalance(const PartitionGraph& pg, PartitionAssignment a) {
  const int n = pg.num_nodes();
  if (a.k <= 1) return a;
  const long limit = max_part_weight(pg.total_node_weight(), a.k, a.epsilon);
  auto weights = part_weights(pg, a);
  Connectivity conn(a.k);

  for (int guard = 0; guard < n; ++guard) {
    const auto heaviest = std::max_element(weights.begin(), weights.end());
    if (*heaviest <= limit) break;
    const int from = static_cast<int>(heaviest - weights.begin());

    int best_v = -1, best_q = -1;
    long best_gain = std::numeric_limits<long>::min();
    for (int v = 0; v < n; ++v) {
      if (a.part[v] != from || weights[from] - pg.node_weights[v] <= 0) continue;
      conn.gather(pg, a.part, v);
      const long internal = conn.to_part[from];
      for (int q = 0; q < a.k; ++q) {
        if (q == from || weights[q] + pg.node_weights[v] > limit) continue;
        const long gain = conn.to_part[q] - internal;
        if (gain > best_gain) {
          best_gain = gain;
          best_v = v;
          best_q = q;
        }
      }
    }
    if (best_v < 0) break;
    a.part[best_v] = best_q;
    weights[from] -= pg.node_weights[best_v];
    weights[best_q] += pg.node_weights[best_v];
  }
  return a;
}

PartitionAssignment partition(const PartitionGraph& pg, int k, double epsilon,
                              std::uint64_t seed) {
  const int n = pg.num_nodes();
  if (k < 1) throw ConfigError("k must be >= 1");
  if (epsilon < 0) throw ConfigError("epsilon must be >= 0");
  if (k > n) throw ConfigError("k (" + std::to_string(k) + ") exceeds entity count (" +
                               std::to_string(n) + ")");
  if (k == 1) return {std::vector<int>(static_cast<std::size_t>(n), 0), 1, epsilon, seed};

  const int threshold = coarsening_threshold(k);
  const long max_node_weight =
      std::max(1L, static_cast<long>(1.5 * static_cast<double>(pg.total_node_weight()) /
                                     static_cast<double>(threshold)));

  std::vector<PartitionGraph> levels;
  std::vector<std::vector<int>> maps;
  auto current = [&]() -> const PartitionGraph& { return levels.empty() ? pg : levels.back(); };
  while (current().num_nodes() > threshold) {
    const int before = current().num_nodes();
    auto c = coarsen(current(), derive_seed(seed, "coarsen", levels.size()), max_node_weight);
    if (!c.progressed || c.graph.num_nodes() < k ||
        c.graph.num_nodes() > static_cast<int>(0.95 * before))
      break;
    maps.push_back(std::move(c.mapping));
    levels.push_back(std::move(c.graph));
  }

  constexpr int kRefinePasses = 10;
  constexpr int kGrowTries = 4;
  const PartitionGraph& coarsest = current();
  PartitionAssignment best;
  bool best_balanced = false;
  long best_cut = 0;
  for (int t = 0; t < kGrowTries; ++t) {
    auto a = refine(coarsest, initial_partition(coarsest, k, epsilon, derive_seed(seed, "grow", t)),
                    kRefinePasses);
    const bool balanced = is_balanced(coarsest, a);
    const long cut = edge_cut(coarsest, a.part);
    if (t == 0 || (balanced && !best_balanced) ||
        (balanced == best_balanced && cut < best_cut)) {
      best = std::move(a);
      best_balanced = balanced;
      best_cut = cut;
    }
  }

  for (std::size_t level = levels.size(); level-- > 0;) {
    const PartitionGraph& finer = level == 0 ? pg : levels[level - 1];
    std::vector<int> projected(static_cast<std::size_t>(finer.num_nodes()));
    for (int v = 0; v < finer.num_nodes(); ++v) projected[v] = best.part[maps[level][v]];
    best.part = std::move(projected);
    best = refine(finer, std::move(best), kRefinePasses);
  }
  best = refine(pg, rebalance(pg, std::move(best)), kRefinePasses);
  best.seed = seed;
  best.epsilon = epsilon;
  return best;
}

PartitionAssignment partition(const KnowledgeGraph& g, int k, double epsilon, std::uint64_t seed) {
  if (g.num_triples() == 0) throw DataError("cannot partition a graph without triples");
  return partition(build_partition_graph(g), k, epsilon, seed);
}

PartitionMetrics compute_metrics(const KnowledgeGraph& g, const PartitionAssignment& a) {
  if (a.part.size() != g.num_entities())
    throw DataError("assignment covers " + std::to_string(a.part.size()) + " entities, graph has " +
                    std::to_string(g.num_entities()));
  PartitionMetrics m;
  m.part_entity_counts.assign(static_cast<std::size_t>(a.k), 0);
  m.part_triple_counts.assign(static_cast<std::size_t>(a.k), 0);
  for (int p : a.part) {
    if (p < 0 || p >= a.k) throw DataError("part id out of range");
    ++m.part_entity_counts[p];
  }
  for (const auto& t : g.triples()) {
    const int ph = a.part[t.head];
    if (t.head == t.tail || ph == a.part[t.tail]) {
      ++m.retained_triples;
      ++m.part_triple_counts[ph];
    }
  }
  m.total_triples = g.num_triples();
  m.edge_cut = static_cast<long>(m.total_triples - m.retained_triples);
  m.retained_fraction = m.total_triples == 0 ? 1.0
                                             : static_cast<double>(m.retained_triples) /
                                                   static_cast<double>(m.total_triples);
  const auto n = g.num_entities();
  const auto ideal = (n + static_cast<std::size_t>(a.k) - 1) / static_cast<std::size_t>(a.k);
  const auto largest = *std::max_element(m.part_entity_counts.begin(), m.part_entity_counts.end());
  m.balance = ideal == 0 ? 0.0 : static_cast<double>(largest) / static_cast<double>(ideal);
  return m;
}

PartitionAssignment shuffle_assignment(const PartitionAssignment& a, double ratio,
                                       std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("shuffle ratio must lie in [0, 1]");
  const auto n = a.part.size();
  const auto m = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
  Rng rng(seed);
  std::vector<std::size_t> slots(n);
  std::iota(slots.begin(), slots.end(), std::size_t{0});
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(slots[i], slots[pick(rng)]);
  }
  std::vector<int> labels(m);
  for (std::size_t i = 0; i < m; ++i) labels[i] = a.part[slots[i]];
  std::shuffle(labels.begin(), labels.end(), rng);
  PartitionAssignment out = a;
  for (std::size_t i = 0; i < m; ++i) out.part[slots[i]] = labels[i];
  return out;
}

PartitionAssignment random_balanced_assignment(int n, int k, std::uint64_t seed) {
  if (k < 1) throw ConfigError("k must be >= 1");
  PartitionAssignment a;
  a.k = k;
  a.seed = seed;
  a.part.resize(static_cast<std::size_t>(n));
  for (int v = 0; v < n; ++v) a.part[v] = v % k;
  Rng rng(seed);
  std::shuffle(a.part.begin(), a.part.end(), rng);
  return a;
}

int SubGraph::local_id(int global) const {
  const auto it = std::lower_bound(entities.begin(), entities.end(), global);
  return it != entities.end() && *it == global ? static_cast<int>(it - entities.begin()) : -1;
}

std::vector<SubGraph> extract_subgraphs(const KnowledgeGraph& g, const PartitionAssignment& a) {
  if (a.part.size() != g.num_entities()) throw DataError("assignment does not cover the graph");
  std::vector<SubGraph> subs(static_cast<std::size_t>(a.k));
  std::vector<int> local(g.num_entities());
  for (int p = 0; p < a.k; ++p) subs[p].part = p;
  for (int e = 0; e < static_cast<int>(g.num_entities()); ++e) {
    auto& s = subs[a.part[e]];
    local[e] = static_cast<int>(s.entities.size());
    s.entities.push_back(e);
  }
  for (std::size_t i = 0; i < g.num_triples(); ++i) {
    const auto& t = g.triples()[i];
    if (a.part[t.head] != a.part[t.tail]) continue;
    auto& s = subs[a.part[t.head]];
    s.triple_ids.push_back(i);
    s.triples.push_back({local[t.head], t.relation, local[t.tail]});
  }
  for (auto& s : subs) {
    for (const auto& t : s.triples) s.tail_vocab.push_back(t.tail);
    std::sort(s.tail_vocab.begin(), s.tail_vocab.end());
    s.tail_vocab.erase(std::unique(s.tail_vocab.begin(), s.tail_vocab.end()), s.tail_vocab.end());
    s.tail_class.reserve(s.triples.size());
    for (const auto& t : s.triples) {
      const auto it = std::lower_bound(s.tail_vocab.begin(), s.tail_vocab.end(), t.tail);
      s.tail_class.push_back(static_cast<int>(it - s.tail_vocab.begin()));
    }
  }
  return subs;
}

void write_assignment(const KnowledgeGraph& g, const PartitionAssignment& a,
                      const std::filesystem::path& path) {
  if (a.part.size() != g.num_entities()) throw DataError("assignment does not cover the graph");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "k=" << a.k << " n=" << a.part.size() << " epsilon=" << shortest(a.epsilon)
      << " seed=" << a.seed << '\n';
  for (std::size_t e = 0; e < a.part.size(); ++e)
    out << g.entities()[e].surface << '\t' << a.part[e] << '\n';
}

PartitionAssignment read_assignment(const KnowledgeGraph& g, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open assignment " + path.string());
  std::string header;
  if (!std::getline(in, header)) throw DataError("assignment file is empty");

  PartitionAssignment a;
  std::size_t n = 0;
  bool have_k = false, have_n = false;
  std::istringstream fields(header);
  std::string kv;
  while (fields >> kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ParseError(path.string(), 1, "bad header field " + kv);
    const auto key = kv.substr(0, eq);
    const auto value = kv.substr(eq + 1);
    try {
      if (key == "k") {
        a.k = std::stoi(value);
        have_k = true;
      } else if (key == "n") {
        n = std::stoul(value);
        have_n = true;
      } else if (key == "epsilon") {
        a.epsilon = std::stod(value);
      } else if (key == "seed") {
        a.seed = std::stoull(value);
      } else {
        throw ParseError(path.string(), 1, "unknown header field " + key);
      }
    } catch (const std::logic_error&) {
      throw ParseError(path.string(), 1, "bad value for " + key);
    }
  }
  if (!have_k || !have_n) throw ParseError(path.string(), 1, "header needs k= and n=");
  if (n != g.num_entities())
    throw DataError("assignment has n=" + std::to_string(n) + " but graph has " +
                    std::to_string(g.num_entities()) + " entities");

  a.part.assign(n, -1);
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) throw ParseError(path.string(), line_no, "missing tab");
    const auto id = g.find_entity(line.substr(0, tab));
    if (!id) throw ParseError(path.string(), line_no, "unknown entity");
    int p;
    try {
      p = std::stoi(line.substr(tab + 1));
    } catch (const std::logic_error&) {
      throw ParseError(path.string(), line_no, "bad part id");
    }
    if (p < 0 || p >= a.k) throw ParseError(path.string(), line_no, "part id out of range");
    a.part[*id] = p;
  }
  if (std::find(a.part.begin(), a.part.end(), -1) != a.part.end())
    throw DataError("assignment file does not list every entity");
  return a;
}

}  // namespace mop
