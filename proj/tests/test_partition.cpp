#include <doctest.h>

#include <map>
#include <numeric>
#include <set>

#include "mop/error.hpp"
#include "mop/partition.hpp"
#include "mop/rng.hpp"
#include "support.hpp"

using namespace mop;

namespace {

/// Independent pair counter: unordered entity pairs with >= 1 non-loop triple.
std::map<std::pair<int, int>, long> brute_pairs(const KnowledgeGraph& g) {
  std::map<std::pair<int, int>, long> pairs;
  for (const auto& t : g.triples())
    if (t.head != t.tail) ++pairs[{std::min(t.head, t.tail), std::max(t.head, t.tail)}];
  return pairs;
}

/// Brute-force cut: sum of weights over edges whose endpoints differ.
long brute_cut(const PartitionGraph& pg, const std::vector<int>& part) {
  long cut = 0;
  for (int v = 0; v < pg.num_nodes(); ++v)
    for (std::size_t i = 0; i < pg.adj(v).size(); ++i)
      if (pg.adj(v)[i] > v && part[pg.adj(v)[i]] != part[v]) cut += pg.adj_weights(v)[i];
  return cut;
}

PartitionGraph two_cliques(int size) {
  std::vector<std::tuple<int, int, long>> e;
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < size; ++i)
      for (int j = i + 1; j < size; ++j) e.emplace_back(c * size + i, c * size + j, 1);
  return PartitionGraph::from_edges(2 * size, e);
}

PartitionGraph random_graph(int n, double p, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<long> w(1, 4);
  std::vector<std::tuple<int, int, long>> e;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (u(rng) < p) e.emplace_back(i, j, w(rng));
  return PartitionGraph::from_edges(n, e);
}

}  // namespace

TEST_CASE("partition graph merges directions and drops self-loops") {
  const auto g = test::make_graph({{"a", "r", "b"}, {"b", "s", "a"}, {"c", "r", "c"}});
  const auto pg = build_partition_graph(g);
  CHECK(pg.num_nodes() == 3);
  CHECK(pg.num_edges() == 1);
  const int a = *g.find_entity("a");
  REQUIRE(pg.adj(a).size() == 1);
  CHECK(pg.adj_weights(a)[0] == 2);
  CHECK(pg.adj(*g.find_entity("c")).empty());
}

TEST_CASE("partition graph edges match a brute-force pair count") {
  const auto g = generate_synthetic_kg(4, 30, 0.2, 0.01, 3, 17).graph;
  const auto pg = build_partition_graph(g);
  const auto pairs = brute_pairs(g);
  CHECK(pg.num_edges() == pairs.size());
  for (int v = 0; v < pg.num_nodes(); ++v)
    for (std::size_t i = 0; i < pg.adj(v).size(); ++i) {
      const int u = pg.adj(v)[i];
      CHECK(pairs.at({std::min(u, v), std::max(u, v)}) == pg.adj_weights(v)[i]);
      const auto back = pg.adj(u);
      const auto it = std::find(back.begin(), back.end(), v);
      REQUIRE(it != back.end());
      CHECK(pg.adj_weights(u)[static_cast<std::size_t>(it - back.begin())] == pg.adj_weights(v)[i]);
    }
}

TEST_CASE("coarsening follows the heavy edge") {
  const std::vector<std::tuple<int, int, long>> e{{0, 1, 5}, {1, 2, 1}};
  const auto pg = PartitionGraph::from_edges(3, e);
  const std::vector<int> order{0, 1, 2};
  const auto c = coarsen_in_order(pg, order);
  CHECK(c.progressed);
  CHECK(c.graph.num_nodes() == 2);
  CHECK(c.graph.num_edges() == 1);
  CHECK(c.graph.edge_weights[0] == 1);
  CHECK(c.mapping[0] == c.mapping[1]);
  CHECK(c.absorbed_weight == 5);
}

TEST_CASE("coarsening an edgeless graph makes no progress") {
  const auto pg = PartitionGraph::from_edges(5, std::span<const std::tuple<int, int, long>>{});
  const auto c = coarsen(pg, 1);
  CHECK_FALSE(c.progressed);
  CHECK(c.graph.num_nodes() == 5);
}

TEST_CASE("coarsening conserves total edge weight and node weight") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto pg = random_graph(200, 0.05, seed);
    const auto c = coarsen(pg, seed);
    CHECK(c.graph.total_edge_weight() + c.absorbed_weight == pg.total_edge_weight());
    CHECK(c.graph.total_node_weight() == pg.total_node_weight());
    CHECK(c.graph.num_nodes() < pg.num_nodes());
    CHECK(2 * c.graph.num_nodes() >= pg.num_nodes());
  }
}

TEST_CASE("initial partition edge cases") {
  const auto pg = random_graph(30, 0.2, 3);
  const auto one = initial_partition(pg, 1, 0.03, 0);
  CHECK(std::all_of(one.part.begin(), one.part.end(), [](int p) { return p == 0; }));
  CHECK(edge_cut(pg, one.part) == 0);

  const auto each = initial_partition(pg, 30, 0.03, 0);
  CHECK(std::set<int>(each.part.begin(), each.part.end()).size() == 30);
  CHECK_THROWS_AS(initial_partition(pg, 31, 0.03, 0), ConfigError);
}

TEST_CASE("two disconnected cliques split cleanly for every start seed") {
  const auto pg = two_cliques(8);
  for (std::uint64_t seed = 0; seed < 16; ++seed) {
    const auto a = initial_partition(pg, 2, 0.03, seed);
    CHECK(edge_cut(pg, a.part) == 0);
    CHECK(is_balanced(pg, a));
  }
}

TEST_CASE("refine restores a misplaced node and leaves a local optimum alone") {
  const auto base = two_cliques(8);
  PartitionAssignment good{std::vector<int>(16, 0), 2, 0.2, 0};
  for (int i = 8; i < 16; ++i) good.part[i] = 1;
  CHECK(refine(base, good, 10) == good);

  auto bad = good;
  bad.part[3] = 1;
  const auto fixed = refine(base, bad, 10);
  CHECK(edge_cut(base, fixed.part) == 0);
  CHECK(fixed.part[3] == 0);
}

TEST_CASE("refine never increases the cut and keeps balance") {
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    const auto pg = random_graph(50, 0.1, 1000 + trial);
    const auto a = random_balanced_assignment(50, 2, trial);
    const auto r = refine(pg, a, 10);
    CHECK(edge_cut(pg, r.part) <= edge_cut(pg, a.part));
    CHECK(is_balanced(pg, r));
  }
}

TEST_CASE("cut equals brute-force cut") {
  const auto pg = random_graph(60, 0.1, 5);
  const auto a = random_balanced_assignment(60, 3, 9);
  CHECK(edge_cut(pg, a.part) == brute_cut(pg, a.part));
}

TEST_CASE("partition is balanced, deterministic, and handles k=1") {
  const auto g = generate_synthetic_kg(4, 60, 0.15, 0.01, 3, 21).graph;
  const auto pg = build_partition_graph(g);
  for (int k : {1, 2, 3, 5, 7}) {
    const auto a = partition(g, k, 0.03, 4);
    CHECK(a.k == k);
    const long limit = static_cast<long>(1.03 * ((240 + k - 1) / k));
    for (auto w : part_weights(pg, a)) {
      CHECK(w <= limit);
      CHECK(w > 0);
    }
    CHECK(a == partition(g, k, 0.03, 4));
  }
  CHECK(compute_metrics(g, partition(g, 1, 0.03, 0)).retained_fraction == 1.0);
}

TEST_CASE("partition recovers planted clusters") {
  const auto kg = generate_synthetic_kg(4, 100, 0.2, 0.005, 3, 8);
  const auto a = partition(kg.graph, 4, 0.03, 8);
  const PartitionAssignment planted{kg.cluster, 4, 0.03, 0};
  const auto got = compute_metrics(kg.graph, a).retained_fraction;
  const auto want = compute_metrics(kg.graph, planted).retained_fraction;
  CHECK(got >= 0.9 * want);
}

TEST_CASE("metrics: cut/retention duality against brute force") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    KnowledgeGraph::Builder b;
    Rng rng(seed);
    std::uniform_int_distribution<int> node(0, 19);
    for (int i = 0; i < 20; ++i) b.entity("n" + std::to_string(i));
    b.relation("r");
    for (int i = 0; i < 80; ++i) b.triple(node(rng), 0, node(rng));
    const auto g = std::move(b).build();
    const auto a = random_balanced_assignment(20, 3, seed);
    const auto m = compute_metrics(g, a);
    std::size_t kept = 0;
    for (const auto& t : g.triples()) kept += a.part[t.head] == a.part[t.tail];
    CHECK(m.retained_triples == kept);
    CHECK(m.edge_cut == static_cast<long>(g.num_triples() - kept));
    CHECK(m.edge_cut == brute_cut(build_partition_graph(g), a.part));
    CHECK(std::accumulate(m.part_triple_counts.begin(), m.part_triple_counts.end(), std::size_t{0}) == kept);
  }
}

TEST_CASE("metrics edge cases") {
  const auto g = test::make_graph({{"a", "r", "b"}, {"b", "r", "c"}, {"c", "r", "c"}});
  const auto all = compute_metrics(g, PartitionAssignment{{0, 0, 0}, 1});
  CHECK(all.retained_fraction == 1.0);
  CHECK(all.edge_cut == 0);
  const auto each = compute_metrics(g, PartitionAssignment{{0, 1, 2}, 3});
  CHECK(each.retained_triples == 1);
  CHECK_THROWS_AS(compute_metrics(g, PartitionAssignment{{0, 0}, 1}), DataError);
}

TEST_CASE("uniform random assignment retains about sum of squared part shares") {
  const auto g = generate_synthetic_kg(5, 80, 0.1, 0.01, 3, 31).graph;
  const int k = 5;
  const double n = static_cast<double>(g.num_entities());
  double sum = 0, sum_sq = 0;
  const int trials = 40;
  for (int s = 0; s < trials; ++s) {
    const auto a = random_balanced_assignment(static_cast<int>(g.num_entities()), k, 500 + s);
    const auto m = compute_metrics(g, a);
    double expect = 0;
    for (auto c : m.part_entity_counts) expect += (c / n) * (c / n);
    sum += m.retained_fraction - expect;
    sum_sq += (m.retained_fraction - expect) * (m.retained_fraction - expect);
  }
  const double mean = sum / trials;
  const double sd = std::sqrt(sum_sq / trials - mean * mean);
  CHECK(std::abs(mean) < 3 * sd / std::sqrt(trials) + 1e-3);
}

TEST_CASE("shuffle preserves part sizes and is deterministic") {
  const auto a = random_balanced_assignment(101, 7, 3);
  auto counts = [](const PartitionAssignment& x) {
    std::vector<int> c(static_cast<std::size_t>(x.k), 0);
    for (int p : x.part) ++c[p];
    return c;
  };
  for (double r : {0.0, 0.1, 0.5, 1.0}) {
    const auto s = shuffle_assignment(a, r, 77);
    CHECK(counts(s) == counts(a));
    CHECK(s == shuffle_assignment(a, r, 77));
    int moved = 0;
    for (std::size_t i = 0; i < a.part.size(); ++i) moved += a.part[i] != s.part[i];
    CHECK(moved <= static_cast<int>(r * 101));
  }
  CHECK(shuffle_assignment(a, 0.0, 5).part == a.part);
  CHECK_THROWS_AS(shuffle_assignment(a, 1.5, 5), ConfigError);
}

TEST_CASE("subgraphs partition the retained triples") {
  const auto kg = generate_synthetic_kg(3, 20, 0.3, 0.02, 3, 12);
  const auto a = partition(kg.graph, 3, 0.03, 1);
  const auto subs = extract_subgraphs(kg.graph, a);
  REQUIRE(subs.size() == 3);
  std::size_t total = 0;
  for (const auto& sg : subs) {
    total += sg.triples.size();
    CHECK(std::is_sorted(sg.entities.begin(), sg.entities.end()));
    std::set<int> tails;
    for (std::size_t i = 0; i < sg.triples.size(); ++i) {
      const auto& t = sg.triples[i];
      CHECK(t.head >= 0);
      CHECK(t.head < static_cast<int>(sg.entities.size()));
      CHECK(t.tail < static_cast<int>(sg.entities.size()));
      tails.insert(t.tail);
      CHECK(sg.tail_vocab[sg.tail_class[i]] == t.tail);
    }
    CHECK(tails.size() == sg.tail_vocab.size());
  }
  CHECK(total == compute_metrics(kg.graph, a).retained_triples);

  const auto one = extract_subgraphs(kg.graph, PartitionAssignment{std::vector<int>(60, 0), 1});
  CHECK(one[0].triples.size() == kg.graph.num_triples());

  const auto sep = generate_synthetic_kg(3, 10, 0.5, 0.0, 2, 4);
  const auto planted = extract_subgraphs(sep.graph, PartitionAssignment{sep.cluster, 3});
  std::size_t kept = 0;
  for (const auto& sg : planted) kept += sg.triples.size();
  CHECK(kept == sep.graph.num_triples());
}

TEST_CASE("assignment file round trip") {
  test::TempDir dir("assign");
  const auto g = generate_synthetic_kg(2, 10, 0.3, 0.05, 2, 1).graph;
  const auto a = partition(g, 2, 0.05, 9);
  write_assignment(g, a, dir / "a.txt");
  const auto text = test::read_file(dir / "a.txt");
  CHECK(text.rfind("k=2 n=20 epsilon=0.05 seed=9\n", 0) == 0);
  CHECK(read_assignment(g, dir / "a.txt") == a);
}
