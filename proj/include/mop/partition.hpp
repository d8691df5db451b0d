#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <tuple>
#include <vector>

#include "mop/kg.hpp"

namespace mop {

/// Undirected weighted graph in CSR form. Edge weight between two entities is
/// the number of triples joining them in either direction; self-loops are
/// dropped.
struct PartitionGraph {
  std::vector<int> offsets{0};
  std::vector<int> neighbors;
  std::vector<long> edge_weights;
  std::vector<long> node_weights;

  int num_nodes() const noexcept { return static_cast<int>(node_weights.size()); }
  std::span<const int> adj(int v) const {
    return {neighbors.data() + offsets[v], neighbors.data() + offsets[v + 1]};
  }
  std::span<const long> adj_weights(int v) const {
    return {edge_weights.data() + offsets[v], edge_weights.data() + offsets[v + 1]};
  }
  /// Number of undirected edges.
  std::size_t num_edges() const noexcept { return neighbors.size() / 2; }
  long total_edge_weight() const;
  long total_node_weight() const;

  /// Builds a graph from an undirected edge list; parallel edges merge by
  /// summing weights and self-loops are ignored. Node weights default to 1.
  static PartitionGraph from_edges(int n, std::span<const std::tuple<int, int, long>> edges,
                                   std::vector<long> node_weights = {});
};

PartitionGraph build_partition_graph(const KnowledgeGraph& g);

struct CoarseningResult {
  PartitionGraph graph;
  /// Fine node -> coarse node.
  std::vector<int> mapping;
  /// Edge weight collapsed into merged nodes at this step.
  long absorbed_weight = 0;
  bool progressed = false;
};

inline constexpr long kUnboundedNodeWeight = std::numeric_limits<long>::max();

/// One heavy-edge matching step over an explicit visit order. Each unmatched
/// node pairs with its heaviest unmatched neighbour (ties: lowest id) provided
/// the merged weight stays within `max_node_weight`.
CoarseningResult coarsen_in_order(const PartitionGraph& pg, std::span<const int> order,
                                  long max_node_weight = kUnboundedNodeWeight);

/// Heavy-edge matching with a seeded random visit order.
CoarseningResult coarsen(const PartitionGraph& pg, std::uint64_t seed,
                         long max_node_weight = kUnboundedNodeWeight);

struct PartitionAssignment {
  std::vector<int> part;
  int k = 1;
  double epsilon = 0.03;
  std::uint64_t seed = 0;

  int num_nodes() const noexcept { return static_cast<int>(part.size()); }
  friend bool operator==(const PartitionAssignment&, const PartitionAssignment&) = default;
};

/// floor((1 + epsilon) * ceil(total_weight / k)).
long max_part_weight(long total_weight, int k, double epsilon);

std::vector<long> part_weights(const PartitionGraph& pg, const PartitionAssignment& a);
long edge_cut(const PartitionGraph& pg, std::span<const int> part);
bool is_balanced(const PartitionGraph& pg, const PartitionAssignment& a);

/// Greedy graph growing. Each of the first k-1 regions grows from a random
/// unassigned node, absorbing the unassigned neighbour with the highest
/// connectivity to the region until it reaches floor(remaining / parts left).
/// The remainder becomes the last part. Check the result with is_balanced().
PartitionAssignment initial_partition(const PartitionGraph& pg, int k, double epsilon,
                                      std::uint64_t seed);

/// Boundary FM passes with positive-gain moves only; never increases the cut
/// and never violates the balance bound.
PartitionAssignment refine(const PartitionGraph& pg, PartitionAssignment a, int max_passes);

/// Moves nodes out of overweight parts (cheapest cut increase first) until
/// every part is within max_part_weight, when that is reachable.
PartitionAssignment rebalance(const PartitionGraph& pg, PartitionAssignment a);

inline int coarsening_threshold(int k) { return std::max(40 * k, 200); }

/// Multilevel k-way partition: coarsen, grow, then project and refine level by
/// level. Deterministic per (g, k, epsilon, seed).
PartitionAssignment partition(const KnowledgeGraph& g, int k, double epsilon = 0.03,
                              std::uint64_t seed = 0);
PartitionAssignment partition(const PartitionGraph& pg, int k, double epsilon,
                              std::uint64_t seed);

struct PartitionMetrics {
  std::size_t total_triples = 0;
  std::size_t retained_triples = 0;
  double retained_fraction = 0.0;
  long edge_cut = 0;
  double balance = 0.0;
  std::vector<std::size_t> part_entity_counts;
  std::vector<std::size_t> part_triple_counts;
};

/// Self-loop triples always count as retained.
PartitionMetrics compute_metrics(const KnowledgeGraph& g, const PartitionAssignment& a);

/// Permutes the labels of floor(ratio * n) uniformly chosen entities among
/// themselves, so per-part sizes are unchanged.
PartitionAssignment shuffle_assignment(const PartitionAssignment& a, double ratio,
                                       std::uint64_t seed);

/// Uniformly random assignment with part sizes as equal as possible.
PartitionAssignment random_balanced_assignment(int n, int k, std::uint64_t seed);

struct SubGraph {
  int part = 0;
  /// Local id -> global entity id.
  std::vector<int> entities;
  /// Indices into the parent graph's triple list.
  std::vector<std::size_t> triple_ids;
  /// Triples with local entity ids (relation ids stay global).
  std::vector<Triple> triples;
  /// Local entity ids that occur as a tail, sorted; position = head class.
  std::vector<int> tail_vocab;
  /// Per local triple: index of its tail within tail_vocab.
  std::vector<int> tail_class;

  int local_id(int global) const;
};

std::vector<SubGraph> extract_subgraphs(const KnowledgeGraph& g, const PartitionAssignment& a);

/// Header `k=<k> n=<n> epsilon=<eps> seed=<seed>` then `surface<TAB>part`.
void write_assignment(const KnowledgeGraph& g, const PartitionAssignment& a,
                      const std::filesystem::path& path);
PartitionAssignment read_assignment(const KnowledgeGraph& g, const std::filesystem::path& path);

}  // namespace mop
