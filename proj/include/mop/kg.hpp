#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mop {

using TokenSeq = std::vector<int>;

struct EntityRecord {
  int id = 0;
  std::string surface;
};

struct RelationRecord {
  int id = 0;
  std::string surface;
};

struct Triple {
  int head = 0;
  int relation = 0;
  int tail = 0;

  friend bool operator==(const Triple&, const Triple&) = default;
};

/// Lowercases, trims, and collapses whitespace runs. Throws DataError when the
/// result is empty.
std::string normalize_surface(std::string_view raw);

/// Entity and relation vocabularies plus a triple multiset. Immutable once
/// built; use KnowledgeGraph::Builder to construct one.
class KnowledgeGraph {
 public:
  class Builder {
   public:
    /// Returns the id of the (normalized) surface, inserting it if new.
    int entity(std::string_view surface);
    int relation(std::string_view surface);
    void triple(int head, int relation, int tail);
    void triple(std::string_view head, std::string_view relation, std::string_view tail);
    KnowledgeGraph build() &&;

   private:
    std::vector<EntityRecord> entities_;
    std::vector<RelationRecord> relations_;
    std::vector<Triple> triples_;
    std::unordered_map<std::string, int> entity_index_;
    std::unordered_map<std::string, int> relation_index_;
  };

  KnowledgeGraph() = default;

  const std::vector<EntityRecord>& entities() const noexcept { return entities_; }
  const std::vector<RelationRecord>& relations() const noexcept { return relations_; }
  const std::vector<Triple>& triples() const noexcept { return triples_; }

  std::size_t num_entities() const noexcept { return entities_.size(); }
  std::size_t num_relations() const noexcept { return relations_.size(); }
  std::size_t num_triples() const noexcept { return triples_.size(); }

  std::optional<int> find_entity(std::string_view surface) const;
  std::optional<int> find_relation(std::string_view surface) const;

 private:
  std::vector<EntityRecord> entities_;
  std::vector<RelationRecord> relations_;
  std::vector<Triple> triples_;
  std::unordered_map<std::string, int> entity_index_;
  std::unordered_map<std::string, int> relation_index_;
};

struct LoadReport {
  std::size_t entities = 0;
  std::size_t relations = 0;
  std::size_t triples = 0;
  std::size_t comment_lines = 0;
};

enum class TripleFormat { tsv };

/// Reads `head<TAB>relation<TAB>tail` lines. `#` lines and blank lines are
/// skipped. Duplicate triples are kept.
KnowledgeGraph load_triples(const std::filesystem::path& path,
                            TripleFormat format = TripleFormat::tsv,
                            LoadReport* report = nullptr);

void write_triples(const KnowledgeGraph& g, const std::filesystem::path& path);

/// Word-level vocabulary over entity and relation surfaces. Specials take ids
/// 0-3; remaining tokens are numbered by first appearance (entities in id
/// order, then relations).
class TokenVocabulary {
 public:
  static constexpr int kCls = 0;
  static constexpr int kSep = 1;
  static constexpr int kPad = 2;
  static constexpr int kUnk = 3;

  TokenVocabulary();
  explicit TokenVocabulary(const KnowledgeGraph& g);

  int lookup(std::string_view token) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const noexcept { return tokens_.size(); }

  /// Whitespace tokenization of an already normalized surface.
  TokenSeq encode(std::string_view surface) const;

  /// One token per line; line number is the id.
  void dump(const std::filesystem::path& path) const;
  static TokenVocabulary load(const std::filesystem::path& path);

 private:
  void add(const std::string& tok);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// `[CLS] head [SEP] relation [SEP]`, truncated to max_len and right-padded.
/// The tail surface is never part of the sequence.
TokenSeq serialize_query(const KnowledgeGraph& g, const TokenVocabulary& v, int head,
                         int relation, std::size_t max_len);

TokenSeq serialize_triple(const KnowledgeGraph& g, const TokenVocabulary& v,
                          std::size_t triple_index, std::size_t max_len);

struct SyntheticKgParams {
  int num_clusters = 4;
  int entities_per_cluster = 50;
  double intra_edge_prob = 0.2;
  double inter_edge_prob = 0.005;
  int num_relations = 5;
  std::uint64_t seed = 0;
  /// Optional explicit cluster sizes; overrides num_clusters and
  /// entities_per_cluster when non-empty.
  std::vector<int> cluster_sizes;
};

struct SyntheticKg {
  KnowledgeGraph graph;
  /// Planted cluster of every entity, indexed by entity id.
  std::vector<int> cluster;
  int num_clusters = 0;
};

/// Planted-partition generator. Entities are named `e<i>`, relations `r<j>`.
/// One Bernoulli draw per ordered pair (self-pairs excluded); bit-identical
/// for a fixed parameter set.
SyntheticKg generate_synthetic_kg(const SyntheticKgParams& params);

SyntheticKg generate_synthetic_kg(int num_clusters, int entities_per_cluster,
                                  double intra_edge_prob, double inter_edge_prob,
                                  int num_relations, std::uint64_t seed);

}  // namespace mop
