#include "mop/kg.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <random>
#include <sstream>

#include "mop/error.hpp"
#include "mop/rng.hpp"

namespace mop {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

}  // namespace

std::string normalize_surface(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  bool pending_space = false;
  for (char c : raw) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  if (out.empty()) throw DataError("surface form is empty after normalization");
  return out;
}

int KnowledgeGraph::Builder::entity(std::string_view surface) {
  auto norm = normalize_surface(surface);
  auto [it, inserted] = entity_index_.try_emplace(norm, static_cast<int>(entities_.size()));
  if (inserted) entities_.push_back({it->second, std::move(norm)});
  return it->second;
}

int KnowledgeGraph::Builder::relation(std::string_view surface) {
  auto norm = normalize_surface(surface);
  auto [it, inserted] = relation_index_.try_emplace(norm, static_cast<int>(relations_.size()));
  if (inserted) relations_.push_back({it->second, std::move(norm)});
  return it->second;
}

void KnowledgeGraph::Builder::triple(int head, int relation, int tail) {
  const auto ne = static_cast<int>(entities_.size());
  const auto nr = static_cast<int>(relations_.size());
  if (head < 0 || head >= ne || tail < 0 || tail >= ne || relation < 0 || relation >= nr)
    throw DataError("triple references an unknown entity or relation id");
  triples_.push_back({head, relation, tail});
}

void KnowledgeGraph::Builder::triple(std::string_view head, std::string_view relation,
                                     std::string_view tail) {
  const int h = entity(head);
  const int r = this->relation(relation);
  const int t = entity(tail);
  triples_.push_back({h, r, t});
}

KnowledgeGraph KnowledgeGraph::Builder::build() && {
  KnowledgeGraph g;
  g.entities_ = std::move(entities_);
  g.relations_ = std::move(relations_);
  g.triples_ = std::move(triples_);
  g.entity_index_ = std::move(entity_index_);
  g.relation_index_ = std::move(relation_index_);
  return g;
}

std::optional<int> KnowledgeGraph::find_entity(std::string_view surface) const {
  auto it = entity_index_.find(normalize_surface(surface));
  if (it == entity_index_.end()) return std::nullopt;
  return it->second;
}

std::optional<int> KnowledgeGraph::find_relation(std::string_view surface) const {
  auto it = relation_index_.find(normalize_surface(surface));
  if (it == relation_index_.end()) return std::nullopt;
  return it->second;
}

KnowledgeGraph load_triples(const std::filesystem::path& path, TripleFormat,
                            LoadReport* report) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open triple file " + path.string());

  KnowledgeGraph::Builder builder;
  LoadReport local;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (std::all_of(line.begin(), line.end(), is_space)) continue;
    if (line.front() == '#') {
      ++local.comment_lines;
      continue;
    }
    const auto fields = split_tabs(line);
    if (fields.size() != 3)
      throw ParseError(path.string(), line_no,
                       "expected 3 tab-separated fields, found " + std::to_string(fields.size()));
    try {
      builder.triple(fields[0], fields[1], fields[2]);
    } catch (const DataError& e) {
      throw ParseError(path.string(), line_no, e.what());
    }
  }

  auto g = std::move(builder).build();
  if (g.num_triples() == 0) throw DataError("triple file " + path.string() + " is empty");
  local.entities = g.num_entities();
  local.relations = g.num_relations();
  local.triples = g.num_triples();
  if (report) *report = local;
  return g;
}

void write_triples(const KnowledgeGraph& g, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& t : g.triples()) {
    out << g.entities()[t.head].surface << '\t' << g.relations()[t.relation].surface << '\t'
        << g.entities()[t.tail].surface << '\n';
  }
}

TokenVocabulary::TokenVocabulary() {
  for (const char* s : {"[CLS]", "[SEP]", "[PAD]", "[UNK]"}) add(s);
}

TokenVocabulary::TokenVocabulary(const KnowledgeGraph& g) : TokenVocabulary() {
  auto add_words = [this](const std::string& surface) {
    std::istringstream words(surface);
    std::string w;
    while (words >> w) add(w);
  };
  for (const auto& e : g.entities()) add_words(e.surface);
  for (const auto& r : g.relations()) add_words(r.surface);
}

void TokenVocabulary::add(const std::string& tok) {
  if (index_.try_emplace(tok, static_cast<int>(tokens_.size())).second) tokens_.push_back(tok);
}

int TokenVocabulary::lookup(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

TokenSeq TokenVocabulary::encode(std::string_view surface) const {
  TokenSeq ids;
  std::istringstream words{std::string(surface)};
  std::string w;
  while (words >> w) ids.push_back(lookup(w));
  return ids;
}

void TokenVocabulary::dump(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

TokenVocabulary TokenVocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary " + path.string());
  TokenVocabulary v;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    if (line_no < 4) {
      if (line != v.tokens_[line_no])
        throw ParseError(path.string(), line_no + 1, "special tokens must come first");
    } else {
      v.add(line);
    }
    ++line_no;
  }
  return v;
}

TokenSeq serialize_query(const KnowledgeGraph& g, const TokenVocabulary& v, int head,
                         int relation, std::size_t max_len) {
  if (max_len < 4) throw ConfigError("max_len must be at least 4");
  TokenSeq seq;
  seq.reserve(max_len + 8);
  seq.push_back(TokenVocabulary::kCls);
  for (int id : v.encode(g.entities().at(static_cast<std::size_t>(head)).surface)) seq.push_back(id);
  seq.push_back(TokenVocabulary::kSep);
  for (int id : v.encode(g.relations().at(static_cast<std::size_t>(relation)).surface))
    seq.push_back(id);
  seq.push_back(TokenVocabulary::kSep);
  seq.resize(max_len, TokenVocabulary::kPad);
  return seq;
}

TokenSeq serialize_triple(const KnowledgeGraph& g, const TokenVocabulary& v,
                          std::size_t triple_index, std::size_t max_len) {
  const auto& t = g.triples().at(triple_index);
  return serialize_query(g, v, t.head, t.relation, max_len);
}

SyntheticKg generate_synthetic_kg(const SyntheticKgParams& p) {
  auto valid_prob = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (!valid_prob(p.intra_edge_prob) || !valid_prob(p.inter_edge_prob))
    throw ConfigError("edge probabilities must lie in [0, 1]");
  if (p.num_relations < 1) throw ConfigError("num_relations must be >= 1");

  std::vector<int> sizes = p.cluster_sizes;
  if (sizes.empty()) {
    if (p.num_clusters < 1 || p.entities_per_cluster < 1)
      throw ConfigError("num_clusters and entities_per_cluster must be >= 1");
    sizes.assign(static_cast<std::size_t>(p.num_clusters), p.entities_per_cluster);
  }
  if (std::any_of(sizes.begin(), sizes.end(), [](int s) { return s < 1; }))
    throw ConfigError("cluster sizes must be >= 1");
  if (sizes.size() > 1 && !(p.intra_edge_prob > p.inter_edge_prob))
    throw ConfigError("intra_edge_prob must exceed inter_edge_prob");

  SyntheticKg out;
  out.num_clusters = static_cast<int>(sizes.size());
  KnowledgeGraph::Builder b;
  for (std::size_t c = 0; c < sizes.size(); ++c)
    for (int i = 0; i < sizes[c]; ++i) {
      b.entity("e" + std::to_string(out.cluster.size()));
      out.cluster.push_back(static_cast<int>(c));
    }
  for (int r = 0; r < p.num_relations; ++r) b.relation("r" + std::to_string(r));

  Rng rng(p.seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<int> pick_relation(0, p.num_relations - 1);
  const int n = static_cast<int>(out.cluster.size());
  for (int h = 0; h < n; ++h) {
    for (int t = 0; t < n; ++t) {
      if (h == t) continue;
      const double prob =
          out.cluster[h] == out.cluster[t] ? p.intra_edge_prob : p.inter_edge_prob;
      if (coin(rng) < prob) b.triple(h, pick_relation(rng), t);
    }
  }
  out.graph = std::move(b).build();
  return out;
}

SyntheticKg generate_synthetic_kg(int num_clusters, int entities_per_cluster,
                                  double intra_edge_prob, double inter_edge_prob,
                                  int num_relations, std::uint64_t seed) {
  SyntheticKgParams p;
  p.num_clusters = num_clusters;
  p.entities_per_cluster = entities_per_cluster;
  p.intra_edge_prob = intra_edge_prob;
  p.inter_edge_prob = inter_edge_prob;
  p.num_relations = num_relations;
  p.seed = seed;
  return generate_synthetic_kg(p);
}

}  // namespace mop
