#include "mop/pipeline/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "mop/error.hpp"
#include "mop/rng.hpp"
#include "mop/text.hpp"

namespace mop::pipeline {

std::map<std::string, std::string> parse_ini(std::string_view text, const std::string& origin) {
  std::map<std::string, std::string> out;
  std::string section;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    auto line = raw.substr(0, raw.find_first_of("#;"));
    const auto t = trim(line);
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError(origin + ":" + std::to_string(line_no) + ": bad section header");
      section = std::string(trim(t.substr(1, t.size() - 2)));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
    const auto key = std::string(trim(t.substr(0, eq)));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
    const auto full = section.empty() ? key : section + "." + key;
    if (!out.emplace(full, std::string(trim(t.substr(eq + 1)))).second)
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": duplicate key " + full);
  }
  return out;
}

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || ptr != end) throw ConfigError("bad value for " + key + ": '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("bad boolean for " + key + ": '" + v + "'");
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& v) {
  std::vector<T> out;
  for (const auto& item : split(v, ',')) out.push_back(parse_number<T>(key, std::string(trim(item))));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    if constexpr (std::is_floating_point_v<T>)
      s += shortest(v[i]);
    else
      s += std::to_string(v[i]);
  }
  return s;
}

using Setter = std::function<void(const std::string& key, const std::string& value)>;

struct Field {
  Setter set;
  std::function<std::string()> get;
};

std::map<std::string, Field> fields(ExperimentConfig& c, const std::filesystem::path& base) {
  auto path_field = [&base](std::filesystem::path& p) {
    return Field{[&p, base](const std::string&, const std::string& v) {
                   p = v.empty() ? std::filesystem::path{} : base / v;
                   if (!p.empty()) p = p.lexically_normal();
                 },
                 [&p] { return p.string(); }};
  };
  auto int_field = [](int& x) {
    return Field{[&x](const std::string& k, const std::string& v) { x = parse_number<int>(k, v); },
                 [&x] { return std::to_string(x); }};
  };
  auto real_field = [](double& x) {
    return Field{[&x](const std::string& k, const std::string& v) { x = parse_number<double>(k, v); },
                 [&x] { return shortest(x); }};
  };
  auto seed_field = [&c](std::uint64_t& x) {
    return Field{[&x, &c](const std::string& k, const std::string& v) {
                   x = parse_number<std::uint64_t>(k, v);
                   c.pinned_seeds.insert(k);
                 },
                 [&x] { return std::to_string(x); }};
  };
  auto train_fields = [&](std::map<std::string, Field>& m, const std::string& s, nn::TrainConfig& t) {
    m[s + ".learning_rate"] = real_field(t.learning_rate);
    m[s + ".epochs"] = int_field(t.epochs);
    m[s + ".batch_size"] = int_field(t.batch_size);
    m[s + ".weight_decay"] = real_field(t.weight_decay);
    m[s + ".seed"] = seed_field(t.seed);
  };

  std::map<std::string, Field> m;
  m["run.seed"] = Field{[&c](const std::string& k, const std::string& v) { c.seed = parse_number<std::uint64_t>(k, v); },
                        [&c] { return std::to_string(c.seed); }};
  m["kg.path"] = path_field(c.kg_path);
  m["kg.clusters"] = int_field(c.synthetic.num_clusters);
  m["kg.entities_per_cluster"] = int_field(c.synthetic.entities_per_cluster);
  m["kg.cluster_sizes"] = Field{[&c](const std::string& k, const std::string& v) {
                                  c.synthetic.cluster_sizes = v.empty() ? std::vector<int>{} : parse_list<int>(k, v);
                                },
                                [&c] { return join(c.synthetic.cluster_sizes); }};
  m["kg.intra"] = real_field(c.synthetic.intra_edge_prob);
  m["kg.inter"] = real_field(c.synthetic.inter_edge_prob);
  m["kg.relations"] = int_field(c.synthetic.num_relations);
  m["kg.seed"] = seed_field(c.synthetic.seed);

  m["partition.k"] = int_field(c.k);
  m["partition.epsilon"] = real_field(c.epsilon);
  m["partition.seed"] = seed_field(c.partition_seed);

  m["model.d_model"] = int_field(c.model.d_model);
  m["model.n_layers"] = int_field(c.model.n_layers);
  m["model.n_heads"] = int_field(c.model.n_heads);
  m["model.d_ff"] = int_field(c.model.d_ff);
  m["model.max_len"] = int_field(c.model.max_len);
  m["model.crate"] = int_field(c.model.crate);
  m["model.seed"] = seed_field(c.model.seed);

  train_fields(m, "infusion", c.infusion);
  m["infusion.holdout"] = real_field(c.infusion_holdout);
  m["infusion.threads"] = int_field(c.threads);

  train_fields(m, "finetune", c.finetune);
  m["finetune.seeds"] = int_field(c.finetune_seeds);

  m["mixture.mechanism"] = Field{[&c](const std::string&, const std::string& v) { c.mixture.mechanism = nn::parse_mechanism(v); },
                                 [&c] { return nn::to_string(c.mixture.mechanism); }};
  m["mixture.tau"] = real_field(c.mixture.tau);
  m["mixture.k_top"] = int_field(c.mixture.k_top);
  m["mixture.noise_scale"] = real_field(c.mixture.noise_scale);

  m["task.path"] = path_field(c.task.path);
  m["task.fraction"] = real_field(c.task.fraction);
  m["task.num_labels"] = int_field(c.task.num_labels);
  m["task.train_fraction"] = real_field(c.task.train_fraction);
  m["task.dev_fraction"] = real_field(c.task.dev_fraction);
  m["task.shuffle_labels"] = Field{[&c](const std::string& k, const std::string& v) { c.task.shuffle_labels = parse_bool(k, v); },
                                   [&c] { return std::string(c.task.shuffle_labels ? "true" : "false"); }};

  m["sweep.ratios"] = Field{[&c](const std::string& k, const std::string& v) { c.sweep.ratios = parse_list<double>(k, v); },
                            [&c] { return join(c.sweep.ratios); }};
  m["sweep.seeds"] = int_field(c.sweep.seeds);
  m["sweep.k_values"] = Field{[&c](const std::string& k, const std::string& v) { c.sweep.k_values = parse_list<int>(k, v); },
                              [&c] { return join(c.sweep.k_values); }};

  m["output.dir"] = path_field(c.out_dir);
  return m;
}

void validate(const ExperimentConfig& c) {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(what);
  };
  require(c.k >= 1, "partition.k must be >= 1");
  require(c.epsilon >= 0, "partition.epsilon must be >= 0");
  require(c.infusion_holdout >= 0 && c.infusion_holdout < 1, "infusion.holdout must lie in [0, 1)");
  require(c.threads >= 1, "infusion.threads must be >= 1");
  require(c.finetune_seeds >= 1, "finetune.seeds must be >= 1");
  require(c.mixture.tau > 0, "mixture.tau must be > 0");
  require(c.mixture.k_top >= 1, "mixture.k_top must be >= 1");
  require(c.task.fraction > 0 && c.task.fraction < 1, "task.fraction must lie in (0, 1)");
  require(c.task.num_labels >= 2, "task.num_labels must be >= 2");
  require(c.task.train_fraction > 0 && c.task.dev_fraction >= 0 &&
              c.task.train_fraction + c.task.dev_fraction < 1,
          "task split fractions must leave a non-empty test share");
  require(c.sweep.seeds >= 1, "sweep.seeds must be >= 1");
  require(!c.sweep.ratios.empty(), "sweep.ratios must not be empty");
  for (double r : c.sweep.ratios) require(r >= 0 && r <= 1, "sweep.ratios must lie in [0, 1]");
  for (int k : c.sweep.k_values) require(k >= 1, "sweep.k_values must be >= 1");
  c.infusion.validate();
  c.finetune.validate();
}

}  // namespace

void apply_master_seed(ExperimentConfig& c, std::uint64_t seed) {
  c.seed = seed;
  auto derive = [&](const char* key, std::uint64_t& target) {
    if (!c.pinned_seeds.contains(key)) target = derive_seed(seed, key);
  };
  derive("kg.seed", c.synthetic.seed);
  derive("partition.seed", c.partition_seed);
  derive("model.seed", c.model.seed);
  derive("infusion.seed", c.infusion.seed);
  derive("finetune.seed", c.finetune.seed);
  for (auto& [key, field] : fields(c, {})) {
    if (key.ends_with("seed")) c.echo[key] = field.get();
  }
}

ExperimentConfig parse_config(std::string_view text, const std::string& origin,
                              const std::filesystem::path& base_dir) {
  ExperimentConfig c;
  auto table = fields(c, base_dir);
  for (const auto& [key, value] : parse_ini(text, origin)) {
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError(origin + ": unknown key '" + key + "'");
    it->second.set(key, value);
  }
  validate(c);
  apply_master_seed(c, c.seed);
  for (auto& [key, field] : table) c.echo[key] = field.get();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string(), path.parent_path());
}

}  // namespace mop::pipeline
