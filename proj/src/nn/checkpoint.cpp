#include "mop/nn/checkpoint.hpp"

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>

namespace mop {

std::string sha256_hex(std::span<const unsigned char> bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), md.data(), &len) != 1)
    throw Error("SHA-256 computation failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::string sha256_hex(std::string_view bytes) {
  return sha256_hex(std::span(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()));
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(in), {}};
  return sha256_hex(bytes);
}

}  // namespace mop

namespace mop::nn {

namespace {

constexpr char kMagic[8] = {'M', 'O', 'P', 'C', 'K', 'P', 'T', '\0'};

template <typename U>
void put(std::vector<unsigned char>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

class Reader {
 public:
  Reader(std::span<const unsigned char> b, const std::string& origin) : b_(b), origin_(origin) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw DataError(origin_ + ": truncated checkpoint");
  }
  std::span<const unsigned char> b_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

const MatrixR& Checkpoint::tensor(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.data;
  throw DataError("checkpoint has no tensor '" + std::string(name) + "'");
}

std::vector<unsigned char> serialize_checkpoint(const Checkpoint& ck) {
  std::vector<unsigned char> out(std::begin(kMagic), std::end(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string manifest = ck.manifest.dump();
  put<std::uint64_t>(out, manifest.size());
  out.insert(out.end(), manifest.begin(), manifest.end());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& t : ck.tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.data.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.data.cols()));
    for (Eigen::Index r = 0; r < t.data.rows(); ++r)
      for (Eigen::Index c = 0; c < t.data.cols(); ++c)
        put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(t.data(r, c)));
  }
  return out;
}

Checkpoint parse_checkpoint(std::span<const unsigned char> bytes, const std::string& origin) {
  Reader rd(bytes, origin);
  if (rd.bytes(sizeof kMagic) != std::string(kMagic, sizeof kMagic))
    throw DataError(origin + ": not a checkpoint file");
  const auto version = rd.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw DataError(origin + ": unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  const auto mlen = rd.get<std::uint64_t>();
  try {
    ck.manifest = nlohmann::ordered_json::parse(rd.bytes(mlen));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(origin + ": bad checkpoint manifest: " + e.what());
  }
  const auto count = rd.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = rd.bytes(rd.get<std::uint32_t>());
    const auto rows = rd.get<std::uint64_t>();
    const auto cols = rd.get<std::uint64_t>();
    if (rows > (1u << 28) || cols > (1u << 28)) throw DataError(origin + ": implausible tensor shape");
    t.data.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index r = 0; r < t.data.rows(); ++r)
      for (Eigen::Index c = 0; c < t.data.cols(); ++c)
        t.data(r, c) = std::bit_cast<double>(rd.get<std::uint64_t>());
    ck.tensors.push_back(std::move(t));
  }
  if (!rd.done()) throw DataError(origin + ": trailing bytes after checkpoint");
  return ck;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const auto bytes = serialize_checkpoint(ck);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path.string());
  const std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in), {}};
  return parse_checkpoint(bytes, path.string());
}

nlohmann::ordered_json to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model}, {"n_layers", c.n_layers}, {"n_heads", c.n_heads},
          {"d_ff", c.d_ff},       {"max_len", c.max_len},   {"vocab_size", c.vocab_size},
          {"crate", c.crate},     {"seed", c.seed}};
}

ModelConfig model_config_from_json(const nlohmann::ordered_json& j) {
  try {
    ModelConfig c;
    c.d_model = j.at("d_model").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.d_ff = j.at("d_ff").get<int>();
    c.max_len = j.at("max_len").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.crate = j.at("crate").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad model config in checkpoint: ") + e.what());
  }
}

namespace {

void expect_kind(const Checkpoint& ck, const std::filesystem::path& path, const char* kind) {
  if (ck.manifest.value("kind", std::string{}) != kind)
    throw DataError(path.string() + ": expected a '" + kind + "' checkpoint");
}

}  // namespace

void save_base_model(const std::filesystem::path& path, const EncoderModel<Real>& model) {
  Checkpoint ck;
  ck.manifest = {{"kind", "base"}, {"config", to_json(model.config)},
                 {"sha256", parameter_digest(model)}};
  append_tensors(model, ck);
  write_checkpoint(path, ck);
}

EncoderModel<Real> load_base_model(const std::filesystem::path& path) {
  const auto ck = read_checkpoint(path);
  expect_kind(ck, path, "base");
  auto m = init_model<Real>(model_config_from_json(ck.manifest.at("config")));
  restore_tensors(m, ck);
  return m;
}

void save_adapter(const std::filesystem::path& path, const AdapterCheckpoint& a) {
  Checkpoint ck;
  ck.manifest = {{"kind", "adapter"},
                 {"config", to_json(a.config)},
                 {"partition", a.partition},
                 {"seed", a.seed},
                 {"epoch", a.epoch},
                 {"base_sha256", a.base_sha256},
                 {"num_classes", a.head.num_classes()}};
  append_tensors(a.adapters, ck);
  append_tensors(a.head, ck);
  write_checkpoint(path, ck);
}

AdapterCheckpoint load_adapter(const std::filesystem::path& path) {
  const auto ck = read_checkpoint(path);
  expect_kind(ck, path, "adapter");
  AdapterCheckpoint a;
  try {
    a.config = model_config_from_json(ck.manifest.at("config"));
    a.partition = ck.manifest.at("partition").get<int>();
    a.seed = ck.manifest.at("seed").get<std::uint64_t>();
    a.epoch = ck.manifest.at("epoch").get<int>();
    a.base_sha256 = ck.manifest.at("base_sha256").get<std::string>();
    const auto classes = ck.manifest.at("num_classes").get<Eigen::Index>();
    a.adapters = init_adapters<Real>(a.config, 0);
    a.head.weight = MatrixR::Zero(a.config.d_model, classes);
    a.head.bias = VectorR::Zero(classes);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": bad adapter manifest: " + e.what());
  }
  restore_tensors(a.adapters, ck);
  restore_tensors(a.head, ck);
  return a;
}

void check_adapter_compatible(const AdapterCheckpoint& ck, const ModelConfig& cfg,
                              const std::string& base_sha256) {
  if (!(ck.config == cfg))
    throw ConfigError("adapter for partition " + std::to_string(ck.partition) +
                      " was trained against a different model configuration");
  if (ck.base_sha256 != base_sha256)
    throw ConfigError("adapter for partition " + std::to_string(ck.partition) +
                      " was trained against a different base model");
}

}  // namespace mop::nn
