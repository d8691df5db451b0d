#include <doctest.h>

#include "mop/nn/checkpoint.hpp"
#include "support.hpp"

using namespace mop;
using namespace mop::nn;

namespace {

ModelConfig ck_config() {
  ModelConfig c;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 12;
  c.max_len = 6;
  c.vocab_size = 10;
  c.crate = 2;
  c.seed = 8;
  return c;
}

}  // namespace

TEST_CASE("SHA-256 known answers") {
  CHECK(sha256_hex(std::string_view{}) ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex(std::string_view{"abc"}) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("base model round trip is bit-exact") {
  test::TempDir dir("ck");
  auto m = init_model(ck_config());
  m.token_embedding(0, 0) = -0.0;
  m.token_embedding(1, 1) = 5e-324;
  save_base_model(dir / "base.ckpt", m);
  const auto back = load_base_model(dir / "base.ckpt");
  CHECK(back.config == m.config);
  CHECK(parameter_digest(back) == parameter_digest(m));
  CHECK(std::signbit(back.token_embedding(0, 0)));
  CHECK(back.token_embedding(1, 1) == 5e-324);
}

TEST_CASE("adapter checkpoint round trip and compatibility") {
  test::TempDir dir("ck");
  const auto cfg = ck_config();
  AdapterCheckpoint a;
  a.config = cfg;
  a.base_sha256 = "abc";
  a.partition = 3;
  a.seed = 17;
  a.epoch = 2;
  a.adapters = init_adapters(cfg, 4);
  Rng rng(1);
  a.adapters.layers[1].up = normal_matrix<Real>(4, 8, 1.0, rng);
  a.head = init_entity_head(cfg, 5, 2);
  save_adapter(dir / "a.ckpt", a);
  const auto b = load_adapter(dir / "a.ckpt");
  CHECK(b.partition == 3);
  CHECK(b.seed == 17);
  CHECK(b.epoch == 2);
  CHECK(parameter_digest(b.adapters) == parameter_digest(a.adapters));
  CHECK(parameter_digest(b.head) == parameter_digest(a.head));
  CHECK_NOTHROW(check_adapter_compatible(b, cfg, "abc"));
  CHECK_THROWS_AS(check_adapter_compatible(b, cfg, "abd"), ConfigError);
  auto other = cfg;
  other.d_ff = 16;
  CHECK_THROWS_AS(check_adapter_compatible(b, other, "abc"), ConfigError);
  CHECK_THROWS_AS(load_base_model(dir / "a.ckpt"), DataError);
}

TEST_CASE("byte layout") {
  Checkpoint ck;
  ck.manifest = {{"kind", "x"}};
  MatrixR t(1, 2);
  t << 1.0, -2.0;
  ck.tensors.push_back({"w", t});
  const auto bytes = serialize_checkpoint(ck);
  const std::string manifest = R"({"kind":"x"})";
  const std::size_t expect = 8 + 4 + 8 + manifest.size() + 4 + (4 + 1 + 8 + 8 + 16);
  REQUIRE(bytes.size() == expect);
  CHECK(std::string(bytes.begin(), bytes.begin() + 7) == "MOPCKPT");
  CHECK(bytes[7] == 0);
  CHECK(bytes[8] == kCheckpointVersion);
  CHECK(bytes[12] == manifest.size());
  // 1.0 = 0x3ff0000000000000, little-endian: last byte 0x3f.
  const std::size_t data = expect - 16;
  CHECK(bytes[data + 7] == 0x3f);
  CHECK(bytes[data + 6] == 0xf0);
  CHECK(bytes[data + 15] == 0xc0);
}

TEST_CASE("corrupt checkpoints are rejected") {
  Checkpoint ck;
  ck.manifest = {{"kind", "x"}};
  ck.tensors.push_back({"w", MatrixR::Ones(2, 2)});
  auto bytes = serialize_checkpoint(ck);
  auto truncated = bytes;
  truncated.pop_back();
  CHECK_THROWS_AS(parse_checkpoint(truncated, "t"), DataError);
  auto bad_version = bytes;
  bad_version[8] = 99;
  CHECK_THROWS_AS(parse_checkpoint(bad_version, "t"), DataError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(parse_checkpoint(bad_magic, "t"), DataError);
  bytes.push_back(0);
  CHECK_THROWS_AS(parse_checkpoint(bytes, "t"), DataError);
  CHECK_THROWS_AS(read_checkpoint("/nonexistent/x.ckpt"), DataError);
}
