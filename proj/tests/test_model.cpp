#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "countnet/checkpoint.hpp"
#include "countnet/checks.hpp"
#include "countnet/data.hpp"
#include "countnet/train.hpp"

using namespace countnet;

namespace {

Tensor<float> random_image(std::size_t batch, std::size_t size, Rng& rng) {
  Tensor<float> t(Shape{batch, size, size, 3});
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(0, 1));
  return t;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("config validation catches inconsistent settings") {
  ModelConfig cfg;
  cfg.validate();  // toy defaults are valid

  ModelConfig bad = cfg;
  bad.input_size = 60;  // not divisible by patch*2^K*window
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.heads_per_stage = {3, 4};  // 32 % 3 != 0
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.depths_per_stage = {2};  // wrong length
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.window_size = 5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("config text round-trips") {
  ModelConfig cfg;
  cfg.stages = 1;
  cfg.heads_per_stage = {4};
  cfg.depths_per_stage = {2};
  cfg.embed_dim = 16;
  cfg.input_size = 32;
  cfg.window_size = 2;
  cfg.use_gefs = false;
  cfg.mask_scale = MaskScale::Literal;
  ModelConfig back = ModelConfig::from_text(cfg.to_text());
  CHECK(back == cfg);
  CHECK_THROWS_AS(ModelConfig::from_text("stages=2\n"), ParseError);
}

TEST_CASE("toy forward: shape, finiteness, nonnegativity on a zero image") {
  ModelConfig cfg;  // K=2, patch 4, dim 32, window 4, input 64
  ModelRuntime rt(cfg, 7);
  Tensor<float> zero(Shape{1, 64, 64, 3});
  auto maps = rt.model().predict(rt.params(), zero);
  REQUIRE(maps.size() == 1);
  CHECK(maps[0].height == 64);
  CHECK(maps[0].width == 64);
  for (double v : maps[0].values) {
    CHECK(std::isfinite(v));
    CHECK(v >= 0.0);
  }
}

TEST_CASE("all toggles off runs as the plain backbone") {
  ModelConfig cfg;
  cfg.use_gcam = cfg.use_gefs = cfg.use_gafu = false;
  ModelRuntime rt(cfg, 7);
  Rng rng(1);
  auto maps = rt.model().predict(rt.params(), random_image(2, 64, rng));
  CHECK(maps.size() == 2);
  CHECK(count_parameters(cfg) < count_parameters(ModelConfig{}));
}

TEST_CASE("fixed seed and input give bit-identical output across runs") {
  ModelConfig cfg = micro_model_config();
  Rng rng(5);
  Tensor<float> img = random_image(2, cfg.input_size, rng);

  ModelRuntime rt1(cfg, 42);
  ModelRuntime rt2(cfg, 42);
  auto a = rt1.model().predict(rt1.params(), img);
  auto b = rt2.model().predict(rt2.params(), img);
  auto c = rt1.model().predict(rt1.params(), img);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].values == b[i].values);
    CHECK(a[i].values == c[i].values);
  }
}

TEST_CASE("disabling a block at runtime equals building the model without it") {
  ModelConfig on_cfg = micro_model_config();
  ModelConfig off_cfg = on_cfg;
  off_cfg.use_gcam = false;

  ModelRuntime rt_on(on_cfg, 11);
  ModelRuntime rt_off(off_cfg, 11);
  Rng rng(2);
  Tensor<float> img = random_image(1, on_cfg.input_size, rng);

  auto with_gcam = rt_on.model().predict(rt_on.params(), img);
  rt_on.model().set_toggles(false, true, true);
  auto bypassed = rt_on.model().predict(rt_on.params(), img);
  auto rebuilt = rt_off.model().predict(rt_off.params(), img);

  CHECK(bypassed[0].values == rebuilt[0].values);  // per-name init: bit-equal
  CHECK(with_gcam[0].values != bypassed[0].values);

  // re-enabling a block whose parameters were never built is an error
  CHECK_THROWS_AS(rt_off.model().set_toggles(true, true, true), ConfigError);
}

TEST_CASE("parameter count is a pure, monotone function of the config") {
  ModelConfig cfg;
  CHECK(count_parameters(cfg) == count_parameters(cfg));
  ModelConfig bigger = cfg;
  bigger.embed_dim = 64;
  CHECK(count_parameters(bigger) > count_parameters(cfg));
  ModelConfig smaller = cfg;
  smaller.embed_dim = 16;
  CHECK(count_parameters(smaller) < count_parameters(cfg));
}

TEST_CASE("count: zero map, unit Gaussian mass, additivity") {
  DensityMap zero{4, 4, std::vector<double>(16, 0.0)};
  CHECK(count(zero) == 0.0);

  DensityMap g = density_target({Point{32, 32}}, 64, 64, 2.0);
  CHECK(count(g) == doctest::Approx(1.0).epsilon(1e-3));

  DensityMap a = density_target({Point{10, 10}}, 64, 64, 2.0);
  DensityMap b = density_target({Point{40, 40}, Point{50, 20}}, 64, 64, 2.0);
  DensityMap joined{64, 128, std::vector<double>(64 * 128, 0.0)};
  for (std::size_t y = 0; y < 64; ++y) {
    std::copy_n(&a.values[y * 64], 64, &joined.values[y * 128]);
    std::copy_n(&b.values[y * 64], 64, &joined.values[y * 128 + 64]);
  }
  CHECK(count(joined) == doctest::Approx(count(a) + count(b)).epsilon(1e-9));
}

TEST_CASE("checkpoint round-trip is bit-exact; corruption is detected") {
  ModelConfig cfg = micro_model_config();
  ModelRuntime rt(cfg, 3);
  const std::string path = temp_path("countnet_test.ckpt");
  save_checkpoint(path, cfg, rt.params());

  SUBCASE("save -> load -> forward is bit-identical") {
    Checkpoint ck = load_checkpoint(path);
    CHECK(ck.config == cfg);
    ModelRuntime rt2 = ModelRuntime::from_checkpoint(ck);
    Rng rng(4);
    Tensor<float> img = random_image(1, cfg.input_size, rng);
    CHECK(rt.model().predict(rt.params(), img)[0].values ==
          rt2.model().predict(rt2.params(), img)[0].values);
  }
  SUBCASE("truncation fails the checksum") {
    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
    in.close();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 17));
    out.close();
    try {
      load_checkpoint(path);
      FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
      CHECK((e.kind() == CheckpointError::Kind::ChecksumFailure ||
             e.kind() == CheckpointError::Kind::Truncated));
    }
  }
  SUBCASE("version byte mismatch is reported as such") {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(8);  // version field follows the magic
    const std::uint32_t bogus = 99;
    f.write(reinterpret_cast<const char*>(&bogus), sizeof(bogus));
    f.close();
    // checksum now also disagrees; rewrite it so the version check is reached
    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
    in.close();
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::size_t i = 0; i + 8 < bytes.size(); ++i) {
      h ^= static_cast<unsigned char>(bytes[i]);
      h *= 0x100000001b3ull;
    }
    std::memcpy(bytes.data() + bytes.size() - 8, &h, 8);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    try {
      load_checkpoint(path);
      FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
      CHECK(e.kind() == CheckpointError::Kind::VersionMismatch);
    }
  }
  std::filesystem::remove(path);
}

TEST_CASE("encoder skip shapes mirror the decoder stages") {
  // the U is shape-symmetric by construction; verify the forward runs for a
  // deeper config whose grids exercise every merge/expand pairing
  ModelConfig cfg;
  cfg.stages = 2;
  cfg.patch_size = 2;
  cfg.embed_dim = 8;
  cfg.window_size = 2;
  cfg.heads_per_stage = {2, 2};
  cfg.depths_per_stage = {1, 1};
  cfg.input_size = 16;
  cfg.validate();
  ModelRuntime rt(cfg, 9);
  Rng rng(6);
  auto maps = rt.model().predict(rt.params(), random_image(1, 16, rng));
  CHECK(maps[0].height == 16);
  CHECK(maps[0].width == 16);
}
