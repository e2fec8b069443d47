#include "doctest.h"

#include <cmath>

#include "countnet/checks.hpp"
#include "countnet/gates.hpp"
#include "oracles.hpp"

using namespace countnet;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("gcam singleton: S=[[1]], M=[1] regardless of content") {
  Rng rng(3);
  ParamRegistry<double> reg;
  GcamBlock<double> gcam(reg, 1, "g", 6, MaskScale::Rescaled);
  Tape<double> tape;
  auto P = reg.bind_all(tape, false);
  TokenVar<double> x{tape.constant(random_tensor({1, 1, 6}, rng, -5, 5)), 1, 1, 1, 6};
  auto r = gcam.forward(tape, P, x);
  CHECK(r.similarity.value()[0] == 1.0);
  CHECK(r.mask.value()[0] == 1.0);
  CHECK(r.out.data.shape() == Shape{1, 1, 6});
}

TEST_CASE("gcam on two identical tokens: S and M are uniform") {
  Rng rng(5);
  ParamRegistry<double> reg;
  GcamBlock<double> gcam(reg, 2, "g", 8, MaskScale::Literal);
  Tensor<double> x(Shape{1, 2, 8});
  for (std::size_t c = 0; c < 8; ++c) x[c] = x[8 + c] = rng.uniform(-1, 1);
  Tape<double> tape;
  auto P = reg.bind_all(tape, false);
  auto r = gcam.forward(tape, P, TokenVar<double>{tape.constant(x), 1, 1, 2, 8});
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(r.similarity.value()[i] == doctest::Approx(0.5).epsilon(1e-12));
  }
  CHECK(r.mask.value()[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.mask.value()[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("gcam matches the straight-line recomputation oracle") {
  Rng rng(7);
  for (MaskScale mode : {MaskScale::Rescaled, MaskScale::Literal}) {
    ParamRegistry<double> reg;
    GcamBlock<double> gcam(reg, 3, "g", 8, mode);
    // non-degenerate projection so S is informative
    Tensor<double> x = random_tensor({1, 3, 8}, rng);
    Tape<double> tape;
    auto P = reg.bind_all(tape, false);
    auto r = gcam.forward(tape, P, TokenVar<double>{tape.constant(x), 1, 1, 3, 8});
    auto want = oracles::gcam(oracles::to_mat(x, 3, 8), reg, "g", mode == MaskScale::Rescaled);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(std::abs(r.score.value()[i] - want.score[i]) < 1e-10);
      CHECK(std::abs(r.mask.value()[i] - want.mask[i]) < 1e-10);
      for (std::size_t j = 0; j < 3; ++j)
        CHECK(std::abs(r.similarity.value()[i * 3 + j] - want.similarity[i][j]) < 1e-10);
      for (std::size_t c = 0; c < 8; ++c)
        CHECK(std::abs(r.out.data.value()[i * 8 + c] - want.out[i][c]) < 1e-10);
    }
  }
}

TEST_CASE("gcam permutation equivariance: identity, swap, reversal, random") {
  Rng rng(9);
  Tensor<double> x = random_tensor({1, 8, 6}, rng);

  std::vector<std::size_t> identity{0, 1, 2, 3, 4, 5, 6, 7};
  CHECK(gcam_permutation_check(x, identity, 1e-8, 11));

  std::vector<std::size_t> swap{1, 0, 2, 3, 4, 5, 6, 7};
  CHECK(gcam_permutation_check(x, swap, 1e-8, 11));

  std::vector<std::size_t> reversal{7, 6, 5, 4, 3, 2, 1, 0};
  CHECK(gcam_permutation_check(x, reversal, 1e-8, 11));

  std::vector<std::size_t> perm = identity;
  rng.shuffle(perm.begin(), perm.end());
  CHECK(gcam_permutation_check(x, perm, 1e-8, 11));

  std::vector<std::size_t> not_a_perm{0, 0, 2, 3, 4, 5, 6, 7};
  CHECK_THROWS_AS(gcam_permutation_check(x, not_a_perm, 1e-8, 11), ValueError);
}

TEST_CASE("gefs with zero value projections returns the input exactly") {
  Rng rng(13);
  ParamRegistry<double> reg;
  GefsBlock<double> gefs(reg, 4, "e", 8, 2);
  for (const char* name : {"e.attn1.wv", "e.attn1.bv", "e.attn2.wv", "e.attn2.bv", "e.attn1.bo",
                           "e.attn2.bo"}) {
    for (auto& v : reg.find(name)->value.values()) v = 0.0;
  }
  Tensor<double> x = random_tensor({1, 4, 8}, rng);
  Tape<double> tape;
  auto P = reg.bind_all(tape, false);
  auto r = gefs.forward(tape, P, TokenVar<double>{tape.constant(x), 1, 1, 4, 8});
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(r.out.data.value()[i] == x[i]);
}

TEST_CASE("gefs singleton token and channel: gate is exactly 1") {
  Rng rng(17);
  ParamRegistry<double> reg;
  GefsBlock<double> gefs(reg, 5, "e", 1, 1);
  Tensor<double> x = random_tensor({1, 1, 1}, rng);
  Tape<double> tape;
  auto P = reg.bind_all(tape, false);
  auto r = gefs.forward(tape, P, TokenVar<double>{tape.constant(x), 1, 1, 1, 1});
  CHECK(r.gate.value()[0] == 1.0);  // softmax over one channel
  CHECK(std::isfinite(r.out.data.value()[0]));
}

TEST_CASE("gefs matches the straight-line recomputation oracle") {
  Rng rng(19);
  ParamRegistry<double> reg;
  GefsBlock<double> gefs(reg, 6, "e", 8, 2);
  // attn2's output projection is zero-initialized; give it real values so the
  // oracle exercises the whole path
  for (auto& v : reg.find("e.attn2.wo")->value.values()) v = rng.uniform(-0.1, 0.1);
  Tensor<double> x = random_tensor({1, 4, 8}, rng);
  Tape<double> tape;
  auto P = reg.bind_all(tape, false);
  auto r = gefs.forward(tape, P, TokenVar<double>{tape.constant(x), 1, 1, 4, 8});
  auto want = oracles::gefs(oracles::to_mat(x, 4, 8), reg, "e", 2);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 8; ++c) {
      CHECK(std::abs(r.out.data.value()[i * 8 + c] - want.out[i][c]) < 1e-10);
      CHECK(std::abs(r.gate.value()[i * 8 + c] - want.gate[i][c]) < 1e-10);
    }
}

TEST_CASE("gafu with [I | 0] fusion returns the decoder exactly") {
  Rng rng(23);
  ParamRegistry<double> reg;
  GafuBlock<double> gafu(reg, 7, "f", 6, true);
  // default fuse init is exactly the stacked [I; 0]
  Tensor<double> skip = random_tensor({1, 4, 6}, rng);
  Tensor<double> dec = random_tensor({1, 4, 6}, rng);
  Tape<double> tape;
  auto P = reg.bind_all(tape, false);
  auto r = gafu.forward(tape, P, TokenVar<double>{tape.constant(skip), 1, 1, 4, 6},
                        TokenVar<double>{tape.constant(dec), 1, 1, 4, 6});
  for (std::size_t i = 0; i < dec.size(); ++i) CHECK(r.out.data.value()[i] == dec[i]);
}

TEST_CASE("gafu single channel: gate 1, gated skip doubles") {
  Rng rng(29);
  ParamRegistry<double> reg;
  GafuBlock<double> gafu(reg, 8, "f", 1, true);
  // pick out only the gated-skip half of the concatenation
  auto& fuse = reg.find("f.fuse.w")->value;  // [2, 1]
  fuse[0] = 0.0;
  fuse[1] = 1.0;
  Tensor<double> skip = random_tensor({1, 3, 1}, rng);
  Tensor<double> dec = random_tensor({1, 3, 1}, rng);
  Tape<double> tape;
  auto P = reg.bind_all(tape, false);
  auto r = gafu.forward(tape, P, TokenVar<double>{tape.constant(skip), 1, 1, 3, 1},
                        TokenVar<double>{tape.constant(dec), 1, 1, 3, 1});
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK((*r.gate).value()[i] == 1.0);
    CHECK(r.out.data.value()[i] == doctest::Approx(2.0 * skip[i]).epsilon(1e-12));
  }
}

TEST_CASE("gafu matches the straight-line recomputation oracle") {
  Rng rng(31);
  ParamRegistry<double> reg;
  GafuBlock<double> gafu(reg, 9, "f", 8, true);
  for (auto& v : reg.find("f.fuse.w")->value.values()) v = rng.uniform(-0.5, 0.5);
  Tensor<double> skip = random_tensor({1, 4, 8}, rng);
  Tensor<double> dec = random_tensor({1, 4, 8}, rng);
  Tape<double> tape;
  auto P = reg.bind_all(tape, false);
  auto r = gafu.forward(tape, P, TokenVar<double>{tape.constant(skip), 1, 1, 4, 8},
                        TokenVar<double>{tape.constant(dec), 1, 1, 4, 8});
  auto want = oracles::gafu(oracles::to_mat(skip, 4, 8), oracles::to_mat(dec, 4, 8), reg, "f");
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 8; ++c) {
      CHECK(std::abs(r.out.data.value()[i * 8 + c] - want.out[i][c]) < 1e-10);
      CHECK(std::abs((*r.gate).value()[i * 8 + c] - want.gate[i][c]) < 1e-10);
    }
}

TEST_CASE("gafu rejects mismatched spatial extents") {
  ParamRegistry<double> reg;
  GafuBlock<double> gafu(reg, 10, "f", 4, true);
  Tape<double> tape;
  auto P = reg.bind_all(tape, false);
  TokenVar<double> skip{tape.constant(Tensor<double>(Shape{1, 4, 4})), 1, 2, 2, 4};
  TokenVar<double> dec{tape.constant(Tensor<double>(Shape{1, 8, 4})), 1, 2, 4, 4};
  CHECK_THROWS_AS(gafu.forward(tape, P, skip, dec), ShapeError);
}

TEST_CASE("gate normalization invariants over random inputs") {
  auto results = run_normalization_checks(60, 1e-6);
  for (const auto& r : results) {
    INFO(r.name, ": ", r.detail);
    CHECK(r.pass);
  }
}

TEST_CASE("equivariance suite over random (input, permutation) pairs") {
  auto results = run_equivariance_checks(20, 1e-8);
  for (const auto& r : results) {
    INFO(r.name, ": ", r.detail);
    CHECK(r.pass);
  }
}
