#include "doctest.h"

#include <cmath>

#include "countnet/swin.hpp"
#include "oracles.hpp"

using namespace countnet;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

oracles::Mat tokens_to_mat(const Tensor<double>& t) {
  return oracles::to_mat(t, t.shape()[1], t.shape()[2]);  // assumes batch 1
}

}  // namespace

TEST_CASE("patch_embed: shape law, constant image, known-weight oracle") {
  ParamRegistry<double> reg;
  PatchEmbed<double> embed(reg, 7, "pe", 4, 3, 8);

  SUBCASE("64x64 image with patch 4 gives a 16x16 grid") {
    Tape<double> tape;
    auto P = reg.bind_all(tape, false);
    auto g = embed.forward(tape, P, tape.constant(Tensor<double>(Shape{1, 64, 64, 3})));
    CHECK(g.height == 16);
    CHECK(g.width == 16);
    CHECK(g.channels == 8);
    CHECK(g.data.shape() == Shape{1, 256, 8});
  }
  SUBCASE("constant image gives constant tokens") {
    Tape<double> tape;
    auto P = reg.bind_all(tape, false);
    auto g = embed.forward(tape, P, tape.constant(Tensor<double>::full({1, 8, 8, 3}, 0.25)));
    const auto& v = g.data.value();
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t c = 0; c < 8; ++c) CHECK(v[t * 8 + c] == doctest::Approx(v[c]).epsilon(1e-12));
  }
  SUBCASE("single patch equals a hand-computed dot product") {
    Rng rng(5);
    Tensor<double> img = random_tensor({1, 4, 4, 3}, rng);
    Tape<double> tape;
    auto P = reg.bind_all(tape, false);
    auto g = embed.forward(tape, P, tape.constant(img));
    const auto& w = reg.find("pe.w")->value;   // [48, 8]
    const auto& b = reg.find("pe.b")->value;
    for (std::size_t o = 0; o < 8; ++o) {
      double want = b[o];
      for (std::size_t i = 0; i < 48; ++i) want += img[i] * w[i * 8 + o];
      CHECK(g.data.value()[o] == doctest::Approx(want).epsilon(1e-12));
    }
  }
  SUBCASE("indivisible image dimension is an error") {
    Tape<double> tape;
    auto P = reg.bind_all(tape, false);
    CHECK_THROWS_AS(embed.forward(tape, P, tape.constant(Tensor<double>(Shape{1, 6, 8, 3}))),
                    ShapeError);
  }
}

TEST_CASE("window_attention equals dense attention when one window covers the grid") {
  Rng rng(11);
  ParamRegistry<double> reg;
  WindowAttention<double> attn(reg, 3, "wa", 8, 4, 2);
  Tensor<double> x = random_tensor({1, 16, 8}, rng);

  Tape<double> tape;
  auto P = reg.bind_all(tape, false);
  TokenVar<double> tv{tape.constant(x), 1, 4, 4, 8};
  auto out = attn.forward(tape, P, tv, false);

  const auto& table = reg.find("wa.rel_bias")->value;
  auto bias = [&](std::size_t i, std::size_t j, std::size_t h) {
    const auto yi = static_cast<std::ptrdiff_t>(i / 4), xi = static_cast<std::ptrdiff_t>(i % 4);
    const auto yj = static_cast<std::ptrdiff_t>(j / 4), xj = static_cast<std::ptrdiff_t>(j % 4);
    return table[static_cast<std::size_t>((yi - yj + 3) * 7 + (xi - xj + 3)) * 2 + h];
  };
  auto want = oracles::dense_attention(tokens_to_mat(x), reg, "wa", 2, bias);
  for (std::size_t t = 0; t < 16; ++t)
    for (std::size_t c = 0; c < 8; ++c)
      CHECK(std::abs(out.data.value()[t * 8 + c] - want[t][c]) < 1e-10);
}

TEST_CASE("window_attention with zero q/k and zero bias averages the values uniformly") {
  Rng rng(13);
  ParamRegistry<double> reg;
  WindowAttention<double> attn(reg, 4, "wa", 6, 2, 1);
  for (const char* name : {"wa.wq", "wa.wk", "wa.bq", "wa.bk", "wa.rel_bias"}) {
    for (auto& v : reg.find(name)->value.values()) v = 0.0;
  }
  Tensor<double> x = random_tensor({1, 4, 6}, rng);
  Tape<double> tape;
  auto P = reg.bind_all(tape, false);
  TokenVar<double> tv{tape.constant(x), 1, 2, 2, 6};
  auto out = attn.forward(tape, P, tv, false);

  // uniform attention: every token output is Wo (mean of v) + bo
  const auto& wv = reg.find("wa.wv")->value;
  const auto& bv = reg.find("wa.bv")->value;
  std::vector<double> vbar(6, 0.0);
  for (std::size_t t = 0; t < 4; ++t) {
    const std::vector<double> tok(x.data() + t * 6, x.data() + (t + 1) * 6);
    auto v = oracles::affine(tok, wv, bv);
    for (std::size_t c = 0; c < 6; ++c) vbar[c] += v[c] / 4.0;
  }
  auto want = oracles::affine(vbar, reg.find("wa.wo")->value, reg.find("wa.bo")->value);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t c = 0; c < 6; ++c)
      CHECK(out.data.value()[t * 6 + c] == doctest::Approx(want[c]).epsilon(1e-10));
}

TEST_CASE("non-shifted attention is local: perturbing another window changes nothing") {
  Rng rng(17);
  ParamRegistry<double> reg;
  WindowAttention<double> attn(reg, 5, "wa", 8, 2, 2);
  Tensor<double> x = random_tensor({1, 16, 8}, rng);  // 4x4 grid, 4 windows of 2x2

  auto forward = [&](const Tensor<double>& input) {
    Tape<double> tape;
    auto P = reg.bind_all(tape, false);
    TokenVar<double> tv{tape.constant(input), 1, 4, 4, 8};
    return attn.forward(tape, P, tv, false).data.value();
  };
  auto base = forward(x);
  Tensor<double> x2 = x;
  // token (3,3) lives in the bottom-right window; window (0..1)^2 must not move
  x2[(3 * 4 + 3) * 8 + 2] += 10.0;
  auto bumped = forward(x2);
  for (std::size_t t : {0, 1, 4, 5}) {  // tokens of the top-left window
    for (std::size_t c = 0; c < 8; ++c) CHECK(base[t * 8 + c] == bumped[t * 8 + c]);
  }
  // and the bottom-right window did change
  bool changed = false;
  for (std::size_t c = 0; c < 8; ++c) changed = changed || base[15 * 8 + c] != bumped[15 * 8 + c];
  CHECK(changed);
}

TEST_CASE("window_attention rejects grids not divisible by the window") {
  ParamRegistry<double> reg;
  WindowAttention<double> attn(reg, 7, "wa", 8, 4, 2);
  Tape<double> tape;
  auto P = reg.bind_all(tape, false);
  TokenVar<double> tv{tape.constant(Tensor<double>(Shape{1, 6 * 8, 8})), 1, 6, 8, 8};
  CHECK_THROWS_AS(attn.forward(tape, P, tv, false), ShapeError);
}

TEST_CASE("8x8 grid with window 4 matches the per-window dense oracle") {
  Rng rng(19);
  ParamRegistry<double> reg;
  WindowAttention<double> attn(reg, 6, "wa", 8, 4, 2);
  Tensor<double> x = random_tensor({1, 64, 8}, rng);
  Tape<double> tape;
  auto P = reg.bind_all(tape, false);
  TokenVar<double> tv{tape.constant(x), 1, 8, 8, 8};
  auto out = attn.forward(tape, P, tv, false);
  auto want = oracles::window_attention(tokens_to_mat(x), 8, 8, 4, reg, "wa", 2);
  for (std::size_t t = 0; t < 64; ++t)
    for (std::size_t c = 0; c < 8; ++c)
      CHECK(std::abs(out.data.value()[t * 8 + c] - want[t][c]) < 1e-10);
}

TEST_CASE("shifted attention masks the wrap-around seam") {
  Rng rng(23);
  ParamRegistry<double> reg;
  WindowAttention<double> attn(reg, 8, "wa", 8, 4, 2);
  Tensor<double> x = random_tensor({1, 64, 8}, rng);  // 8x8 grid, shift 2

  auto forward = [&](const Tensor<double>& input) {
    Tape<double> tape;
    auto P = reg.bind_all(tape, false);
    TokenVar<double> tv{tape.constant(input), 1, 8, 8, 8};
    return attn.forward(tape, P, tv, true).data.value();
  };
  auto base = forward(x);
  // after the cyclic shift, original tokens (0,0) and (6,6) land in the same
  // window but sit on opposite sides of the wrap-around seam: no flow allowed
  Tensor<double> x2 = x;
  x2[(0 * 8 + 0) * 8 + 1] += 5.0;
  auto bumped = forward(x2);
  for (std::size_t c = 0; c < 8; ++c) {
    CHECK(std::abs(base[(6 * 8 + 6) * 8 + c] - bumped[(6 * 8 + 6) * 8 + c]) < 1e-12);
  }
  // (1,1) shares the wrapped band with (0,0) and does feel it
  bool changed = false;
  for (std::size_t c = 0; c < 8; ++c)
    changed = changed || std::abs(base[(1 * 8 + 1) * 8 + c] - bumped[(1 * 8 + 1) * 8 + c]) > 1e-9;
  CHECK(changed);
}

TEST_CASE("patch_merge: shape law and known-weight evaluation") {
  ParamRegistry<double> reg;
  PatchMerge<double> merge(reg, 9, "pm", 4);
  Rng rng(29);

  SUBCASE("4x4xC becomes 2x2x2C") {
    Tape<double> tape;
    auto P = reg.bind_all(tape, false);
    TokenVar<double> tv{tape.constant(Tensor<double>(Shape{2, 16, 4})), 2, 4, 4, 4};
    auto out = merge.forward(tape, P, tv);
    CHECK(out.height == 2);
    CHECK(out.width == 2);
    CHECK(out.channels == 8);
    CHECK(out.data.shape() == Shape{2, 4, 8});
  }
  SUBCASE("odd grid is an error") {
    Tape<double> tape;
    auto P = reg.bind_all(tape, false);
    TokenVar<double> tv{tape.constant(Tensor<double>(Shape{1, 12, 4})), 1, 3, 4, 4};
    CHECK_THROWS_AS(merge.forward(tape, P, tv), ShapeError);
  }
  SUBCASE("known 2x2 grid equals hand-computed concatenate-project") {
    Tensor<double> x = random_tensor({1, 4, 4}, rng);
    Tape<double> tape;
    auto P = reg.bind_all(tape, false);
    TokenVar<double> tv{tape.constant(x), 1, 2, 2, 4};
    auto out = merge.forward(tape, P, tv);
    // children order (dy, dx): tokens 0, 1, 2, 3 of the 2x2 grid
    std::vector<double> cat;
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t c = 0; c < 4; ++c) cat.push_back(x[t * 4 + c]);
    auto want = oracles::affine(cat, reg.find("pm.w")->value, reg.find("pm.b")->value);
    for (std::size_t c = 0; c < 8; ++c)
      CHECK(out.data.value()[c] == doctest::Approx(want[c]).epsilon(1e-12));
  }
}

TEST_CASE("patch_expand: shape law, known weights, and merge-expand shape restore") {
  Rng rng(31);
  SUBCASE("2x2x8 becomes 4x4x4") {
    ParamRegistry<double> reg;
    PatchExpand<double> expand(reg, 10, "px", 8);
    Tape<double> tape;
    auto P = reg.bind_all(tape, false);
    TokenVar<double> tv{tape.constant(Tensor<double>(Shape{1, 4, 8})), 1, 2, 2, 8};
    auto out = expand.forward(tape, P, tv);
    CHECK(out.height == 4);
    CHECK(out.width == 4);
    CHECK(out.channels == 4);
  }
  SUBCASE("known 1x1x4 token equals hand-computed rearrangement") {
    ParamRegistry<double> reg;
    PatchExpand<double> expand(reg, 11, "px", 4);
    Tensor<double> x = random_tensor({1, 1, 4}, rng);
    Tape<double> tape;
    auto P = reg.bind_all(tape, false);
    TokenVar<double> tv{tape.constant(x), 1, 1, 1, 4};
    auto out = expand.forward(tape, P, tv);
    const std::vector<double> tok(x.data(), x.data() + 4);
    auto proj = oracles::affine(tok, reg.find("px.w")->value, reg.find("px.b")->value);  // 8 values
    // projected vector rearranges to 2x2 spatial x 2 channels
    CHECK(out.data.shape() == Shape{1, 4, 2});
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t c = 0; c < 2; ++c)
        CHECK(out.data.value()[t * 2 + c] == doctest::Approx(proj[t * 2 + c]).epsilon(1e-12));
  }
  SUBCASE("merge then expand restores the token-grid shape") {
    for (std::size_t side : {4u, 6u, 8u}) {
      ParamRegistry<double> reg;
      PatchMerge<double> merge(reg, 12, "pm", 6);
      PatchExpand<double> expand(reg, 12, "px", 12);
      Tape<double> tape;
      auto P = reg.bind_all(tape, false);
      Tensor<double> x = random_tensor({2, side * side, 6}, rng);
      TokenVar<double> tv{tape.constant(x), 2, side, side, 6};
      auto merged = merge.forward(tape, P, tv);
      auto restored = expand.forward(tape, P, merged);
      CHECK(restored.height == side);
      CHECK(restored.width == side);
      CHECK(restored.channels == 6);
      CHECK(restored.data.shape() == x.shape());
    }
  }
}

TEST_CASE("token_mlp: zero weights, hidden width, known-weight oracle") {
  Rng rng(37);
  ParamRegistry<double> reg;
  TokenMlp<double> mlp(reg, 13, "mlp", 8, 4.0);
  CHECK(reg.find("mlp.fc1.w")->value.shape() == Shape{8, 32});  // hidden_ratio 4, dim 8 -> 32

  SUBCASE("zero weights give zero output") {
    for (auto& v : reg.find("mlp.fc2.w")->value.values()) v = 0.0;
    Tape<double> tape;
    auto P = reg.bind_all(tape, false);
    auto out = mlp.forward(tape, P, tape.constant(random_tensor({1, 3, 8}, rng)));
    for (double v : out.value().values()) CHECK(v == 0.0);
  }
  SUBCASE("known one-token input equals the hand-computed two-layer result") {
    Tensor<double> x = random_tensor({1, 1, 8}, rng);
    Tape<double> tape;
    auto P = reg.bind_all(tape, false);
    auto out = mlp.forward(tape, P, tape.constant(x));
    std::vector<double> h = oracles::affine(std::vector<double>(x.data(), x.data() + 8),
                                            reg.find("mlp.fc1.w")->value,
                                            reg.find("mlp.fc1.b")->value);
    for (double& v : h) v = oracles::gelu(v);
    auto want = oracles::affine(h, reg.find("mlp.fc2.w")->value, reg.find("mlp.fc2.b")->value);
    for (std::size_t c = 0; c < 8; ++c)
      CHECK(out.value()[c] == doctest::Approx(want[c]).epsilon(1e-10));
  }
}

TEST_CASE("swin block is batch-equivariant") {
  Rng rng(41);
  ParamRegistry<double> reg;
  SwinBlock<double> block(reg, 14, "blk", 8, 2, 2, 2.0, true);
  Tensor<double> batch = random_tensor({3, 16, 8}, rng);

  Tape<double> tape;
  auto P = reg.bind_all(tape, false);
  TokenVar<double> tv{tape.constant(batch), 3, 4, 4, 8};
  auto full = block.forward(tape, P, tv).data.value();

  for (std::size_t b = 0; b < 3; ++b) {
    Tensor<double> single(Shape{1, 16, 8});
    std::copy_n(batch.data() + b * 128, 128, single.data());
    Tape<double> t2;
    auto P2 = reg.bind_all(t2, false);
    TokenVar<double> sv{t2.constant(single), 1, 4, 4, 8};
    auto one = block.forward(t2, P2, sv).data.value();
    for (std::size_t i = 0; i < 128; ++i) {
      CHECK(std::abs(full[b * 128 + i] - one[i]) <= 1e-12);
    }
  }
}
