#pragma once

// Swin-style blocks: patch embedding, windowed multi-head self-attention
// (plain and cyclically shifted), token MLP, patch merging and expanding.
// All modules register their parameters in a ParamRegistry and evaluate
// against a vector of bound Vars, so the same code path serves f32 training
// and f64 gradient checks.

#include <memory>
#include <string>
#include <vector>

#include "countnet/autodiff.hpp"
#include "countnet/params.hpp"

namespace countnet {

// Batch of token features with explicit spatial layout.
template <typename T>
struct TokenGrid {
  std::size_t batch = 0, height = 0, width = 0, channels = 0;
  Tensor<T> data;  // [batch, height*width, channels]

  void validate() const {
    Shape want{batch, height * width, channels};
    if (data.shape() != want) {
      throw ShapeError("token grid data " + shape_str(data.shape()) + " does not match layout " +
                       shape_str(want));
    }
  }
};

// Tape-resident counterpart of TokenGrid.
template <typename T>
struct TokenVar {
  Var<T> data;  // [B, N, C]
  std::size_t batch = 0, height = 0, width = 0, channels = 0;
};

template <typename T>
TokenVar<T> bind_grid(Tape<T>& tape, const TokenGrid<T>& g, bool requires_grad = false) {
  g.validate();
  return TokenVar<T>{tape.leaf(g.data, requires_grad), g.batch, g.height, g.width, g.channels};
}

// --- window bookkeeping ------------------------------------------------------

// [B, h, w, C] -> [B*nW, ws*ws, C]
template <typename T>
Var<T> window_partition(Var<T> x4, std::size_t b, std::size_t h, std::size_t w, std::size_t c,
                        std::size_t ws) {
  auto t = reshape(x4, {b, h / ws, ws, w / ws, ws, c});
  t = permute(t, {0, 1, 3, 2, 4, 5});
  return reshape(t, {b * (h / ws) * (w / ws), ws * ws, c});
}

template <typename T>
Var<T> window_reverse(Var<T> wins, std::size_t b, std::size_t h, std::size_t w, std::size_t c,
                      std::size_t ws) {
  auto t = reshape(wins, {b, h / ws, w / ws, ws, ws, c});
  t = permute(t, {0, 1, 3, 2, 4, 5});
  return reshape(t, {b, h, w, c});
}

// Lookup indices into the (2ws-1)^2 relative-position table for all token
// pairs of one window.
inline std::shared_ptr<const std::vector<std::size_t>> relative_position_index(std::size_t ws) {
  const std::size_t m = ws * ws;
  auto idx = std::make_shared<std::vector<std::size_t>>(m * m);
  for (std::size_t i = 0; i < m; ++i) {
    const std::ptrdiff_t yi = i / ws, xi = i % ws;
    for (std::size_t j = 0; j < m; ++j) {
      const std::ptrdiff_t yj = j / ws, xj = j % ws;
      (*idx)[i * m + j] = static_cast<std::size_t>((yi - yj + static_cast<std::ptrdiff_t>(ws) - 1) *
                                                       (2 * static_cast<std::ptrdiff_t>(ws) - 1) +
                                                   (xi - xj + static_cast<std::ptrdiff_t>(ws) - 1));
    }
  }
  return idx;
}

// Additive mask for shifted windows: pairs of tokens that came from different
// regions of the unshifted grid must not attend to each other.
template <typename T>
Tensor<T> shift_attention_mask(std::size_t h, std::size_t w, std::size_t ws, std::size_t shift) {
  auto region = [&](std::size_t v, std::size_t len) -> int {
    if (v < len - ws) return 0;
    if (v < len - shift) return 1;
    return 2;
  };
  std::vector<int> id(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) id[y * w + x] = region(y, h) * 3 + region(x, w);

  const std::size_t nwh = h / ws, nww = w / ws, m = ws * ws;
  Tensor<T> mask(Shape{nwh * nww, 1, m, m});
  for (std::size_t wy = 0; wy < nwh; ++wy)
    for (std::size_t wx = 0; wx < nww; ++wx) {
      const std::size_t wi = wy * nww + wx;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          const std::size_t yi = wy * ws + i / ws, xi = wx * ws + i % ws;
          const std::size_t yj = wy * ws + j / ws, xj = wx * ws + j % ws;
          const bool cross = id[yi * w + xi] != id[yj * w + xj];
          mask[(wi * m + i) * m + j] = cross ? T(-100) : T(0);
        }
    }
  return mask;
}

// --- parameterized blocks -----------------------------------------------------

template <typename T>
class WindowAttention {
 public:
  WindowAttention(ParamRegistry<T>& reg, std::uint64_t seed, const std::string& prefix,
                  std::size_t channels, std::size_t window_size, std::size_t num_heads)
      : channels_(channels), window_(window_size), heads_(num_heads) {
    if (channels % num_heads != 0) {
      throw ConfigError(prefix + ": channels " + std::to_string(channels) +
                        " not divisible by heads " + std::to_string(num_heads));
    }
    wq_ = reg.add(prefix + ".wq", {channels, channels}, Init::TruncNormal02, seed);
    bq_ = reg.add(prefix + ".bq", {channels}, Init::Zeros, seed);
    wk_ = reg.add(prefix + ".wk", {channels, channels}, Init::TruncNormal02, seed);
    bk_ = reg.add(prefix + ".bk", {channels}, Init::Zeros, seed);
    wv_ = reg.add(prefix + ".wv", {channels, channels}, Init::TruncNormal02, seed);
    bv_ = reg.add(prefix + ".bv", {channels}, Init::Zeros, seed);
    wo_ = reg.add(prefix + ".wo", {channels, channels}, Init::TruncNormal02, seed);
    bo_ = reg.add(prefix + ".bo", {channels}, Init::Zeros, seed);
    const std::size_t span = 2 * window_size - 1;
    bias_table_ = reg.add(prefix + ".rel_bias", {span * span, num_heads}, Init::TruncNormal02,
                          seed);
    rel_index_ = relative_position_index(window_size);
  }

  TokenVar<T> forward(Tape<T>& tape, const std::vector<Var<T>>& P, const TokenVar<T>& x,
                      bool shifted) const {
    const std::size_t b = x.batch, h = x.height, w = x.width, c = x.channels;
    if (h % window_ != 0 || w % window_ != 0) {
      throw ShapeError("grid " + std::to_string(h) + "x" + std::to_string(w) +
                       " not divisible by window " + std::to_string(window_));
    }
    // a window covering the whole grid has no seam to mask
    const std::size_t shift = (shifted && (h > window_ || w > window_)) ? window_ / 2 : 0;
    const std::size_t m = window_ * window_;
    const std::size_t nw = (h / window_) * (w / window_);
    const std::size_t d = c / heads_;

    Var<T> x4 = reshape(x.data, {b, h, w, c});
    if (shift) x4 = roll_hw(x4, -static_cast<std::int64_t>(shift), -static_cast<std::int64_t>(shift));
    Var<T> wins = window_partition(x4, b, h, w, c, window_);

    Var<T> q = linear(wins, P[wq_], P[bq_]);
    Var<T> k = linear(wins, P[wk_], P[bk_]);
    Var<T> v = linear(wins, P[wv_], P[bv_]);
    q = scale(q, static_cast<T>(1.0 / std::sqrt(static_cast<double>(d))));

    const std::size_t bw = b * nw;
    Var<T> qh = permute(reshape(q, {bw, m, heads_, d}), {0, 2, 1, 3});
    Var<T> kt = permute(reshape(k, {bw, m, heads_, d}), {0, 2, 3, 1});
    Var<T> vh = permute(reshape(v, {bw, m, heads_, d}), {0, 2, 1, 3});

    Var<T> logits = matmul(qh, kt);  // [bw, heads, m, m]
    Var<T> bias = embed_rows(P[bias_table_], rel_index_);           // [m*m, heads]
    bias = permute(reshape(bias, {m, m, heads_}), {2, 0, 1});       // [heads, m, m]
    logits = add(logits, bias);

    if (shift) {
      Var<T> mask = tape.constant(shift_attention_mask<T>(h, w, window_, shift));
      Var<T> l5 = reshape(logits, {b, nw, heads_, m, m});
      l5 = add(l5, mask);  // mask [nw, 1, m, m] broadcasts over batch and heads
      logits = reshape(l5, {bw, heads_, m, m});
    }

    Var<T> probs = softmax(logits, 3);
    Var<T> ctx = matmul(probs, vh);                        // [bw, heads, m, d]
    ctx = reshape(permute(ctx, {0, 2, 1, 3}), {bw, m, c});
    Var<T> out = linear(ctx, P[wo_], P[bo_]);

    Var<T> y4 = window_reverse(out, b, h, w, c, window_);
    if (shift) y4 = roll_hw(y4, static_cast<std::int64_t>(shift), static_cast<std::int64_t>(shift));
    return TokenVar<T>{reshape(y4, {b, h * w, c}), b, h, w, c};
  }

  std::size_t window_size() const { return window_; }
  std::size_t num_heads() const { return heads_; }

 private:
  std::size_t channels_, window_, heads_;
  std::size_t wq_, bq_, wk_, bk_, wv_, bv_, wo_, bo_, bias_table_;
  std::shared_ptr<const std::vector<std::size_t>> rel_index_;
};

// Two-layer per-token MLP with GELU.
template <typename T>
class TokenMlp {
 public:
  TokenMlp(ParamRegistry<T>& reg, std::uint64_t seed, const std::string& prefix,
           std::size_t channels, double hidden_ratio) {
    const std::size_t hidden = static_cast<std::size_t>(channels * hidden_ratio);
    w1_ = reg.add(prefix + ".fc1.w", {channels, hidden}, Init::TruncNormal02, seed);
    b1_ = reg.add(prefix + ".fc1.b", {hidden}, Init::Zeros, seed);
    w2_ = reg.add(prefix + ".fc2.w", {hidden, channels}, Init::TruncNormal02, seed);
    b2_ = reg.add(prefix + ".fc2.b", {channels}, Init::Zeros, seed);
  }

  Var<T> forward(Tape<T>&, const std::vector<Var<T>>& P, Var<T> x) const {
    return linear(gelu(linear(x, P[w1_], P[b1_])), P[w2_], P[b2_]);
  }

 private:
  std::size_t w1_, b1_, w2_, b2_;
};

// Pre-norm Swin block: x + WMSA(LN(x)), then x + MLP(LN(x)).
template <typename T>
class SwinBlock {
 public:
  SwinBlock(ParamRegistry<T>& reg, std::uint64_t seed, const std::string& prefix,
            std::size_t channels, std::size_t window, std::size_t heads, double mlp_ratio,
            bool shifted)
      : shifted_(shifted),
        attn_(reg, seed, prefix + ".attn", channels, window, heads),
        mlp_(reg, seed, prefix + ".mlp", channels, mlp_ratio) {
    ln1_g_ = reg.add(prefix + ".ln1.g", {channels}, Init::Ones, seed);
    ln1_b_ = reg.add(prefix + ".ln1.b", {channels}, Init::Zeros, seed);
    ln2_g_ = reg.add(prefix + ".ln2.g", {channels}, Init::Ones, seed);
    ln2_b_ = reg.add(prefix + ".ln2.b", {channels}, Init::Zeros, seed);
  }

  TokenVar<T> forward(Tape<T>& tape, const std::vector<Var<T>>& P, const TokenVar<T>& x) const {
    TokenVar<T> n1{layer_norm(x.data, 2, P[ln1_g_], P[ln1_b_], T(1e-5)), x.batch, x.height,
                   x.width, x.channels};
    TokenVar<T> a = attn_.forward(tape, P, n1, shifted_);
    Var<T> mid = add(x.data, a.data);
    Var<T> n2 = layer_norm(mid, 2, P[ln2_g_], P[ln2_b_], T(1e-5));
    Var<T> out = add(mid, mlp_.forward(tape, P, n2));
    return TokenVar<T>{out, x.batch, x.height, x.width, x.channels};
  }

 private:
  bool shifted_;
  WindowAttention<T> attn_;
  TokenMlp<T> mlp_;
  std::size_t ln1_g_, ln1_b_, ln2_g_, ln2_b_;
};

// Linear projection of non-overlapping patch pixels to tokens.
template <typename T>
class PatchEmbed {
 public:
  PatchEmbed(ParamRegistry<T>& reg, std::uint64_t seed, const std::string& prefix,
             std::size_t patch, std::size_t in_channels, std::size_t embed_dim)
      : patch_(patch), in_channels_(in_channels), embed_dim_(embed_dim) {
    w_ = reg.add(prefix + ".w", {patch * patch * in_channels, embed_dim}, Init::TruncNormal02,
                 seed);
    b_ = reg.add(prefix + ".b", {embed_dim}, Init::Zeros, seed);
  }

  TokenVar<T> forward(Tape<T>&, const std::vector<Var<T>>& P, Var<T> image) const {
    const Shape& s = image.shape();
    if (s.size() != 4 || s[3] != in_channels_) {
      throw ShapeError("patch_embed expects [B, H, W, " + std::to_string(in_channels_) +
                       "], got " + shape_str(s));
    }
    const std::size_t b = s[0], hp = s[1], wp = s[2];
    if (hp % patch_ != 0 || wp % patch_ != 0) {
      throw ShapeError("image " + std::to_string(hp) + "x" + std::to_string(wp) +
                       " not divisible by patch size " + std::to_string(patch_));
    }
    const std::size_t gh = hp / patch_, gw = wp / patch_;
    Var<T> t = reshape(image, {b, gh, patch_, gw, patch_, in_channels_});
    t = permute(t, {0, 1, 3, 2, 4, 5});
    t = reshape(t, {b, gh * gw, patch_ * patch_ * in_channels_});
    Var<T> tokens = linear(t, P[w_], P[b_]);
    return TokenVar<T>{tokens, b, gh, gw, embed_dim_};
  }

 private:
  std::size_t patch_, in_channels_, embed_dim_;
  std::size_t w_, b_;
};

// 2x spatial downsampling: project the 4 concatenated children, channels double.
template <typename T>
class PatchMerge {
 public:
  PatchMerge(ParamRegistry<T>& reg, std::uint64_t seed, const std::string& prefix,
             std::size_t channels)
      : channels_(channels) {
    w_ = reg.add(prefix + ".w", {4 * channels, 2 * channels}, Init::TruncNormal02, seed);
    b_ = reg.add(prefix + ".b", {2 * channels}, Init::Zeros, seed);
  }

  TokenVar<T> forward(Tape<T>&, const std::vector<Var<T>>& P, const TokenVar<T>& x) const {
    if (x.height % 2 != 0 || x.width % 2 != 0) {
      throw ShapeError("patch_merge needs even grid, got " + std::to_string(x.height) + "x" +
                       std::to_string(x.width));
    }
    const std::size_t b = x.batch, h = x.height, w = x.width, c = x.channels;
    Var<T> t = reshape(x.data, {b, h / 2, 2, w / 2, 2, c});
    t = permute(t, {0, 1, 3, 2, 4, 5});                 // children order (dy, dx)
    t = reshape(t, {b, (h / 2) * (w / 2), 4 * c});
    Var<T> out = linear(t, P[w_], P[b_]);
    return TokenVar<T>{out, b, h / 2, w / 2, 2 * c};
  }

 private:
  std::size_t channels_;
  std::size_t w_, b_;
};

// 2x spatial upsampling: project to 2C then rearrange to a 2x2 block of C/2.
template <typename T>
class PatchExpand {
 public:
  PatchExpand(ParamRegistry<T>& reg, std::uint64_t seed, const std::string& prefix,
              std::size_t channels)
      : channels_(channels) {
    if (channels % 2 != 0) {
      throw ShapeError("patch_expand needs even channels, got " + std::to_string(channels));
    }
    w_ = reg.add(prefix + ".w", {channels, 2 * channels}, Init::TruncNormal02, seed);
    b_ = reg.add(prefix + ".b", {2 * channels}, Init::Zeros, seed);
  }

  TokenVar<T> forward(Tape<T>&, const std::vector<Var<T>>& P, const TokenVar<T>& x) const {
    if (x.channels % 2 != 0) {
      throw ShapeError("patch_expand needs even channels, got " + std::to_string(x.channels));
    }
    const std::size_t b = x.batch, h = x.height, w = x.width, c = x.channels;
    Var<T> t = linear(x.data, P[w_], P[b_]);            // [b, n, 2c]
    t = reshape(t, {b, h, w, 2, 2, c / 2});
    t = permute(t, {0, 1, 3, 2, 4, 5});                  // [b, h, 2, w, 2, c/2]
    Var<T> out = reshape(t, {b, (2 * h) * (2 * w), c / 2});
    return TokenVar<T>{out, b, 2 * h, 2 * w, c / 2};
  }

 private:
  std::size_t channels_;
  std::size_t w_, b_;
};

}  // namespace countnet
