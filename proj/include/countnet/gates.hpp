#pragma once

// The three gated blocks. GCAM modulates encoder tokens with a mask built
// from per-token feature scores and a row-normalized token self-similarity
// matrix. GEFS gates a stack of two full self-attention refinements at the
// bottleneck. GAFU gates encoder skip features before fusing them with
// decoder features.

#include <optional>
#include <string>
#include <vector>

#include "countnet/swin.hpp"

namespace countnet {

enum class MaskScale {
  Literal,   // apply the token-softmax mask as-is (sums to 1 over tokens)
  Rescaled,  // multiply by token count so the expected gate is 1
};

template <typename T>
struct GcamResult {
  TokenVar<T> out;
  Var<T> score;       // C: [B, N, 1] per-token feature score
  Var<T> similarity;  // S: [B, N, N] row-softmax of F_proj F_proj^T
  Var<T> mask;        // M: [B, N, 1] token softmax (pre-rescale)
};

template <typename T>
class GcamBlock {
 public:
  GcamBlock(ParamRegistry<T>& reg, std::uint64_t seed, const std::string& prefix,
            std::size_t channels, MaskScale mode)
      : channels_(channels), mode_(mode) {
    proj_w1_ = reg.add(prefix + ".proj.fc1.w", {channels, channels}, Init::TruncNormal02, seed);
    proj_b1_ = reg.add(prefix + ".proj.fc1.b", {channels}, Init::Zeros, seed);
    proj_w2_ = reg.add(prefix + ".proj.fc2.w", {channels, channels}, Init::TruncNormal02, seed);
    proj_b2_ = reg.add(prefix + ".proj.fc2.b", {channels}, Init::Zeros, seed);
    mask_w1_ = reg.add(prefix + ".mask.fc1.w", {1, 4}, Init::TruncNormal02, seed);
    mask_b1_ = reg.add(prefix + ".mask.fc1.b", {4}, Init::Zeros, seed);
    mask_w2_ = reg.add(prefix + ".mask.fc2.w", {4, 1}, Init::TruncNormal02, seed);
    mask_b2_ = reg.add(prefix + ".mask.fc2.b", {1}, Init::Zeros, seed);
    ln1_g_ = reg.add(prefix + ".ln1.g", {channels}, Init::Ones, seed);
    ln1_b_ = reg.add(prefix + ".ln1.b", {channels}, Init::Zeros, seed);
    ln2_g_ = reg.add(prefix + ".ln2.g", {channels}, Init::Ones, seed);
    ln2_b_ = reg.add(prefix + ".ln2.b", {channels}, Init::Zeros, seed);
    out_w_ = reg.add(prefix + ".out.w", {channels, channels}, Init::Identity, seed);
    out_b_ = reg.add(prefix + ".out.b", {channels}, Init::Zeros, seed);
  }

  GcamResult<T> forward(Tape<T>&, const std::vector<Var<T>>& P, const TokenVar<T>& x) const {
    const std::size_t n = x.height * x.width;
    // F_proj: per-token MLP re-expression of the features
    Var<T> fproj = linear(gelu(linear(x.data, P[proj_w1_], P[proj_b1_])), P[proj_w2_],
                          P[proj_b2_]);
    // C: average feature score per token
    Var<T> score = mean(fproj, 2);  // [b, n, 1]
    // S: row-normalized token self-similarity
    Var<T> sim = softmax(matmul(fproj, permute(fproj, {0, 2, 1})), 2);  // [b, n, n]
    // M: token mask from aggregated similarity-weighted scores
    Var<T> agg = matmul(sim, score);  // [b, n, 1]
    Var<T> mlogit = linear(gelu(linear(agg, P[mask_w1_], P[mask_b1_])), P[mask_w2_], P[mask_b2_]);
    Var<T> mask = softmax(mlogit, 1);  // over tokens
    Var<T> mask_used = mode_ == MaskScale::Rescaled ? scale(mask, static_cast<T>(n)) : mask;
    // gated filtering with the projected features folded back in
    Var<T> gated = mul(x.data, mask_used);
    Var<T> z = layer_norm(gated, 2, P[ln1_g_], P[ln1_b_], T(1e-5));
    z = add(z, fproj);
    z = layer_norm(z, 2, P[ln2_g_], P[ln2_b_], T(1e-5));
    Var<T> out = linear(z, P[out_w_], P[out_b_]);
    return GcamResult<T>{TokenVar<T>{out, x.batch, x.height, x.width, x.channels}, score, sim,
                         mask};
  }

 private:
  std::size_t channels_;
  MaskScale mode_;
  std::size_t proj_w1_, proj_b1_, proj_w2_, proj_b2_;
  std::size_t mask_w1_, mask_b1_, mask_w2_, mask_b2_;
  std::size_t ln1_g_, ln1_b_, ln2_g_, ln2_b_;
  std::size_t out_w_, out_b_;
};

// Multi-head self-attention over all tokens, no positional terms, no
// internal residual.
template <typename T>
class FullAttention {
 public:
  FullAttention(ParamRegistry<T>& reg, std::uint64_t seed, const std::string& prefix,
                std::size_t channels, std::size_t num_heads, Init out_init = Init::TruncNormal02)
      : channels_(channels), heads_(num_heads) {
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
    wo_ = reg.add(prefix + ".wo", {channels, channels}, out_init, seed);
    bo_ = reg.add(prefix + ".bo", {channels}, Init::Zeros, seed);
  }

  Var<T> forward(Tape<T>&, const std::vector<Var<T>>& P, Var<T> x) const {
    const Shape& s = x.shape();
    const std::size_t b = s[0], n = s[1], c = s[2];
    const std::size_t d = c / heads_;
    Var<T> q = scale(linear(x, P[wq_], P[bq_]), static_cast<T>(1.0 / std::sqrt(static_cast<double>(d))));
    Var<T> k = linear(x, P[wk_], P[bk_]);
    Var<T> v = linear(x, P[wv_], P[bv_]);
    Var<T> qh = permute(reshape(q, {b, n, heads_, d}), {0, 2, 1, 3});
    Var<T> kt = permute(reshape(k, {b, n, heads_, d}), {0, 2, 3, 1});
    Var<T> vh = permute(reshape(v, {b, n, heads_, d}), {0, 2, 1, 3});
    Var<T> probs = softmax(matmul(qh, kt), 3);
    Var<T> ctx = reshape(permute(matmul(probs, vh), {0, 2, 1, 3}), {b, n, c});
    return linear(ctx, P[wo_], P[bo_]);
  }

 private:
  std::size_t channels_, heads_;
  std::size_t wq_, bq_, wk_, bk_, wv_, bv_, wo_, bo_;
};

template <typename T>
struct GefsResult {
  TokenVar<T> out;
  Var<T> gate;  // W: [B, N, C], channel softmax per token
};

// out = x + W (.) Attn2(LN(Attn1(LN(x)))). The residual is the outer term, so
// zeroing either value path annihilates the gated branch and returns x.
template <typename T>
class GefsBlock {
 public:
  GefsBlock(ParamRegistry<T>& reg, std::uint64_t seed, const std::string& prefix,
            std::size_t channels, std::size_t num_heads)
      : attn1_(reg, seed, prefix + ".attn1", channels, num_heads),
        attn2_(reg, seed, prefix + ".attn2", channels, num_heads, Init::Zeros) {
    ln1_g_ = reg.add(prefix + ".ln1.g", {channels}, Init::Ones, seed);
    ln1_b_ = reg.add(prefix + ".ln1.b", {channels}, Init::Zeros, seed);
    ln2_g_ = reg.add(prefix + ".ln2.g", {channels}, Init::Ones, seed);
    ln2_b_ = reg.add(prefix + ".ln2.b", {channels}, Init::Zeros, seed);
    gate_w1_ = reg.add(prefix + ".gate.fc1.w", {channels, channels}, Init::TruncNormal02, seed);
    gate_b1_ = reg.add(prefix + ".gate.fc1.b", {channels}, Init::Zeros, seed);
    gate_w2_ = reg.add(prefix + ".gate.fc2.w", {channels, channels}, Init::TruncNormal02, seed);
    gate_b2_ = reg.add(prefix + ".gate.fc2.b", {channels}, Init::Zeros, seed);
  }

  GefsResult<T> forward(Tape<T>& tape, const std::vector<Var<T>>& P, const TokenVar<T>& x) const {
    Var<T> gate = softmax(
        linear(gelu(linear(x.data, P[gate_w1_], P[gate_b1_])), P[gate_w2_], P[gate_b2_]), 2);
    Var<T> t1 = attn1_.forward(tape, P, layer_norm(x.data, 2, P[ln1_g_], P[ln1_b_], T(1e-5)));
    Var<T> t2 = attn2_.forward(tape, P, layer_norm(t1, 2, P[ln2_g_], P[ln2_b_], T(1e-5)));
    Var<T> out = add(x.data, mul(gate, t2));
    return GefsResult<T>{TokenVar<T>{out, x.batch, x.height, x.width, x.channels}, gate};
  }

 private:
  FullAttention<T> attn1_, attn2_;
  std::size_t ln1_g_, ln1_b_, ln2_g_, ln2_b_;
  std::size_t gate_w1_, gate_b1_, gate_w2_, gate_b2_;
};

template <typename T>
struct GafuResult {
  TokenVar<T> out;
  std::optional<Var<T>> gate;  // absent when the block runs ungated
};

// Gated skip fusion: F_G = skip + W (.) skip, out = Linear([decoder, F_G]).
// Ungated mode drops the gate branch and projects the plain concatenation.
template <typename T>
class GafuBlock {
 public:
  GafuBlock(ParamRegistry<T>& reg, std::uint64_t seed, const std::string& prefix,
            std::size_t channels, bool gated)
      : channels_(channels), gated_(gated), has_gate_params_(gated) {
    if (gated_) {
      gate_w1_ = reg.add(prefix + ".gate.fc1.w", {channels, channels}, Init::TruncNormal02, seed);
      gate_b1_ = reg.add(prefix + ".gate.fc1.b", {channels}, Init::Zeros, seed);
      gate_w2_ = reg.add(prefix + ".gate.fc2.w", {channels, channels}, Init::TruncNormal02, seed);
      gate_b2_ = reg.add(prefix + ".gate.fc2.b", {channels}, Init::Zeros, seed);
    }
    fuse_w_ = reg.add(prefix + ".fuse.w", {2 * channels, channels}, Init::StackedIdentity, seed);
    fuse_b_ = reg.add(prefix + ".fuse.b", {channels}, Init::Zeros, seed);
  }

  GafuResult<T> forward(Tape<T>&, const std::vector<Var<T>>& P, const TokenVar<T>& skip,
                        const TokenVar<T>& decoder) const {
    if (skip.height != decoder.height || skip.width != decoder.width ||
        skip.batch != decoder.batch) {
      throw ShapeError("gafu spatial mismatch: skip " + std::to_string(skip.height) + "x" +
                       std::to_string(skip.width) + " vs decoder " +
                       std::to_string(decoder.height) + "x" + std::to_string(decoder.width));
    }
    if (skip.channels != channels_ || decoder.channels != channels_) {
      throw ShapeError("gafu channel mismatch");
    }
    Var<T> fused_input;
    std::optional<Var<T>> gate;
    if (gated_) {
      Var<T> w = softmax(
          linear(gelu(linear(skip.data, P[gate_w1_], P[gate_b1_])), P[gate_w2_], P[gate_b2_]), 2);
      Var<T> fg = add(skip.data, mul(w, skip.data));
      fused_input = concat_last(decoder.data, fg);
      gate = w;
    } else {
      fused_input = concat_last(decoder.data, skip.data);
    }
    Var<T> out = linear(fused_input, P[fuse_w_], P[fuse_b_]);
    return GafuResult<T>{
        TokenVar<T>{out, decoder.batch, decoder.height, decoder.width, decoder.channels}, gate};
  }

  bool gated() const { return gated_; }

  void set_gated(bool gated) {
    if (gated && !has_gate_params_) throw ConfigError("gafu gate parameters were not built");
    gated_ = gated;
  }

 private:
  std::size_t channels_;
  bool gated_;
  bool has_gate_params_ = false;
  std::size_t gate_w1_ = 0, gate_b1_ = 0, gate_w2_ = 0, gate_b2_ = 0;
  std::size_t fuse_w_, fuse_b_;
};

}  // namespace countnet
