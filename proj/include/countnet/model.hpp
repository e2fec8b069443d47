#pragma once

// Full counting model: K encoder stages (gated modulation -> Swin pair ->
// merge), gated bottleneck, K mirrored decoder stages (expand -> gated fusion
// -> Swin pair), and a convolutional regression head that maps patch-level
// tokens to a full-resolution nonnegative density map whose sum is the count.

#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "countnet/gates.hpp"
#include "countnet/swin.hpp"

namespace countnet {

struct ModelConfig {
  std::size_t stages = 2;  // K
  std::size_t patch_size = 4;
  std::size_t embed_dim = 32;
  std::size_t window_size = 4;
  std::vector<std::size_t> heads_per_stage = {2, 4};
  std::vector<std::size_t> depths_per_stage = {2, 2};
  MaskScale mask_scale = MaskScale::Rescaled;
  bool use_gcam = true;
  bool use_gefs = true;
  bool use_gafu = true;
  std::size_t input_size = 64;
  double mlp_ratio = 4.0;

  bool operator==(const ModelConfig&) const = default;

  void validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
    if (stages == 0) fail("stages must be >= 1");
    if (heads_per_stage.size() != stages || depths_per_stage.size() != stages) {
      fail("heads/depths lists must have one entry per stage");
    }
    if (patch_size == 0 || (patch_size & (patch_size - 1)) != 0) {
      fail("patch_size must be a power of two");
    }
    if (input_size % patch_size != 0) fail("input_size not divisible by patch_size");
    const std::size_t grid = input_size / patch_size;
    if (grid % (std::size_t(1) << stages) != 0) {
      fail("token grid " + std::to_string(grid) + " not divisible by 2^stages");
    }
    if (embed_dim % 2 != 0 || embed_dim < 4) fail("embed_dim must be even and >= 4");
    for (std::size_t i = 0; i < stages; ++i) {
      const std::size_t g = grid >> i;
      if (g % window_size != 0) {
        fail("stage " + std::to_string(i) + " grid " + std::to_string(g) +
             " not divisible by window_size " + std::to_string(window_size));
      }
      const std::size_t c = embed_dim << i;
      if (depths_per_stage[i] == 0) fail("stage depth must be >= 1");
      if (heads_per_stage[i] == 0 || c % heads_per_stage[i] != 0) {
        fail("stage " + std::to_string(i) + " channels " + std::to_string(c) +
             " not divisible by heads " + std::to_string(heads_per_stage[i]));
      }
    }
    if ((embed_dim << stages) % heads_per_stage.back() != 0) {
      fail("bottleneck channels not divisible by heads");
    }
  }

  std::string to_text() const {
    std::ostringstream os;
    auto list = [](const std::vector<std::size_t>& v) {
      std::string s;
      for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
      return s;
    };
    os << "depths=" << list(depths_per_stage) << "\n"
       << "embed_dim=" << embed_dim << "\n"
       << "gafu=" << (use_gafu ? 1 : 0) << "\n"
       << "gcam=" << (use_gcam ? 1 : 0) << "\n"
       << "gefs=" << (use_gefs ? 1 : 0) << "\n"
       << "heads=" << list(heads_per_stage) << "\n"
       << "input_size=" << input_size << "\n"
       << "mask_scale=" << (mask_scale == MaskScale::Rescaled ? "rescaled" : "literal") << "\n"
       << "mlp_ratio=" << mlp_ratio << "\n"
       << "patch_size=" << patch_size << "\n"
       << "stages=" << stages << "\n"
       << "window_size=" << window_size << "\n";
    return os.str();
  }

  static ModelConfig from_text(const std::string& text) {
    ModelConfig cfg;
    std::map<std::string, std::string> kv;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty() || line[0] == '#') continue;
      auto eq = line.find('=');
      if (eq == std::string::npos) throw ParseError("config line without '=': " + line);
      kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto need = [&](const std::string& key) {
      auto it = kv.find(key);
      if (it == kv.end()) throw ParseError("missing config key: " + key);
      return it->second;
    };
    auto parse_list = [](const std::string& s) {
      std::vector<std::size_t> v;
      std::istringstream ls(s);
      std::string item;
      while (std::getline(ls, item, ',')) v.push_back(std::stoul(item));
      return v;
    };
    cfg.depths_per_stage = parse_list(need("depths"));
    cfg.embed_dim = std::stoul(need("embed_dim"));
    cfg.use_gafu = need("gafu") == "1";
    cfg.use_gcam = need("gcam") == "1";
    cfg.use_gefs = need("gefs") == "1";
    cfg.heads_per_stage = parse_list(need("heads"));
    cfg.input_size = std::stoul(need("input_size"));
    const std::string ms = need("mask_scale");
    if (ms != "rescaled" && ms != "literal") throw ParseError("bad mask_scale: " + ms);
    cfg.mask_scale = ms == "rescaled" ? MaskScale::Rescaled : MaskScale::Literal;
    cfg.mlp_ratio = std::stod(need("mlp_ratio"));
    cfg.patch_size = std::stoul(need("patch_size"));
    cfg.stages = std::stoul(need("stages"));
    cfg.window_size = std::stoul(need("window_size"));
    cfg.validate();
    return cfg;
  }
};

// Nonnegative per-pixel density; the sum over a region is the expected count.
struct DensityMap {
  std::size_t height = 0, width = 0;
  std::vector<double> values;

  double sum() const { return chunked_sum(values.data(), values.size()); }
};

inline double count(const DensityMap& d) { return d.sum(); }

// Patch-resolution tokens -> pixel-resolution density:
// repeated [bilinear x2 -> 3x3 conv -> GELU], then 1x1 conv and rectification.
template <typename T>
class RegressionHead {
 public:
  RegressionHead(ParamRegistry<T>& reg, std::uint64_t seed, const std::string& prefix,
                 std::size_t in_channels, std::size_t patch)
      : in_channels_(in_channels) {
    std::size_t c = in_channels;
    for (std::size_t p = patch; p > 1; p /= 2) {
      const std::size_t cn = std::max<std::size_t>(c / 2, 4);
      const std::string sp = prefix + ".up" + std::to_string(conv_w_.size());
      conv_w_.push_back(reg.add(sp + ".w", {3, 3, c, cn}, Init::HeNormal, seed));
      conv_b_.push_back(reg.add(sp + ".b", {cn}, Init::Zeros, seed));
      c = cn;
    }
    final_w_ = reg.add(prefix + ".final.w", {c, 1}, Init::TruncNormal02, seed);
    final_b_ = reg.add(prefix + ".final.b", {1}, Init::Zeros, seed);
    out_channels_ = c;
  }

  // tokens [B, G*G, C] -> density [B, G*2^stages, G*2^stages]
  Var<T> forward(Tape<T>&, const std::vector<Var<T>>& P, const TokenVar<T>& tokens) const {
    const std::size_t b = tokens.batch;
    std::size_t h = tokens.height, w = tokens.width;
    Var<T> x = reshape(tokens.data, {b, h, w, tokens.channels});
    for (std::size_t i = 0; i < conv_w_.size(); ++i) {
      x = upsample2x(x);
      h *= 2;
      w *= 2;
      x = gelu(conv2d(x, P[conv_w_[i]], P[conv_b_[i]]));
    }
    Var<T> flat = reshape(x, {b, h * w, out_channels_});
    Var<T> density = relu(linear(flat, P[final_w_], P[final_b_]));
    return reshape(density, {b, h, w});
  }

 private:
  std::size_t in_channels_, out_channels_ = 0;
  std::vector<std::size_t> conv_w_, conv_b_;
  std::size_t final_w_, final_b_;
};

template <typename T>
class CountingModel {
 public:
  CountingModel(const ModelConfig& cfg, ParamRegistry<T>& reg, std::uint64_t seed)
      : cfg_(cfg) {
    cfg.validate();
    embed_.emplace(reg, seed, "embed", cfg.patch_size, 3, cfg.embed_dim);
    for (std::size_t i = 0; i < cfg.stages; ++i) {
      const std::size_t c = cfg.embed_dim << i;
      const std::string sp = "enc" + std::to_string(i);
      if (cfg.use_gcam) {
        enc_gcam_.emplace_back(reg, seed, sp + ".gcam", c, cfg.mask_scale);
      }
      enc_blocks_.emplace_back();
      for (std::size_t dpt = 0; dpt < cfg.depths_per_stage[i]; ++dpt) {
        enc_blocks_.back().emplace_back(reg, seed, sp + ".swin" + std::to_string(dpt), c,
                                        cfg.window_size, cfg.heads_per_stage[i], cfg.mlp_ratio,
                                        dpt % 2 == 1);
      }
      merges_.emplace_back(reg, seed, sp + ".merge", c);
    }
    const std::size_t cbn = cfg.embed_dim << cfg.stages;
    if (cfg.use_gefs) {
      gefs_.emplace(reg, seed, "bottleneck.gefs", cbn, cfg.heads_per_stage.back());
    }
    for (std::size_t j = 0; j < cfg.stages; ++j) {
      const std::size_t enc_i = cfg.stages - 1 - j;  // mirrored stage
      const std::size_t c = cfg.embed_dim << enc_i;
      const std::string sp = "dec" + std::to_string(j);
      expands_.emplace_back(reg, seed, sp + ".expand", c * 2);
      fusions_.emplace_back(reg, seed, sp + ".fuse", c, cfg.use_gafu);
      dec_blocks_.emplace_back();
      for (std::size_t dpt = 0; dpt < cfg.depths_per_stage[enc_i]; ++dpt) {
        dec_blocks_.back().emplace_back(reg, seed, sp + ".swin" + std::to_string(dpt), c,
                                        cfg.window_size, cfg.heads_per_stage[enc_i],
                                        cfg.mlp_ratio, dpt % 2 == 1);
      }
    }
    head_.emplace(reg, seed, "head", cfg.embed_dim, cfg.patch_size);
  }

  // image [B, S, S, 3] -> density [B, S, S]
  Var<T> forward(Tape<T>& tape, const std::vector<Var<T>>& P, Var<T> image) const {
    const Shape& s = image.shape();
    if (s.size() != 4 || s[1] != cfg_.input_size || s[2] != cfg_.input_size || s[3] != 3) {
      throw ShapeError("model expects [B, " + std::to_string(cfg_.input_size) + ", " +
                       std::to_string(cfg_.input_size) + ", 3], got " + shape_str(s));
    }
    TokenVar<T> x = embed_->forward(tape, P, image);
    std::vector<TokenVar<T>> skips;  // pre-merge features, one per stage
    for (std::size_t i = 0; i < cfg_.stages; ++i) {
      if (cfg_.use_gcam) x = enc_gcam_[i].forward(tape, P, x).out;
      for (const auto& blk : enc_blocks_[i]) x = blk.forward(tape, P, x);
      skips.push_back(x);
      x = merges_[i].forward(tape, P, x);
    }
    if (cfg_.use_gefs) x = gefs_->forward(tape, P, x).out;
    for (std::size_t j = 0; j < cfg_.stages; ++j) {
      x = expands_[j].forward(tape, P, x);
      x = fusions_[j].forward(tape, P, skips[cfg_.stages - 1 - j], x).out;
      for (const auto& blk : dec_blocks_[j]) x = blk.forward(tape, P, x);
    }
    return head_->forward(tape, P, x);
  }

  // Convenience inference path: no gradients, returns one map per image.
  std::vector<DensityMap> predict(const ParamRegistry<T>& reg, const Tensor<T>& images) const {
    Tape<T> tape;
    auto P = reg.bind_all(tape, false);
    Var<T> out = forward(tape, P, tape.constant(images));
    const Shape& os = out.shape();
    std::vector<DensityMap> maps(os[0]);
    const std::size_t hw = os[1] * os[2];
    for (std::size_t b = 0; b < os[0]; ++b) {
      maps[b].height = os[1];
      maps[b].width = os[2];
      maps[b].values.resize(hw);
      for (std::size_t i = 0; i < hw; ++i) {
        maps[b].values[i] = static_cast<double>(out.value()[b * hw + i]);
      }
    }
    return maps;
  }

  const ModelConfig& config() const { return cfg_; }

  // Runtime ablation: disabling a block bypasses it; re-enabling is only
  // possible if the block's parameters were built in the first place.
  void set_toggles(bool gcam, bool gefs, bool gafu) {
    if (gcam && enc_gcam_.empty()) throw ConfigError("gcam parameters were not built");
    if (gefs && !gefs_.has_value()) throw ConfigError("gefs parameters were not built");
    if (gafu && !fusions_.empty() && !fusions_.front().gated()) {
      throw ConfigError("gafu gate parameters were not built");
    }
    cfg_.use_gcam = gcam;
    cfg_.use_gefs = gefs;
    cfg_.use_gafu = gafu;
    for (auto& f : fusions_) f.set_gated(gafu);
  }

 private:
  ModelConfig cfg_;
  std::optional<PatchEmbed<T>> embed_;
  std::vector<GcamBlock<T>> enc_gcam_;
  std::vector<std::vector<SwinBlock<T>>> enc_blocks_;
  std::vector<PatchMerge<T>> merges_;
  std::optional<GefsBlock<T>> gefs_;
  std::vector<PatchExpand<T>> expands_;
  std::vector<GafuBlock<T>> fusions_;
  std::vector<std::vector<SwinBlock<T>>> dec_blocks_;
  std::optional<RegressionHead<T>> head_;
};

// Parameter count is a pure function of the config.
inline std::size_t count_parameters(const ModelConfig& cfg) {
  ParamRegistry<float> reg;
  CountingModel<float> model(cfg, reg, 0);
  return reg.total_elements();
}

}  // namespace countnet
