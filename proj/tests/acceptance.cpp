// Acceptance suite: runs every release criterion at its pinned tolerance and
// prints one [PASS]/[FAIL] line per criterion. Exit code is the number of
// failed criteria.
//
//  1. gradient correctness (f64, h=1e-4, max err < 1e-4, < 2 min)
//  2. normalization invariants over 1000 random inputs (1e-6), density >= 0
//  3. token-permutation equivariance over 100 pairs (1e-8)
//  4. oracle equivalence: dense attention 1e-10, matmul 1e-12 rel,
//     gate blocks vs straight-line recomputation 1e-10
//  5. density-target count integral over 1000 random point sets (1e-5)
//  6. end-to-end learning: median test MAE over 3 seeds at least 40% below
//     the constant-mean baseline (toy task, 30 epochs, batch 8)
//  7. ablation direction: full model median MAE <= all-off baseline median
//  8. determinism: bit-identical training, checkpoint round-trip, manifest replay

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "countnet/checkpoint.hpp"
#include "countnet/checks.hpp"
#include "countnet/train.hpp"
#include "oracles.hpp"

#ifndef COUNTNET_CLI_PATH
#define COUNTNET_CLI_PATH "./countnet"
#endif

namespace fs = std::filesystem;
using namespace countnet;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void verdict(int criterion, bool pass, const std::string& what, const std::string& detail) {
  std::printf("[%s] criterion %d: %s (%s)\n", pass ? "PASS" : "FAIL", criterion, what.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(COUNTNET_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// --- criteria ----------------------------------------------------------------

void criterion_1_gradients() {
  const auto t0 = Clock::now();
  auto results = run_gradient_checks(1e-4, 1e-4, false);
  const double elapsed = seconds_since(t0);
  bool pass = elapsed < 120.0;
  double worst = 0;
  std::string names;
  for (const auto& r : results) {
    pass = pass && r.pass;
    worst = std::max(worst, r.value);
    names += (names.empty() ? "" : ", ") + r.name + (r.pass ? "" : "(FAILED)");
  }
  std::ostringstream d;
  d << "max rel err " << worst << " over {" << names << "}, " << elapsed << " s";
  verdict(1, pass, "gradient correctness at f64, h=1e-4, tol 1e-4", d.str());
}

void criterion_2_normalization() {
  auto results = run_normalization_checks(1000, 1e-6);
  bool pass = true;
  double worst = 0;
  for (const auto& r : results) {
    pass = pass && r.pass;
    if (r.name != "density_nonnegative") worst = std::max(worst, r.value);
  }
  std::ostringstream d;
  d << "max |sum-1| " << worst << " over 1000 inputs; density min >= 0: "
    << (results.back().pass ? "yes" : "no");
  verdict(2, pass, "normalization invariants within 1e-6", d.str());
}

void criterion_3_equivariance() {
  auto results = run_equivariance_checks(100, 1e-8);
  bool pass = true;
  double worst = 0;
  for (const auto& r : results) {
    pass = pass && r.pass;
    worst = std::max(worst, r.value);
  }
  std::ostringstream d;
  d << "max deviation " << worst << " over 100 (input, permutation) pairs";
  verdict(3, pass, "GCAM/GEFS token-permutation equivariance within 1e-8", d.str());
}

void criterion_4_oracles() {
  Rng rng(2024);
  double worst_attn = 0, worst_matmul = 0, worst_blocks = 0;

  {  // full-grid window attention vs dense oracle
    ParamRegistry<double> reg;
    WindowAttention<double> attn(reg, 21, "wa", 8, 4, 2);
    Tensor<double> x = random_tensor({1, 16, 8}, rng);
    Tape<double> tape;
    auto P = reg.bind_all(tape, false);
    auto out = attn.forward(tape, P, TokenVar<double>{tape.constant(x), 1, 4, 4, 8}, false);
    const auto& table = reg.find("wa.rel_bias")->value;
    auto bias = [&](std::size_t i, std::size_t j, std::size_t h) {
      const auto yi = static_cast<std::ptrdiff_t>(i / 4), xi = static_cast<std::ptrdiff_t>(i % 4);
      const auto yj = static_cast<std::ptrdiff_t>(j / 4), xj = static_cast<std::ptrdiff_t>(j % 4);
      return table[static_cast<std::size_t>((yi - yj + 3) * 7 + (xi - xj + 3)) * 2 + h];
    };
    auto want = oracles::dense_attention(oracles::to_mat(x, 16, 8), reg, "wa", 2, bias);
    for (std::size_t t = 0; t < 16; ++t)
      for (std::size_t c = 0; c < 8; ++c)
        worst_attn = std::max(worst_attn, std::abs(out.data.value()[t * 8 + c] - want[t][c]));
  }
  {  // matmul vs naive triple loop, random sizes up to 16x16
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t m = 1 + rng.uniform_index(16), k = 1 + rng.uniform_index(16),
                        n = 1 + rng.uniform_index(16);
      Tensor<double> a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng);
      Tape<double> tape;
      auto c = matmul(tape.constant(a), tape.constant(b));
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          double want = 0;
          for (std::size_t kk = 0; kk < k; ++kk) want += a[i * k + kk] * b[kk * n + j];
          const double rel = std::abs(c.value()[i * n + j] - want) / std::max(1.0, std::abs(want));
          worst_matmul = std::max(worst_matmul, rel);
        }
    }
  }
  {  // gate blocks vs straight-line recomputation
    ParamRegistry<double> reg;
    GcamBlock<double> gcam(reg, 22, "g", 8, MaskScale::Rescaled);
    GefsBlock<double> gefs(reg, 23, "e", 8, 2);
    GafuBlock<double> gafu(reg, 24, "f", 8, true);
    for (auto& v : reg.find("e.attn2.wo")->value.values()) v = rng.uniform(-0.1, 0.1);
    for (auto& v : reg.find("f.fuse.w")->value.values()) v = rng.uniform(-0.5, 0.5);
    Tensor<double> x = random_tensor({1, 6, 8}, rng);
    Tensor<double> dec = random_tensor({1, 6, 8}, rng);
    Tape<double> tape;
    auto P = reg.bind_all(tape, false);
    TokenVar<double> tv{tape.constant(x), 1, 1, 6, 8};
    auto rg = gcam.forward(tape, P, tv);
    auto re = gefs.forward(tape, P, tv);
    auto rf = gafu.forward(tape, P, tv, TokenVar<double>{tape.constant(dec), 1, 1, 6, 8});
    auto wg = oracles::gcam(oracles::to_mat(x, 6, 8), reg, "g", true);
    auto we = oracles::gefs(oracles::to_mat(x, 6, 8), reg, "e", 2);
    auto wf = oracles::gafu(oracles::to_mat(x, 6, 8), oracles::to_mat(dec, 6, 8), reg, "f");
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t c = 0; c < 8; ++c) {
        worst_blocks = std::max(worst_blocks,
                                std::abs(rg.out.data.value()[i * 8 + c] - wg.out[i][c]));
        worst_blocks = std::max(worst_blocks,
                                std::abs(re.out.data.value()[i * 8 + c] - we.out[i][c]));
        worst_blocks = std::max(worst_blocks,
                                std::abs(rf.out.data.value()[i * 8 + c] - wf.out[i][c]));
      }
  }
  const bool pass = worst_attn < 1e-10 && worst_matmul < 1e-12 && worst_blocks < 1e-10;
  std::ostringstream d;
  d << "attention " << worst_attn << " (<1e-10), matmul rel " << worst_matmul
    << " (<1e-12), blocks " << worst_blocks << " (<1e-10)";
  verdict(4, pass, "oracle equivalence", d.str());
}

void criterion_5_density_integral() {
  Rng rng(555);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = rng.uniform_index(30);
    std::vector<Point> pts;
    for (std::size_t i = 0; i < n; ++i) {
      if (rng.uniform() < 0.25) {  // boundary-adjacent
        const double edge = rng.uniform() < 0.5 ? rng.uniform(0, 1.5) : rng.uniform(61.5, 63);
        if (rng.uniform() < 0.5) {
          pts.push_back(Point{edge, rng.uniform(0, 63)});
        } else {
          pts.push_back(Point{rng.uniform(0, 63), edge});
        }
      } else {
        pts.push_back(Point{rng.uniform(0, 63), rng.uniform(0, 63)});
      }
    }
    DensityMap m = density_target(pts, 64, 64, 2.0);
    worst = std::max(worst, std::abs(m.sum() - static_cast<double>(n)));
  }
  std::ostringstream d;
  d << "max |integral - count| " << worst << " over 1000 point sets";
  verdict(5, worst < 1e-5, "count-integral fidelity within 1e-5", d.str());
}

struct LearningOutcome {
  double baseline_const_mae = 0;
  double full_median = 0;
  double swin_unet_median = 0;
  std::string detail_full, detail_base;
};

LearningOutcome run_learning_experiments() {
  SynthSpec spec;  // 64x64, counts 1..20 (defaults)
  spec.seed = 424242;
  auto train_set = synth_generate(spec, 800);
  SynthSpec tspec = spec;
  tspec.seed = 515151;
  auto test_set = synth_generate(tspec, 200);

  LearningOutcome out;
  out.baseline_const_mae = constant_mean_baseline_mae(train_set, test_set);

  auto train_eval = [&](bool gates_on, std::uint64_t seed) {
    ModelConfig cfg;  // toy: K=2, dim 32, window 4, input 64
    cfg.use_gcam = cfg.use_gefs = cfg.use_gafu = gates_on;
    TrainConfig tc;  // 30 epochs, batch 8
    tc.seed = seed;
    ModelRuntime rt(cfg, seed);
    const auto t0 = Clock::now();
    train_model(cfg, tc, train_set, {}, rt.params(), rt.model(), nullptr);
    const double mins = seconds_since(t0) / 60.0;
    EvalReport rep = evaluate(rt.model(), rt.params(), test_set, tc.batch_size);
    std::printf("  %s seed %llu: test MAE %.3f RMSE %.3f (%.1f min)\n",
                gates_on ? "full " : "plain", static_cast<unsigned long long>(seed), rep.mae,
                rep.rmse, mins);
    std::fflush(stdout);
    return rep.mae;
  };

  std::vector<double> full, base;
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) full.push_back(train_eval(true, seed));
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) base.push_back(train_eval(false, seed));
  out.full_median = median(full);
  out.swin_unet_median = median(base);

  std::ostringstream df, db;
  df << "full MAEs {" << full[0] << ", " << full[1] << ", " << full[2] << "}";
  db << "plain MAEs {" << base[0] << ", " << base[1] << ", " << base[2] << "}";
  out.detail_full = df.str();
  out.detail_base = db.str();
  return out;
}

void criteria_6_7_learning() {
  std::printf("-- training 2 variants x 3 seeds (toy task: 800 train / 200 test, 30 epochs)\n");
  std::fflush(stdout);
  LearningOutcome out = run_learning_experiments();

  {
    std::ostringstream d;
    d << "median full-model MAE " << out.full_median << " vs constant-mean baseline "
      << out.baseline_const_mae << " (need <= " << 0.6 * out.baseline_const_mae << "); "
      << out.detail_full;
    verdict(6, out.full_median <= 0.6 * out.baseline_const_mae,
            "end-to-end learning beats the constant-mean baseline by 40%", d.str());
  }
  {
    std::ostringstream d;
    d << "median full-model MAE " << out.full_median << " vs plain backbone median "
      << out.swin_unet_median << "; " << out.detail_base;
    verdict(7, out.full_median <= out.swin_unet_median,
            "gated model is no worse than the all-off baseline", d.str());
  }
}

void criterion_8_determinism() {
  bool pass = true;
  std::string detail;

  // (a) bit-identical training under a fixed seed
  {
    SynthSpec spec;
    spec.image_size = 16;
    spec.count_min = 1;
    spec.count_max = 3;
    spec.radius_min = 1.5;
    spec.radius_max = 2.5;
    spec.seed = 88;
    auto data = synth_generate(spec, 16);
    ModelConfig cfg = micro_model_config();
    TrainConfig tc;
    tc.batch_size = 4;
    tc.warmup_epochs = 1;
    tc.total_epochs = 3;
    tc.seed = 99;
    tc.sigma = 1.5;
    auto run = [&]() {
      ModelRuntime rt(cfg, tc.seed);
      train_model(cfg, tc, data, {}, rt.params(), rt.model(), nullptr);
      const std::string p = (fs::temp_directory_path() / "acc_det.ckpt").string();
      save_checkpoint(p, cfg, rt.params());
      std::string bytes = slurp(p);
      fs::remove(p);
      return bytes;
    };
    const bool same = run() == run();
    pass = pass && same;
    detail += std::string("training bytes identical: ") + (same ? "yes" : "NO");
  }
  // (b) save -> load -> forward bit-identical
  {
    ModelConfig cfg = micro_model_config();
    ModelRuntime rt(cfg, 5);
    const std::string p = (fs::temp_directory_path() / "acc_rt.ckpt").string();
    save_checkpoint(p, cfg, rt.params());
    ModelRuntime rt2 = ModelRuntime::from_checkpoint(load_checkpoint(p));
    fs::remove(p);
    Rng rng(6);
    Tensor<float> img(Shape{2, cfg.input_size, cfg.input_size, 3});
    for (auto& v : img.values()) v = static_cast<float>(rng.uniform(0, 1));
    auto a = rt.model().predict(rt.params(), img);
    auto b = rt2.model().predict(rt2.params(), img);
    bool same = true;
    for (std::size_t i = 0; i < a.size(); ++i) same = same && a[i].values == b[i].values;
    pass = pass && same;
    detail += std::string("; round-trip forward identical: ") + (same ? "yes" : "NO");
  }
  // (c) manifest replay byte-exact (through the CLI)
  {
    const auto d1 = fs::temp_directory_path() / "acc_replay_a";
    const auto d2 = fs::temp_directory_path() / "acc_replay_b";
    fs::remove_all(d1);
    fs::remove_all(d2);
    bool same = false;
    if (run_cli("synth --out " + d1.string() + " --n 8 --size 16 --count 1:3 --radius 1.5:2.5 "
                "--seed 17") == 0 &&
        run_cli("replay " + (d1 / "manifest.json").string() + " --out " + d2.string()) == 0) {
      same = slurp((d1 / "annotations.txt").string()) == slurp((d2 / "annotations.txt").string());
      for (int i = 0; i < 8 && same; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "img_%05d.ppm", i);
        same = slurp((d1 / name).string()) == slurp((d2 / name).string());
      }
    }
    fs::remove_all(d1);
    fs::remove_all(d2);
    pass = pass && same;
    detail += std::string("; manifest replay byte-exact: ") + (same ? "yes" : "NO");
  }
  verdict(8, pass, "determinism and round-trips", detail);
}

}  // namespace

int main() {
  std::printf("countnet acceptance suite\n");
  criterion_1_gradients();
  criterion_2_normalization();
  criterion_3_equivariance();
  criterion_4_oracles();
  criterion_5_density_integral();
  criteria_6_7_learning();
  criterion_8_determinism();
  if (g_failures == 0) {
    std::printf("all 8 criteria passed\n");
  } else {
    std::printf("%d criteria FAILED\n", g_failures);
  }
  return g_failures;
}
