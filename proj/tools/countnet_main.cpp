// countnet command-line tool: dataset synthesis, training, evaluation,
// inference with density-map export, ablation sweeps, and the release-gate
// check suite. Every artifact-producing command writes a run manifest that
// `replay` can reproduce byte-exactly.
//
// Exit codes: 0 ok, 1 check failure, 2 usage/config, 3 I/O, 4 numeric
// failure, 5 checkpoint mismatch.

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"

#include "countnet/checkpoint.hpp"
#include "countnet/checks.hpp"
#include "countnet/data.hpp"
#include "countnet/manifest.hpp"
#include "countnet/train.hpp"

namespace fs = std::filesystem;
using namespace countnet;

namespace {

int dispatch(const std::vector<std::string>& args);

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// --- flat key=value config text ------------------------------------------------
// One option per line. Bool flags serialize as true/false; repeatable options
// repeat their key. The same text is echoed into manifests and consumed by
// --config and replay.

using FlagLines = std::vector<std::pair<std::string, std::string>>;

std::string flags_to_text(const FlagLines& flags) {
  std::string text;
  for (const auto& [k, v] : flags) text += k + "=" + v + "\n";
  return text;
}

FlagLines flags_from_text(const std::string& text) {
  FlagLines flags;
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError("config line " + std::to_string(line_no) + " has no '=': " + line);
    }
    flags.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  return flags;
}

// Expands `--config FILE`: the file's options are inserted before the
// explicit flags, so explicit flags win (defaults < config file < flags).
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::vector<std::string> cfg_args, rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      std::ifstream in(args[i + 1]);
      if (!in) throw IoError("cannot open config file: " + args[i + 1]);
      std::stringstream ss;
      ss << in.rdbuf();
      for (const auto& [k, v] : flags_from_text(ss.str())) {
        if (k == "config") throw ConfigError("config files cannot nest");
        if (v == "false") continue;  // unset bool flag
        cfg_args.push_back("--" + k);
        if (v != "true") cfg_args.push_back(v);
      }
      ++i;
      continue;
    }
    rest.push_back(args[i]);
  }
  if (cfg_args.empty()) return rest;
  if (rest.empty()) throw ConfigError("--config requires a subcommand");
  std::vector<std::string> out{rest.front()};
  out.insert(out.end(), cfg_args.begin(), cfg_args.end());
  out.insert(out.end(), rest.begin() + 1, rest.end());
  return out;
}

void parse_range(const std::string& text, std::size_t& lo, std::size_t& hi) {
  const auto colon = text.find(':');
  try {
    if (colon == std::string::npos) {
      lo = hi = std::stoul(text);
      return;
    }
    lo = std::stoul(text.substr(0, colon));
    hi = std::stoul(text.substr(colon + 1));
  } catch (const std::exception&) {
    throw ConfigError("cannot parse range '" + text + "' (expected lo:hi)");
  }
  if (lo > hi) throw ConfigError("range '" + text + "': min exceeds max");
}

void parse_range(const std::string& text, double& lo, double& hi) {
  const auto colon = text.find(':');
  try {
    if (colon == std::string::npos) {
      lo = hi = std::stod(text);
      return;
    }
    lo = std::stod(text.substr(0, colon));
    hi = std::stod(text.substr(colon + 1));
  } catch (const std::exception&) {
    throw ConfigError("cannot parse range '" + text + "' (expected lo:hi)");
  }
  if (lo > hi) throw ConfigError("range '" + text + "': min exceeds max");
}

std::vector<std::size_t> parse_list(const std::string& text) {
  std::vector<std::size_t> v;
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ',')) {
    try {
      v.push_back(std::stoul(item));
    } catch (const std::exception&) {
      throw ConfigError("cannot parse list '" + text + "'");
    }
  }
  if (v.empty()) throw ConfigError("empty list");
  return v;
}

// Model/train option bundle shared by train and ablate.
struct ModelFlags {
  std::size_t stages = 2, patch = 4, embed = 32, window = 4, input_size = 64;
  std::string heads = "2,4", depths = "2,2", mask_mode = "rescaled";
  std::vector<std::string> toggles;

  void attach(CLI::App* cmd) {
    cmd->add_option("--stages", stages, "encoder/decoder stage count");
    cmd->add_option("--patch", patch, "patch size in pixels");
    cmd->add_option("--embed", embed, "embedding width at stage 0");
    cmd->add_option("--window", window, "attention window side in tokens");
    cmd->add_option("--input-size", input_size, "square input resolution");
    cmd->add_option("--heads", heads, "heads per stage, comma separated");
    cmd->add_option("--depths", depths, "swin blocks per stage, comma separated");
    cmd->add_option("--mask-mode", mask_mode, "gcam mask scaling: rescaled|literal")
        ->check(CLI::IsMember({"rescaled", "literal"}));
    cmd->add_option("--toggle", toggles, "module toggle, e.g. gcam=off (repeatable)")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  }

  void lines(FlagLines& out) const {
    out.emplace_back("stages", std::to_string(stages));
    out.emplace_back("patch", std::to_string(patch));
    out.emplace_back("embed", std::to_string(embed));
    out.emplace_back("window", std::to_string(window));
    out.emplace_back("input-size", std::to_string(input_size));
    out.emplace_back("heads", heads);
    out.emplace_back("depths", depths);
    out.emplace_back("mask-mode", mask_mode);
    for (const std::string& t : toggles) out.emplace_back("toggle", t);
  }

  ModelConfig to_config() const {
    ModelConfig cfg;
    cfg.stages = stages;
    cfg.patch_size = patch;
    cfg.embed_dim = embed;
    cfg.window_size = window;
    cfg.input_size = input_size;
    cfg.heads_per_stage = parse_list(heads);
    cfg.depths_per_stage = parse_list(depths);
    cfg.mask_scale = mask_mode == "literal" ? MaskScale::Literal : MaskScale::Rescaled;
    for (const std::string& t : toggles) {
      const auto eq = t.find('=');
      if (eq == std::string::npos) throw ConfigError("toggle must be name=on|off: " + t);
      const std::string name = t.substr(0, eq), val = t.substr(eq + 1);
      bool on;
      if (val == "on") {
        on = true;
      } else if (val == "off") {
        on = false;
      } else {
        throw ConfigError("toggle value must be on or off: " + t);
      }
      if (name == "gcam") {
        cfg.use_gcam = on;
      } else if (name == "gefs") {
        cfg.use_gefs = on;
      } else if (name == "gafu") {
        cfg.use_gafu = on;
      } else {
        throw ConfigError("unknown toggle: " + name);
      }
    }
    cfg.validate();
    return cfg;
  }
};

struct TrainFlags {
  double lr = 0.003, decay = 0.95, wd = 0.01, loss_scale = 100.0, clip = 1.0, sigma = 2.0;
  double val_frac = 0.1;
  std::size_t batch = 8, warmup = 5, epochs = 30;
  std::uint64_t seed = 1;
  std::string decay_mode = "lr";
  bool no_augment = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--lr", lr, "initial learning rate");
    cmd->add_option("--decay", decay, "decay rate (see --decay-mode)");
    cmd->add_option("--decay-mode", decay_mode, "read decay as lr|weight decay")
        ->check(CLI::IsMember({"lr", "weight"}));
    cmd->add_option("--wd", wd, "decoupled weight decay (lr decay mode)");
    cmd->add_option("--batch", batch, "batch size");
    cmd->add_option("--warmup", warmup, "warm-up epochs");
    cmd->add_option("--epochs", epochs, "total epochs");
    cmd->add_option("--seed", seed, "training seed");
    cmd->add_option("--loss-scale", loss_scale, "loss scale factor");
    cmd->add_option("--clip", clip, "gradient clipping global norm (0 disables)");
    cmd->add_option("--sigma", sigma, "density target kernel width, pixels");
    cmd->add_option("--val-frac", val_frac, "implicit validation split fraction");
    cmd->add_flag("--no-augment", no_augment, "disable random flips");
  }

  void lines(FlagLines& out) const {
    out.emplace_back("lr", fmt(lr));
    out.emplace_back("decay", fmt(decay));
    out.emplace_back("decay-mode", decay_mode);
    out.emplace_back("wd", fmt(wd));
    out.emplace_back("batch", std::to_string(batch));
    out.emplace_back("warmup", std::to_string(warmup));
    out.emplace_back("epochs", std::to_string(epochs));
    out.emplace_back("seed", std::to_string(seed));
    out.emplace_back("loss-scale", fmt(loss_scale));
    out.emplace_back("clip", fmt(clip));
    out.emplace_back("sigma", fmt(sigma));
    out.emplace_back("val-frac", fmt(val_frac));
    out.emplace_back("no-augment", no_augment ? "true" : "false");
  }

  TrainConfig to_config() const {
    TrainConfig tc;
    tc.lr = lr;
    tc.decay_rate = decay;
    tc.decay_mode = decay_mode == "weight" ? TrainConfig::DecayMode::WeightDecay
                                           : TrainConfig::DecayMode::LearningRate;
    tc.weight_decay = wd;
    tc.batch_size = batch;
    tc.warmup_epochs = warmup;
    tc.total_epochs = epochs;
    tc.seed = seed;
    tc.loss_scale = loss_scale;
    tc.clip_norm = clip;
    tc.sigma = sigma;
    tc.augment_flips = !no_augment;
    return tc;
  }
};

RunManifest start_manifest(const std::string& command) {
  RunManifest m;
  m.command = command;
  m.start_time = iso8601_utc_now();
  return m;
}

void finish_manifest(RunManifest& m, const FlagLines& flags, const std::string& out_dir) {
  m.config_text = flags_to_text(flags);
  m.end_time = iso8601_utc_now();
  write_manifest((fs::path(out_dir) / "manifest.json").string(), m);
}

void write_train_log(const std::string& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write training log: " + path);
  out << "epoch,lr,train_loss,val_mae,val_rmse\n";
  for (const auto& e : log) {
    out << e.epoch << "," << fmt(e.lr) << "," << fmt(e.train_loss) << "," << fmt(e.val_mae) << ","
        << fmt(e.val_rmse) << "\n";
  }
}

void write_eval_csv(const std::string& path, const EvalReport& rep) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write eval csv: " + path);
  out << "image_id,true,pred\n";
  for (const auto& r : rep.per_image) {
    out << r.id << "," << fmt(r.true_count) << "," << fmt(r.predicted) << "\n";
  }
  out << "# mae=" << fmt(rep.mae) << " rmse=" << fmt(rep.rmse) << "\n";
}

// --- subcommand bodies -------------------------------------------------------

int cmd_synth(const std::string& out_dir, std::size_t n, const std::string& count_range,
              const std::string& radius_range, const std::string& distractor_range,
              std::size_t size, double noise, std::uint64_t seed) {
  RunManifest m = start_manifest("synth");
  FlagLines flags{{"out", out_dir},
                  {"n", std::to_string(n)},
                  {"size", std::to_string(size)},
                  {"count", count_range},
                  {"radius", radius_range},
                  {"distractors", distractor_range},
                  {"noise", fmt(noise)},
                  {"seed", std::to_string(seed)}};
  SynthSpec spec;
  spec.image_size = size;
  parse_range(count_range, spec.count_min, spec.count_max);
  parse_range(radius_range, spec.radius_min, spec.radius_max);
  parse_range(distractor_range, spec.distractor_min, spec.distractor_max);
  spec.background_noise = noise;
  spec.seed = seed;
  try {
    spec.validate();
  } catch (const ValueError& e) {
    throw ConfigError(e.what());
  }

  auto images = synth_generate(spec, n);
  write_dataset(out_dir, images);
  for (const auto& img : images) m.outputs.push_back(img.id);
  m.outputs.push_back("annotations.txt");
  finish_manifest(m, flags, out_dir);
  std::cout << "wrote " << n << " images to " << out_dir << "\n";
  return 0;
}

int cmd_train(const ModelFlags& mf, const TrainFlags& tf, const std::string& data_dir,
              const std::string& val_dir, const std::string& out_dir) {
  RunManifest m = start_manifest("train");
  FlagLines flags{{"data", data_dir}, {"out", out_dir}};
  if (!val_dir.empty()) flags.emplace_back("val", val_dir);
  mf.lines(flags);
  tf.lines(flags);
  const ModelConfig cfg = mf.to_config();
  const TrainConfig tc = tf.to_config();

  auto data = load_dataset(data_dir, cfg.input_size);
  if (data.empty()) throw ConfigError("training dataset is empty: " + data_dir);
  std::vector<AnnotatedImage> train_set, val_set;
  if (!val_dir.empty()) {
    train_set = std::move(data);
    val_set = load_dataset(val_dir, cfg.input_size);
  } else if (tf.val_frac > 0.0 && data.size() > 1) {
    const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                    static_cast<double>(data.size()) * tf.val_frac));
    train_set.assign(data.begin(), data.end() - static_cast<std::ptrdiff_t>(n_val));
    val_set.assign(data.end() - static_cast<std::ptrdiff_t>(n_val), data.end());
  } else {
    train_set = std::move(data);
  }

  fs::create_directories(out_dir);
  ModelRuntime rt(cfg, tc.seed);
  std::cout << "model parameters: " << rt.params().total_elements() << "\n";
  std::vector<EpochLog> log;
  if (tf.epochs > 0) {
    tc.validate();
    log = train_model(cfg, tc, train_set, val_set, rt.params(), rt.model(), &std::cout);
  }

  const std::string ckpt = (fs::path(out_dir) / "checkpoint.ckpt").string();
  save_checkpoint(ckpt, cfg, rt.params());
  write_train_log((fs::path(out_dir) / "train_log.csv").string(), log);
  m.outputs = {"checkpoint.ckpt", "train_log.csv"};
  finish_manifest(m, flags, out_dir);
  if (!log.empty() && !val_set.empty()) {
    std::cout << "final val MAE " << log.back().val_mae << " RMSE " << log.back().val_rmse << "\n";
  }
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& out_dir, std::size_t batch) {
  RunManifest m = start_manifest("eval");
  FlagLines flags{{"checkpoint", ckpt_path},
                  {"data", data_dir},
                  {"out", out_dir},
                  {"batch", std::to_string(batch)}};
  Checkpoint ck = load_checkpoint(ckpt_path);
  ModelRuntime rt = ModelRuntime::from_checkpoint(ck);
  auto data = load_dataset(data_dir, ck.config.input_size);
  if (data.empty()) throw ConfigError("dataset is empty: " + data_dir);
  EvalReport rep = evaluate(rt.model(), rt.params(), data, batch);

  fs::create_directories(out_dir);
  write_eval_csv((fs::path(out_dir) / "eval.csv").string(), rep);
  m.outputs = {"eval.csv"};
  finish_manifest(m, flags, out_dir);
  std::cout << "MAE " << fmt(rep.mae) << " RMSE " << fmt(rep.rmse) << " over "
            << rep.per_image.size() << " images\n";
  return 0;
}

int cmd_infer(const std::string& ckpt_path, const std::string& images_dir,
              const std::string& out_dir, bool raw, std::size_t batch) {
  RunManifest m = start_manifest("infer");
  FlagLines flags{{"checkpoint", ckpt_path},
                  {"images", images_dir},
                  {"out", out_dir},
                  {"raw", raw ? "true" : "false"},
                  {"batch", std::to_string(batch)}};
  Checkpoint ck = load_checkpoint(ckpt_path);
  ModelRuntime rt = ModelRuntime::from_checkpoint(ck);
  const std::size_t s = ck.config.input_size;

  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(images_dir)) {
    if (entry.path().extension() == ".ppm") names.push_back(entry.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) throw IoError("no .ppm images in " + images_dir);

  fs::create_directories(out_dir);
  std::ofstream counts((fs::path(out_dir) / "counts.csv").string(), std::ios::trunc);
  counts << "image_id,count\n";
  m.outputs.push_back("counts.csv");

  for (std::size_t start = 0; start < names.size(); start += batch) {
    const std::size_t b = std::min(batch, names.size() - start);
    Tensor<float> input(Shape{b, s, s, 3});
    for (std::size_t i = 0; i < b; ++i) {
      RgbImage img = read_ppm((fs::path(images_dir) / names[start + i]).string());
      if (img.height != s || img.width != s) img = resize_bilinear(img, s);
      std::copy_n(img.pixels.data(), s * s * 3, input.data() + i * s * s * 3);
    }
    auto maps = rt.model().predict(rt.params(), input);
    for (std::size_t i = 0; i < b; ++i) {
      const std::string stem = fs::path(names[start + i]).stem().string();
      const std::string pgm = "density_" + stem + ".pgm";
      write_pgm_density((fs::path(out_dir) / pgm).string(), maps[i]);
      m.outputs.push_back(pgm);
      counts << names[start + i] << "," << fmt(maps[i].sum()) << "\n";
      if (raw) {
        const std::string rawname = "raw_" + stem + ".csv";
        std::ofstream rf((fs::path(out_dir) / rawname).string(), std::ios::trunc);
        for (std::size_t y = 0; y < maps[i].height; ++y) {
          for (std::size_t x = 0; x < maps[i].width; ++x) {
            rf << fmt(maps[i].values[y * maps[i].width + x])
               << (x + 1 == maps[i].width ? "\n" : ",");
          }
        }
        m.outputs.push_back(rawname);
      }
    }
  }
  counts.close();
  finish_manifest(m, flags, out_dir);
  std::cout << "wrote density maps for " << names.size() << " images to " << out_dir << "\n";
  return 0;
}

int cmd_check(double h, double tol, bool quick, bool inject_sign_error) {
  const std::size_t n_norm = quick ? 100 : 1000;
  const std::size_t n_equiv = quick ? 20 : 100;

  std::vector<CheckResult> all = run_gradient_checks(h, tol, inject_sign_error);
  {
    auto norm = run_normalization_checks(n_norm, 1e-6);
    all.insert(all.end(), norm.begin(), norm.end());
    auto equiv = run_equivariance_checks(n_equiv, 1e-8);
    all.insert(all.end(), equiv.begin(), equiv.end());
  }
  int failures = 0;
  for (const auto& r : all) {
    std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.detail << "\n";
    if (!r.pass) ++failures;
  }
  if (failures) {
    std::cout << failures << " check(s) failed\n";
    return 1;
  }
  std::cout << "all " << all.size() << " checks passed\n";
  return 0;
}

int cmd_ablate(const ModelFlags& mf, const TrainFlags& tf, const std::string& data_dir,
               const std::string& test_dir, const std::string& out_dir,
               const std::string& seeds_text) {
  RunManifest m = start_manifest("ablate");
  FlagLines flags{{"data", data_dir}, {"test", test_dir}, {"out", out_dir}, {"seeds", seeds_text}};
  mf.lines(flags);
  tf.lines(flags);
  const ModelConfig base = mf.to_config();
  TrainConfig tc = tf.to_config();
  tc.validate();
  std::vector<std::uint64_t> seeds;
  for (std::size_t v : parse_list(seeds_text)) seeds.push_back(v);

  auto train_set = load_dataset(data_dir, base.input_size);
  auto test_set = load_dataset(test_dir, base.input_size);
  if (train_set.empty() || test_set.empty()) throw ConfigError("ablate: empty dataset");

  auto rows = run_ablation(base, tc, full_ablation_grid(), train_set, test_set, seeds, &std::cout);

  fs::create_directories(out_dir);
  std::ofstream csv((fs::path(out_dir) / "ablation.csv").string(), std::ios::trunc);
  csv << "gcam,gefs,gafu,median_mae,median_rmse,seed_maes,error\n";
  for (const auto& row : rows) {
    csv << row.variant.gcam << "," << row.variant.gefs << "," << row.variant.gafu << ","
        << fmt(row.median_mae) << "," << fmt(row.median_rmse) << ",";
    for (std::size_t i = 0; i < row.seed_mae.size(); ++i) {
      csv << (i ? ";" : "") << fmt(row.seed_mae[i]);
    }
    csv << "," << row.error << "\n";
    std::cout << "gcam=" << row.variant.gcam << " gefs=" << row.variant.gefs
              << " gafu=" << row.variant.gafu << " median MAE "
              << (row.error.empty() ? fmt(row.median_mae) : ("error: " + row.error)) << "\n";
  }
  csv.close();
  m.outputs = {"ablation.csv"};
  finish_manifest(m, flags, out_dir);
  return 0;
}

int cmd_replay(const std::string& manifest_path, const std::string& out_override) {
  RunManifest m = read_manifest(manifest_path);
  const std::string tmp =
      (fs::temp_directory_path() / ("countnet_replay_" + std::to_string(::getpid()) + ".cfg"))
          .string();
  {
    std::ofstream cf(tmp, std::ios::trunc);
    if (!cf) throw IoError("cannot write temp config: " + tmp);
    cf << m.config_text;
  }
  std::vector<std::string> args{m.command, "--config", tmp};
  if (!out_override.empty()) {
    args.push_back("--out");
    args.push_back(out_override);
  }
  const int rc = dispatch(args);
  fs::remove(tmp);
  return rc;
}

// dispatch calls itself through replay; keep recursion single-level


int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"exemplar-free object counting on density maps"};
  app.set_version_flag("--version", std::string(kToolName) + " " + kToolVersion);
  app.require_subcommand(1);
  // later occurrences win, so config-file values lose to explicit flags
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.footer("Any subcommand accepts --config FILE with flat key=value lines\n"
             "(precedence: defaults < config file < explicit flags).");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic counting dataset");
  std::string sy_out;
  std::size_t sy_n = 100, sy_size = 64;
  std::string sy_count = "1:20", sy_radius = "2:4", sy_distract = "0:3";
  double sy_noise = 0.03;
  std::uint64_t sy_seed = 7;
  synth->add_option("--out", sy_out, "output directory")->required();
  synth->add_option("--n", sy_n, "number of images");
  synth->add_option("--size", sy_size, "image side, pixels");
  synth->add_option("--count", sy_count, "object count range lo:hi");
  synth->add_option("--radius", sy_radius, "object radius range lo:hi, pixels");
  synth->add_option("--distractors", sy_distract, "distractor count range lo:hi");
  synth->add_option("--noise", sy_noise, "background noise stddev");
  synth->add_option("--seed", sy_seed, "dataset seed");

  // train
  auto* train = app.add_subcommand("train", "train a model on a dataset directory");
  ModelFlags tr_model;
  TrainFlags tr_train;
  std::string tr_data, tr_val, tr_out;
  train->add_option("--data", tr_data, "training dataset directory")->required();
  train->add_option("--val", tr_val, "validation dataset directory");
  train->add_option("--out", tr_out, "output directory")->required();
  tr_model.attach(train);
  tr_train.attach(train);

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string ev_ckpt, ev_data, ev_out;
  std::size_t ev_batch = 8;
  eval->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  eval->add_option("--data", ev_data, "dataset directory")->required();
  eval->add_option("--out", ev_out, "output directory")->required();
  eval->add_option("--batch", ev_batch, "evaluation batch size");

  // infer
  auto* infer = app.add_subcommand("infer", "predict density maps and counts for images");
  std::string in_ckpt, in_images, in_out;
  bool in_raw = false;
  std::size_t in_batch = 8;
  infer->add_option("--checkpoint", in_ckpt, "checkpoint file")->required();
  infer->add_option("--images", in_images, "directory of .ppm images")->required();
  infer->add_option("--out", in_out, "output directory")->required();
  infer->add_flag("--raw", in_raw, "also write full-precision CSV sidecars");
  infer->add_option("--batch", in_batch, "inference batch size");

  // check
  auto* check = app.add_subcommand("check", "run gradient and invariant suites");
  double ck_tol = 1e-4, ck_h = 1e-4;
  bool ck_quick = false, ck_inject = false;
  check->add_option("--tol", ck_tol, "gradient check tolerance");
  check->add_option("--fd-step", ck_h, "finite-difference step");
  check->add_flag("--quick", ck_quick, "smaller random suites");
  check->add_flag("--inject-sign-error", ck_inject)->group("");  // test hook, hidden

  // ablate
  auto* ablate = app.add_subcommand("ablate", "train and evaluate all toggle combinations");
  ModelFlags ab_model;
  TrainFlags ab_train;
  std::string ab_data, ab_test, ab_out, ab_seeds = "1,2,3";
  ablate->add_option("--data", ab_data, "training dataset directory")->required();
  ablate->add_option("--test", ab_test, "test dataset directory")->required();
  ablate->add_option("--out", ab_out, "output directory")->required();
  ablate->add_option("--seeds", ab_seeds, "comma-separated seeds");
  ab_model.attach(ablate);
  ab_train.attach(ablate);

  // replay
  auto* replay = app.add_subcommand("replay", "re-run a command from its manifest");
  std::string rp_manifest, rp_out;
  replay->add_option("manifest", rp_manifest, "manifest.json path")->required();
  replay->add_option("--out", rp_out, "override the output directory");

  std::vector<std::string> expanded;
  try {
    expanded = expand_config(args);
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
  std::vector<std::string> reversed(expanded.rbegin(), expanded.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help / --version
      return app.exit(e);
    }
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (synth->parsed()) {
      return cmd_synth(sy_out, sy_n, sy_count, sy_radius, sy_distract, sy_size, sy_noise, sy_seed);
    }
    if (train->parsed()) return cmd_train(tr_model, tr_train, tr_data, tr_val, tr_out);
    if (eval->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_out, ev_batch);
    if (infer->parsed()) return cmd_infer(in_ckpt, in_images, in_out, in_raw, in_batch);
    if (check->parsed()) return cmd_check(ck_h, ck_tol, ck_quick, ck_inject);
    if (ablate->parsed()) {
      return cmd_ablate(ab_model, ab_train, ab_data, ab_test, ab_out, ab_seeds);
    }
    if (replay->parsed()) return cmd_replay(rp_manifest, rp_out);
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return 5;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ValueError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dispatch(args);
}
