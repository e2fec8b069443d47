#include "countnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>

namespace countnet {

namespace {

// Flip a [H, W] buffer in place.
void flip_map_h(std::vector<float>& v, std::size_t h, std::size_t w) {
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w / 2; ++x) std::swap(v[y * w + x], v[y * w + (w - 1 - x)]);
}

void flip_map_v(std::vector<float>& v, std::size_t h, std::size_t w) {
  for (std::size_t y = 0; y < h / 2; ++y)
    for (std::size_t x = 0; x < w; ++x) std::swap(v[y * w + x], v[(h - 1 - y) * w + x]);
}

void flip_rgb_h(std::vector<float>& v, std::size_t h, std::size_t w) {
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w / 2; ++x)
      for (int c = 0; c < 3; ++c)
        std::swap(v[(y * w + x) * 3 + c], v[(y * w + (w - 1 - x)) * 3 + c]);
}

void flip_rgb_v(std::vector<float>& v, std::size_t h, std::size_t w) {
  for (std::size_t y = 0; y < h / 2; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        std::swap(v[(y * w + x) * 3 + c], v[((h - 1 - y) * w + x) * 3 + c]);
}

double clip_gradients(std::vector<Tensor<float>>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      sq += static_cast<double>(g[i]) * static_cast<double>(g[i]);
    }
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const auto s = static_cast<float>(max_norm / norm);
    for (auto& g : grads)
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= s;
  }
  return norm;
}

}  // namespace

double median(std::vector<double> v) {
  if (v.empty()) throw ValueError("median of empty list");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

EvalReport evaluate(const CountingModel<float>& model, const ParamRegistry<float>& params,
                    const std::vector<AnnotatedImage>& dataset, std::size_t batch_size) {
  if (dataset.empty()) throw ValueError("evaluate: empty dataset");
  if (batch_size == 0) batch_size = 1;
  const std::size_t s = model.config().input_size;

  EvalReport report;
  report.per_image.reserve(dataset.size());
  for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
    const std::size_t b = std::min(batch_size, dataset.size() - start);
    Tensor<float> images(Shape{b, s, s, 3});
    for (std::size_t i = 0; i < b; ++i) {
      const AnnotatedImage& img = dataset[start + i];
      if (img.height != s || img.width != s) {
        throw ShapeError("evaluate: image " + img.id + " is " + std::to_string(img.height) + "x" +
                         std::to_string(img.width) + ", model expects " + std::to_string(s));
      }
      std::copy_n(img.pixels.data(), s * s * 3, images.data() + i * s * s * 3);
    }
    std::vector<DensityMap> maps = model.predict(params, images);
    for (std::size_t i = 0; i < b; ++i) {
      const AnnotatedImage& img = dataset[start + i];
      report.per_image.push_back(
          EvalRecord{img.id, static_cast<double>(img.true_count()), maps[i].sum()});
    }
  }
  double abs_sum = 0, sq_sum = 0;
  for (const auto& r : report.per_image) {
    const double d = r.true_count - r.predicted;
    abs_sum += std::abs(d);
    sq_sum += d * d;
  }
  const auto n = static_cast<double>(report.per_image.size());
  report.mae = abs_sum / n;
  report.rmse = std::sqrt(sq_sum / n);
  if (report.rmse + 1e-9 < report.mae) {
    throw NumericError("rmse < mae; metric computation is broken");
  }
  return report;
}

std::vector<EpochLog> train_model(const ModelConfig& mcfg, const TrainConfig& tc,
                                  const std::vector<AnnotatedImage>& train_set,
                                  const std::vector<AnnotatedImage>& val_set,
                                  ParamRegistry<float>& params, const CountingModel<float>& model,
                                  std::ostream* progress) {
  mcfg.validate();
  tc.validate();
  if (train_set.empty()) throw ValueError("train_model: empty training set");
  const std::size_t s = mcfg.input_size;
  const std::size_t n = train_set.size();
  const std::size_t steps_per_epoch = (n + tc.batch_size - 1) / tc.batch_size;

  // precompute density targets once
  std::vector<std::vector<float>> targets(n);
  for (std::size_t i = 0; i < n; ++i) {
    const DensityMap m = density_target(train_set[i].points, s, s, tc.sigma);
    targets[i].resize(m.values.size());
    for (std::size_t e = 0; e < m.values.size(); ++e) {
      targets[i][e] = static_cast<float>(m.values[e]);
    }
  }

  AdamW<float> opt(0.9, 0.999, 1e-8, tc.effective_weight_decay());
  std::vector<EpochLog> log;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < tc.total_epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(tc.seed, 0x5A5A0000ull + epoch));
    shuffle_rng.shuffle(order.begin(), order.end());

    double loss_sum = 0.0;
    double lr_last = 0.0;
    for (std::size_t start = 0; start < n; start += tc.batch_size, ++step) {
      const std::size_t b = std::min(tc.batch_size, n - start);
      Tensor<float> images(Shape{b, s, s, 3});
      Tensor<float> target(Shape{b, s, s});
      for (std::size_t i = 0; i < b; ++i) {
        const std::size_t idx = order[start + i];
        std::vector<float> px = train_set[idx].pixels;
        std::vector<float> tg = targets[idx];
        if (tc.augment_flips) {
          Rng arng(mix_seed(tc.seed ^ 0xF11Full, (epoch << 32) | idx));
          if (arng.uniform() < 0.5) {
            flip_rgb_h(px, s, s);
            flip_map_h(tg, s, s);
          }
          if (arng.uniform() < 0.5) {
            flip_rgb_v(px, s, s);
            flip_map_v(tg, s, s);
          }
        }
        std::copy_n(px.data(), s * s * 3, images.data() + i * s * s * 3);
        std::copy_n(tg.data(), s * s, target.data() + i * s * s);
      }

      Tape<float> tape;
      auto P = params.bind_all(tape, true);
      Var<float> pred = model.forward(tape, P, tape.constant(images));
      Var<float> loss = density_loss(pred, tape.constant(target),
                                     static_cast<float>(tc.loss_scale));
      const double loss_value = static_cast<double>(loss.value()[0]);
      if (!std::isfinite(loss_value)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(step));
      }
      tape.backward(loss);
      std::vector<Tensor<float>> grads = params.collect_grads(tape, P);
      clip_gradients(grads, tc.clip_norm);
      lr_last = lr_schedule(step, steps_per_epoch, tc);
      opt.step(params, grads, lr_last);
      loss_sum += loss_value;
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.lr = lr_last;
    entry.train_loss = loss_sum / static_cast<double>(steps_per_epoch);
    if (!val_set.empty()) {
      EvalReport r = evaluate(model, params, val_set, tc.batch_size);
      entry.val_mae = r.mae;
      entry.val_rmse = r.rmse;
    }
    log.push_back(entry);
    if (progress) {
      *progress << "epoch " << (epoch + 1) << "/" << tc.total_epochs << " lr " << std::setprecision(4)
                << entry.lr << " loss " << entry.train_loss;
      if (!val_set.empty()) {
        *progress << " val_mae " << entry.val_mae << " val_rmse " << entry.val_rmse;
      }
      *progress << "\n" << std::flush;
    }
  }
  return log;
}

std::vector<AblationVariant> full_ablation_grid() {
  // all-off first (plain Swin-UNet baseline), all-on last
  return {
      {false, false, false}, {true, false, false}, {false, true, false}, {false, false, true},
      {true, false, true},   {false, true, true},  {true, true, false},  {true, true, true},
  };
}

std::vector<AblationRow> run_ablation(const ModelConfig& base, const TrainConfig& tc,
                                      const std::vector<AblationVariant>& variants,
                                      const std::vector<AnnotatedImage>& train_set,
                                      const std::vector<AnnotatedImage>& test_set,
                                      const std::vector<std::uint64_t>& seeds,
                                      std::ostream* progress) {
  if (variants.empty()) throw ValueError("run_ablation: no variants");
  if (seeds.empty()) throw ValueError("run_ablation: no seeds");
  std::vector<AblationRow> rows;
  for (const AblationVariant& v : variants) {
    AblationRow row;
    row.variant = v;
    try {
      for (std::uint64_t seed : seeds) {
        ModelConfig cfg = base;
        cfg.use_gcam = v.gcam;
        cfg.use_gefs = v.gefs;
        cfg.use_gafu = v.gafu;
        TrainConfig tcs = tc;
        tcs.seed = seed;
        if (progress) {
          *progress << "[ablation] gcam=" << v.gcam << " gefs=" << v.gefs << " gafu=" << v.gafu
                    << " seed=" << seed << "\n"
                    << std::flush;
        }
        ModelRuntime rt(cfg, seed);
        train_model(cfg, tcs, train_set, {}, rt.params(), rt.model(), nullptr);
        EvalReport r = evaluate(rt.model(), rt.params(), test_set, tcs.batch_size);
        row.seed_mae.push_back(r.mae);
        row.seed_rmse.push_back(r.rmse);
      }
      row.median_mae = median(row.seed_mae);
      row.median_rmse = median(row.seed_rmse);
    } catch (const Error& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

double constant_mean_baseline_mae(const std::vector<AnnotatedImage>& train,
                                  const std::vector<AnnotatedImage>& test) {
  if (train.empty() || test.empty()) throw ValueError("baseline needs non-empty datasets");
  double mean_count = 0;
  for (const auto& img : train) mean_count += static_cast<double>(img.true_count());
  mean_count /= static_cast<double>(train.size());
  double abs_sum = 0;
  for (const auto& img : test) {
    abs_sum += std::abs(static_cast<double>(img.true_count()) - mean_count);
  }
  return abs_sum / static_cast<double>(test.size());
}

}  // namespace countnet
