#pragma once

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "vf/config.hpp"
#include "vf/data.hpp"
#include "vf/models.hpp"
#include "vf/optim.hpp"

namespace vf {

// Per-episode learning-curve row. `lr` is the rate used during the episode
// (cosine schedule evaluated at t = episode - 1 when enabled).
struct EpisodeRecord {
  int64_t episode = 0;
  double train_loss = 0, train_acc = 0;
  double val_loss = 0, val_acc = 0;
  double lr = 0;
  double seconds = 0;
};

struct EvalMetrics {
  int64_t count = 0;
  double fraction_correct = 0;  // the primary "precision" column (see README)
  double precision = 0;         // classical TP / (TP + FP); 0 when undefined
  double recall = 0;            // TP / (TP + FN); 0 when undefined
  double mean_loss = 0;
  // confusion[actual][predicted]
  std::array<std::array<int64_t, 2>, 2> confusion{{{0, 0}, {0, 0}}};
};

struct RunResult {
  std::vector<EpisodeRecord> episodes;
  EvalMetrics test;
  bool truncated = false;
  double total_seconds = 0;
  std::string config_text;
  std::string digest;
};

// ---------------------------------------------------------------------------
// batch assembly
// ---------------------------------------------------------------------------

// Builds a [N,C,n,H,W] batch from whole clips: uniform frame sampling, then
// (train split only) one flip drawn per clip and applied to all its frames.
template <typename T>
Tensor<T> assemble_batch(const Dataset& ds, const std::vector<int64_t>& indices, int64_t frames_n,
                         bool augment, Rng& rng, std::vector<T>* labels_out = nullptr) {
  if (indices.empty()) throw ContractError("assemble_batch: empty index list");
  const ClipGeometry& g = ds.manifest.geom;
  int64_t N = static_cast<int64_t>(indices.size());
  Tensor<T> batch({N, g.channels, frames_n, g.height, g.width});
  auto out = batch.raw();
  if (labels_out) labels_out->clear();
  for (int64_t b = 0; b < N; ++b) {
    const Clip& clip = ds.clips[indices[b]];
    auto picks = sample_frames(clip.geom.frames, frames_n, clip.source_id);
    Flip flip = Flip::None;
    if (augment) {
      switch (rng.below(3)) {
        case 1: flip = Flip::Horizontal; break;
        case 2: flip = Flip::Vertical; break;
        default: break;
      }
    }
    for (int64_t c = 0; c < g.channels; ++c)
      for (int64_t ti = 0; ti < frames_n; ++ti) {
        int64_t t = picks[ti];
        for (int64_t y = 0; y < g.height; ++y)
          for (int64_t x = 0; x < g.width; ++x) {
            int64_t sy = flip == Flip::Vertical ? g.height - 1 - y : y;
            int64_t sx = flip == Flip::Horizontal ? g.width - 1 - x : x;
            out[(((b * g.channels + c) * frames_n + ti) * g.height + y) * g.width + x] =
                static_cast<T>(clip.at(t, c, sy, sx));
          }
      }
    if (labels_out) labels_out->push_back(static_cast<T>(clip.label));
  }
  return batch;
}

// ---------------------------------------------------------------------------
// model dispatch
// ---------------------------------------------------------------------------

// Owner of either architecture behind the common forward surface.
template <typename T>
class AnyModel {
 public:
  AnyModel(const ExperimentConfig& cfg, uint64_t init_seed) {
    if (cfg.model == ModelKind::ViViT)
      vit_ = std::make_unique<ViViT<T>>(cfg.vivit_config(), init_seed);
    else
      cnn_ = std::make_unique<R2Plus1D<T>>(cfg.r2plus1d_config(), init_seed);
  }

  Tensor<T> forward(const Tensor<T>& clips, Mode mode, Rng& rng) {
    return vit_ ? vit_->forward(clips, mode, rng) : cnn_->forward(clips, mode, rng);
  }

  void register_params(ParamRegistry<T>& reg) {
    if (vit_)
      vit_->register_params(reg);
    else
      cnn_->register_params(reg);
  }

  ViViT<T>* vivit() { return vit_.get(); }
  R2Plus1D<T>* r2plus1d() { return cnn_.get(); }

 private:
  std::unique_ptr<ViViT<T>> vit_;
  std::unique_ptr<R2Plus1D<T>> cnn_;
};

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

// Hard labels at the 0.5 threshold against ground truth.
inline EvalMetrics metrics_from_probs(const std::vector<double>& probs,
                                      const std::vector<int>& labels) {
  if (probs.empty() || probs.size() != labels.size())
    throw ContractError("metrics: empty input or size mismatch");
  EvalMetrics m;
  m.count = static_cast<int64_t>(probs.size());
  for (size_t i = 0; i < probs.size(); ++i) {
    int pred = make_prediction(probs[i]).label;
    ++m.confusion[labels[i]][pred];
  }
  int64_t tp = m.confusion[1][1], fp = m.confusion[0][1], fn = m.confusion[1][0],
          tn = m.confusion[0][0];
  m.fraction_correct = static_cast<double>(tp + tn) / m.count;
  m.precision = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
  m.recall = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
  m.mean_loss = bce_metric(probs, labels);
  return m;
}

template <typename T>
EvalMetrics evaluate_indices(AnyModel<T>& model, const Dataset& ds,
                             const std::vector<int64_t>& indices, int64_t frames_n,
                             int64_t batch_size) {
  if (indices.empty()) throw ContractError("evaluate: empty split");
  Rng dummy(0);
  std::vector<double> probs;
  std::vector<int> labels;
  for (size_t at = 0; at < indices.size(); at += batch_size) {
    std::vector<int64_t> chunk(
        indices.begin() + at,
        indices.begin() + std::min(indices.size(), at + static_cast<size_t>(batch_size)));
    Tensor<T> batch = assemble_batch<T>(ds, chunk, frames_n, false, dummy);
    Tensor<T> p = model.forward(batch, Mode::Evaluation, dummy);
    for (int64_t i = 0; i < p.numel(); ++i) {
      probs.push_back(static_cast<double>(p.values()[i]));
      labels.push_back(ds.clips[chunk[i]].label);
    }
  }
  return metrics_from_probs(probs, labels);
}

template <typename T>
EvalMetrics evaluate_split(AnyModel<T>& model, const Dataset& ds, const std::string& split,
                           const ExperimentConfig& cfg) {
  return evaluate_indices(model, ds, ds.split_indices(split), cfg.frames, cfg.batch_size);
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct TrainCallbacks {
  // called after each completed episode, e.g. for progress logging
  std::function<void(const EpisodeRecord&)> on_episode;
};

// One full run: per episode, shuffle the train split (seeded), iterate
// batches of forward -> BCE -> backward -> Adam, then validate in evaluation
// mode. The cosine schedule, when enabled, spans exactly the configured
// episode count. Exceeding the wall-clock budget truncates the run cleanly,
// keeping every completed episode.
template <typename T>
RunResult train(const ExperimentConfig& cfg_in, const Dataset& ds, AnyModel<T>* model_out = nullptr,
                const TrainCallbacks& callbacks = {}) {
  ExperimentConfig cfg = cfg_in;
  cfg.height = ds.manifest.geom.height;
  cfg.width = ds.manifest.geom.width;
  cfg.channels = ds.manifest.geom.channels;
  cfg.validate();
  if (cfg.frames > ds.manifest.geom.frames)
    throw DataError("config samples " + std::to_string(cfg.frames) + " frames but clips store " +
                    std::to_string(ds.manifest.geom.frames));

  auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  const double budget_seconds = cfg.budget_minutes * 60.0;

  AnyModel<T> local_model(cfg, Rng::derive(cfg.seed, 0xface));
  AnyModel<T>& model = model_out ? *model_out : local_model;
  ParamRegistry<T> params;
  model.register_params(params);
  Adam<T> adam;
  CosineSchedule sched{cfg.lr, 0.0, cfg.episodes};

  std::vector<int64_t> train_idx = ds.split_indices("train");
  std::vector<int64_t> val_idx = ds.split_indices("val");
  if (train_idx.empty() || val_idx.empty())
    throw DataError("dataset needs non-empty train and val splits for a training run");

  RunResult result;
  result.config_text = canonical_config_text(cfg);
  result.digest = config_digest(cfg);

  for (int64_t episode = 1; episode <= cfg.episodes; ++episode) {
    double lr = cfg.scheduler ? cosine_lr(sched, episode - 1) : cfg.lr;
    Rng rng(Rng::derive(cfg.seed, 0xe000 + static_cast<uint64_t>(episode)));
    rng.shuffle(train_idx.begin(), train_idx.end());

    double ep_start = elapsed();
    double loss_sum = 0;
    int64_t correct = 0, seen = 0;
    bool truncated_midway = false;
    for (size_t at = 0; at < train_idx.size(); at += cfg.batch_size) {
      if (elapsed() > budget_seconds) {
        truncated_midway = true;
        break;
      }
      std::vector<int64_t> chunk(
          train_idx.begin() + at,
          train_idx.begin() +
              std::min(train_idx.size(), at + static_cast<size_t>(cfg.batch_size)));
      std::vector<T> labels;
      Tensor<T> batch = assemble_batch<T>(ds, chunk, cfg.frames, true, rng, &labels);
      Tensor<T> y(Shape{static_cast<int64_t>(labels.size())}, labels);

      Tape<T> tape;
      Tensor<T> loss;
      Tensor<T> probs;
      {
        TapeScope<T> scope(tape);
        probs = model.forward(batch, Mode::Training, rng);
        loss = bce_loss(probs, y);
      }
      double loss_value = static_cast<double>(loss.item());
      if (!std::isfinite(loss_value))
        throw Error("training diverged: non-finite loss at episode " + std::to_string(episode) +
                    ", batch " + std::to_string(at / cfg.batch_size) + ", lr " +
                    std::to_string(lr));
      params.zero_grad();
      tape.backward(loss);
      try {
        adam.step(params, lr);
      } catch (const Error& e) {
        throw Error(std::string(e.what()) + " (episode " + std::to_string(episode) + ", batch " +
                    std::to_string(at / cfg.batch_size) + ", lr " + std::to_string(lr) + ")");
      }

      int64_t n = static_cast<int64_t>(labels.size());
      loss_sum += loss_value * n;
      for (int64_t i = 0; i < n; ++i)
        if (make_prediction(static_cast<double>(probs.values()[i])).label ==
            static_cast<int>(labels[i]))
          ++correct;
      seen += n;
    }
    if (truncated_midway || seen == 0) {
      result.truncated = true;
      break;
    }

    EvalMetrics val = evaluate_indices(model, ds, val_idx, cfg.frames, cfg.batch_size);
    EpisodeRecord rec;
    rec.episode = episode;
    rec.train_loss = loss_sum / seen;
    rec.train_acc = static_cast<double>(correct) / seen;
    rec.val_loss = val.mean_loss;
    rec.val_acc = val.fraction_correct;
    rec.lr = lr;
    rec.seconds = elapsed() - ep_start;
    result.episodes.push_back(rec);
    if (callbacks.on_episode) callbacks.on_episode(rec);

    if (episode < cfg.episodes && elapsed() > budget_seconds) {
      result.truncated = true;
      break;
    }
  }

  std::vector<int64_t> test_idx = ds.split_indices("test");
  if (!test_idx.empty())
    result.test = evaluate_indices(model, ds, test_idx, cfg.frames, cfg.batch_size);
  result.total_seconds = elapsed();
  return result;
}

// ---------------------------------------------------------------------------
// frame-count sweep
// ---------------------------------------------------------------------------

struct SweepRow {
  int64_t frames = 0;
  double test_fraction_correct = 0;
  double test_loss = 0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  int64_t selected_frames = 0;  // argmin test loss; ties pick the smallest count
};

// One train + test evaluation per frame count, everything else fixed.
template <typename T>
SweepResult sweep_frames(const ExperimentConfig& base, const Dataset& ds,
                         const std::vector<int64_t>& counts = {5, 10, 15, 20, 25},
                         const TrainCallbacks& callbacks = {}) {
  if (counts.empty()) throw ContractError("sweep_frames: empty count list");
  for (int64_t n : counts)
    if (n > ds.manifest.geom.frames)
      throw DataError("sweep asks for " + std::to_string(n) + " frames but clips store " +
                      std::to_string(ds.manifest.geom.frames));
  SweepResult sweep;
  for (int64_t n : counts) {
    ExperimentConfig cfg = base;
    cfg.frames = n;
    RunResult run = train<T>(cfg, ds, nullptr, callbacks);
    sweep.rows.push_back({n, run.test.fraction_correct, run.test.mean_loss});
  }
  const SweepRow* best = &sweep.rows.front();
  for (const SweepRow& row : sweep.rows)
    if (row.test_loss < best->test_loss) best = &row;  // strict: ties keep the cheaper count
  sweep.selected_frames = best->frames;
  return sweep;
}

// ---------------------------------------------------------------------------
// persistence
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

constexpr const char* kCurvesHeader = "episode,train_loss,train_acc,val_loss,val_acc,lr,seconds";

inline void save_curves_csv(const std::string& path, const std::vector<EpisodeRecord>& episodes) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write curves file: " + path);
  f << kCurvesHeader << "\n";
  for (const auto& r : episodes)
    f << r.episode << "," << format_double(r.train_loss) << "," << format_double(r.train_acc)
      << "," << format_double(r.val_loss) << "," << format_double(r.val_acc) << ","
      << format_double(r.lr) << "," << format_double(r.seconds) << "\n";
  if (!f) throw IoError("short write to curves file: " + path);
}

inline std::vector<EpisodeRecord> load_curves_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open curves file: " + path);
  std::string line;
  if (!std::getline(f, line) || line != kCurvesHeader)
    throw DataError("curves file " + path + " row 1: bad or missing header");
  std::vector<EpisodeRecord> rows;
  int rowno = 1;
  while (std::getline(f, line)) {
    ++rowno;
    if (line.empty()) continue;
    std::istringstream is(line);
    EpisodeRecord r;
    char c;
    if (!(is >> r.episode >> c >> r.train_loss >> c >> r.train_acc >> c >> r.val_loss >> c >>
          r.val_acc >> c >> r.lr >> c >> r.seconds))
      throw DataError("curves file " + path + " row " + std::to_string(rowno) + ": malformed");
    rows.push_back(r);
  }
  return rows;
}

// Fixed design-decision values, reported with every run for auditability.
inline std::string run_metadata_text(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << "[metadata]\n";
  os << "episode_definition = one full pass over the training split\n";
  os << "scheduler_granularity = per-episode (t = episode - 1)\n";
  os << "scheduler_eta_min = 0\n";
  os << "bce_probability_clamp = 1e-7\n";
  os << "adam = beta1 0.9, beta2 0.999, eps 1e-8, no weight decay\n";
  os << "conv2plus1d_nonlinearity = relu between spatial and temporal stages\n";
  os << "norm_placement = batch-norm after each conv stage, pre-norm transformer blocks\n";
  os << "positional_embeddings = learned, separate spatial and temporal tables\n";
  os << "init = truncated normal std 0.02, zero biases, zero residual output projections\n";
  os << "batch_norm = momentum 0.1, eps 1e-5, biased variance\n";
  os << "flip_augmentation = train split only, online per episode, p = 1/3 each\n";
  os << "split_ratios = 0.8/0.1/0.1 label-stratified\n";
  os << "threshold_rule = probability >= 0.5 is fake\n";
  os << "precision_column = fraction correct (classical precision reported alongside)\n";
  os << "dtype = " << dtype_name(cfg.dtype) << "\n";
  return os.str();
}

inline void save_run_result(const std::string& path, const RunResult& result,
                            const ExperimentConfig& cfg) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write run result: " + path);
  f << "[result]\n";
  f << "digest = " << result.digest << "\n";
  f << "episodes_completed = " << result.episodes.size() << "\n";
  f << "truncated = " << (result.truncated ? "yes" : "no") << "\n";
  f << "total_seconds = " << format_double(result.total_seconds) << "\n";
  f << "test_count = " << result.test.count << "\n";
  f << "test_fraction_correct = " << format_double(result.test.fraction_correct) << "\n";
  f << "test_precision = " << format_double(result.test.precision) << "\n";
  f << "test_recall = " << format_double(result.test.recall) << "\n";
  f << "test_loss = " << format_double(result.test.mean_loss) << "\n";
  f << "confusion = " << result.test.confusion[0][0] << " " << result.test.confusion[0][1] << " "
    << result.test.confusion[1][0] << " " << result.test.confusion[1][1] << "\n";
  f << result.config_text;
  f << run_metadata_text(cfg);
  if (!f) throw IoError("short write to run result: " + path);
}

}  // namespace vf
