// Copyright (c) 2026 nartts authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <chrono>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <filesystem>

#include "nartts/adam.hpp"
#include "nartts/extractor.hpp"
#include "nartts/io.hpp"
#include "nartts/model.hpp"

namespace nartts {

// One training pair: token ids, acoustic frames, per-token target durations.
struct Utterance {
  std::string id;
  std::vector<int> tokens;
  Tensor frames;                // [T_frames x d_feat]
  std::vector<int> durations;   // sums to T_frames for training pairs
};

// Loads a manifest plus feature files (paths resolve against the manifest's
// directory). When a duration file is given, every utterance must have an
// entry whose total matches its frame count.
inline std::vector<Utterance> load_utterances(const std::string& manifest_path,
                                              const std::string& durations_path = "") {
  const auto entries = read_manifest(manifest_path);
  const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
  std::map<std::string, std::vector<int>> durations;
  if (!durations_path.empty()) {
    for (auto& [id, frames] : read_durations(durations_path)) durations[id] = frames;
  }
  std::vector<Utterance> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    Utterance utt;
    utt.id = e.id;
    utt.tokens = e.tokens;
    std::filesystem::path fp(e.feature_path);
    if (fp.is_relative()) fp = base / fp;
    utt.frames = read_features(fp.string());
    if (!durations_path.empty()) {
      auto it = durations.find(e.id);
      if (it == durations.end())
        throw ContractError("durations: no entry for utterance " + e.id);
      if (it->second.size() != e.tokens.size())
        throw ContractError("durations: token count mismatch for " + e.id);
      int total = 0;
      for (int f : it->second) total += f;
      if (total != utt.frames.dim(0))
        throw ContractError("durations for " + e.id + " sum to " + std::to_string(total) +
                            " but features have " + std::to_string(utt.frames.dim(0)) +
                            " frames");
      utt.durations = it->second;
    }
    out.push_back(std::move(utt));
  }
  return out;
}

struct TrainConfig {
  double lr = 1e-4;
  int batch_size = 32;
  int max_steps = 300000;
  std::uint64_t seed = 1;
  double w_before = 1.0, w_after = 1.0, w_dur = 1.0;
  double grad_clip = 0.0;      // 0 disables; the extractor phase uses 5.0
  int plateau_steps = 0;       // 0 disables early stop on plateaued loss
  int log_every = 50;

  void validate() const {
    if (lr <= 0.0) throw ConfigError("train: lr must be positive");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (max_steps < 1) throw ConfigError("train: max_steps must be >= 1");
  }
};

struct TrainRecord {
  std::int64_t step = 0;
  double total = 0.0;
  double l1_before = 0.0;
  double l1_after = 0.0;
  double l1_dur = 0.0;
  double wall_ms = 0.0;
};

// Append-only step log: step<TAB>total<TAB>l1_before<TAB>l1_after<TAB>l1_dur.
class TrainLogWriter {
 public:
  TrainLogWriter() = default;
  explicit TrainLogWriter(const std::string& path) {
    if (!path.empty()) {
      out_.open(path, std::ios::app);
      if (!out_) throw IoError("train log: cannot open " + path);
    }
  }

  void write(const TrainRecord& r) {
    if (!out_.is_open()) return;
    out_ << r.step << '\t' << r.total << '\t' << r.l1_before << '\t' << r.l1_after << '\t'
         << r.l1_dur << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

// Unit-weighted sum of the three L1 terms (before-postnet, after-postnet,
// duration).
inline Tensor total_loss(const Tensor& before, const Tensor& after, const Tensor& target,
                         const Tensor& dur_raw, const std::vector<int>& dur_target) {
  if (before.shape() != target.shape() || after.shape() != target.shape())
    throw ContractError("total_loss: prediction/target shapes differ");
  if (dur_raw.numel() != static_cast<std::int64_t>(dur_target.size()))
    throw ContractError("total_loss: duration lengths differ");
  const int dur_total = std::accumulate(dur_target.begin(), dur_target.end(), 0);
  if (dur_total != target.dim(0))
    throw ContractError("total_loss: durations sum to " + std::to_string(dur_total) +
                        " but target has " + std::to_string(target.dim(0)) + " frames");
  std::vector<double> dt(dur_target.begin(), dur_target.end());
  const int n_dur = static_cast<int>(dt.size());
  Tensor dur_t = Tensor::from({n_dur}, std::move(dt));
  return add(add(l1_loss(before, target), l1_loss(after, target)), l1_loss(dur_raw, dur_t));
}

namespace train_detail {

inline void check_finite_loss(double v, std::int64_t step) {
  if (!std::isfinite(v))
    throw NumericError("training: non-finite loss at step " + std::to_string(step));
}

// Deterministic batch schedule: a seeded shuffle per epoch.
class BatchSchedule {
 public:
  BatchSchedule(std::size_t n, std::uint64_t seed)
      : order_(n), rng_(seed, RngStream::Stream::kData) {
    std::iota(order_.begin(), order_.end(), 0u);
    reshuffle();
  }

  std::size_t next() {
    if (cursor_ >= order_.size()) {
      reshuffle();
      cursor_ = 0;
    }
    return order_[cursor_++];
  }

 private:
  void reshuffle() {
    for (std::size_t i = order_.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng_.uniform_int(0, static_cast<int>(i) - 1));
      std::swap(order_[i - 1], order_[j]);
    }
  }

  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  RngStream rng_;
};

}  // namespace train_detail

// ---------------------------------------------------------------------------
// Main phase: teacher durations drive the length regulator; the duration
// predictor trains against them through its detached input.
// ---------------------------------------------------------------------------

inline TrainRecord train_step_main(AcousticModel& model, const std::vector<const Utterance*>& batch,
                                   ParamMap& params, AdamState& opt, std::int64_t step,
                                   double grad_clip = 0.0) {
  const auto t0 = std::chrono::steady_clock::now();
  model.set_training(true);
  zero_grads(params);
  TrainRecord rec;
  rec.step = step;
  {
    Tape tape;
    Tensor batch_loss;
    for (const Utterance* utt : batch) {
      auto out = model.forward_teacher(utt->tokens, utt->durations, utt->frames);
      Tensor lb = l1_loss(out.before, utt->frames);
      Tensor la = l1_loss(out.after, utt->frames);
      std::vector<double> dt(utt->durations.begin(), utt->durations.end());
      const int n_dur = static_cast<int>(dt.size());
      Tensor ld = l1_loss(out.dur_raw, Tensor::from({n_dur}, std::move(dt)));
      rec.l1_before += lb.value();
      rec.l1_after += la.value();
      rec.l1_dur += ld.value();
      Tensor utt_loss = add(add(lb, la), ld);
      batch_loss = batch_loss.defined() ? add(batch_loss, utt_loss) : utt_loss;
    }
    batch_loss = scale(batch_loss, 1.0 / static_cast<double>(batch.size()));
    rec.total = batch_loss.value();
    train_detail::check_finite_loss(rec.total, step);
    tape.backward(batch_loss);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  rec.l1_before *= inv;
  rec.l1_after *= inv;
  rec.l1_dur *= inv;
  if (grad_clip > 0.0) clip_grad_norm(params, grad_clip);
  adam_step(params, opt);
  rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                    .count();
  return rec;
}

inline std::vector<TrainRecord> train_main(AcousticModel& model, const std::vector<Utterance>& data,
                                           const TrainConfig& cfg, TrainLogWriter* log = nullptr,
                                           const std::function<void(const TrainRecord&)>& on_step =
                                               nullptr) {
  cfg.validate();
  if (data.empty()) throw ContractError("train_main: empty dataset");
  ParamMap params = model.parameters();
  AdamState opt;
  opt.lr = cfg.lr;
  train_detail::BatchSchedule sched(data.size(), cfg.seed);
  std::vector<TrainRecord> records;
  records.reserve(static_cast<std::size_t>(cfg.max_steps));
  for (std::int64_t step = 1; step <= cfg.max_steps; ++step) {
    std::vector<const Utterance*> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int b = 0; b < cfg.batch_size; ++b) batch.push_back(&data[sched.next()]);
    TrainRecord rec = train_step_main(model, batch, params, opt, step, cfg.grad_clip);
    if (log != nullptr) log->write(rec);
    if (on_step) on_step(rec);
    records.push_back(rec);
  }
  model.set_training(false);
  return records;
}

// ---------------------------------------------------------------------------
// Extractor phase: teacher-forced alignment training with L1 on both frame
// outputs, gradient clipping, and plateau-based early stop.
// ---------------------------------------------------------------------------

struct ExtractorTrainResult {
  std::vector<TrainRecord> records;
  std::int64_t stopped_at = 0;
  double best_loss = std::numeric_limits<double>::infinity();
};

inline ExtractorTrainResult train_extractor(DurationExtractor& extractor,
                                            const std::vector<Utterance>& data,
                                            const TrainConfig& cfg, RngStream& dropout_rng,
                                            TrainLogWriter* log = nullptr,
                                            const std::function<void(const TrainRecord&, double,
                                                                     double)>& on_log = nullptr) {
  cfg.validate();
  if (data.empty()) throw ContractError("train_extractor: empty dataset");
  ParamMap params = extractor.parameters();
  AdamState opt;
  opt.lr = cfg.lr;
  train_detail::BatchSchedule sched(data.size(), cfg.seed);
  ExtractorTrainResult result;
  std::int64_t best_step = 0;
  for (std::int64_t step = 1; step <= cfg.max_steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    zero_grads(params);
    TrainRecord rec;
    rec.step = step;
    double entropy = 0.0, mono = 0.0;
    {
      Tape tape;
      Tensor batch_loss;
      for (int b = 0; b < cfg.batch_size; ++b) {
        const Utterance& utt = data[sched.next()];
        auto out = extractor.forward_teacher_forced(utt.tokens, utt.frames, dropout_rng,
                                                    /*training=*/true);
        Tensor lb = l1_loss(out.before, utt.frames);
        Tensor la = l1_loss(out.after, utt.frames);
        rec.l1_before += lb.value();
        rec.l1_after += la.value();
        entropy += alignment_entropy(out.alignment);
        mono += alignment_monotonicity_rate(out.alignment);
        Tensor utt_loss = add(lb, la);
        batch_loss = batch_loss.defined() ? add(batch_loss, utt_loss) : utt_loss;
      }
      batch_loss = scale(batch_loss, 1.0 / static_cast<double>(cfg.batch_size));
      rec.total = batch_loss.value();
      train_detail::check_finite_loss(rec.total, step);
      tape.backward(batch_loss);
    }
    const double inv = 1.0 / static_cast<double>(cfg.batch_size);
    rec.l1_before *= inv;
    rec.l1_after *= inv;
    if (cfg.grad_clip > 0.0) clip_grad_norm(params, cfg.grad_clip);
    adam_step(params, opt);
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                      .count();
    if (log != nullptr) log->write(rec);
    if (on_log && (step % cfg.log_every == 0 || step == 1))
      on_log(rec, entropy * inv, mono * inv);
    result.records.push_back(rec);
    if (rec.total < result.best_loss) {
      result.best_loss = rec.total;
      best_step = step;
    }
    result.stopped_at = step;
    if (cfg.plateau_steps > 0 && step - best_step >= cfg.plateau_steps) break;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation: deterministic metrics with dropout off, averaged per utterance.
// ---------------------------------------------------------------------------

struct EvalMetrics {
  double l1_before = 0.0;
  double l1_after = 0.0;
  double dur_mae = 0.0;
  double length_err = 0.0;  // |sum(predicted) - sum(target)| in frames
  int count = 0;
};

inline EvalMetrics evaluate(AcousticModel& model, const std::vector<Utterance>& data) {
  if (data.empty()) throw ContractError("evaluate: empty dataset");
  model.set_training(false);
  EvalMetrics m;
  for (const Utterance& utt : data) {
    auto out = model.forward_teacher(utt.tokens, utt.durations, utt.frames);
    m.l1_before += l1_loss(out.before, utt.frames).value();
    m.l1_after += l1_loss(out.after, utt.frames).value();
    double mae = 0.0;
    const auto& raw = out.dur_raw.values();
    for (std::size_t i = 0; i < raw.size(); ++i)
      mae += std::abs(raw[i] - static_cast<double>(utt.durations[i]));
    m.dur_mae += mae / static_cast<double>(raw.size());
    const std::vector<int> rounded = round_durations(raw);
    const int predicted = std::accumulate(rounded.begin(), rounded.end(), 0);
    const int target = std::accumulate(utt.durations.begin(), utt.durations.end(), 0);
    m.length_err += std::abs(predicted - target);
    m.count += 1;
  }
  const double inv = 1.0 / static_cast<double>(m.count);
  m.l1_before *= inv;
  m.l1_after *= inv;
  m.dur_mae *= inv;
  m.length_err *= inv;
  return m;
}

}  // namespace nartts
