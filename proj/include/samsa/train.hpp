#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "samsa/checkpoint.hpp"
#include "samsa/graph_bridge.hpp"
#include "samsa/model.hpp"
#include "samsa/optim.hpp"
#include "samsa/tasks.hpp"

namespace samsa {

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t step, const std::string& what)
      : std::runtime_error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 32;
  double lr = 1e-3;
  std::size_t warmup = 200;
  double weight_decay = 0.01;
  double clip_norm = 2.0;
  std::size_t eval_every = 100;
  std::size_t eval_samples = 0;  // 0 = whole validation split
  // Stop at the first evaluation whose validation metric reaches this value
  // (accuracy for classification, MAE from above for regression).
  std::optional<double> stop_at;
  // Stop once the mean training loss of a step falls below this value.
  std::optional<double> stop_below_loss;
  // Sequence-length warmup (seq-select only): for the first `length_warmup`
  // steps training examples are cropped to a window growing geometrically
  // from `min_length` to the full length. 0 disables it.
  std::size_t length_warmup = 0;
  std::size_t min_length = 16;
  std::uint64_t seed = 0;
};

struct MetricsRecord {
  std::size_t step = 0;
  std::string split;
  double loss = 0.0;
  double metric = 0.0;  // accuracy or MAE
  double lr = 0.0;
  double wall_ms = 0.0;
  double tokens_per_sec = 0.0;
};

inline nlohmann::json to_json(const MetricsRecord& r) {
  return {{"step", r.step},  {"split", r.split},     {"loss", r.loss},
          {"metric", r.metric}, {"lr", r.lr},        {"wall_ms", r.wall_ms},
          {"tokens_per_sec", r.tokens_per_sec}};
}

inline const char* kMetricsCsvHeader = "step,split,loss,metric,lr,wall_ms,tokens_per_sec";

inline std::string to_csv(const MetricsRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%s,%.9g,%.9g,%.9g,%.3f,%.1f", r.step, r.split.c_str(),
                r.loss, r.metric, r.lr, r.wall_ms, r.tokens_per_sec);
  return buf;
}

struct EvalResult {
  double loss = 0.0;
  double metric = 0.0;
  std::size_t samples = 0;
  std::size_t tokens = 0;
};

// One model for any task: sequence/cloud tasks use SequenceModel, graph
// tasks use GraphModel.
template <class Real>
class TaskModel {
 public:
  TaskModel(const tasks::TaskSpec& spec, ModelConfig cfg, std::uint64_t seed,
            bool graph_pe_noise_at_eval = true)
      : spec_(spec), shape_(tasks::task_shape(spec)) {
    cfg.out_dim = shape_.out_dim;
    cfg.head = HeadKind::mean_pool;
    if (shape_.graph) {
      graph_ = std::make_unique<GraphModel<Real>>(cfg, shape_.node_dim, shape_.edge_dim, seed,
                                                  graph_pe_noise_at_eval);
    } else {
      cfg.in_dim = shape_.in_dim;
      cfg.sinusoidal_pe = shape_.ordered;
      seq_ = std::make_unique<SequenceModel<Real>>(cfg, seed);
    }
  }

  // 1 x out_dim logits or prediction.
  Tensor<Real> forward(const tasks::Example& ex, GumbelRng& rng) const {
    if (graph_) return graph_->forward(*ex.graph, rng);
    return seq_->forward(tasks::features<Real>(spec_, ex), &rng);
  }

  Tensor<Real> loss(const Tensor<Real>& out, const tasks::Example& ex) const {
    if (shape_.regression) {
      const Real t = static_cast<Real>(ex.target);
      return smooth_l1(out, std::span<const Real>(&t, 1));
    }
    const std::size_t label = ex.label;
    return cross_entropy(out, std::span<const std::size_t>(&label, 1));
  }

  // Correct-prediction indicator, or absolute error for regression.
  double score(const Tensor<Real>& out, const tasks::Example& ex) const {
    if (shape_.regression) return std::abs(static_cast<double>(out[0]) - ex.target);
    const auto v = out.data();
    const auto best = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
    return best == ex.label ? 1.0 : 0.0;
  }

  std::size_t tokens(const tasks::Example& ex) const {
    return ex.graph ? ex.graph->n_nodes + ex.graph->n_edges() : std::max(ex.ids.size(), ex.values.size() / 3);
  }

  std::vector<NamedTensor<Real>> named_parameters() const {
    return graph_ ? graph_->named_parameters() : seq_->named_parameters();
  }

  void set_training(bool on) {
    if (graph_) graph_->set_training(on);
    else seq_->set_training(on);
  }

  const ModelConfig& config() const { return graph_ ? graph_->config() : seq_->config(); }
  TransformerStack<Real>& stack() { return graph_ ? graph_->stack() : seq_->stack(); }
  const tasks::TaskShape& shape() const { return shape_; }
  const tasks::TaskSpec& spec() const { return spec_; }

 private:
  tasks::TaskSpec spec_;
  tasks::TaskShape shape_;
  std::unique_ptr<SequenceModel<Real>> seq_;
  std::unique_ptr<GraphModel<Real>> graph_;
};

// Eval mode: no sampler noise, no dropout. Graph node noise comes from a
// fresh stream seeded with `seed`, so repeated evaluations are identical.
template <class Real>
EvalResult evaluate(TaskModel<Real>& model, const std::vector<tasks::Example>& data,
                    std::uint64_t seed, std::size_t limit = 0) {
  NoGradGuard guard;
  const bool was = model.config().attention.training;
  model.set_training(false);
  GumbelRng rng(seed);
  EvalResult r;
  const std::size_t count = limit ? std::min(limit, data.size()) : data.size();
  for (std::size_t i = 0; i < count; ++i) {
    const auto out = model.forward(data[i], rng);
    r.loss += static_cast<double>(model.loss(out, data[i]).item());
    r.metric += model.score(out, data[i]);
    r.tokens += model.tokens(data[i]);
  }
  model.set_training(was);
  r.samples = count;
  if (count) {
    r.loss /= static_cast<double>(count);
    r.metric /= static_cast<double>(count);
  }
  return r;
}

struct TrainResult {
  std::vector<MetricsRecord> records;
  std::size_t steps_run = 0;
  bool reached_target = false;
  std::optional<std::size_t> target_step;
  double final_val_metric = 0.0;
  double final_val_loss = 0.0;
  double wall_seconds = 0.0;
};

inline nlohmann::json to_json(const TrainResult& r) {
  nlohmann::json j{{"steps_run", r.steps_run},
                   {"reached_target", r.reached_target},
                   {"final_val_metric", r.final_val_metric},
                   {"final_val_loss", r.final_val_loss}};
  j["target_step"] = r.target_step ? nlohmann::json(*r.target_step) : nlohmann::json();
  return j;
}

using RecordSink = std::function<void(const MetricsRecord&)>;

// AdamW with linear warmup + cosine decay and global-norm clipping. Each
// step averages the loss over `batch` examples drawn by a seeded shuffle of
// the training split. A non-finite loss throws DivergenceError.
template <class Real>
TrainResult train(TaskModel<Real>& model, const tasks::Dataset& data, const TrainConfig& cfg,
                  const RecordSink& sink = {}) {
  if (data.train.empty()) throw std::invalid_argument("train: empty training split");
  if (cfg.batch == 0) throw std::invalid_argument("train: batch must be >= 1");
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  auto named = model.named_parameters();
  auto params = tensors_of(named);
  AdamWConfig opt_cfg;
  opt_cfg.lr = cfg.lr;
  opt_cfg.weight_decay = cfg.weight_decay;
  opt_cfg.clip_norm = cfg.clip_norm;
  OptimizerState<Real> opt(opt_cfg, params);

  std::mt19937_64 order_gen(tasks::splitmix64(cfg.seed ^ 0x6f72646572ull));
  GumbelRng rng(tasks::splitmix64(cfg.seed ^ 0x6e6f697365ull));
  const std::uint64_t eval_seed = tasks::splitmix64(cfg.seed ^ 0x6576616cull);
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();
  std::mt19937_64 crop_gen(tasks::splitmix64(cfg.seed ^ 0x63726f70ull));
  const bool croppable = data.spec.kind == tasks::TaskKind::seq_select && cfg.length_warmup > 0;
  auto window = [&](std::size_t step, std::size_t n) -> std::size_t {
    if (!croppable || step > cfg.length_warmup || cfg.min_length >= n) return n;
    const double f = static_cast<double>(step - 1) / static_cast<double>(cfg.length_warmup);
    const double len = static_cast<double>(cfg.min_length) *
                       std::pow(static_cast<double>(n) / static_cast<double>(cfg.min_length), f);
    return std::min(n, static_cast<std::size_t>(len));
  };

  TrainResult result;
  auto emit = [&](MetricsRecord rec) {
    rec.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    result.records.push_back(rec);
    if (sink) sink(rec);
  };
  const bool regression = model.shape().regression;
  auto reached = [&](double metric) {
    return cfg.stop_at && (regression ? metric <= *cfg.stop_at : metric >= *cfg.stop_at);
  };
  auto run_eval = [&](std::size_t step, double lr) {
    const auto ev = evaluate(model, data.val, eval_seed, cfg.eval_samples);
    MetricsRecord rec{step, "val", ev.loss, ev.metric, lr, 0.0, 0.0};
    emit(rec);
    result.final_val_metric = ev.metric;
    result.final_val_loss = ev.loss;
    return ev.metric;
  };

  model.set_training(true);
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const auto ts = clock::now();
    const double lr = cosine_warmup_lr(step, cfg.warmup, cfg.steps, cfg.lr);
    for (auto& p : params) p.zero_grad();
    double loss_sum = 0.0, correct = 0.0;
    std::size_t tokens = 0;
    const Real inv = Real(1) / static_cast<Real>(cfg.batch);
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), order_gen);
        cursor = 0;
      }
      const auto& full = data.train[order[cursor++]];
      const std::size_t len = window(step, full.ids.size());
      const auto cropped = len < full.ids.size() ? tasks::crop_seq_select(full, len, crop_gen) : tasks::Example{};
      const auto& ex = len < full.ids.size() ? cropped : full;
      const auto out = model.forward(ex, rng);
      const auto loss = model.loss(out, ex);
      const double lv = static_cast<double>(loss.item());
      if (!std::isfinite(lv))
        throw DivergenceError(step, "training diverged: non-finite loss at step " +
                                        std::to_string(step));
      loss_sum += lv;
      correct += model.score(out, ex);
      tokens += model.tokens(ex);
      backward(scale(loss, inv));
    }
    std::span<Tensor<Real>> pspan(params.data(), params.size());
    adamw_step(opt, pspan, lr);
    const double secs = std::chrono::duration<double>(clock::now() - ts).count();
    MetricsRecord rec{step,
                      "train",
                      loss_sum / static_cast<double>(cfg.batch),
                      correct / static_cast<double>(cfg.batch),
                      lr,
                      0.0,
                      secs > 0 ? static_cast<double>(tokens) / secs : 0.0};
    emit(rec);
    result.steps_run = step;
    if (cfg.stop_below_loss && rec.loss < *cfg.stop_below_loss) break;
    const bool last = step == cfg.steps;
    if ((cfg.eval_every && step % cfg.eval_every == 0) || last) {
      if (reached(run_eval(step, lr))) {
        result.reached_target = true;
        result.target_step = step;
        break;
      }
    }
  }
  model.set_training(false);
  for (auto& p : params) p.zero_grad();
  result.wall_seconds = std::chrono::duration<double>(clock::now() - t0).count();
  return result;
}

}  // namespace samsa
