#pragma once

// Mini-batch SGD with momentum over paired source/target batches, per-epoch
// evaluation on the held-out target split, and the ablation switches.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fdan/domain.hpp"
#include "fdan/error.hpp"
#include "fdan/kernel.hpp"
#include "fdan/matrix.hpp"
#include "fdan/metrics.hpp"
#include "fdan/model.hpp"
#include "fdan/random.hpp"
#include "fdan/tape.hpp"
#include "json.hpp"

namespace fdan {

enum class Ablation {
  kFull,         // cross-attention + LMMD
  kNoAttention,  // propagated terms dropped from every block
  kNoLmmd,       // alpha forced to 0
};

inline std::string_view ablation_name(Ablation a) {
  switch (a) {
    case Ablation::kFull: return "full";
    case Ablation::kNoAttention: return "no-attention";
    case Ablation::kNoLmmd: return "no-lmmd";
  }
  return "full";
}

inline Ablation parse_ablation(std::string_view s) {
  if (s == "full") return Ablation::kFull;
  if (s == "no-attention") return Ablation::kNoAttention;
  if (s == "no-lmmd") return Ablation::kNoLmmd;
  throw ConfigError("unknown ablation '" + std::string(s) + "'");
}

struct TrainConfig {
  double alpha = 1e-3;
  double momentum = 0.99;
  double weight_decay = 1e-4;
  double learning_rate = 1e-2;
  std::size_t batch_size = 32;
  std::size_t epochs = 300;
  std::uint64_t seed = 1;
  Ablation ablation = Ablation::kFull;
  KernelSpec kernel{};

  void validate() const {
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
      throw ConfigError("weight decay must be >= 0");
    }
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw ConfigError("learning rate must be >= 0");
    }
    if (batch_size < 2) throw ConfigError("batch size must be >= 2");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    kernel.validate();
  }

  double effective_alpha() const { return ablation == Ablation::kNoLmmd ? 0.0 : alpha; }
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double ce_visual = 0.0;
  double ce_acoustic = 0.0;
  double lmmd_sum = 0.0;
  double total = 0.0;
  double war = 0.0;
  double uar = 0.0;
  double w_f1 = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  bool operator==(const TrainHistory&) const = default;
};

inline nlohmann::json to_json(const EpochRecord& r) {
  return nlohmann::json{{"epoch", r.epoch},       {"ce_v", r.ce_visual}, {"ce_a", r.ce_acoustic},
                        {"lmmd_sum", r.lmmd_sum}, {"total", r.total},    {"war", r.war},
                        {"uar", r.uar},           {"w_f1", r.w_f1}};
}

/// One JSON object per line, one line per epoch.
inline std::string format_history(const TrainHistory& h) {
  std::string out;
  for (const auto& r : h.epochs) {
    out += to_json(r).dump();
    out += '\n';
  }
  return out;
}

/// g = grad + decay * param; velocity = momentum * velocity + g;
/// param -= lr * velocity.
inline void sgd_momentum_step(Matrix& param, const Matrix& grad, Matrix& velocity, double lr,
                              double momentum, double decay) {
  if (!param.same_shape(grad) || !param.same_shape(velocity)) {
    throw ShapeError("sgd step: param " + param.shape_string() + ", grad " +
                     grad.shape_string() + ", velocity " + velocity.shape_string());
  }
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i] + decay * param[i];
    velocity[i] = momentum * velocity[i] + g;
    param[i] -= lr * velocity[i];
  }
}

/// Endless stream of sample indices: a fresh seeded permutation every pass.
class BatchStream {
 public:
  BatchStream(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) { reshuffle(); }

  void restart() { reshuffle(); }

  std::vector<std::size_t> next(std::size_t count) {
    std::vector<std::size_t> out;
    out.reserve(count);
    while (out.size() < count) {
      if (cursor_ == order_.size()) reshuffle();
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    rng_.shuffle(std::span<std::size_t>(order_));
    cursor_ = 0;
  }

  std::vector<std::size_t> order_;
  Rng rng_;
  std::size_t cursor_ = 0;
};

inline std::size_t argmax(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

/// Predictions of one modality through its own stream (no cross-propagation).
inline MetricsReport evaluate(const ModelParams& model, const FeatureDomain& domain,
                              Modality modality) {
  const std::size_t expected =
      modality == Modality::kVisual ? model.arch.input_visual : model.arch.input_acoustic;
  if (domain.width() != expected) {
    throw ShapeError("evaluate: features have width " + std::to_string(domain.width()) +
                     ", model expects " + std::to_string(expected));
  }
  if (domain.classes() != model.arch.classes) {
    throw ShapeError("evaluate: data has " + std::to_string(domain.classes()) +
                     " classes, model has " + std::to_string(model.arch.classes));
  }
  const Matrix logits = infer(model, domain.features, modality).logits;
  std::vector<std::size_t> predicted(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) predicted[r] = argmax(logits.row(r));
  return metrics(predicted, domain.label_indices(), model.arch.classes);
}

/// Loss and gradients for one pair of batches.
struct StepResult {
  LossValues loss;
  std::vector<Matrix> gradients;  // declaration order
};

inline StepResult loss_and_gradients(const ModelParams& model, const Matrix& xv,
                                     const Matrix& yv, const Matrix& xa, const Matrix& ya,
                                     const TrainConfig& config) {
  Tape tape;
  const BoundModel bound = bind_variables(tape, model);
  const TapedTrace trace = forward(bound.tensors, tape.constant(xv), tape.constant(xa),
                                   config.ablation != Ablation::kNoAttention);
  const LossTerms terms = total_loss(trace, yv, ya, config.effective_alpha(), config.kernel);
  StepResult out{values_of(terms), {}};
  if (!std::isfinite(out.loss.total)) return out;
  out.gradients = collect_gradients(tape.backward(terms.total), bound);
  return out;
}

struct TrainResult {
  ModelParams model;
  TrainHistory history;
};

/// Trains on all of `source` plus `target_train`; `target_test` is scored
/// after every epoch. `arch` supplies width/hidden/layers/head sharing; its
/// input widths and class count are taken from the data.
inline TrainResult train(const TrainConfig& config, const FeatureDomain& source,
                         const FeatureDomain& target_train, const FeatureDomain& target_test,
                         Architecture arch) {
  config.validate();
  if (source.classes() != target_train.classes() || source.classes() != target_test.classes()) {
    throw ConfigError("class counts differ between source (" + std::to_string(source.classes()) +
                      ") and target (" + std::to_string(target_train.classes()) + "/" +
                      std::to_string(target_test.classes()) + ")");
  }
  if (source.size() == 0 || target_train.size() == 0 || target_test.size() == 0) {
    throw ConfigError("source, target-train and target-test must all be nonempty");
  }
  if (target_train.width() != target_test.width()) {
    throw ConfigError("target train/test feature widths differ");
  }
  arch.input_visual = source.width();
  arch.input_acoustic = target_train.width();
  arch.classes = source.classes();

  TrainResult result{init_model(arch, config.seed), {}};
  ModelParams& model = result.model;
  std::vector<Matrix> velocity;
  for (const Matrix* m : model.tensor_list()) velocity.push_back(Matrix::zeros_like(*m));

  BatchStream source_stream(source.size(), derive_seed(config.seed, "batches-visual"));
  BatchStream target_stream(target_train.size(), derive_seed(config.seed, "batches-acoustic"));
  const std::size_t longest = std::max(source.size(), target_train.size());
  const std::size_t steps = (longest + config.batch_size - 1) / config.batch_size;
  const std::size_t batch_v = std::min(config.batch_size, source.size());
  const std::size_t batch_a = std::min(config.batch_size, target_train.size());

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    source_stream.restart();
    target_stream.restart();
    LossValues sums;
    for (std::size_t step = 1; step <= steps; ++step) {
      const auto iv = source_stream.next(batch_v);
      const auto ia = target_stream.next(batch_a);
      StepResult r = loss_and_gradients(
          model, gather_rows(source.features, iv), gather_rows(source.labels, iv),
          gather_rows(target_train.features, ia), gather_rows(target_train.labels, ia), config);
      if (!std::isfinite(r.loss.total)) throw DivergenceError(epoch, step);
      sums.total += r.loss.total;
      sums.ce_visual += r.loss.ce_visual;
      sums.ce_acoustic += r.loss.ce_acoustic;
      sums.lmmd_sum += r.loss.lmmd_sum;
      auto params = model.tensor_list();
      for (std::size_t k = 0; k < params.size(); ++k) {
        sgd_momentum_step(*params[k], r.gradients[k], velocity[k], config.learning_rate,
                          config.momentum, config.weight_decay);
      }
    }
    const double inv = 1.0 / static_cast<double>(steps);
    const MetricsReport m = evaluate(model, target_test, Modality::kAcoustic);
    result.history.epochs.push_back({epoch, sums.ce_visual * inv, sums.ce_acoustic * inv,
                                     sums.lmmd_sum * inv, sums.total * inv, m.war, m.uar,
                                     m.w_f1});
  }
  return result;
}

}  // namespace fdan
