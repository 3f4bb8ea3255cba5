#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vit/encoder.hpp"

namespace vit {

enum class DecayKind { linear, cosine };
enum class OptimizerKind { adam, sgd_momentum };

std::string to_string(DecayKind kind);
DecayKind parse_decay_kind(const std::string& name);
std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(const std::string& name);

struct Schedule {
  double base_lr = 1e-3;
  std::size_t warmup_steps = 0;
  /// 0 means "not yet known"; runners fill it in from the step budget.
  std::size_t total_steps = 0;
  DecayKind decay = DecayKind::linear;

  void validate() const;
};

/// Linear warmup 0 -> base_lr, then linear or cosine decay to 0 at
/// total_steps. Steps past the end are clamped.
double lr_at(std::size_t step, const Schedule& schedule);

struct OptimConfig {
  OptimizerKind kind = OptimizerKind::adam;
  Schedule schedule;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.9;
  double weight_decay = 0.0;
  /// Global-norm clip threshold; 0 disables clipping.
  double clip_norm = 1.0;
  bool use_ema = true;
  double ema_decay = 0.9999;
  double label_smoothing = 0.0;

  void validate() const;
};

/// Optimizer moments (Adam m, v; SGD velocity in m), EMA shadow and step
/// counter. Tensors are in the model's parameter order.
template <typename T>
struct TrainState {
  OptimConfig cfg;
  std::size_t step = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::vector<Tensor<T>> ema;

  static TrainState init(std::span<const Parameter<T>> params, const OptimConfig& cfg);
  /// Throws ContractError if the state does not match the parameter shapes.
  void check(std::span<const Parameter<T>> params) const;
};

struct ClipResult {
  double norm = 0.0;   // global norm before clipping
  double scale = 1.0;  // factor applied to every gradient
};

/// Rescales all tensors jointly so their global L2 norm is at most max_norm.
template <typename T>
ClipResult clip_global_norm(std::span<Tensor<T>* const> grads, double max_norm);

/// Bias-corrected Adam on p.grad, then decoupled weight decay
/// p -= lr * wd * p for parameters flagged for decay.
template <typename T>
void adam_step(std::span<Parameter<T>> params, TrainState<T>& state, double lr);

/// v = mu v + g; p -= lr v (plus the same decoupled decay).
template <typename T>
void sgd_momentum_step(std::span<Parameter<T>> params, TrainState<T>& state, double lr);

/// shadow = factor * shadow + (1 - factor) * params.
template <typename T>
void ema_update(std::span<Tensor<T>> shadow, std::span<const Parameter<T>> params, double factor);

/// Loss and d loss / d logits for one example.
struct CrossEntropyResult {
  double loss = 0.0;
  std::vector<double> grad;
};

/// -sum(target * log softmax(logits)) with target (1 - s) onehot + s / K.
CrossEntropyResult cross_entropy(std::span<const double> logits, std::size_t label, double smoothing = 0.0);

/// Batch-mean cross-entropy of logits [B x K] as a tape op.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<std::size_t>& labels, double smoothing = 0.0);

/// Number of rows whose argmax (first index on ties) equals the label.
template <typename T>
std::size_t count_correct(const Tensor<T>& logits, const std::vector<std::size_t>& labels);

template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& scores);

struct StepMetrics {
  double loss = 0.0;
  double accuracy = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

struct GradientOptions {
  bool training = true;
  double label_smoothing = 0.0;
  /// Split the batch into chunks of this size and accumulate (0 = whole batch).
  std::size_t micro_batch = 0;
  /// Seeds the dropout streams (one per chunk).
  std::uint64_t dropout_seed = 0;
};

/// Fills every parameter's grad with d(mean batch loss)/d(param) for the
/// classification objective. Returns loss and accuracy (lr and norm unset).
template <typename T>
StepMetrics compute_gradients(ViTModel<T>& model, const Tensor<T>& images, const std::vector<std::size_t>& labels,
                              const GradientOptions& opts);

/// clip -> optimizer step -> EMA -> step++, using the grads already held by
/// the parameters. Fills lr and grad_norm.
template <typename T>
void apply_update(std::span<Parameter<T>> params, TrainState<T>& state, StepMetrics& metrics);

/// One supervised step. Dropout streams derive from (seed, step).
template <typename T>
StepMetrics train_step(ViTModel<T>& model, const Tensor<T>& images, const std::vector<std::size_t>& labels,
                       TrainState<T>& state, std::uint64_t seed, std::size_t micro_batch = 0);

/// Copies the EMA shadow into a model's parameters.
template <typename T>
void load_ema(ViTModel<T>& model, const TrainState<T>& state);

}  // namespace vit
