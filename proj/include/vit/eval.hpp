#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "vit/harness/dataset.hpp"
#include "vit/optim.hpp"

namespace vit {

/// Ridge regression from frozen representations X [n x D] to {-1, 1}^K
/// targets Y [n x K].
struct ProbeProblem {
  Tensor<double> x;
  Tensor<double> y;
  double lambda = 0.0;

  void validate() const;
};

inline double default_ridge(std::size_t n) { return 1e-3 * static_cast<double>(n); }

/// Builds Y from labels. lambda < 0 selects default_ridge(n).
ProbeProblem make_probe_problem(Tensor<double> x, const std::vector<std::size_t>& labels, std::size_t num_classes,
                                double lambda = -1.0);

/// W = (X^T X + lambda I)^-1 X^T Y via Cholesky, [D x K]. lambda < 0 is a
/// ParameterError; an unsolvable system a RegularizationError.
Tensor<double> fit_probe(const ProbeProblem& problem);

/// argmax over columns of x W, first index on ties.
std::vector<std::size_t> probe_predict(const Tensor<double>& x, const Tensor<double>& w);

double accuracy(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& labels);

/// Frozen feature extractor: normalized images [n x H x W x C] -> [n x D].
using RepresentFn = std::function<Tensor<double>(const Tensor<float>& images)>;

/// Class-token representation of a model, in eval mode.
RepresentFn model_encoder(const ViTModel<float>& model);

/// Representations of every listed example, computed batch by batch.
Tensor<double> represent_dataset(const RepresentFn& encoder, const Dataset& data, std::span<const std::size_t> indices,
                                 std::size_t batch_size = 256);

struct FewShotResult {
  double accuracy = 0.0;
  std::size_t train_examples = 0;
  std::size_t test_examples = 0;
};

/// Seeded s-per-class sample of `train` (sorted indices); DataError if a
/// class has fewer than s examples.
std::vector<std::size_t> sample_shots(const Dataset& train, std::size_t shots, std::uint64_t seed);

/// s-shot ridge probe on frozen representations, scored on all of `test`.
FewShotResult fewshot_eval(const RepresentFn& encoder, const Dataset& train, const Dataset& test, std::size_t shots,
                           std::uint64_t seed, double lambda = -1.0);

/// Drops the current head and attaches a zero-initialised D x K linear head.
void swap_head(ViTModel<float>& model, std::size_t num_classes);

struct FinetuneConfig {
  OptimConfig optim;
  std::size_t steps = 100;
  std::size_t batch_size = 64;
  std::size_t micro_batch = 0;
  AugmentConfig augment;
  std::uint64_t seed = 0;

  static FinetuneConfig defaults();  // SGD momentum 0.9, no decay, clip 1
};

/// Trains on the listed examples for cfg.steps steps, cycling epochs.
/// Returns the metrics of the last step.
StepMetrics finetune(ViTModel<float>& model, const Dataset& data, std::span<const std::size_t> indices,
                     const FinetuneConfig& cfg);

/// Top-1 accuracy on the listed examples (all if empty).
double evaluate_accuracy(const ViTModel<float>& model, const Dataset& data, std::span<const std::size_t> indices = {},
                         std::size_t batch_size = 256);

struct SweepResult {
  double best_lr = 0.0;
  std::vector<double> lrs;
  std::vector<double> dev_accuracy;
  ViTModel<float> model;  // retrained on the full train set with best_lr
};

/// Holds out dev_fraction of train (seeded), fine-tunes a copy per lr on the
/// rest, picks the best dev accuracy (lowest lr on ties) and retrains on all
/// of train.
SweepResult lr_sweep(const ViTModel<float>& model, const Dataset& train, const std::vector<double>& lrs,
                     double dev_fraction, const FinetuneConfig& cfg);

}  // namespace vit
