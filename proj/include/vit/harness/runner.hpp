#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>

#include "vit/harness/checkpoint.hpp"
#include "vit/harness/config.hpp"

namespace vit {

/// Train and test splits named by the run config (limits applied).
std::pair<Dataset, Dataset> load_datasets(const RunConfig& cfg);

struct EvalMetrics {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Mean cross-entropy and top-1 accuracy of the classification head.
EvalMetrics evaluate_split(const ViTModel<float>& model, const Dataset& data, std::size_t batch_size = 256);

/// step,epoch,split,loss,accuracy,lr,grad_norm,wall_ms
class MetricsWriter {
 public:
  /// Appends when the file exists and already has the header.
  MetricsWriter(const std::filesystem::path& path, bool append);
  void row(std::size_t step, std::size_t epoch, const std::string& split, double loss, double accuracy, double lr,
           double grad_norm, double wall_ms);

 private:
  std::ofstream out_;
};

enum class TrainMode { supervised, mpp };

struct RunResult {
  std::size_t steps_done = 0;
  std::size_t total_steps = 0;
  StepMetrics last;
  std::optional<EvalMetrics> test;  // last test evaluation, if any
  std::filesystem::path checkpoint;
};

/// Runs the training loop and writes out_dir/{metrics.csv,checkpoint.vitc,
/// config.txt}. With `resume`, model and optimizer state come from that
/// checkpoint and metrics are appended.
RunResult run_training(const RunConfig& cfg, const std::filesystem::path& out_dir, TrainMode mode,
                       const std::optional<std::filesystem::path>& resume = std::nullopt, std::ostream* log = nullptr);

/// Shortest round-trip decimal form.
std::string format_double(double v);

}  // namespace vit
