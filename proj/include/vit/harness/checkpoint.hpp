#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "vit/harness/container.hpp"
#include "vit/optim.hpp"

namespace vit {

/// Model (config + parameters) and, optionally, the optimizer state with its
/// EMA shadow.
struct Checkpoint {
  ViTModel<float> model;
  std::optional<TrainState<float>> state;
};

/// Tensor list of a checkpoint: "meta/config" (model config text), every
/// parameter under its own name, then "opt/config", "opt/step",
/// "opt/m/<name>", "opt/v/<name>" and "ema/<name>" when a state is given.
std::vector<StoredTensor> checkpoint_tensors(const ViTModel<float>& model, const TrainState<float>* state = nullptr);

/// Rebuilds a checkpoint. Missing, unknown or mis-shaped tensors are
/// FormatErrors pointing at the offending record.
Checkpoint checkpoint_from_tensors(const std::vector<StoredTensor>& tensors);

void save_checkpoint(const std::filesystem::path& path, const ViTModel<float>& model,
                     const TrainState<float>* state = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace vit
