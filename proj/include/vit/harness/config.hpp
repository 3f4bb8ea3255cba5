#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vit/harness/dataset.hpp"
#include "vit/optim.hpp"
#include "vit/selfsup.hpp"

namespace vit {

/// Ordered key -> raw value pairs from a flat `key = value` file.
using ConfigMap = std::map<std::string, std::string>;

/// Blank lines and lines starting with '#' are skipped. Malformed lines and
/// repeated keys are ConfigErrors naming the line.
ConfigMap parse_config_text(const std::string& text);
ConfigMap read_config_file(const std::filesystem::path& path);

/// Everything a CLI run needs besides flags.
struct RunConfig {
  ViTConfig model;
  OptimConfig optim;
  MPPConfig mpp;

  std::uint64_t seed = 0;
  // data
  std::string dataset = "synthetic";  // synthetic | cifar10
  std::string data_dir;
  std::size_t train_limit = 0;
  std::size_t test_limit = 0;
  std::size_t synthetic_train = 2048;
  std::size_t synthetic_test = 512;
  Separability synthetic_separability = Separability::easy;
  AugmentConfig augment;
  // loop
  std::size_t epochs = 1;
  std::size_t steps = 0;  // > 0 overrides epochs
  std::size_t stop_step = 0;  // > 0 stops early, schedule unchanged
  std::size_t batch_size = 128;
  std::size_t micro_batch = 0;
  std::size_t eval_batch = 256;
  std::size_t log_every = 1;
  std::size_t eval_every = 1;  // epochs, 0 = only at the end
  bool wall_clock = true;
  bool eval_ema = false;
  // evaluation / fine-tuning
  std::size_t shots = 10;
  double ridge_lambda = -1.0;
  double dev_fraction = 0.02;
  std::vector<double> lr_grid = {0.001, 0.003, 0.01, 0.03};
  std::size_t finetune_steps = 500;
  std::size_t finetune_batch = 64;
  std::size_t finetune_image = 0;  // 0 keeps the pretraining resolution
};

/// Applies every key; unknown keys and unparsable values are ConfigErrors.
RunConfig run_config_from(const ConfigMap& map, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path);

/// Canonical text of all keys (parses back to an identical config).
std::string to_text(const RunConfig& cfg);

/// Model keys only, used inside checkpoints.
std::string model_config_text(const ViTConfig& cfg);
ViTConfig model_config_from_text(const std::string& text);
std::string optim_config_text(const OptimConfig& cfg);
OptimConfig optim_config_from_text(const std::string& text);

/// Documented key list: (key, description).
const std::vector<std::pair<std::string, std::string>>& config_keys();

}  // namespace vit
