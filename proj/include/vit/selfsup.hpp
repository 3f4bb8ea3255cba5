#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "vit/optim.hpp"

namespace vit {

struct MPPConfig {
  double corruption_rate = 0.5;
  double p_mask = 0.8;
  double p_random = 0.1;
  double p_keep = 0.1;

  void validate() const;
};

enum class CorruptAction : std::uint8_t { mask, random, keep };

/// Which patches of one image are corrupted and how. Patch indices exclude
/// the class token; donors are only meaningful for CorruptAction::random.
struct CorruptionPlan {
  std::vector<std::size_t> indices;  // ascending, no duplicates
  std::vector<CorruptAction> actions;
  std::vector<std::size_t> donors;
};

/// Selects round(rate * n) of n patches uniformly without replacement and
/// draws an action for each. Random replacements take another patch of the
/// same image.
CorruptionPlan plan_corruption(std::size_t num_patches, const MPPConfig& cfg, Rng& rng);

template <typename T>
struct Corruption {
  Tensor<T> tokens;  // [N x D]
  CorruptionPlan plan;
};

/// Applies a fresh plan to embedded patches [N x D].
template <typename T>
Corruption<T> corrupt(const Tensor<T>& patches, const Tensor<T>& mask_embedding, const MPPConfig& cfg, Rng& rng);

/// Differentiable corruption of projected patches [B x N x D], one plan per
/// image. Reads donor rows from the uncorrupted input.
template <typename T>
Var<T> apply_corruption(const Var<T>& patches, const Var<T>& mask_embedding, const std::vector<CorruptionPlan>& plans);

/// 3-bit mean colour class of one patch: per-channel mean binned by 32,
/// class = r * 64 + g * 8 + b. `patch` is P*P*3 interleaved u8 values.
std::size_t mean_color_target(std::span<const std::uint8_t> patch, std::size_t channels = 3);

/// Mean colour class of every patch (raster order) of u8 images
/// [B x H x W x 3], patch side `patch_pixels`. Result is [B * N].
std::vector<std::size_t> mean_color_targets(std::span<const std::uint8_t> images, const Shape& shape,
                                            std::size_t patch_pixels);

/// Mean 512-way cross-entropy over corrupted positions of final tokens
/// [B x N' x D] (token 0 is the class token).
template <typename T>
Var<T> mpp_loss(Tape<T>& tape, const Var<T>& tokens, const std::vector<CorruptionPlan>& plans,
                const std::vector<std::size_t>& targets, const Parameter<T>& head_w, const Parameter<T>& head_b,
                std::size_t* correct = nullptr);

/// One masked-patch-prediction step on a model with MPP parameters. Plans
/// and dropout derive from (seed, step). accuracy = corrupted patches whose
/// colour class was predicted.
template <typename T>
StepMetrics mpp_step(ViTModel<T>& model, const Tensor<T>& images, std::span<const std::uint8_t> pixels,
                     TrainState<T>& state, const MPPConfig& cfg, std::uint64_t seed);

}  // namespace vit
