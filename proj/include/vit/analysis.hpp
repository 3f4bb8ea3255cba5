#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "vit/encoder.hpp"

namespace vit {

/// Mean attention distance in pixels per (layer, head) and per layer.
struct DistanceProfile {
  std::size_t layers = 0;
  std::size_t heads = 0;
  Tensor<double> per_head;  // [layers x heads]
  std::vector<double> per_layer;

  /// "layer,head,mean_distance" rows.
  std::string csv() const;
};

/// Attention-weighted Euclidean distance between patch centres for each
/// query patch. The class token is dropped and each row renormalized over
/// patches; queries are averaged uniformly, then images.
DistanceProfile attention_distance(const std::vector<AttentionRecord>& records, std::size_t grid_h,
                                   std::size_t grid_w, std::size_t token_pixels);
DistanceProfile attention_distance(const std::vector<AttentionRecord>& records, const ViTConfig& cfg);

enum class RolloutMode { raw, half_identity };
std::string to_string(RolloutMode mode);
RolloutMode parse_rollout_mode(const std::string& name);

struct RolloutMap {
  std::size_t image = 0;
  Tensor<double> map;  // [grid_h x grid_w], sums to 1
};

/// Rolled-up attention A_L ... A_1 of one image (head-averaged per layer;
/// half_identity mixes in the residual as (A + I) / 2, rows renormalized).
Tensor<double> rollout_matrix(const std::vector<AttentionRecord>& records, std::size_t image, RolloutMode mode);

/// Class-token row of the rollout restricted to patches and renormalized,
/// one map per captured image.
std::vector<RolloutMap> attention_rollout(const std::vector<AttentionRecord>& records, std::size_t grid_h,
                                          std::size_t grid_w, RolloutMode mode = RolloutMode::half_identity);

/// Pairwise cosine similarity of the rows of e [N x D]; zero rows give 0.
Tensor<double> cosine_similarity_matrix(const Tensor<double>& e);

/// Cosine similarity between the positional embeddings of every pair of
/// patches, [N x N] with N = grid_h * grid_w in raster order.
Tensor<double> posemb_similarity(const PositionalParams<float>& pos, std::size_t grid_h, std::size_t grid_w);

struct PCAResult {
  Tensor<double> filters;  // [n x P x P x C], unit norm
  std::vector<double> explained_variance_ratio;
  std::vector<double> eigenvalues;
};

/// Principal components of the D columns of the patch projection
/// e [(P*P*C) x D], sorted by explained variance, sign fixed so the largest
/// magnitude entry is positive.
PCAResult filter_pca(const Tensor<double>& e, std::size_t n_components, std::size_t patch_size, std::size_t channels);

}  // namespace vit
