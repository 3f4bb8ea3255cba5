#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "vit/ops.hpp"
#include "vit/tape.hpp"
#include "vit/tensor.hpp"

namespace vit {

/// Geometry of the patch grid: image H x W x C cut into P x P patches,
/// projected to model dim D.
struct PatchifyConfig {
  std::size_t image_h = 0;
  std::size_t image_w = 0;
  std::size_t channels = 0;
  std::size_t patch_size = 0;
  std::size_t model_dim = 0;

  std::size_t grid_h() const { return image_h / patch_size; }
  std::size_t grid_w() const { return image_w / patch_size; }
  std::size_t num_patches() const { return grid_h() * grid_w(); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }

  /// Throws ConfigError unless P divides both image dims and all are positive.
  void validate() const;
};

enum class PositionalKind { none, learned_1d, learned_2d, relative };

std::string to_string(PositionalKind kind);
PositionalKind parse_positional_kind(const std::string& name);

/// Projection E [(P*P*C) x D], its bias [D] and the class token [D].
template <typename T>
struct EmbeddingParams {
  const Parameter<T>* projection = nullptr;
  const Parameter<T>* bias = nullptr;
  const Parameter<T>* class_token = nullptr;
};

/// Absolute positional parameters. learned_1d uses `table` [(N+1) x D];
/// learned_2d uses `x_table` [Gw x D/2], `y_table` [Gh x D/2] and a separate
/// class-token row `class_pos` [D]. none and relative add nothing at embed
/// time (relative tables live with each attention layer).
template <typename T>
struct PositionalParams {
  PositionalKind kind = PositionalKind::none;
  const Parameter<T>* table = nullptr;
  const Parameter<T>* x_table = nullptr;
  const Parameter<T>* y_table = nullptr;
  const Parameter<T>* class_pos = nullptr;
};

/// image [H x W x C] -> [N x (P*P*C)]. Patches in raster order; each patch
/// flattened as (row, col, channel).
template <typename T>
Tensor<T> extract_patches(const Tensor<T>& image, const PatchifyConfig& cfg);

/// Inverse of extract_patches.
template <typename T>
Tensor<T> assemble_patches(const Tensor<T>& patches, const PatchifyConfig& cfg);

/// Batched, differentiable patchify: [B x H x W x C] -> [B x N x (P*P*C)].
template <typename T>
Var<T> patchify(const Var<T>& images, std::size_t patch_size);

/// Positional rows for a grid: token (r, c) gets concat(x_table[c], y_table[r]);
/// row 0 is class_pos. Result [(Gh*Gw + 1) x D].
template <typename T>
Var<T> build_2d_positional(const Var<T>& x_table, const Var<T>& y_table, const Var<T>& class_pos,
                           std::size_t grid_h, std::size_t grid_w);

template <typename T>
Tensor<T> build_2d_positional(const Tensor<T>& x_table, const Tensor<T>& y_table, const Tensor<T>& class_pos,
                              std::size_t grid_h, std::size_t grid_w);

/// Hook applied to the projected patch embeddings [B x N x D] before the
/// class token and positional rows are added (masked patch prediction uses it).
template <typename T>
using PatchTransform = std::function<Var<T>(const Var<T>&)>;

/// patches [B x N x (P*P*C)] -> z0 [B x (N+1) x D].
template <typename T>
Var<T> embed(Tape<T>& tape, const Var<T>& patches, const EmbeddingParams<T>& params, const PositionalParams<T>& pos,
             std::size_t grid_h, std::size_t grid_w, const PatchTransform<T>& transform = {});

/// Bilinear (align-corners) resampling of a [Gh x Gw x D] grid.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& grid, std::size_t new_h, std::size_t new_w);

/// Resamples the spatial rows of E_pos [(N+1) x D] from old_grid to new_grid;
/// the class-token row is copied. Identical grids return an exact copy.
template <typename T>
Tensor<T> interpolate_positional(const Tensor<T>& pos, std::size_t old_h, std::size_t old_w, std::size_t new_h,
                                 std::size_t new_w);

}  // namespace vit
