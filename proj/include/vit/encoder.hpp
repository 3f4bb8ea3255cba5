#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vit/attention.hpp"
#include "vit/patchembed.hpp"
#include "vit/rng.hpp"

namespace vit {

enum class HeadMode { pretrain_mlp, finetune_linear };

std::string to_string(HeadMode mode);
HeadMode parse_head_mode(const std::string& name);

struct StemStage {
  std::size_t kernel = 3;
  std::size_t stride = 2;
  std::size_t out_channels = 32;
  std::size_t groups = 8;
};

/// Convolutional stem of the hybrid model: each stage is conv (optionally
/// weight-standardized) -> GroupNorm -> GELU.
struct StemSpec {
  std::vector<StemStage> stages;
  bool weight_standardize = true;

  std::size_t total_stride() const;
  std::size_t out_channels(std::size_t in_channels) const;

  /// Three 3x3 stride-2 stages (32, 64, 128 channels), 8 groups.
  static StemSpec defaults();
};

struct ViTConfig {
  std::size_t image_h = 32;
  std::size_t image_w = 32;
  std::size_t channels = 3;
  std::size_t patch_size = 4;
  std::size_t layers = 4;
  std::size_t dim = 64;
  std::size_t mlp_dim = 128;
  std::size_t heads = 4;
  double dropout = 0.0;
  double attention_dropout = 0.0;
  PositionalKind positional = PositionalKind::learned_1d;
  HeadMode head = HeadMode::pretrain_mlp;
  std::size_t num_classes = 10;
  bool qkv_bias = true;
  bool hybrid = false;
  StemSpec stem = StemSpec::defaults();
  /// Adds the [mask] embedding and the 512-way mean-colour head.
  bool mpp = false;
  double ln_eps = 1e-6;

  /// Spatial size of the map patches are cut from (image, or stem output).
  std::size_t feature_h() const;
  std::size_t feature_w() const;
  std::size_t feature_channels() const;
  std::size_t grid_h() const { return feature_h() / patch_size; }
  std::size_t grid_w() const { return feature_w() / patch_size; }
  std::size_t num_patches() const { return grid_h() * grid_w(); }
  std::size_t seq_len() const { return num_patches() + 1; }
  /// Side length in input pixels covered by one token.
  std::size_t token_pixels() const { return patch_size * (hybrid ? stem.total_stride() : 1); }
  PatchifyConfig patchify() const;

  /// Throws ConfigError on any inconsistency.
  void validate() const;
};

/// Standard presets: "ViT-B/16", "ViT-L/16", "ViT-H/14" (any /P suffix).
ViTConfig preset_config(const std::string& name, std::size_t num_classes, std::size_t image_size);

enum class Init { zeros, ones, trunc_normal, he_normal };

struct ParamSpec {
  std::string name;
  Shape shape;
  bool decay = false;
  Init init = Init::zeros;
};

/// Every trainable tensor of a configuration in canonical order. This is the
/// single source of names, shapes and decay flags.
std::vector<ParamSpec> parameter_layout(const ViTConfig& cfg);

struct ParameterReport {
  std::size_t total = 0;
  std::vector<std::pair<std::string, std::size_t>> components;
};

ParameterReport count_parameters(std::span<const ParamSpec> layout);
ParameterReport count_parameters(const ViTConfig& cfg);

template <typename T>
struct BlockParams {
  const Parameter<T>* ln1_gain = nullptr;
  const Parameter<T>* ln1_bias = nullptr;
  MSAParams<T> msa;
  const Parameter<T>* ln2_gain = nullptr;
  const Parameter<T>* ln2_bias = nullptr;
  const Parameter<T>* mlp_w1 = nullptr;
  const Parameter<T>* mlp_b1 = nullptr;
  const Parameter<T>* mlp_w2 = nullptr;
  const Parameter<T>* mlp_b2 = nullptr;
};

template <typename T>
struct HeadParams {
  HeadMode mode = HeadMode::pretrain_mlp;
  const Parameter<T>* hidden_w = nullptr;  // pretrain only
  const Parameter<T>* hidden_b = nullptr;
  const Parameter<T>* out_w = nullptr;
  const Parameter<T>* out_b = nullptr;
};

template <typename T>
struct StemParams {
  StemSpec spec;
  std::vector<const Parameter<T>*> conv;
  std::vector<const Parameter<T>*> gn_gain;
  std::vector<const Parameter<T>*> gn_bias;
};

template <typename T>
class ViTModel {
 public:
  /// Fresh model initialised from `seed`.
  ViTModel(const ViTConfig& cfg, std::uint64_t seed);

  const ViTConfig& config() const noexcept { return cfg_; }
  std::vector<Parameter<T>>& parameters() noexcept { return params_; }
  const std::vector<Parameter<T>>& parameters() const noexcept { return params_; }
  std::vector<Parameter<T>*> parameter_ptrs();

  Parameter<T>& param(const std::string& name);
  const Parameter<T>& param(const std::string& name) const;
  const Parameter<T>* find(const std::string& name) const;

  EmbeddingParams<T> embedding() const;
  PositionalParams<T> positional() const;
  MSAParams<T> attention(std::size_t layer) const;
  BlockParams<T> block(std::size_t layer) const;
  HeadParams<T> head() const;
  StemParams<T> stem() const;

  std::size_t parameter_count() const;

  /// Replaces the classification head. New head weights are zero when
  /// zero_init, else freshly initialised from seed.
  void set_head(HeadMode mode, std::size_t num_classes, bool zero_init, std::uint64_t seed = 0);

  /// Adds or drops the masked-patch-prediction parameters.
  void set_mpp(bool enabled, std::uint64_t seed);

  /// Changes the input resolution, interpolating every positional table to
  /// the new token grid.
  void resize(std::size_t image_h, std::size_t image_w);

  template <typename U>
  ViTModel<U> cast() const {
    ViTModel<U> out(cfg_, 0);
    for (std::size_t i = 0; i < params_.size(); ++i) out.parameters()[i].value = params_[i].value.template cast<U>();
    return out;
  }

 private:
  // Rebuilds params_ for a new config, keeping tensors whose name and shape
  // survive, filling the rest from `fill(spec)`.
  template <typename Fill>
  void rebuild(const ViTConfig& cfg, Fill&& fill);
  void reindex();

  ViTConfig cfg_;
  std::vector<Parameter<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
struct ForwardOptions {
  bool training = false;
  Rng* rng = nullptr;
  AttentionSink* sink = nullptr;
  std::size_t image_offset = 0;
  PatchTransform<T> patch_transform;
};

/// Pre-LN block: z' = MSA(LN(z)) + z; out = MLP(LN(z')) + z'.
template <typename T>
Var<T> encoder_block(Tape<T>& tape, const Var<T>& z, const BlockParams<T>& params, const AttentionContext<T>& ctx,
                     double dropout, T ln_eps);

/// Conv stem: [B x H x W x C] -> [B x H/s x W/s x C'].
template <typename T>
Var<T> hybrid_stem(Tape<T>& tape, const Var<T>& images, const StemParams<T>& params);

/// Final-LN token states [B x N' x D] for images [B x H x W x C].
template <typename T>
Var<T> forward_tokens(Tape<T>& tape, const ViTModel<T>& model, const Tensor<T>& images,
                      const ForwardOptions<T>& opts = {});

/// Image representation y = LN(z_L^0), [B x D].
template <typename T>
Var<T> encode(Tape<T>& tape, const ViTModel<T>& model, const Tensor<T>& images, const ForwardOptions<T>& opts = {});

/// Class-token readout of final-LN token states.
template <typename T>
Var<T> class_token_state(const Var<T>& tokens);

/// Logits [B x K]: Linear -> tanh -> Linear (pretrain) or Linear (finetune).
template <typename T>
Var<T> classify(Tape<T>& tape, const Var<T>& y, const HeadParams<T>& head, double dropout = 0.0,
                bool training = false, Rng* rng = nullptr);

template <typename T>
Var<T> forward_logits(Tape<T>& tape, const ViTModel<T>& model, const Tensor<T>& images,
                      const ForwardOptions<T>& opts = {});

/// Inference helpers on a gradient-free tape.
template <typename T>
Tensor<T> predict_logits(const ViTModel<T>& model, const Tensor<T>& images);
template <typename T>
Tensor<T> represent(const ViTModel<T>& model, const Tensor<T>& images, AttentionSink* sink = nullptr,
                    std::size_t image_offset = 0);

}  // namespace vit
