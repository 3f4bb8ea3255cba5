#include "vit/selfsup.hpp"

#include <algorithm>
#include <cmath>

namespace vit {

void MPPConfig::validate() const {
  if (!(corruption_rate > 0.0 && corruption_rate < 1.0)) throw ConfigError("corruption_rate must be in (0, 1)");
  if (p_mask < 0.0 || p_random < 0.0 || p_keep < 0.0 || std::abs(p_mask + p_random + p_keep - 1.0) > 1e-9) {
    throw ConfigError("mask/random/keep probabilities must be non-negative and sum to 1");
  }
}

CorruptionPlan plan_corruption(std::size_t n, const MPPConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto count = static_cast<std::size_t>(std::lround(cfg.corruption_rate * static_cast<double>(n)));
  CorruptionPlan plan;
  if (count == 0) return plan;
  if (n < 2 && cfg.p_random > 0.0) throw ConfigError("random replacement needs at least 2 patches");

  // partial Fisher-Yates
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + rng.uniform_int(n - i);
    std::swap(order[i], order[j]);
  }
  plan.indices.assign(order.begin(), order.begin() + count);
  std::sort(plan.indices.begin(), plan.indices.end());

  for (std::size_t idx : plan.indices) {
    const double u = rng.uniform();
    CorruptAction a = CorruptAction::keep;
    std::size_t donor = idx;
    if (u < cfg.p_mask) {
      a = CorruptAction::mask;
    } else if (u < cfg.p_mask + cfg.p_random) {
      a = CorruptAction::random;
      donor = rng.uniform_int(n - 1);
      if (donor >= idx) ++donor;
    }
    plan.actions.push_back(a);
    plan.donors.push_back(donor);
  }
  return plan;
}

template <typename T>
Var<T> apply_corruption(const Var<T>& patches, const Var<T>& mask_embedding, const std::vector<CorruptionPlan>& plans) {
  const Shape& s = patches.shape();
  if (s.size() != 3 || plans.size() != s[0]) {
    throw DimensionError("apply_corruption: patches " + shape_str(s) + " vs " + std::to_string(plans.size()) +
                         " plans");
  }
  const std::size_t b = s[0], n = s[1], d = s[2];
  if (mask_embedding.shape() != Shape{d}) throw DimensionError("apply_corruption: mask embedding must be [D]");

  // source row per output row: >= 0 is a patch row, -1 the mask embedding
  std::vector<long> source(b * n);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < n; ++j) source[i * n + j] = static_cast<long>(i * n + j);
    const auto& p = plans[i];
    for (std::size_t k = 0; k < p.indices.size(); ++k) {
      if (p.indices[k] >= n || p.donors[k] >= n) throw InputError("apply_corruption: plan index out of range");
      const std::size_t row = i * n + p.indices[k];
      if (p.actions[k] == CorruptAction::mask) source[row] = -1;
      else if (p.actions[k] == CorruptAction::random) source[row] = static_cast<long>(i * n + p.donors[k]);
    }
  }
  const Tensor<T>& x = patches.value();
  const Tensor<T>& me = mask_embedding.value();
  Tensor<T> out(s);
  for (std::size_t r = 0; r < b * n; ++r) {
    const T* src = source[r] < 0 ? me.ptr() : x.ptr() + static_cast<std::size_t>(source[r]) * d;
    std::copy_n(src, d, out.ptr() + r * d);
  }
  return patches.tape().record(std::move(out), {patches, mask_embedding},
                               [patches, mask_embedding, source, d](Tape<T>& tape, std::size_t self) {
                                 const Tensor<T>& go = tape.grad(self);
                                 const bool gx = tape.requires_grad(patches);
                                 const bool gm = tape.requires_grad(mask_embedding);
                                 for (std::size_t r = 0; r < source.size(); ++r) {
                                   const T* g = go.ptr() + r * d;
                                   if (source[r] < 0) {
                                     if (!gm) continue;
                                     T* dst = tape.grad(mask_embedding).ptr();
                                     for (std::size_t c = 0; c < d; ++c) dst[c] += g[c];
                                   } else if (gx) {
                                     T* dst = tape.grad(patches).ptr() + static_cast<std::size_t>(source[r]) * d;
                                     for (std::size_t c = 0; c < d; ++c) dst[c] += g[c];
                                   }
                                 }
                               });
}

template <typename T>
Corruption<T> corrupt(const Tensor<T>& patches, const Tensor<T>& mask_embedding, const MPPConfig& cfg, Rng& rng) {
  if (patches.rank() != 2) throw DimensionError("corrupt: expected [N x D], got " + shape_str(patches.shape()));
  Corruption<T> c;
  c.plan = plan_corruption(patches.dim(0), cfg, rng);
  Tape<T> tape(false);
  auto x = tape.constant(patches.reshaped({1, patches.dim(0), patches.dim(1)}));
  const std::vector<CorruptionPlan> plans{c.plan};
  c.tokens = apply_corruption(x, tape.constant(mask_embedding), plans).value().reshaped(patches.shape());
  return c;
}

std::size_t mean_color_target(std::span<const std::uint8_t> patch, std::size_t channels) {
  if (channels != 3) throw ConfigError("mean colour target needs 3 channels, got " + std::to_string(channels));
  if (patch.empty() || patch.size() % 3 != 0) throw DimensionError("mean_color_target: bad patch size");
  const std::size_t pixels = patch.size() / 3;
  std::size_t sum[3] = {0, 0, 0};
  for (std::size_t i = 0; i < pixels; ++i)
    for (std::size_t c = 0; c < 3; ++c) sum[c] += patch[i * 3 + c];
  // floor(mean / 32) without rounding error
  std::size_t bin[3];
  for (std::size_t c = 0; c < 3; ++c) bin[c] = sum[c] / (32 * pixels);
  return bin[0] * 64 + bin[1] * 8 + bin[2];
}

std::vector<std::size_t> mean_color_targets(std::span<const std::uint8_t> images, const Shape& shape,
                                            std::size_t patch_pixels) {
  if (shape.size() != 4) throw DimensionError("mean_color_targets: expected [B x H x W x C]");
  const std::size_t b = shape[0], h = shape[1], w = shape[2], c = shape[3];
  if (c != 3) throw ConfigError("mean colour target needs 3 channels, got " + std::to_string(c));
  if (images.size() != b * h * w * c) throw DimensionError("mean_color_targets: pixel buffer size mismatch");
  if (patch_pixels == 0 || h % patch_pixels != 0 || w % patch_pixels != 0) {
    throw ConfigError("mean_color_targets: patch size does not divide image");
  }
  const std::size_t gh = h / patch_pixels, gw = w / patch_pixels, p = patch_pixels;
  std::vector<std::size_t> out;
  out.reserve(b * gh * gw);
  std::vector<std::uint8_t> patch(p * p * c);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t gr = 0; gr < gh; ++gr)
      for (std::size_t gc = 0; gc < gw; ++gc) {
        for (std::size_t r = 0; r < p; ++r) {
          const std::uint8_t* src = images.data() + ((i * h + gr * p + r) * w + gc * p) * c;
          std::copy_n(src, p * c, patch.data() + r * p * c);
        }
        out.push_back(mean_color_target(patch, c));
      }
  return out;
}

template <typename T>
Var<T> mpp_loss(Tape<T>& tape, const Var<T>& tokens, const std::vector<CorruptionPlan>& plans,
                const std::vector<std::size_t>& targets, const Parameter<T>& head_w, const Parameter<T>& head_b,
                std::size_t* correct) {
  const Shape& s = tokens.shape();
  if (s.size() != 3 || plans.size() != s[0]) throw DimensionError("mpp_loss: tokens/plans mismatch");
  const std::size_t b = s[0], np = s[1], n = np - 1;
  if (targets.size() != b * n) throw DimensionError("mpp_loss: expected one target per patch");
  std::vector<std::size_t> rows, labels;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t idx : plans[i].indices) {
      rows.push_back(i * np + 1 + idx);
      labels.push_back(targets[i * n + idx]);
    }
  }
  if (rows.empty()) throw InputError("mpp_loss: no corrupted positions");
  auto picked = ops::gather_rows(tokens, rows);
  auto logits = ops::linear(picked, tape.param(head_w), tape.param(head_b));
  if (correct) *correct = count_correct(logits.value(), labels);
  return cross_entropy(logits, labels);
}

template <typename T>
StepMetrics mpp_step(ViTModel<T>& model, const Tensor<T>& images, std::span<const std::uint8_t> pixels,
                     TrainState<T>& state, const MPPConfig& cfg, std::uint64_t seed) {
  const ViTConfig& mc = model.config();
  if (!mc.mpp) throw ConfigError("model has no masked-patch-prediction parameters");
  cfg.validate();
  const std::size_t b = images.dim(0);
  const auto targets = mean_color_targets(pixels, images.shape(), mc.token_pixels());

  std::vector<CorruptionPlan> plans;
  for (std::size_t i = 0; i < b; ++i) {
    Rng prng = Rng::derive(seed, {state.step, i, 0x6d7070});
    plans.push_back(plan_corruption(mc.num_patches(), cfg, prng));
  }

  auto& params = model.parameters();
  for (auto& p : params) p.zero_grad();
  Tape<T> tape(true);
  Rng rng = Rng::derive(seed, {state.step});
  const Parameter<T>& mask = model.param("mpp/mask_embedding");
  ForwardOptions<T> fo;
  fo.training = true;
  fo.rng = &rng;
  fo.patch_transform = [&](const Var<T>& proj) { return apply_corruption(proj, tape.param(mask), plans); };
  auto tokens = forward_tokens(tape, model, images, fo);
  std::size_t correct = 0;
  auto loss = mpp_loss(tape, tokens, plans, targets, model.param("mpp/head_w"), model.param("mpp/head_b"), &correct);
  StepMetrics m;
  m.loss = loss.value()[0];
  if (!std::isfinite(m.loss)) throw NumericError("non-finite MPP loss");
  tape.backward(loss);
  std::size_t total = 0;
  for (const auto& p : plans) total += p.indices.size();
  m.accuracy = static_cast<double>(correct) / static_cast<double>(total);
  for (auto& p : params) {
    if (const Tensor<T>* g = tape.grad_of(p)) p.grad = *g;
  }
  apply_update(std::span<Parameter<T>>(params), state, m);
  return m;
}

#define VIT_INSTANTIATE_SELFSUP(T)                                                                                \
  template Var<T> apply_corruption(const Var<T>&, const Var<T>&, const std::vector<CorruptionPlan>&);             \
  template Corruption<T> corrupt(const Tensor<T>&, const Tensor<T>&, const MPPConfig&, Rng&);                     \
  template Var<T> mpp_loss(Tape<T>&, const Var<T>&, const std::vector<CorruptionPlan>&,                           \
                           const std::vector<std::size_t>&, const Parameter<T>&, const Parameter<T>&,             \
                           std::size_t*);                                                                         \
  template StepMetrics mpp_step(ViTModel<T>&, const Tensor<T>&, std::span<const std::uint8_t>, TrainState<T>&,    \
                                const MPPConfig&, std::uint64_t);

VIT_INSTANTIATE_SELFSUP(float)
VIT_INSTANTIATE_SELFSUP(double)

}  // namespace vit
