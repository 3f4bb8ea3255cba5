#include "checks.hpp"

#include <cmath>

namespace vit::checks {

Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double scale) {
  Rng rng(seed);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

ViTConfig tiny_config(PositionalKind pos, HeadMode head) {
  ViTConfig c;
  c.image_h = 4;
  c.image_w = 20;
  c.channels = 3;
  c.patch_size = 4;
  c.layers = 2;
  c.dim = 16;
  c.mlp_dim = 32;
  c.heads = 2;
  c.positional = pos;
  c.head = head;
  c.num_classes = 3;
  return c;
}

ViTConfig tiny_hybrid_config() {
  ViTConfig c = tiny_config(PositionalKind::learned_1d, HeadMode::pretrain_mlp);
  c.image_h = 8;
  c.image_w = 40;
  c.hybrid = true;
  c.stem.stages = {StemStage{3, 2, 4, 2}};
  c.stem.weight_standardize = true;
  return c;
}

std::vector<NamedConfig> gradcheck_variants() {
  std::vector<NamedConfig> v;
  for (auto pos : {PositionalKind::none, PositionalKind::learned_1d, PositionalKind::learned_2d,
                   PositionalKind::relative}) {
    v.push_back({"pos=" + to_string(pos) + " head=pretrain_mlp", tiny_config(pos, HeadMode::pretrain_mlp), false});
  }
  v.push_back({"pos=learned_1d head=finetune_linear",
               tiny_config(PositionalKind::learned_1d, HeadMode::finetune_linear), false});
  v.push_back({"hybrid stem", tiny_hybrid_config(), false});
  ViTConfig m = tiny_config(PositionalKind::learned_1d, HeadMode::pretrain_mlp);
  m.mpp = true;
  v.push_back({"masked patch prediction", m, true});
  return v;
}

GradCheckReport model_gradcheck(const NamedConfig& variant, std::uint64_t seed, double tol) {
  const ViTConfig& cfg = variant.cfg;
  ViTModel<double> model(cfg, seed);
  Rng rng = Rng::derive(seed, {1});
  for (auto& p : model.parameters()) {
    const bool gain = p.name.find("gain") != std::string::npos;
    for (auto& v : p.value.data()) v = (gain ? 1.0 : 0.0) + 0.3 * rng.normal();
  }
  const std::size_t batch = 2;
  const Tensor<double> images = random_tensor({batch, cfg.image_h, cfg.image_w, cfg.channels}, seed + 2);
  const std::vector<std::size_t> labels = {1, 2};

  LossFn f;
  if (variant.mpp_objective) {
    // all three corruption actions on every image
    CorruptionPlan plan{{0, 2, 4}, {CorruptAction::mask, CorruptAction::random, CorruptAction::keep}, {0, 1, 0}};
    const std::vector<CorruptionPlan> plans(batch, plan);
    const std::vector<std::size_t> targets = {5, 100, 511, 0, 77, 300, 1, 2, 3, 4};
    f = [&model, &images, plans, targets](Tape<double>& tape) {
      ForwardOptions<double> opts;
      opts.patch_transform = [&tape, &model, &plans](const Var<double>& x) {
        return apply_corruption(x, tape.param(model.param("mpp/mask_embedding")), plans);
      };
      auto tokens = forward_tokens(tape, model, images, opts);
      return mpp_loss(tape, tokens, plans, targets, model.param("mpp/head_w"), model.param("mpp/head_b"));
    };
  } else {
    f = [&model, &images, &labels](Tape<double>& tape) {
      return cross_entropy(forward_logits(tape, model, images), labels);
    };
  }
  std::vector<Parameter<double>*> params;
  for (auto& p : model.parameters()) {
    // the classification head is outside the MPP objective
    if (variant.mpp_objective && p.name.rfind("head/", 0) == 0) continue;
    params.push_back(&p);
  }
  GradCheckOptions opts;
  opts.tol = tol;
  // Central differences resolve d loss in steps of ulp(loss) / 2h ~ 4e-11 here;
  // coordinates below 1e-5 are judged on |a - n| < 1e-9 instead.
  opts.floor = 1e-5;
  return check_gradients(f, params, opts);
}

double permutation_max_diff(std::size_t trials, std::uint64_t seed) {
  ViTConfig cfg;
  cfg.image_h = 16;
  cfg.image_w = 16;
  cfg.patch_size = 4;
  cfg.layers = 2;
  cfg.dim = 32;
  cfg.mlp_dim = 64;
  cfg.heads = 4;
  cfg.positional = PositionalKind::none;
  ViTModel<float> model(cfg, seed);
  Rng rng(seed);
  for (auto& p : model.parameters())
    for (auto& v : p.value.data()) v += static_cast<float>(0.1 * rng.normal());

  const Tensor<double> img = random_tensor({1, cfg.image_h, cfg.image_w, cfg.channels}, seed + 1);
  const Tensor<float> base_img = img.cast<float>();
  const Tensor<float> base = represent(model, base_img);
  const std::size_t g = cfg.grid_w(), p = cfg.patch_size, c = cfg.channels;
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const auto perm = rng.permutation(cfg.num_patches());
    Tensor<float> moved(base_img.shape());
    for (std::size_t dst = 0; dst < perm.size(); ++dst) {
      const std::size_t src = perm[dst];
      for (std::size_t y = 0; y < p; ++y)
        for (std::size_t x = 0; x < p; ++x)
          for (std::size_t k = 0; k < c; ++k) {
            const std::size_t sy = (src / g) * p + y, sx = (src % g) * p + x;
            const std::size_t dy = (dst / g) * p + y, dx = (dst % g) * p + x;
            moved[(dy * cfg.image_w + dx) * c + k] = base_img[(sy * cfg.image_w + sx) * c + k];
          }
    }
    const Tensor<float> out = represent(model, moved);
    for (std::size_t i = 0; i < out.size(); ++i) worst = std::max(worst, std::abs(double(out[i]) - double(base[i])));
  }
  return worst;
}

double distance_oracle(const Tensor<double>& a, std::size_t grid_h, std::size_t grid_w, std::size_t patch) {
  const std::size_t n = grid_h * grid_w;
  double total = 0.0;
  std::size_t queries = 0;
  for (std::size_t q = 0; q < n; ++q) {
    double mass = 0.0;
    for (std::size_t k = 0; k < n; ++k) mass += a[(q + 1) * (n + 1) + k + 1];
    if (mass <= 0.0) continue;
    double d = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double dy = (double(q / grid_w) - double(k / grid_w)) * double(patch);
      const double dx = (double(q % grid_w) - double(k % grid_w)) * double(patch);
      d += a[(q + 1) * (n + 1) + k + 1] / mass * std::sqrt(dx * dx + dy * dy);
    }
    total += d;
    ++queries;
  }
  return total / double(queries);
}

Tensor<double> rollout_oracle(const std::vector<AttentionRecord>& records, std::size_t image, bool half_identity) {
  std::size_t layers = 0, n = 0;
  for (const auto& r : records) {
    if (r.image != image) continue;
    layers = std::max(layers, r.layer + 1);
    n = r.matrix.shape()[0];
  }
  Tensor<double> acc = Tensor<double>::identity(n);
  for (std::size_t l = 0; l < layers; ++l) {
    Tensor<double> mean({n, n});
    std::size_t heads = 0;
    for (const auto& r : records) {
      if (r.image != image || r.layer != l) continue;
      for (std::size_t i = 0; i < n * n; ++i) mean[i] += r.matrix[i];
      ++heads;
    }
    for (auto& v : mean.data()) v /= double(heads);
    if (half_identity) {
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          mean[i * n + j] = 0.5 * mean[i * n + j] + (i == j ? 0.5 : 0.0);
          s += mean[i * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) mean[i * n + j] /= s;
      }
    }
    Tensor<double> next({n, n});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < n; ++k) s += mean[i * n + k] * acc[k * n + j];
        next[i * n + j] = s;
      }
    acc = next;
  }
  return acc;
}

Tensor<double> probe_oracle(const Tensor<double>& x, const Tensor<double>& y, double lambda) {
  const std::size_t n = x.shape()[0], d = x.shape()[1], k = y.shape()[1];
  // augmented [A | X^T Y], A = X^T X + lambda I
  const std::size_t w = d + k;
  std::vector<double> m(d * w, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < n; ++r) s += x[r * d + i] * x[r * d + j];
      m[i * w + j] = s + (i == j ? lambda : 0.0);
    }
    for (std::size_t j = 0; j < k; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < n; ++r) s += x[r * d + i] * y[r * k + j];
      m[i * w + d + j] = s;
    }
  }
  for (std::size_t col = 0; col < d; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < d; ++r)
      if (std::abs(m[r * w + col]) > std::abs(m[piv * w + col])) piv = r;
    for (std::size_t j = 0; j < w; ++j) std::swap(m[col * w + j], m[piv * w + j]);
    const double p = m[col * w + col];
    for (std::size_t j = 0; j < w; ++j) m[col * w + j] /= p;
    for (std::size_t r = 0; r < d; ++r) {
      if (r == col) continue;
      const double f = m[r * w + col];
      for (std::size_t j = 0; j < w; ++j) m[r * w + j] -= f * m[col * w + j];
    }
  }
  Tensor<double> out({d, k});
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = m[i * w + d + j];
  return out;
}

std::vector<AttentionRecord> random_records(std::size_t layers, std::size_t heads, std::size_t tokens,
                                            std::uint64_t seed) {
  Rng rng(seed);
  std::vector<AttentionRecord> out;
  for (std::size_t l = 0; l < layers; ++l)
    for (std::size_t h = 0; h < heads; ++h) {
      AttentionRecord r{l, h, 0, Tensor<double>({tokens, tokens})};
      for (std::size_t i = 0; i < tokens; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < tokens; ++j) s += (r.matrix[i * tokens + j] = rng.uniform() + 0.01);
        for (std::size_t j = 0; j < tokens; ++j) r.matrix[i * tokens + j] /= s;
      }
      out.push_back(std::move(r));
    }
  return out;
}

}  // namespace vit::checks
