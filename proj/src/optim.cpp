#include "vit/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace vit {

std::string to_string(DecayKind kind) { return kind == DecayKind::linear ? "linear" : "cosine"; }

DecayKind parse_decay_kind(const std::string& name) {
  if (name == "linear") return DecayKind::linear;
  if (name == "cosine") return DecayKind::cosine;
  throw ConfigError("unknown lr decay '" + name + "'");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "sgd_momentum"; }

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "sgd_momentum" || name == "sgd") return OptimizerKind::sgd_momentum;
  throw ConfigError("unknown optimizer '" + name + "'");
}

void Schedule::validate() const {
  if (!(base_lr >= 0.0) || !std::isfinite(base_lr)) throw ConfigError("base_lr must be finite and >= 0");
  if (total_steps > 0 && warmup_steps > total_steps) {
    throw ConfigError("warmup_steps (" + std::to_string(warmup_steps) + ") exceeds total_steps (" +
                      std::to_string(total_steps) + ")");
  }
}

double lr_at(std::size_t step, const Schedule& s) {
  if (s.total_steps == 0) throw ContractError("lr_at: schedule has no total_steps");
  step = std::min(step, s.total_steps);
  if (step < s.warmup_steps) return s.base_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  if (s.total_steps == s.warmup_steps) return s.base_lr;
  const double t =
      static_cast<double>(step - s.warmup_steps) / static_cast<double>(s.total_steps - s.warmup_steps);
  if (s.decay == DecayKind::linear) return s.base_lr * (1.0 - t);
  return s.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

void OptimConfig::validate() const {
  schedule.validate();
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("adam betas must be in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("adam eps must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(clip_norm >= 0.0)) throw ConfigError("clip_norm must be >= 0");
  if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) throw ConfigError("ema_decay must be in [0, 1]");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw ConfigError("label_smoothing must be in [0, 1)");
}

template <typename T>
TrainState<T> TrainState<T>::init(std::span<const Parameter<T>> params, const OptimConfig& cfg) {
  cfg.validate();
  TrainState s;
  s.cfg = cfg;
  for (const auto& p : params) {
    s.m.emplace_back(p.value.shape());
    if (cfg.kind == OptimizerKind::adam) s.v.emplace_back(p.value.shape());
    if (cfg.use_ema) s.ema.push_back(p.value);
  }
  return s;
}

template <typename T>
void TrainState<T>::check(std::span<const Parameter<T>> params) const {
  auto same = [&](const std::vector<Tensor<T>>& ts, bool needed, const char* what) {
    if (!needed) return;
    if (ts.size() != params.size()) {
      throw ContractError(std::string("train state ") + what + " holds " + std::to_string(ts.size()) +
                          " tensors for " + std::to_string(params.size()) + " parameters");
    }
    for (std::size_t i = 0; i < ts.size(); ++i) {
      if (ts[i].shape() != params[i].value.shape()) {
        throw ContractError(std::string("train state ") + what + " shape mismatch at '" + params[i].name + "'");
      }
    }
  };
  same(m, true, "first moment");
  same(v, cfg.kind == OptimizerKind::adam, "second moment");
  same(ema, cfg.use_ema, "ema");
}

template <typename T>
ClipResult clip_global_norm(std::span<Tensor<T>* const> grads, double max_norm) {
  if (!(max_norm > 0.0)) throw ParameterError("clip_global_norm: max_norm must be > 0");
  double sq = 0.0;
  for (const auto* g : grads) {
    for (T v : g->data()) sq += static_cast<double>(v) * static_cast<double>(v);
  }
  ClipResult r;
  r.norm = std::sqrt(sq);
  if (r.norm > max_norm) {
    r.scale = max_norm / r.norm;
    for (auto* g : grads) {
      for (auto& v : g->data()) v = static_cast<T>(static_cast<double>(v) * r.scale);
    }
  }
  return r;
}

namespace {

template <typename T>
void decoupled_decay(Parameter<T>& p, double lr, double wd) {
  if (!p.decay || wd == 0.0) return;
  const double f = 1.0 - lr * wd;
  for (auto& x : p.value.data()) x = static_cast<T>(static_cast<double>(x) * f);
}

template <typename T>
const Tensor<T>& grad_or_throw(const Parameter<T>& p) {
  if (p.grad.shape() != p.value.shape()) throw ContractError("parameter '" + p.name + "' has no gradient");
  return p.grad;
}

}  // namespace

template <typename T>
void adam_step(std::span<Parameter<T>> params, TrainState<T>& state, double lr) {
  state.check(params);
  const auto& c = state.cfg;
  const double t = static_cast<double>(state.step + 1);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter<T>& p = params[k];
    const Tensor<T>& g = grad_or_throw(p);
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double gi = g[i];
      const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = (mi / bc1) / (std::sqrt(vi / bc2) + c.eps);
      p.value[i] = static_cast<T>(p.value[i] - lr * update);
    }
    decoupled_decay(p, lr, c.weight_decay);
  }
}

template <typename T>
void sgd_momentum_step(std::span<Parameter<T>> params, TrainState<T>& state, double lr) {
  state.check(params);
  const double mu = state.cfg.momentum;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter<T>& p = params[k];
    const Tensor<T>& g = grad_or_throw(p);
    auto& vel = state.m[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double vi = mu * vel[i] + g[i];
      vel[i] = static_cast<T>(vi);
      p.value[i] = static_cast<T>(p.value[i] - lr * vi);
    }
    decoupled_decay(p, lr, state.cfg.weight_decay);
  }
}

template <typename T>
void ema_update(std::span<Tensor<T>> shadow, std::span<const Parameter<T>> params, double factor) {
  if (!(factor >= 0.0 && factor <= 1.0)) throw ParameterError("ema factor must be in [0, 1]");
  if (shadow.size() != params.size()) throw ContractError("ema shadow does not match parameter list");
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& s = shadow[k];
    const auto& p = params[k].value;
    if (s.shape() != p.shape()) throw ContractError("ema shadow shape mismatch at '" + params[k].name + "'");
    for (std::size_t i = 0; i < s.size(); ++i) {
      s[i] = static_cast<T>(factor * s[i] + (1.0 - factor) * p[i]);
    }
  }
}

namespace {

void check_smoothing(double smoothing) {
  if (!(smoothing >= 0.0 && smoothing < 1.0)) throw ParameterError("label smoothing must be in [0, 1)");
}

// loss for one row; writes softmax - target into grad when given
template <typename T>
double row_cross_entropy(const T* logits, std::size_t k, std::size_t label, double smoothing, double* grad) {
  if (label >= k) {
    throw InputError("label " + std::to_string(label) + " out of range for " + std::to_string(k) + " classes");
  }
  double mx = logits[0];
  for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(logits[j]));
  double z = 0.0;
  for (std::size_t j = 0; j < k; ++j) z += std::exp(logits[j] - mx);
  const double log_z = std::log(z) + mx;
  double loss = 0.0;
  const double off = smoothing / static_cast<double>(k);
  for (std::size_t j = 0; j < k; ++j) {
    const double target = off + (j == label ? 1.0 - smoothing : 0.0);
    const double logp = logits[j] - log_z;
    if (target > 0.0) loss -= target * logp;
    if (grad) grad[j] = std::exp(logp) - target;
  }
  return loss;
}

}  // namespace

CrossEntropyResult cross_entropy(std::span<const double> logits, std::size_t label, double smoothing) {
  check_smoothing(smoothing);
  if (logits.empty()) throw DimensionError("cross_entropy: empty logits");
  CrossEntropyResult r;
  r.grad.resize(logits.size());
  r.loss = row_cross_entropy(logits.data(), logits.size(), label, smoothing, r.grad.data());
  return r;
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<std::size_t>& labels, double smoothing) {
  check_smoothing(smoothing);
  const Shape& s = logits.shape();
  if (s.size() != 2 || s[0] != labels.size()) {
    throw DimensionError("cross_entropy: logits " + shape_str(s) + " vs " + std::to_string(labels.size()) +
                         " labels");
  }
  const std::size_t b = s[0], k = s[1];
  std::vector<double> dlogits(b * k);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    total += row_cross_entropy(logits.value().ptr() + i * k, k, labels[i], smoothing, dlogits.data() + i * k);
  }
  Tensor<T> out({1}, static_cast<T>(total / static_cast<double>(b)));
  return logits.tape().record(std::move(out), {logits}, [logits, dlogits, b](Tape<T>& tape, std::size_t self) {
    const double go = tape.grad(self)[0] / static_cast<double>(b);
    auto& gi = tape.grad(logits);
    for (std::size_t i = 0; i < dlogits.size(); ++i) gi[i] += static_cast<T>(go * dlogits[i]);
  });
}

template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& scores) {
  if (scores.rank() != 2) throw DimensionError("argmax_rows: expected a matrix, got " + shape_str(scores.shape()));
  const std::size_t n = scores.dim(0), k = scores.dim(1);
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = scores.ptr() + i * k;
    out[i] = static_cast<std::size_t>(std::max_element(row, row + k) - row);
  }
  return out;
}

template <typename T>
std::size_t count_correct(const Tensor<T>& logits, const std::vector<std::size_t>& labels) {
  const auto pred = argmax_rows(logits);
  if (pred.size() != labels.size()) throw DimensionError("count_correct: prediction/label count mismatch");
  std::size_t c = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) c += pred[i] == labels[i];
  return c;
}

template <typename T>
StepMetrics compute_gradients(ViTModel<T>& model, const Tensor<T>& images, const std::vector<std::size_t>& labels,
                              const GradientOptions& opts) {
  if (images.rank() != 4 || images.dim(0) != labels.size()) {
    throw DimensionError("compute_gradients: images " + shape_str(images.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t b = labels.size();
  const std::size_t chunk = opts.micro_batch == 0 ? b : std::min(opts.micro_batch, b);
  const std::size_t per_image = images.size() / b;
  auto& params = model.parameters();
  for (auto& p : params) p.zero_grad();

  StepMetrics m;
  std::size_t correct = 0;
  for (std::size_t start = 0, part = 0; start < b; start += chunk, ++part) {
    const std::size_t n = std::min(chunk, b - start);
    Shape shape = images.shape();
    shape[0] = n;
    Tensor<T> sub(shape);
    std::copy_n(images.ptr() + start * per_image, n * per_image, sub.ptr());
    const std::vector<std::size_t> sub_labels(labels.begin() + start, labels.begin() + start + n);

    Tape<T> tape(true);
    Rng rng = Rng::derive(opts.dropout_seed, {part});
    ForwardOptions<T> fo;
    fo.training = opts.training;
    fo.rng = &rng;
    auto logits = forward_logits(tape, model, sub, fo);
    auto loss = cross_entropy(logits, sub_labels, opts.label_smoothing);
    const double lv = loss.value()[0];
    if (!std::isfinite(lv)) throw NumericError("non-finite loss " + std::to_string(lv));
    tape.backward(loss);

    const double w = static_cast<double>(n) / static_cast<double>(b);
    for (auto& p : params) {
      const Tensor<T>* g = tape.grad_of(p);
      if (!g) continue;
      for (std::size_t i = 0; i < g->size(); ++i) p.grad[i] += static_cast<T>(w * (*g)[i]);
    }
    m.loss += w * lv;
    correct += count_correct(logits.value(), sub_labels);
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(b);
  return m;
}

template <typename T>
void apply_update(std::span<Parameter<T>> params, TrainState<T>& state, StepMetrics& metrics) {
  const auto& c = state.cfg;
  metrics.lr = lr_at(state.step, c.schedule);
  std::vector<Tensor<T>*> grads;
  for (auto& p : params) {
    if (p.grad.shape() != p.value.shape()) p.zero_grad();
    grads.push_back(&p.grad);
  }
  if (c.clip_norm > 0.0) {
    metrics.grad_norm = clip_global_norm(std::span<Tensor<T>* const>(grads), c.clip_norm).norm;
  } else {
    double sq = 0.0;
    for (const auto* g : grads)
      for (T v : g->data()) sq += static_cast<double>(v) * v;
    metrics.grad_norm = std::sqrt(sq);
  }
  if (!std::isfinite(metrics.grad_norm)) throw NumericError("non-finite gradient norm");
  if (c.kind == OptimizerKind::adam) adam_step(params, state, metrics.lr);
  else sgd_momentum_step(params, state, metrics.lr);
  if (c.use_ema) ema_update(std::span<Tensor<T>>(state.ema), std::span<const Parameter<T>>(params), c.ema_decay);
  ++state.step;
}

template <typename T>
StepMetrics train_step(ViTModel<T>& model, const Tensor<T>& images, const std::vector<std::size_t>& labels,
                       TrainState<T>& state, std::uint64_t seed, std::size_t micro_batch) {
  GradientOptions opts;
  opts.training = true;
  opts.label_smoothing = state.cfg.label_smoothing;
  opts.micro_batch = micro_batch;
  opts.dropout_seed = Rng::derive(seed, {state.step}).next_u64();
  StepMetrics m = compute_gradients(model, images, labels, opts);
  apply_update(std::span<Parameter<T>>(model.parameters()), state, m);
  return m;
}

template <typename T>
void load_ema(ViTModel<T>& model, const TrainState<T>& state) {
  auto& params = model.parameters();
  if (!state.cfg.use_ema) throw ContractError("train state keeps no EMA shadow");
  state.check(params);
  for (std::size_t i = 0; i < params.size(); ++i) params[i].value = state.ema[i];
}

#define VIT_INSTANTIATE_OPTIM(T)                                                                                  \
  template struct TrainState<T>;                                                                                  \
  template ClipResult clip_global_norm(std::span<Tensor<T>* const>, double);                                      \
  template void adam_step(std::span<Parameter<T>>, TrainState<T>&, double);                                       \
  template void sgd_momentum_step(std::span<Parameter<T>>, TrainState<T>&, double);                               \
  template void ema_update(std::span<Tensor<T>>, std::span<const Parameter<T>>, double);                          \
  template Var<T> cross_entropy(const Var<T>&, const std::vector<std::size_t>&, double);                          \
  template std::vector<std::size_t> argmax_rows(const Tensor<T>&);                                                \
  template std::size_t count_correct(const Tensor<T>&, const std::vector<std::size_t>&);                          \
  template StepMetrics compute_gradients(ViTModel<T>&, const Tensor<T>&, const std::vector<std::size_t>&,         \
                                         const GradientOptions&);                                                 \
  template void apply_update(std::span<Parameter<T>>, TrainState<T>&, StepMetrics&);                              \
  template StepMetrics train_step(ViTModel<T>&, const Tensor<T>&, const std::vector<std::size_t>&, TrainState<T>&, \
                                  std::uint64_t, std::size_t);                                                    \
  template void load_ema(ViTModel<T>&, const TrainState<T>&);

VIT_INSTANTIATE_OPTIM(float)
VIT_INSTANTIATE_OPTIM(double)

}  // namespace vit
