#include "vit/encoder.hpp"

#include <cmath>
#include <regex>

namespace vit {

std::string to_string(HeadMode mode) {
  return mode == HeadMode::pretrain_mlp ? "pretrain_mlp" : "finetune_linear";
}

HeadMode parse_head_mode(const std::string& name) {
  if (name == "pretrain_mlp") return HeadMode::pretrain_mlp;
  if (name == "finetune_linear") return HeadMode::finetune_linear;
  throw ConfigError("unknown head mode '" + name + "'");
}

std::size_t StemSpec::total_stride() const {
  std::size_t s = 1;
  for (const auto& st : stages) s *= st.stride;
  return s;
}

std::size_t StemSpec::out_channels(std::size_t in_channels) const {
  return stages.empty() ? in_channels : stages.back().out_channels;
}

StemSpec StemSpec::defaults() {
  StemSpec s;
  s.stages = {{3, 2, 32, 8}, {3, 2, 64, 8}, {3, 2, 128, 8}};
  s.weight_standardize = true;
  return s;
}

std::size_t ViTConfig::feature_h() const { return hybrid ? image_h / stem.total_stride() : image_h; }
std::size_t ViTConfig::feature_w() const { return hybrid ? image_w / stem.total_stride() : image_w; }
std::size_t ViTConfig::feature_channels() const { return hybrid ? stem.out_channels(channels) : channels; }

PatchifyConfig ViTConfig::patchify() const {
  return {feature_h(), feature_w(), feature_channels(), patch_size, dim};
}

void ViTConfig::validate() const {
  if (layers < 1) throw ConfigError("layers must be >= 1");
  if (dim < 1 || mlp_dim < 1) throw ConfigError("dim and mlp_dim must be >= 1");
  if (heads < 1 || dim % heads != 0) {
    throw ConfigError("heads (" + std::to_string(heads) + ") must divide dim (" + std::to_string(dim) + ")");
  }
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0) || !(attention_dropout >= 0.0 && attention_dropout < 1.0)) {
    throw ConfigError("dropout rates must be in [0, 1)");
  }
  if (positional == PositionalKind::learned_2d && dim % 2 != 0) {
    throw ConfigError("learned_2d positional embedding requires an even dim");
  }
  if (hybrid) {
    if (stem.stages.empty()) throw ConfigError("hybrid model needs at least one stem stage");
    std::size_t h = image_h, w = image_w, c = channels;
    for (std::size_t i = 0; i < stem.stages.size(); ++i) {
      const auto& st = stem.stages[i];
      if (st.kernel == 0 || st.stride == 0 || st.out_channels == 0) {
        throw ConfigError("stem stage " + std::to_string(i) + " has a zero kernel, stride or width");
      }
      if (st.groups == 0 || st.out_channels % st.groups != 0) {
        throw ConfigError("stem stage " + std::to_string(i) + ": " + std::to_string(st.groups) +
                          " groups do not divide " + std::to_string(st.out_channels) + " channels");
      }
      const std::size_t pad = st.kernel / 2;
      if (h % st.stride != 0 || w % st.stride != 0 || (h + 2 * pad - st.kernel) / st.stride + 1 != h / st.stride ||
          (w + 2 * pad - st.kernel) / st.stride + 1 != w / st.stride) {
        throw ConfigError("stem stage " + std::to_string(i) + " output does not tile the " + std::to_string(h) +
                          "x" + std::to_string(w) + " input by stride " + std::to_string(st.stride));
      }
      h /= st.stride;
      w /= st.stride;
      c = st.out_channels;
    }
    (void)c;
  }
  patchify().validate();
}

ViTConfig preset_config(const std::string& name, std::size_t num_classes, std::size_t image_size) {
  static const std::regex re(R"(ViT-([BLH])/(\d+))");
  std::smatch m;
  if (!std::regex_match(name, m, re)) throw ConfigError("unknown model preset '" + name + "'");
  ViTConfig cfg;
  const char size = m[1].str()[0];
  if (size == 'B') {
    cfg.layers = 12, cfg.dim = 768, cfg.mlp_dim = 3072, cfg.heads = 12;
  } else if (size == 'L') {
    cfg.layers = 24, cfg.dim = 1024, cfg.mlp_dim = 4096, cfg.heads = 16;
  } else {
    cfg.layers = 32, cfg.dim = 1280, cfg.mlp_dim = 5120, cfg.heads = 16;
  }
  cfg.patch_size = std::stoul(m[2].str());
  cfg.image_h = cfg.image_w = image_size;
  cfg.channels = 3;
  cfg.num_classes = num_classes;
  cfg.head = HeadMode::finetune_linear;
  cfg.validate();
  return cfg;
}

std::vector<ParamSpec> parameter_layout(const ViTConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> out;
  auto add = [&](std::string name, Shape shape, bool decay, Init init) {
    out.push_back({std::move(name), std::move(shape), decay, init});
  };
  const std::size_t d = cfg.dim;
  if (cfg.hybrid) {
    std::size_t cin = cfg.channels;
    for (std::size_t i = 0; i < cfg.stem.stages.size(); ++i) {
      const auto& st = cfg.stem.stages[i];
      const std::string pre = "stem/stage" + std::to_string(i) + "/";
      add(pre + "conv", {st.kernel, st.kernel, cin, st.out_channels}, true, Init::he_normal);
      add(pre + "gn_gain", {st.out_channels}, false, Init::ones);
      add(pre + "gn_bias", {st.out_channels}, false, Init::zeros);
      cin = st.out_channels;
    }
  }
  const PatchifyConfig pc = cfg.patchify();
  add("embed/projection", {pc.patch_dim(), d}, true, Init::trunc_normal);
  add("embed/bias", {d}, false, Init::zeros);
  add("embed/class_token", {d}, false, Init::zeros);
  switch (cfg.positional) {
    case PositionalKind::learned_1d:
      add("pos/table", {cfg.seq_len(), d}, false, Init::trunc_normal);
      break;
    case PositionalKind::learned_2d:
      add("pos/x_table", {cfg.grid_w(), d / 2}, false, Init::trunc_normal);
      add("pos/y_table", {cfg.grid_h(), d / 2}, false, Init::trunc_normal);
      add("pos/class", {d}, false, Init::trunc_normal);
      break;
    case PositionalKind::none:
    case PositionalKind::relative:
      break;
  }
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string pre = "block" + std::to_string(l) + "/";
    add(pre + "ln1/gain", {d}, false, Init::ones);
    add(pre + "ln1/bias", {d}, false, Init::zeros);
    add(pre + "attn/qkv_w", {d, 3 * d}, true, Init::trunc_normal);
    if (cfg.qkv_bias) add(pre + "attn/qkv_b", {3 * d}, false, Init::zeros);
    add(pre + "attn/out_w", {d, d}, true, Init::trunc_normal);
    add(pre + "attn/out_b", {d}, false, Init::zeros);
    if (cfg.positional == PositionalKind::relative) {
      add(pre + "attn/rel_table", {relative_table_rows(cfg.grid_h(), cfg.grid_w()), d}, false, Init::trunc_normal);
    }
    add(pre + "ln2/gain", {d}, false, Init::ones);
    add(pre + "ln2/bias", {d}, false, Init::zeros);
    add(pre + "mlp/w1", {d, cfg.mlp_dim}, true, Init::trunc_normal);
    add(pre + "mlp/b1", {cfg.mlp_dim}, false, Init::zeros);
    add(pre + "mlp/w2", {cfg.mlp_dim, d}, true, Init::trunc_normal);
    add(pre + "mlp/b2", {d}, false, Init::zeros);
  }
  add("final_ln/gain", {d}, false, Init::ones);
  add("final_ln/bias", {d}, false, Init::zeros);
  if (cfg.head == HeadMode::pretrain_mlp) {
    add("head/hidden_w", {d, d}, true, Init::trunc_normal);
    add("head/hidden_b", {d}, false, Init::zeros);
    add("head/out_w", {d, cfg.num_classes}, true, Init::trunc_normal);
  } else {
    add("head/out_w", {d, cfg.num_classes}, true, Init::zeros);
  }
  add("head/out_b", {cfg.num_classes}, false, Init::zeros);
  if (cfg.mpp) {
    add("mpp/mask_embedding", {d}, false, Init::trunc_normal);
    add("mpp/head_w", {d, 512}, true, Init::trunc_normal);
    add("mpp/head_b", {512}, false, Init::zeros);
  }
  return out;
}

ParameterReport count_parameters(std::span<const ParamSpec> layout) {
  ParameterReport r;
  for (const auto& p : layout) {
    const std::size_t n = shape_size(p.shape);
    std::string comp = p.name.substr(0, p.name.find('/'));
    if (comp.rfind("block", 0) == 0) comp = "blocks";
    r.total += n;
    auto it = std::find_if(r.components.begin(), r.components.end(), [&](const auto& c) { return c.first == comp; });
    if (it == r.components.end()) r.components.emplace_back(comp, n);
    else it->second += n;
  }
  return r;
}

ParameterReport count_parameters(const ViTConfig& cfg) {
  const auto layout = parameter_layout(cfg);
  return count_parameters(std::span<const ParamSpec>(layout));
}

namespace {

template <typename T>
Tensor<T> init_tensor(const ParamSpec& spec, Rng& rng) {
  Tensor<T> t(spec.shape);
  switch (spec.init) {
    case Init::zeros:
      break;
    case Init::ones:
      t.fill(T(1));
      break;
    case Init::trunc_normal:
      for (auto& v : t.data()) v = static_cast<T>(rng.truncated_normal(0.02));
      break;
    case Init::he_normal: {
      const double fan_in = static_cast<double>(t.size() / spec.shape.back());
      const double std = std::sqrt(2.0 / fan_in);
      for (auto& v : t.data()) v = static_cast<T>(rng.truncated_normal(std));
      break;
    }
  }
  return t;
}

}  // namespace

template <typename T>
ViTModel<T>::ViTModel(const ViTConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  Rng rng(seed);
  for (const auto& spec : parameter_layout(cfg_)) {
    params_.push_back(Parameter<T>{spec.name, init_tensor<T>(spec, rng), Tensor<T>{}, spec.decay});
  }
  reindex();
}

template <typename T>
void ViTModel<T>::reindex() {
  index_.clear();
  for (std::size_t i = 0; i < params_.size(); ++i) index_[params_[i].name] = i;
}

template <typename T>
template <typename Fill>
void ViTModel<T>::rebuild(const ViTConfig& cfg, Fill&& fill) {
  std::vector<Parameter<T>> next;
  for (const auto& spec : parameter_layout(cfg)) {
    auto it = index_.find(spec.name);
    Tensor<T> value;
    if (it != index_.end() && params_[it->second].value.shape() == spec.shape) value = std::move(params_[it->second].value);
    else value = fill(spec);
    next.push_back(Parameter<T>{spec.name, std::move(value), Tensor<T>{}, spec.decay});
  }
  cfg_ = cfg;
  params_ = std::move(next);
  reindex();
}

template <typename T>
std::vector<Parameter<T>*> ViTModel<T>::parameter_ptrs() {
  std::vector<Parameter<T>*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

template <typename T>
Parameter<T>& ViTModel<T>::param(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("model has no parameter '" + name + "'");
  return params_[it->second];
}

template <typename T>
const Parameter<T>& ViTModel<T>::param(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("model has no parameter '" + name + "'");
  return params_[it->second];
}

template <typename T>
const Parameter<T>* ViTModel<T>::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

template <typename T>
EmbeddingParams<T> ViTModel<T>::embedding() const {
  return {&param("embed/projection"), &param("embed/bias"), &param("embed/class_token")};
}

template <typename T>
PositionalParams<T> ViTModel<T>::positional() const {
  PositionalParams<T> p;
  p.kind = cfg_.positional;
  p.table = find("pos/table");
  p.x_table = find("pos/x_table");
  p.y_table = find("pos/y_table");
  p.class_pos = find("pos/class");
  return p;
}

template <typename T>
MSAParams<T> ViTModel<T>::attention(std::size_t layer) const {
  const std::string pre = "block" + std::to_string(layer) + "/attn/";
  MSAParams<T> m;
  m.heads = cfg_.heads;
  m.qkv_w = &param(pre + "qkv_w");
  m.qkv_b = find(pre + "qkv_b");
  m.out_w = &param(pre + "out_w");
  m.out_b = &param(pre + "out_b");
  m.rel_table = find(pre + "rel_table");
  return m;
}

template <typename T>
BlockParams<T> ViTModel<T>::block(std::size_t layer) const {
  const std::string pre = "block" + std::to_string(layer) + "/";
  BlockParams<T> b;
  b.ln1_gain = &param(pre + "ln1/gain");
  b.ln1_bias = &param(pre + "ln1/bias");
  b.msa = attention(layer);
  b.ln2_gain = &param(pre + "ln2/gain");
  b.ln2_bias = &param(pre + "ln2/bias");
  b.mlp_w1 = &param(pre + "mlp/w1");
  b.mlp_b1 = &param(pre + "mlp/b1");
  b.mlp_w2 = &param(pre + "mlp/w2");
  b.mlp_b2 = &param(pre + "mlp/b2");
  return b;
}

template <typename T>
HeadParams<T> ViTModel<T>::head() const {
  HeadParams<T> h;
  h.mode = cfg_.head;
  h.hidden_w = find("head/hidden_w");
  h.hidden_b = find("head/hidden_b");
  h.out_w = &param("head/out_w");
  h.out_b = &param("head/out_b");
  return h;
}

template <typename T>
StemParams<T> ViTModel<T>::stem() const {
  StemParams<T> s;
  s.spec = cfg_.stem;
  for (std::size_t i = 0; i < cfg_.stem.stages.size(); ++i) {
    const std::string pre = "stem/stage" + std::to_string(i) + "/";
    s.conv.push_back(&param(pre + "conv"));
    s.gn_gain.push_back(&param(pre + "gn_gain"));
    s.gn_bias.push_back(&param(pre + "gn_bias"));
  }
  return s;
}

template <typename T>
std::size_t ViTModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
void ViTModel<T>::set_head(HeadMode mode, std::size_t num_classes, bool zero_init, std::uint64_t seed) {
  ViTConfig next = cfg_;
  next.head = mode;
  next.num_classes = num_classes;
  std::erase_if(params_, [](const Parameter<T>& p) { return p.name.rfind("head/", 0) == 0; });
  reindex();
  Rng rng(seed);
  rebuild(next, [&](const ParamSpec& spec) {
    return zero_init ? Tensor<T>(spec.shape) : init_tensor<T>(spec, rng);
  });
}

template <typename T>
void ViTModel<T>::set_mpp(bool enabled, std::uint64_t seed) {
  ViTConfig next = cfg_;
  next.mpp = enabled;
  Rng rng(seed);
  rebuild(next, [&](const ParamSpec& spec) { return init_tensor<T>(spec, rng); });
}

template <typename T>
void ViTModel<T>::resize(std::size_t image_h, std::size_t image_w) {
  ViTConfig next = cfg_;
  next.image_h = image_h;
  next.image_w = image_w;
  next.validate();
  const std::size_t gh = cfg_.grid_h(), gw = cfg_.grid_w();
  const std::size_t nh = next.grid_h(), nw = next.grid_w();
  if (gh == nh && gw == nw) {
    cfg_ = next;
    return;
  }
  std::unordered_map<std::string, Tensor<T>> old;
  for (const auto& p : params_) {
    if (p.name.rfind("pos/", 0) == 0 || p.name.ends_with("/rel_table")) old[p.name] = p.value;
  }
  const std::size_t d = cfg_.dim;
  rebuild(next, [&](const ParamSpec& spec) -> Tensor<T> {
    const Tensor<T>& src = old.at(spec.name);
    if (spec.name == "pos/table") return interpolate_positional(src, gh, gw, nh, nw);
    if (spec.name == "pos/x_table") {
      return bilinear_resize(src.reshaped({1, gw, d / 2}), 1, nw).reshaped({nw, d / 2});
    }
    if (spec.name == "pos/y_table") {
      return bilinear_resize(src.reshaped({1, gh, d / 2}), 1, nh).reshaped({nh, d / 2});
    }
    // relative table: resample the 2-D offset grid, keep the class row
    const std::size_t oh = 2 * gh - 1, ow = 2 * gw - 1, th = 2 * nh - 1, tw = 2 * nw - 1;
    Tensor<T> grid({oh, ow, d});
    std::copy_n(src.ptr(), oh * ow * d, grid.ptr());
    const Tensor<T> resized = bilinear_resize(grid, th, tw);
    Tensor<T> out(spec.shape);
    std::copy(resized.data().begin(), resized.data().end(), out.data().begin());
    std::copy_n(src.ptr() + oh * ow * d, d, out.ptr() + th * tw * d);
    return out;
  });
}

template <typename T>
Var<T> encoder_block(Tape<T>& tape, const Var<T>& z, const BlockParams<T>& p, const AttentionContext<T>& ctx,
                     double dropout, T ln_eps) {
  auto drop = [&](const Var<T>& x) {
    if (!ctx.training || dropout == 0.0) return x;
    if (!ctx.rng) throw ContractError("dropout requires an rng in training mode");
    return ops::dropout(x, dropout, *ctx.rng, true);
  };
  auto h = ops::layer_norm(z, tape.param(*p.ln1_gain), tape.param(*p.ln1_bias), ln_eps);
  auto attn = drop(multi_head(tape, h, p.msa, ctx));
  auto z1 = ops::add(attn, z);
  auto h2 = ops::layer_norm(z1, tape.param(*p.ln2_gain), tape.param(*p.ln2_bias), ln_eps);
  auto m = drop(ops::gelu(ops::linear(h2, tape.param(*p.mlp_w1), tape.param(*p.mlp_b1))));
  m = drop(ops::linear(m, tape.param(*p.mlp_w2), tape.param(*p.mlp_b2)));
  return ops::add(m, z1);
}

template <typename T>
Var<T> hybrid_stem(Tape<T>& tape, const Var<T>& images, const StemParams<T>& params) {
  Var<T> x = images;
  for (std::size_t i = 0; i < params.spec.stages.size(); ++i) {
    const auto& st = params.spec.stages[i];
    auto w = tape.param(*params.conv[i]);
    if (params.spec.weight_standardize) w = ops::weight_standardize(w);
    x = ops::conv2d(x, w, st.stride, st.kernel / 2);
    x = ops::group_norm(x, tape.param(*params.gn_gain[i]), tape.param(*params.gn_bias[i]), st.groups);
    x = ops::gelu(x);
  }
  return x;
}

template <typename T>
Var<T> forward_tokens(Tape<T>& tape, const ViTModel<T>& model, const Tensor<T>& images,
                      const ForwardOptions<T>& opts) {
  const ViTConfig& cfg = model.config();
  if (images.rank() != 4 || images.dim(1) != cfg.image_h || images.dim(2) != cfg.image_w ||
      images.dim(3) != cfg.channels) {
    throw DimensionError("forward: images " + shape_str(images.shape()) + " do not match model input " +
                         std::to_string(cfg.image_h) + "x" + std::to_string(cfg.image_w) + "x" +
                         std::to_string(cfg.channels));
  }
  if (opts.training && (cfg.dropout > 0.0 || cfg.attention_dropout > 0.0) && !opts.rng) {
    throw ContractError("training-mode dropout requires an rng");
  }
  Var<T> x = tape.constant(images);
  if (cfg.hybrid) x = hybrid_stem(tape, x, model.stem());
  auto patches = patchify(x, cfg.patch_size);
  auto z = embed(tape, patches, model.embedding(), model.positional(), cfg.grid_h(), cfg.grid_w(),
                 opts.patch_transform);
  if (opts.training && cfg.dropout > 0.0) z = ops::dropout(z, cfg.dropout, *opts.rng, true);

  std::vector<std::size_t> rel_index;
  if (cfg.positional == PositionalKind::relative) rel_index = relative_offset_index(cfg.grid_h(), cfg.grid_w());
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    AttentionContext<T> ctx;
    ctx.layer = l;
    ctx.image_offset = opts.image_offset;
    ctx.sink = opts.sink;
    ctx.dropout = cfg.attention_dropout;
    ctx.training = opts.training;
    ctx.rng = opts.rng;
    ctx.rel_index = rel_index.empty() ? nullptr : &rel_index;
    z = encoder_block(tape, z, model.block(l), ctx, cfg.dropout, static_cast<T>(cfg.ln_eps));
  }
  return ops::layer_norm(z, tape.param(model.param("final_ln/gain")), tape.param(model.param("final_ln/bias")),
                         static_cast<T>(cfg.ln_eps));
}

template <typename T>
Var<T> class_token_state(const Var<T>& tokens) {
  const Shape& s = tokens.shape();
  return ops::reshape(ops::narrow(tokens, 1, 0, 1), {s[0], s[2]});
}

template <typename T>
Var<T> encode(Tape<T>& tape, const ViTModel<T>& model, const Tensor<T>& images, const ForwardOptions<T>& opts) {
  return class_token_state(forward_tokens(tape, model, images, opts));
}

template <typename T>
Var<T> classify(Tape<T>& tape, const Var<T>& y, const HeadParams<T>& head, double dropout, bool training, Rng* rng) {
  const std::size_t d = y.shape().back();
  if (head.out_w->value.rank() != 2 || head.out_b->value.size() != head.out_w->value.dim(1)) {
    throw DimensionError("classify: head weight " + shape_str(head.out_w->value.shape()) + " and bias " +
                         shape_str(head.out_b->value.shape()) + " disagree on K");
  }
  Var<T> h = y;
  if (head.mode == HeadMode::pretrain_mlp) {
    if (!head.hidden_w || !head.hidden_b) throw ConfigError("pretrain head is missing its hidden layer");
    h = ops::tanh(ops::linear(y, tape.param(*head.hidden_w), tape.param(*head.hidden_b)));
    if (training && dropout > 0.0) {
      if (!rng) throw ContractError("dropout requires an rng in training mode");
      h = ops::dropout(h, dropout, *rng, true);
    }
  }
  if (head.out_w->value.dim(0) != d) {
    throw DimensionError("classify: representation dim " + std::to_string(d) + " vs head " +
                         shape_str(head.out_w->value.shape()));
  }
  return ops::linear(h, tape.param(*head.out_w), tape.param(*head.out_b));
}

template <typename T>
Var<T> forward_logits(Tape<T>& tape, const ViTModel<T>& model, const Tensor<T>& images,
                      const ForwardOptions<T>& opts) {
  auto y = encode(tape, model, images, opts);
  return classify(tape, y, model.head(), model.config().dropout, opts.training, opts.rng);
}

template <typename T>
Tensor<T> predict_logits(const ViTModel<T>& model, const Tensor<T>& images) {
  Tape<T> tape(false);
  return forward_logits(tape, model, images).value();
}

template <typename T>
Tensor<T> represent(const ViTModel<T>& model, const Tensor<T>& images, AttentionSink* sink, std::size_t image_offset) {
  Tape<T> tape(false);
  ForwardOptions<T> opts;
  opts.sink = sink;
  opts.image_offset = image_offset;
  return encode(tape, model, images, opts).value();
}

template class ViTModel<float>;
template class ViTModel<double>;

#define VIT_INSTANTIATE_ENCODER(T)                                                                                \
  template Var<T> encoder_block(Tape<T>&, const Var<T>&, const BlockParams<T>&, const AttentionContext<T>&,       \
                                double, T);                                                                       \
  template Var<T> hybrid_stem(Tape<T>&, const Var<T>&, const StemParams<T>&);                                     \
  template Var<T> forward_tokens(Tape<T>&, const ViTModel<T>&, const Tensor<T>&, const ForwardOptions<T>&);       \
  template Var<T> class_token_state(const Var<T>&);                                                               \
  template Var<T> encode(Tape<T>&, const ViTModel<T>&, const Tensor<T>&, const ForwardOptions<T>&);               \
  template Var<T> classify(Tape<T>&, const Var<T>&, const HeadParams<T>&, double, bool, Rng*);                    \
  template Var<T> forward_logits(Tape<T>&, const ViTModel<T>&, const Tensor<T>&, const ForwardOptions<T>&);       \
  template Tensor<T> predict_logits(const ViTModel<T>&, const Tensor<T>&);                                        \
  template Tensor<T> represent(const ViTModel<T>&, const Tensor<T>&, AttentionSink*, std::size_t);

VIT_INSTANTIATE_ENCODER(float)
VIT_INSTANTIATE_ENCODER(double)

}  // namespace vit
