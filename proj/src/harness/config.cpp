#include "vit/harness/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace vit {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected an unsigned integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::string fmt(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

std::string fmt(std::size_t v) { return std::to_string(v); }
std::string fmt_bool(bool v) { return v ? "true" : "false"; }

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

void set_stem_channels(StemSpec& stem, const std::vector<std::size_t>& channels) {
  const StemStage proto = stem.stages.empty() ? StemStage{} : stem.stages.front();
  stem.stages.assign(channels.size(), proto);
  for (std::size_t i = 0; i < channels.size(); ++i) stem.stages[i].out_channels = channels[i];
}

enum class Group { model, optim, mpp, run };

struct Field {
  std::string key;
  Group group;
  std::string doc;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SIZE_FIELD(KEY, GROUP, MEMBER, DOC)                                                                    \
  Field { KEY, GROUP, DOC, [](RunConfig& c, const std::string& v) { c.MEMBER = parse_size(KEY, v); },         \
          [](const RunConfig& c) { return fmt(static_cast<std::size_t>(c.MEMBER)); } }
#define DOUBLE_FIELD(KEY, GROUP, MEMBER, DOC)                                                                  \
  Field { KEY, GROUP, DOC, [](RunConfig& c, const std::string& v) { c.MEMBER = parse_double(KEY, v); },       \
          [](const RunConfig& c) { return fmt(c.MEMBER); } }
#define BOOL_FIELD(KEY, GROUP, MEMBER, DOC)                                                                    \
  Field { KEY, GROUP, DOC, [](RunConfig& c, const std::string& v) { c.MEMBER = parse_bool(KEY, v); },         \
          [](const RunConfig& c) { return fmt_bool(c.MEMBER); } }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      SIZE_FIELD("image_h", Group::model, model.image_h, "input height in pixels"),
      SIZE_FIELD("image_w", Group::model, model.image_w, "input width in pixels"),
      SIZE_FIELD("channels", Group::model, model.channels, "input channels"),
      SIZE_FIELD("patch_size", Group::model, model.patch_size, "patch side (on the stem output when hybrid)"),
      SIZE_FIELD("layers", Group::model, model.layers, "encoder blocks"),
      SIZE_FIELD("dim", Group::model, model.dim, "token width D"),
      SIZE_FIELD("mlp_dim", Group::model, model.mlp_dim, "MLP hidden width"),
      SIZE_FIELD("heads", Group::model, model.heads, "attention heads (must divide dim)"),
      DOUBLE_FIELD("dropout", Group::model, model.dropout, "dropout after dense layers and positional add"),
      DOUBLE_FIELD("attention_dropout", Group::model, model.attention_dropout, "dropout on attention weights"),
      Field{"positional", Group::model, "none | learned_1d | learned_2d | relative",
            [](RunConfig& c, const std::string& v) { c.model.positional = parse_positional_kind(v); },
            [](const RunConfig& c) { return to_string(c.model.positional); }},
      Field{"head", Group::model, "pretrain_mlp | finetune_linear",
            [](RunConfig& c, const std::string& v) { c.model.head = parse_head_mode(v); },
            [](const RunConfig& c) { return to_string(c.model.head); }},
      SIZE_FIELD("num_classes", Group::model, model.num_classes, "classifier outputs K"),
      BOOL_FIELD("qkv_bias", Group::model, model.qkv_bias, "bias on the qkv projection"),
      BOOL_FIELD("hybrid", Group::model, model.hybrid, "convolutional stem before patching"),
      Field{"stem_channels", Group::model, "comma list, one conv stage per entry",
            [](RunConfig& c, const std::string& v) {
              std::vector<std::size_t> ch;
              for (const auto& s : split_list(v)) ch.push_back(parse_size("stem_channels", s));
              set_stem_channels(c.model.stem, ch);
            },
            [](const RunConfig& c) {
              std::string s;
              for (const auto& st : c.model.stem.stages) s += (s.empty() ? "" : ",") + std::to_string(st.out_channels);
              return s;
            }},
      Field{"stem_kernel", Group::model, "conv kernel side, every stage",
            [](RunConfig& c, const std::string& v) {
              for (auto& st : c.model.stem.stages) st.kernel = parse_size("stem_kernel", v);
            },
            [](const RunConfig& c) { return fmt(c.model.stem.stages.empty() ? 3 : c.model.stem.stages[0].kernel); }},
      Field{"stem_stride", Group::model, "conv stride, every stage",
            [](RunConfig& c, const std::string& v) {
              for (auto& st : c.model.stem.stages) st.stride = parse_size("stem_stride", v);
            },
            [](const RunConfig& c) { return fmt(c.model.stem.stages.empty() ? 2 : c.model.stem.stages[0].stride); }},
      Field{"stem_groups", Group::model, "GroupNorm groups, every stage",
            [](RunConfig& c, const std::string& v) {
              for (auto& st : c.model.stem.stages) st.groups = parse_size("stem_groups", v);
            },
            [](const RunConfig& c) { return fmt(c.model.stem.stages.empty() ? 8 : c.model.stem.stages[0].groups); }},
      BOOL_FIELD("weight_standardize", Group::model, model.stem.weight_standardize, "standardize stem conv filters"),
      BOOL_FIELD("mpp", Group::model, model.mpp, "masked-patch-prediction parameters present"),
      DOUBLE_FIELD("ln_eps", Group::model, model.ln_eps, "LayerNorm epsilon"),

      Field{"optimizer", Group::optim, "adam | sgd_momentum",
            [](RunConfig& c, const std::string& v) { c.optim.kind = parse_optimizer_kind(v); },
            [](const RunConfig& c) { return to_string(c.optim.kind); }},
      DOUBLE_FIELD("lr", Group::optim, optim.schedule.base_lr, "base learning rate"),
      SIZE_FIELD("warmup_steps", Group::optim, optim.schedule.warmup_steps, "linear warmup steps"),
      SIZE_FIELD("total_steps", Group::optim, optim.schedule.total_steps,
                 "schedule length (0 = number of training steps)"),
      Field{"lr_decay", Group::optim, "linear | cosine",
            [](RunConfig& c, const std::string& v) { c.optim.schedule.decay = parse_decay_kind(v); },
            [](const RunConfig& c) { return to_string(c.optim.schedule.decay); }},
      DOUBLE_FIELD("beta1", Group::optim, optim.beta1, "Adam first-moment decay"),
      DOUBLE_FIELD("beta2", Group::optim, optim.beta2, "Adam second-moment decay"),
      DOUBLE_FIELD("adam_eps", Group::optim, optim.eps, "Adam epsilon"),
      DOUBLE_FIELD("momentum", Group::optim, optim.momentum, "SGD momentum"),
      DOUBLE_FIELD("weight_decay", Group::optim, optim.weight_decay, "decoupled weight decay on weight matrices"),
      DOUBLE_FIELD("clip_norm", Group::optim, optim.clip_norm, "global gradient-norm clip (0 = off)"),
      BOOL_FIELD("ema", Group::optim, optim.use_ema, "keep a parameter moving average"),
      DOUBLE_FIELD("ema_decay", Group::optim, optim.ema_decay, "moving-average factor"),
      DOUBLE_FIELD("label_smoothing", Group::optim, optim.label_smoothing, "label smoothing"),

      DOUBLE_FIELD("corruption_rate", Group::mpp, mpp.corruption_rate, "fraction of patches corrupted"),
      DOUBLE_FIELD("mpp_mask", Group::mpp, mpp.p_mask, "share replaced by the mask embedding"),
      DOUBLE_FIELD("mpp_random", Group::mpp, mpp.p_random, "share replaced by another patch"),
      DOUBLE_FIELD("mpp_keep", Group::mpp, mpp.p_keep, "share left unchanged"),

      Field{"seed", Group::run, "master seed",
            [](RunConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); },
            [](const RunConfig& c) { return std::to_string(c.seed); }},
      Field{"dataset", Group::run, "synthetic | cifar10",
            [](RunConfig& c, const std::string& v) {
              if (v != "synthetic" && v != "cifar10") throw ConfigError("dataset: unknown '" + v + "'");
              c.dataset = v;
            },
            [](const RunConfig& c) { return c.dataset; }},
      Field{"data_dir", Group::run, "CIFAR-10 binary directory",
            [](RunConfig& c, const std::string& v) { c.data_dir = v; },
            [](const RunConfig& c) { return c.data_dir; }},
      SIZE_FIELD("train_limit", Group::run, train_limit, "use only the first n training images (0 = all)"),
      SIZE_FIELD("test_limit", Group::run, test_limit, "use only the first n test images (0 = all)"),
      SIZE_FIELD("synthetic_train", Group::run, synthetic_train, "synthetic training images"),
      SIZE_FIELD("synthetic_test", Group::run, synthetic_test, "synthetic test images"),
      Field{"synthetic_separability", Group::run, "trivial | easy | hard",
            [](RunConfig& c, const std::string& v) { c.synthetic_separability = parse_separability(v); },
            [](const RunConfig& c) { return to_string(c.synthetic_separability); }},
      BOOL_FIELD("augment", Group::run, augment.enabled, "random flip + padded crop"),
      BOOL_FIELD("augment_flip", Group::run, augment.flip, "horizontal flips when augmenting"),
      SIZE_FIELD("augment_pad", Group::run, augment.pad, "crop padding in pixels"),
      SIZE_FIELD("epochs", Group::run, epochs, "training epochs"),
      SIZE_FIELD("steps", Group::run, steps, "training steps (overrides epochs when > 0)"),
      SIZE_FIELD("stop_step", Group::run, stop_step, "stop at this step without changing the schedule"),
      SIZE_FIELD("batch_size", Group::run, batch_size, "examples per step"),
      SIZE_FIELD("micro_batch", Group::run, micro_batch, "gradient-accumulation chunk (0 = off)"),
      SIZE_FIELD("eval_batch", Group::run, eval_batch, "examples per evaluation forward pass"),
      SIZE_FIELD("log_every", Group::run, log_every, "train metric row every n steps"),
      SIZE_FIELD("eval_every", Group::run, eval_every, "test evaluation every n epochs (0 = end only)"),
      BOOL_FIELD("wall_clock", Group::run, wall_clock, "record elapsed time (false writes 0)"),
      BOOL_FIELD("eval_ema", Group::run, eval_ema, "evaluate the moving-average parameters"),
      SIZE_FIELD("shots", Group::run, shots, "examples per class for the few-shot probe"),
      DOUBLE_FIELD("ridge_lambda", Group::run, ridge_lambda, "probe ridge (negative = 1e-3 n)"),
      DOUBLE_FIELD("dev_fraction", Group::run, dev_fraction, "held-out share for the lr sweep"),
      Field{"lr_grid", Group::run, "comma list of fine-tuning learning rates",
            [](RunConfig& c, const std::string& v) {
              c.lr_grid.clear();
              for (const auto& s : split_list(v)) c.lr_grid.push_back(parse_double("lr_grid", s));
            },
            [](const RunConfig& c) {
              std::string s;
              for (double x : c.lr_grid) s += (s.empty() ? "" : ",") + fmt(x);
              return s;
            }},
      SIZE_FIELD("finetune_steps", Group::run, finetune_steps, "steps per fine-tuning run"),
      SIZE_FIELD("finetune_batch", Group::run, finetune_batch, "fine-tuning batch size"),
      SIZE_FIELD("finetune_image", Group::run, finetune_image, "fine-tuning resolution (0 = unchanged)"),
  };
  return table;
}

const Field* find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return &f;
  return nullptr;
}

std::string text_of(const RunConfig& cfg, bool (*keep)(Group)) {
  std::string out;
  for (const auto& f : fields()) {
    if (keep(f.group)) out += f.key + " = " + f.get(cfg) + "\n";
  }
  return out;
}

RunConfig apply(const ConfigMap& map, RunConfig base, bool (*allowed)(Group)) {
  // stem_channels first so the per-stage keys apply to the final stage list
  if (auto it = map.find("stem_channels"); it != map.end()) find_field("stem_channels")->set(base, it->second);
  for (const auto& [key, value] : map) {
    const Field* f = find_field(key);
    if (!f || !allowed(f->group)) throw ConfigError("unknown config key '" + key + "'");
    if (key == "stem_channels") continue;
    f->set(base, value);
  }
  return base;
}

bool any_group(Group) { return true; }
bool model_group(Group g) { return g == Group::model; }
bool optim_group(Group g) { return g == Group::optim; }

}  // namespace

ConfigMap parse_config_text(const std::string& text) {
  ConfigMap out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value', got '" + t + "'");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (!out.emplace(key, value).second) {
      throw ConfigError("config line " + std::to_string(lineno) + ": key '" + key + "' repeated");
    }
  }
  return out;
}

ConfigMap read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

RunConfig run_config_from(const ConfigMap& map, RunConfig base) {
  RunConfig c = apply(map, std::move(base), any_group);
  c.model.validate();
  c.optim.validate();
  c.mpp.validate();
  if (c.batch_size == 0) throw ConfigError("batch_size must be > 0");
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) { return run_config_from(read_config_file(path)); }

std::string to_text(const RunConfig& cfg) { return text_of(cfg, any_group); }

std::string model_config_text(const ViTConfig& cfg) {
  RunConfig r;
  r.model = cfg;
  return text_of(r, model_group);
}

ViTConfig model_config_from_text(const std::string& text) {
  RunConfig r = apply(parse_config_text(text), RunConfig{}, model_group);
  r.model.validate();
  return r.model;
}

std::string optim_config_text(const OptimConfig& cfg) {
  RunConfig r;
  r.optim = cfg;
  return text_of(r, optim_group);
}

OptimConfig optim_config_from_text(const std::string& text) {
  RunConfig r = apply(parse_config_text(text), RunConfig{}, optim_group);
  r.optim.validate();
  return r.optim;
}

const std::vector<std::pair<std::string, std::string>>& config_keys() {
  static const auto keys = [] {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& f : fields()) out.emplace_back(f.key, f.doc);
    return out;
  }();
  return keys;
}

}  // namespace vit
