// Command-line front end: training, MPP pretraining, fine-tuning, probes,
// attention analysis, parameter counts and a step benchmark.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vit/analysis.hpp"
#include "vit/eval.hpp"
#include "vit/harness/checkpoint.hpp"
#include "vit/harness/config.hpp"
#include "vit/harness/runner.hpp"

namespace fs = std::filesystem;
using namespace vit;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string ckpt;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "flat key = value config file");
  cmd->add_option("--seed", c.seed, "overrides the config seed");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--ckpt", c.ckpt, "checkpoint to load");
  cmd->add_option("--set", c.overrides, "extra key=value override (repeatable)");
}

RunConfig resolve_config(const Common& c) {
  ConfigMap map;
  if (!c.config.empty()) map = read_config_file(c.config);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t") + 1);
      return s;
    };
    map[trim(kv.substr(0, eq))] = trim(kv.substr(eq + 1));
  }
  RunConfig cfg = run_config_from(map);
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

fs::path need_out(const Common& c) {
  if (c.out.empty()) throw ConfigError("--out is required");
  return c.out;
}

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

int cmd_train(const Common& c, TrainMode mode) {
  const RunConfig cfg = resolve_config(c);
  std::optional<fs::path> resume;
  if (!c.ckpt.empty()) resume = c.ckpt;
  const RunResult r = run_training(cfg, need_out(c), mode, resume, &std::cout);
  std::cout << "steps " << r.steps_done << "/" << r.total_steps << " checkpoint " << r.checkpoint.string() << "\n";
  if (r.test) std::cout << "test_accuracy " << format_double(r.test->accuracy) << "\n";
  return 0;
}

// Datasets for a loaded model: the config's data section at the model's
// training resolution.
std::pair<Dataset, Dataset> datasets_for(RunConfig cfg, const ViTConfig& model) {
  cfg.model.image_h = model.image_h;
  cfg.model.image_w = model.image_w;
  cfg.model.channels = model.channels;
  return load_datasets(cfg);
}

int cmd_finetune(const Common& c, std::optional<double> lr, std::optional<std::size_t> image) {
  const RunConfig cfg = resolve_config(c);
  if (c.ckpt.empty()) throw ConfigError("finetune needs --ckpt");
  const fs::path out = need_out(c);
  Checkpoint ck = load_checkpoint(c.ckpt);
  ViTModel<float> model = std::move(ck.model);
  auto [train, test] = datasets_for(cfg, model.config());
  if (model.config().mpp) model.set_mpp(false, 0);
  swap_head(model, train.num_classes);
  const std::size_t side = image.value_or(cfg.finetune_image);
  if (side > 0 && (side != model.config().image_h || side != model.config().image_w)) {
    const std::size_t before = model.config().seq_len();
    model.resize(side, side);
    train = resize_dataset(train, side, side);
    test = resize_dataset(test, side, side);
    std::cout << "resolution " << side << "x" << side << " sequence " << before << " -> " << model.config().seq_len()
              << "\n";
  }

  FinetuneConfig fc = FinetuneConfig::defaults();
  fc.steps = cfg.finetune_steps;
  fc.batch_size = cfg.finetune_batch;
  fc.micro_batch = cfg.micro_batch;
  fc.augment = cfg.augment;
  fc.seed = cfg.seed;
  fc.optim.clip_norm = cfg.optim.clip_norm;
  fc.optim.label_smoothing = cfg.optim.label_smoothing;
  if (lr) {
    fc.optim.schedule.base_lr = *lr;
    std::vector<std::size_t> all(train.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    finetune(model, train, all, fc);
    std::cout << "lr " << format_double(*lr) << "\n";
  } else {
    SweepResult s = lr_sweep(model, train, cfg.lr_grid, cfg.dev_fraction, fc);
    for (std::size_t i = 0; i < s.lrs.size(); ++i) {
      std::cout << "sweep lr " << format_double(s.lrs[i]) << " dev_accuracy " << format_double(s.dev_accuracy[i]) << "\n";
    }
    std::cout << "best_lr " << format_double(s.best_lr) << "\n";
    model = std::move(s.model);
  }
  const double acc = evaluate_accuracy(model, test, {}, cfg.eval_batch);
  std::cout << "test_accuracy " << format_double(acc) << "\n";
  fs::create_directories(out);
  save_checkpoint(out / "checkpoint.vitc", model);
  return 0;
}

int cmd_probe(const Common& c, std::size_t shots_flag, bool random_init) {
  RunConfig cfg = resolve_config(c);
  if (shots_flag > 0) cfg.shots = shots_flag;
  std::optional<ViTModel<float>> model;
  if (!c.ckpt.empty()) {
    model.emplace(load_checkpoint(c.ckpt).model);
  } else if (random_init) {
    model.emplace(cfg.model, cfg.seed);
  } else {
    throw ConfigError("probe needs --ckpt or --random-init");
  }
  auto [train, test] = datasets_for(cfg, model->config());
  const FewShotResult r = fewshot_eval(model_encoder(*model), train, test, cfg.shots, cfg.seed, cfg.ridge_lambda);
  std::cout << "probe shots " << cfg.shots << " seed " << cfg.seed << " train " << r.train_examples << " test "
            << r.test_examples << " accuracy " << format_double(r.accuracy) << "\n";
  return 0;
}

struct AnalyzeFlags {
  std::string images;
  std::size_t limit = 16;
  bool rollout = false;
  bool distance = false;
  bool posemb = false;
  std::size_t pca = 0;
  std::string rollout_mode = "half_identity";
};

int cmd_analyze(const Common& c, const AnalyzeFlags& f) {
  if (c.ckpt.empty()) throw ConfigError("analyze needs --ckpt");
  const fs::path out = need_out(c);
  const ViTModel<float> model = load_checkpoint(c.ckpt).model;
  const ViTConfig& mc = model.config();
  if (!(f.rollout || f.distance || f.posemb || f.pca > 0)) {
    throw ConfigError("analyze: pick at least one of --rollout, --distance, --posemb, --pca");
  }
  fs::create_directories(out);

  if (f.rollout || f.distance) {
    if (f.images.empty()) throw ConfigError("--rollout/--distance need --images");
    Dataset imgs = load_image_source(f.images).head(f.limit);
    if (imgs.height != mc.image_h || imgs.width != mc.image_w) imgs = resize_dataset(imgs, mc.image_h, mc.image_w);
    std::vector<std::size_t> idx(imgs.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    AttentionCollector sink;
    const std::size_t batch = 32;
    for (std::size_t s = 0; s < idx.size(); s += batch) {
      const auto part = std::span<const std::size_t>(idx).subspan(s, std::min(batch, idx.size() - s));
      represent(model, images_tensor<float>(imgs, part), &sink, s);
    }
    const auto records = sink.take();
    if (f.distance) {
      const DistanceProfile d = attention_distance(records, mc);
      write_text(out / "distance.csv", d.csv());
      for (std::size_t l = 0; l < d.layers; ++l) {
        std::cout << "layer " << l << " mean_distance " << format_double(d.per_layer[l]) << "\n";
      }
    }
    if (f.rollout) {
      const auto maps = attention_rollout(records, mc.grid_h(), mc.grid_w(), parse_rollout_mode(f.rollout_mode));
      Tensor<double> all({maps.size(), mc.grid_h(), mc.grid_w()});
      const std::size_t g = mc.grid_h() * mc.grid_w();
      for (std::size_t i = 0; i < maps.size(); ++i)
        for (std::size_t j = 0; j < g; ++j) all[i * g + j] = maps[i].map[j];
      write_container(out / "rollout.vitc", {StoredTensor::from("rollout", all)});
      std::cout << "rollout maps " << maps.size() << " -> " << (out / "rollout.vitc").string() << "\n";
    }
  }
  if (f.posemb) {
    const Tensor<double> sim = posemb_similarity(model.positional(), mc.grid_h(), mc.grid_w());
    write_container(out / "posemb.vitc", {StoredTensor::from("posemb_similarity", sim)});
    std::cout << "posemb similarity " << shape_str(sim.shape()) << "\n";
  }
  if (f.pca > 0) {
    const Tensor<double> e = model.embedding().projection->value.cast<double>();
    const PCAResult p = filter_pca(e, f.pca, mc.patch_size, mc.feature_channels());
    Tensor<double> ratio({p.explained_variance_ratio.size()});
    for (std::size_t i = 0; i < ratio.size(); ++i) ratio[i] = p.explained_variance_ratio[i];
    write_container(out / "pca.vitc",
                    {StoredTensor::from("pca_filters", p.filters), StoredTensor::from("explained_variance_ratio", ratio)});
    for (std::size_t i = 0; i < ratio.size(); ++i) {
      std::cout << "component " << i << " explained_variance_ratio " << format_double(ratio[i]) << "\n";
    }
  }
  return 0;
}

int cmd_count(const Common& c, const std::string& preset, std::size_t classes, std::size_t image) {
  ViTConfig mc = preset.empty() ? resolve_config(c).model : preset_config(preset, classes, image);
  const ParameterReport r = count_parameters(mc);
  for (const auto& [name, n] : r.components) std::cout << name << " " << n << "\n";
  std::cout << "total " << r.total << "\n";
  return 0;
}

int cmd_bench(const Common& c, std::size_t steps) {
  const RunConfig cfg = resolve_config(c);
  ViTModel<float> model(cfg.model, cfg.seed);
  OptimConfig oc = cfg.optim;
  if (oc.schedule.total_steps == 0) oc.schedule.total_steps = steps + 1;
  TrainState<float> state = TrainState<float>::init(model.parameters(), oc);
  SyntheticSpec spec;
  spec.count = cfg.batch_size;
  spec.num_classes = cfg.model.num_classes;
  spec.height = cfg.model.image_h;
  spec.width = cfg.model.image_w;
  const Dataset data = synthetic_dataset(spec, cfg.seed);
  Rng rng(cfg.seed);
  std::vector<std::size_t> idx(data.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const Batch b = make_batch(data, idx, {}, rng);
  train_step(model, b.images, b.labels, state, cfg.seed, cfg.micro_batch);  // warm-up
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < steps; ++i) train_step(model, b.images, b.labels, state, cfg.seed, cfg.micro_batch);
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  const double per = ms / static_cast<double>(steps);
  std::cout << "params " << model.parameter_count() << " batch " << cfg.batch_size << " ms_per_step "
            << format_double(per) << " images_per_s " << format_double(1000.0 * cfg.batch_size / per) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vision transformer training and analysis"};
  app.require_subcommand(1);
  Common common;

  auto* train = app.add_subcommand("train", "supervised training");
  add_common(train, common);
  auto* mpp = app.add_subcommand("pretrain-mpp", "masked patch prediction pretraining");
  add_common(mpp, common);

  auto* ft = app.add_subcommand("finetune", "swap the head and fine-tune a checkpoint");
  add_common(ft, common);
  std::optional<double> ft_lr;
  std::optional<std::size_t> ft_image;
  ft->add_option("--lr", ft_lr, "single learning rate (default: sweep lr_grid)");
  ft->add_option("--image", ft_image, "square fine-tuning resolution");

  auto* probe = app.add_subcommand("probe", "few-shot ridge probe on frozen features");
  add_common(probe, common);
  std::size_t shots = 0;
  bool random_init = false;
  probe->add_option("--shots", shots, "examples per class");
  probe->add_flag("--random-init", random_init, "probe an untrained model built from the config");

  auto* analyze = app.add_subcommand("analyze", "attention distance, rollout, position and filter analysis");
  add_common(analyze, common);
  AnalyzeFlags af;
  analyze->add_option("--images", af.images, "directory or file of CIFAR .bin / .ppm images");
  analyze->add_option("--limit", af.limit, "max images to analyze");
  analyze->add_flag("--rollout", af.rollout);
  analyze->add_flag("--distance", af.distance);
  analyze->add_flag("--posemb", af.posemb);
  analyze->add_option("--pca", af.pca, "number of filter components");
  analyze->add_option("--rollout-mode", af.rollout_mode, "raw | half_identity");

  auto* count = app.add_subcommand("count-params", "parameter count per component");
  add_common(count, common);
  std::string preset;
  std::size_t classes = 1000, image = 224;
  count->add_option("--model", preset, "preset such as ViT-B/16");
  count->add_option("--classes", classes);
  count->add_option("--image", image);

  auto* bench = app.add_subcommand("bench", "time training steps on one synthetic batch");
  add_common(bench, common);
  std::size_t bench_steps = 10;
  bench->add_option("--steps", bench_steps);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train) return cmd_train(common, TrainMode::supervised);
    if (*mpp) return cmd_train(common, TrainMode::mpp);
    if (*ft) return cmd_finetune(common, ft_lr, ft_image);
    if (*probe) return cmd_probe(common, shots, random_init);
    if (*analyze) return cmd_analyze(common, af);
    if (*count) return cmd_count(common, preset, classes, image);
    if (*bench) return cmd_bench(common, bench_steps);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
