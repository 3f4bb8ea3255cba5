#include "vit/harness/runner.hpp"

#include <chrono>
#include <charconv>
#include <cmath>
#include <ostream>

#include "vit/eval.hpp"

namespace vit {

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

std::pair<Dataset, Dataset> load_datasets(const RunConfig& cfg) {
  Dataset train, test;
  if (cfg.dataset == "cifar10") {
    if (cfg.data_dir.empty()) throw ConfigError("dataset = cifar10 needs data_dir");
    train = load_cifar10(cfg.data_dir, "train");
    test = load_cifar10(cfg.data_dir, "test");
  } else if (cfg.dataset == "synthetic") {
    SyntheticSpec spec;
    spec.num_classes = cfg.model.num_classes;
    spec.height = cfg.model.image_h;
    spec.width = cfg.model.image_w;
    spec.separability = cfg.synthetic_separability;
    spec.count = cfg.synthetic_train;
    train = synthetic_dataset(spec, cfg.seed, "train");
    spec.count = cfg.synthetic_test;
    test = synthetic_dataset(spec, cfg.seed, "test");
  } else {
    throw ConfigError("unknown dataset '" + cfg.dataset + "' (expected synthetic or cifar10)");
  }
  train = train.head(cfg.train_limit);
  test = test.head(cfg.test_limit);
  if (train.height != cfg.model.image_h || train.width != cfg.model.image_w || train.channels != cfg.model.channels) {
    throw ConfigError("dataset images are " + std::to_string(train.height) + "x" + std::to_string(train.width) + "x" +
                      std::to_string(train.channels) + " but the model expects " + std::to_string(cfg.model.image_h) +
                      "x" + std::to_string(cfg.model.image_w) + "x" + std::to_string(cfg.model.channels));
  }
  return {std::move(train), std::move(test)};
}

EvalMetrics evaluate_split(const ViTModel<float>& model, const Dataset& data, std::size_t batch_size) {
  if (data.size() == 0) throw DataError("evaluate_split: empty dataset");
  if (batch_size == 0) throw ParameterError("evaluate_split: batch_size must be positive");
  double loss = 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t s = 0; s < data.size(); s += batch_size) {
    idx.clear();
    for (std::size_t i = s; i < std::min(data.size(), s + batch_size); ++i) idx.push_back(i);
    const auto logits = predict_logits(model, images_tensor<float>(data, idx));
    const auto labels = labels_of(data, idx);
    const std::size_t k = logits.shape()[1];
    std::vector<double> row(k);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t j = 0; j < k; ++j) row[j] = logits[i * k + j];
      loss += cross_entropy(row, labels[i]).loss;
    }
    correct += count_correct(logits, labels);
  }
  const auto n = static_cast<double>(data.size());
  return {loss / n, static_cast<double>(correct) / n};
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path, bool append) {
  const bool has_header = append && std::filesystem::exists(path) && std::filesystem::file_size(path) > 0;
  out_.open(path, append ? std::ios::app : std::ios::trunc);
  if (!out_) throw DataError("cannot write " + path.string());
  if (!has_header) out_ << "step,epoch,split,loss,accuracy,lr,grad_norm,wall_ms\n";
}

void MetricsWriter::row(std::size_t step, std::size_t epoch, const std::string& split, double loss, double accuracy,
                        double lr, double grad_norm, double wall_ms) {
  out_ << step << ',' << epoch << ',' << split << ',' << format_double(loss) << ',' << format_double(accuracy) << ','
       << format_double(lr) << ',' << format_double(grad_norm) << ',' << format_double(wall_ms) << '\n';
  out_.flush();
}

RunResult run_training(const RunConfig& cfg_in, const std::filesystem::path& out_dir, TrainMode mode,
                       const std::optional<std::filesystem::path>& resume, std::ostream* log) {
  RunConfig cfg = cfg_in;
  if (mode == TrainMode::mpp) cfg.model.mpp = true;
  cfg.model.validate();
  auto [train, test] = load_datasets(cfg);
  if (train.size() == 0) throw DataError("training set is empty");

  const std::size_t bs = cfg.batch_size;
  const std::size_t per_epoch = (train.size() + bs - 1) / bs;
  const std::size_t total = cfg.steps > 0 ? cfg.steps : cfg.epochs * per_epoch;
  if (total == 0) throw ConfigError("nothing to train: steps and epochs are both 0");
  if (cfg.optim.schedule.total_steps == 0) cfg.optim.schedule.total_steps = total;
  cfg.optim.validate();

  std::optional<ViTModel<float>> model;
  std::optional<TrainState<float>> state;
  if (resume) {
    Checkpoint ck = load_checkpoint(*resume);
    if (model_config_text(ck.model.config()) != model_config_text(cfg.model)) {
      throw ConfigError("checkpoint " + resume->string() + " was written for a different model config");
    }
    if (!ck.state) throw ConfigError("checkpoint " + resume->string() + " holds no optimizer state");
    if (optim_config_text(ck.state->cfg) != optim_config_text(cfg.optim)) {
      throw ConfigError("checkpoint " + resume->string() + " was written with a different optimizer config");
    }
    model.emplace(std::move(ck.model));
    state.emplace(std::move(*ck.state));
  } else {
    model.emplace(cfg.model, cfg.seed);
    state.emplace(TrainState<float>::init(model->parameters(), cfg.optim));
  }

  std::filesystem::create_directories(out_dir);
  const std::string cfg_text = to_text(cfg);
  write_file(out_dir / "config.txt", std::span(reinterpret_cast<const std::uint8_t*>(cfg_text.data()), cfg_text.size()));
  MetricsWriter metrics(out_dir / "metrics.csv", resume.has_value());

  const std::size_t end = cfg.stop_step > 0 ? std::min(cfg.stop_step, total) : total;
  const auto t0 = std::chrono::steady_clock::now();
  auto wall = [&] {
    if (!cfg.wall_clock) return 0.0;
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  };

  RunResult result;
  result.total_steps = total;
  std::optional<Batches> batches;
  std::size_t batches_epoch = 0;
  while (state->step < end) {
    const std::size_t step = state->step;
    const std::size_t epoch = step / per_epoch;
    if (!batches || batches_epoch != epoch) {
      batches.emplace(train, bs, cfg.seed, epoch, true, cfg.augment);
      batches_epoch = epoch;
    }
    const Batch b = batches->get(step % per_epoch);
    StepMetrics m = mode == TrainMode::supervised
                        ? train_step(*model, b.images, b.labels, *state, cfg.seed, cfg.micro_batch)
                        : mpp_step(*model, b.images, std::span<const std::uint8_t>(b.pixels), *state, cfg.mpp, cfg.seed);
    result.last = m;
    const std::size_t done = state->step;
    const bool epoch_end = done % per_epoch == 0 || done == total;
    const std::size_t epoch_no = (done - 1) / per_epoch + 1;
    if ((cfg.log_every > 0 && done % cfg.log_every == 0) || epoch_end) {
      metrics.row(done, epoch_no, "train", m.loss, m.accuracy, m.lr, m.grad_norm, wall());
    }
    const bool want_eval = epoch_end && ((cfg.eval_every > 0 && epoch_no % cfg.eval_every == 0) || done == total);
    if (want_eval && mode == TrainMode::supervised && test.size() > 0) {
      EvalMetrics e;
      if (cfg.eval_ema && state->cfg.use_ema) {
        ViTModel<float> shadow = *model;
        load_ema(shadow, *state);
        e = evaluate_split(shadow, test, cfg.eval_batch);
      } else {
        e = evaluate_split(*model, test, cfg.eval_batch);
      }
      result.test = e;
      metrics.row(done, epoch_no, "test", e.loss, e.accuracy, m.lr, m.grad_norm, wall());
      if (log) {
        *log << "epoch " << epoch_no << " step " << done << "/" << total << " train_loss " << format_double(m.loss)
             << " test_loss " << format_double(e.loss) << " test_acc " << format_double(e.accuracy) << std::endl;
      }
    } else if (log && epoch_end) {
      *log << "epoch " << epoch_no << " step " << done << "/" << total << " loss " << format_double(m.loss)
           << " acc " << format_double(m.accuracy) << std::endl;
    }
  }
  result.steps_done = state->step;
  result.checkpoint = out_dir / "checkpoint.vitc";
  save_checkpoint(result.checkpoint, *model, &*state);
  return result;
}

}  // namespace vit
