#include "vit/eval.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace vit {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;

}  // namespace

void ProbeProblem::validate() const {
  if (x.rank() != 2 || y.rank() != 2 || x.dim(0) != y.dim(0)) {
    throw DimensionError("probe: X " + shape_str(x.shape()) + " and Y " + shape_str(y.shape()) + " disagree");
  }
  if (!(lambda >= 0.0)) throw ParameterError("probe: ridge lambda must be >= 0");
  const std::size_t k = y.dim(1);
  for (std::size_t i = 0; i < y.dim(0); ++i) {
    std::size_t pos = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const double v = y.at(i, j);
      if (v == 1.0) ++pos;
      else if (v != -1.0) throw InputError("probe: targets must be +-1");
    }
    if (pos != 1) throw InputError("probe: target row " + std::to_string(i) + " must hold exactly one +1");
  }
}

ProbeProblem make_probe_problem(Tensor<double> x, const std::vector<std::size_t>& labels, std::size_t num_classes,
                                double lambda) {
  if (x.rank() != 2 || x.dim(0) != labels.size()) throw DimensionError("probe: one label per representation row");
  if (num_classes == 0) throw ParameterError("probe: num_classes must be > 0");
  ProbeProblem p;
  p.y = Tensor<double>({labels.size(), num_classes}, -1.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) throw InputError("probe: label out of range");
    p.y.at(i, labels[i]) = 1.0;
  }
  p.lambda = lambda < 0.0 ? default_ridge(labels.size()) : lambda;
  p.x = std::move(x);
  return p;
}

Tensor<double> fit_probe(const ProbeProblem& problem) {
  if (problem.lambda < 0.0) throw ParameterError("probe: ridge lambda must be >= 0");
  problem.validate();
  const std::size_t n = problem.x.dim(0), d = problem.x.dim(1), k = problem.y.dim(1);
  ConstMap x(problem.x.ptr(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  ConstMap y(problem.y.ptr(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  Eigen::MatrixXd a = x.transpose() * x;
  a.diagonal().array() += problem.lambda;
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success || llt.rcond() < 1e-14) {
    throw RegularizationError("probe: X^T X + lambda I is singular (lambda = " + std::to_string(problem.lambda) +
                              "); use lambda > 0");
  }
  const Eigen::MatrixXd w = llt.solve(x.transpose() * y);
  Tensor<double> out({d, k});
  Eigen::Map<RowMat>(out.ptr(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(k)) = w;
  return out;
}

std::vector<std::size_t> probe_predict(const Tensor<double>& x, const Tensor<double>& w) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0)) {
    throw DimensionError("probe_predict: X " + shape_str(x.shape()) + " vs W " + shape_str(w.shape()));
  }
  ConstMap xm(x.ptr(), static_cast<Eigen::Index>(x.dim(0)), static_cast<Eigen::Index>(x.dim(1)));
  ConstMap wm(w.ptr(), static_cast<Eigen::Index>(w.dim(0)), static_cast<Eigen::Index>(w.dim(1)));
  Tensor<double> scores({x.dim(0), w.dim(1)});
  Eigen::Map<RowMat>(scores.ptr(), static_cast<Eigen::Index>(x.dim(0)), static_cast<Eigen::Index>(w.dim(1))) = xm * wm;
  return argmax_rows(scores);
}

double accuracy(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& labels) {
  if (predicted.size() != labels.size() || labels.empty()) throw DimensionError("accuracy: size mismatch");
  std::size_t c = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) c += predicted[i] == labels[i];
  return static_cast<double>(c) / static_cast<double>(labels.size());
}

RepresentFn model_encoder(const ViTModel<float>& model) {
  return [&model](const Tensor<float>& images) { return represent(model, images).cast<double>(); };
}

Tensor<double> represent_dataset(const RepresentFn& encoder, const Dataset& data, std::span<const std::size_t> indices,
                                 std::size_t batch_size) {
  if (indices.empty()) throw InputError("represent_dataset: no examples");
  if (batch_size == 0) throw ParameterError("batch_size must be > 0");
  Tensor<double> out;
  std::size_t d = 0;
  for (std::size_t s = 0; s < indices.size(); s += batch_size) {
    const auto part = indices.subspan(s, std::min(batch_size, indices.size() - s));
    const Tensor<double> r = encoder(images_tensor<float>(data, part));
    if (r.rank() != 2 || r.dim(0) != part.size()) throw DimensionError("encoder must return [n x D]");
    if (s == 0) {
      d = r.dim(1);
      out = Tensor<double>({indices.size(), d});
    }
    std::copy(r.data().begin(), r.data().end(), out.data().begin() + s * d);
  }
  return out;
}

std::vector<std::size_t> sample_shots(const Dataset& train, std::size_t shots, std::uint64_t seed) {
  if (shots == 0) throw ParameterError("shots must be > 0");
  std::vector<std::vector<std::size_t>> by_class(train.num_classes);
  for (std::size_t i = 0; i < train.size(); ++i) by_class[train.labels[i]].push_back(i);
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    if (idx.size() < shots) {
      throw DataError("class " + std::to_string(c) + " has " + std::to_string(idx.size()) + " examples, " +
                      std::to_string(shots) + " shots requested");
    }
    Rng rng = Rng::derive(seed, {c});
    rng.shuffle(idx.begin(), idx.end());
    out.insert(out.end(), idx.begin(), idx.begin() + shots);
  }
  std::sort(out.begin(), out.end());
  return out;
}

FewShotResult fewshot_eval(const RepresentFn& encoder, const Dataset& train, const Dataset& test, std::size_t shots,
                           std::uint64_t seed, double lambda) {
  if (test.size() == 0) throw DataError("fewshot_eval: empty test set");
  const auto idx = sample_shots(train, shots, seed);
  auto x = represent_dataset(encoder, train, idx);
  const auto problem = make_probe_problem(std::move(x), labels_of(train, idx), train.num_classes, lambda);
  const auto w = fit_probe(problem);

  std::vector<std::size_t> all(test.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto pred = probe_predict(represent_dataset(encoder, test, all), w);
  FewShotResult r;
  r.accuracy = accuracy(pred, labels_of(test, all));
  r.train_examples = idx.size();
  r.test_examples = test.size();
  return r;
}

void swap_head(ViTModel<float>& model, std::size_t num_classes) {
  model.set_head(HeadMode::finetune_linear, num_classes, true);
}

FinetuneConfig FinetuneConfig::defaults() {
  FinetuneConfig c;
  c.optim.kind = OptimizerKind::sgd_momentum;
  c.optim.momentum = 0.9;
  c.optim.weight_decay = 0.0;
  c.optim.clip_norm = 1.0;
  c.optim.use_ema = false;
  c.optim.schedule.base_lr = 0.01;
  c.optim.schedule.decay = DecayKind::cosine;
  return c;
}

StepMetrics finetune(ViTModel<float>& model, const Dataset& data, std::span<const std::size_t> indices,
                     const FinetuneConfig& cfg) {
  if (indices.empty()) throw DataError("finetune: no training examples");
  OptimConfig oc = cfg.optim;
  oc.schedule.total_steps = cfg.steps;
  oc.schedule.warmup_steps = std::min(oc.schedule.warmup_steps, cfg.steps);
  auto state = TrainState<float>::init(model.parameters(), oc);
  const Dataset sub = data.subset(indices);
  StepMetrics last;
  std::size_t epoch = 0;
  while (state.step < cfg.steps) {
    Batches batches(sub, cfg.batch_size, cfg.seed, epoch, true, cfg.augment);
    Batch b;
    while (state.step < cfg.steps && batches.next(b)) {
      last = train_step(model, b.images, b.labels, state, cfg.seed, cfg.micro_batch);
    }
    ++epoch;
  }
  return last;
}

double evaluate_accuracy(const ViTModel<float>& model, const Dataset& data, std::span<const std::size_t> indices,
                         std::size_t batch_size) {
  std::vector<std::size_t> all;
  if (indices.empty()) {
    all.resize(data.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    indices = all;
  }
  if (indices.empty()) throw DataError("evaluate_accuracy: empty dataset");
  std::size_t correct = 0;
  for (std::size_t s = 0; s < indices.size(); s += batch_size) {
    const auto part = indices.subspan(s, std::min(batch_size, indices.size() - s));
    const auto logits = predict_logits(model, images_tensor<float>(data, part));
    correct += count_correct(logits, labels_of(data, part));
  }
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

SweepResult lr_sweep(const ViTModel<float>& model, const Dataset& train, const std::vector<double>& lrs,
                     double dev_fraction, const FinetuneConfig& cfg) {
  if (lrs.empty()) throw ParameterError("lr_sweep: empty learning-rate grid");
  if (!(dev_fraction > 0.0 && dev_fraction < 1.0)) throw ParameterError("lr_sweep: dev_fraction must be in (0, 1)");
  if (train.size() < 2) throw DataError("lr_sweep: need at least 2 training examples");
  Rng rng = Rng::derive(cfg.seed, {0xde5});
  auto perm = rng.permutation(train.size());
  const std::size_t n_dev =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(dev_fraction * static_cast<double>(train.size()))),
                              1, train.size() - 1);
  std::vector<std::size_t> dev(perm.begin(), perm.begin() + n_dev);
  std::vector<std::size_t> rest(perm.begin() + n_dev, perm.end());
  std::sort(dev.begin(), dev.end());
  std::sort(rest.begin(), rest.end());

  SweepResult r{0.0, lrs, {}, model};
  double best = -1.0;
  for (double lr : lrs) {
    ViTModel<float> copy = model;
    FinetuneConfig c = cfg;
    c.optim.schedule.base_lr = lr;
    finetune(copy, train, rest, c);
    const double acc = evaluate_accuracy(copy, train, dev);
    r.dev_accuracy.push_back(acc);
    if (acc > best || (acc == best && lr < r.best_lr)) {
      best = acc;
      r.best_lr = lr;
    }
  }
  std::vector<std::size_t> all(train.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  FinetuneConfig c = cfg;
  c.optim.schedule.base_lr = r.best_lr;
  r.model = model;
  finetune(r.model, train, all, c);
  return r;
}

}  // namespace vit
