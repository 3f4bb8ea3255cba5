#include "vit/analysis.hpp"

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace vit {

std::string DistanceProfile::csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "layer,head,mean_distance\n";
  for (std::size_t l = 0; l < layers; ++l)
    for (std::size_t h = 0; h < heads; ++h) os << l << ',' << h << ',' << per_head.at(l, h) << '\n';
  return os.str();
}

DistanceProfile attention_distance(const std::vector<AttentionRecord>& records, std::size_t grid_h,
                                   std::size_t grid_w, std::size_t token_pixels) {
  if (records.empty()) throw InputError("attention_distance: no attention records");
  const std::size_t n = grid_h * grid_w;
  std::vector<double> dist(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double dr = static_cast<double>(i / grid_w) - static_cast<double>(j / grid_w);
      const double dc = static_cast<double>(i % grid_w) - static_cast<double>(j % grid_w);
      dist[i * n + j] = std::sqrt(dr * dr + dc * dc) * static_cast<double>(token_pixels);
    }

  std::size_t layers = 0, heads = 0;
  for (const auto& r : records) {
    layers = std::max(layers, r.layer + 1);
    heads = std::max(heads, r.head + 1);
  }
  // (layer, head) -> sum over images, image count
  std::vector<double> sum(layers * heads, 0.0);
  std::vector<std::size_t> count(layers * heads, 0);
  for (const auto& r : records) {
    if (r.matrix.shape() != Shape{n + 1, n + 1}) {
      throw DimensionError("attention_distance: record " + shape_str(r.matrix.shape()) + " does not match a " +
                           std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid plus class token");
    }
    double total = 0.0;
    std::size_t queries = 0;
    for (std::size_t q = 0; q < n; ++q) {
      const double* row = r.matrix.ptr() + (q + 1) * (n + 1) + 1;
      double mass = 0.0, acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        mass += row[j];
        acc += row[j] * dist[q * n + j];
      }
      if (mass <= 0.0) continue;
      total += acc / mass;
      ++queries;
    }
    if (queries == 0) continue;
    sum[r.layer * heads + r.head] += total / static_cast<double>(queries);
    ++count[r.layer * heads + r.head];
  }

  DistanceProfile p;
  p.layers = layers;
  p.heads = heads;
  p.per_head = Tensor<double>({layers, heads});
  p.per_layer.assign(layers, 0.0);
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t k = l * heads + h;
      p.per_head.at(l, h) = count[k] ? sum[k] / static_cast<double>(count[k]) : 0.0;
      p.per_layer[l] += p.per_head.at(l, h) / static_cast<double>(heads);
    }
  }
  return p;
}

DistanceProfile attention_distance(const std::vector<AttentionRecord>& records, const ViTConfig& cfg) {
  return attention_distance(records, cfg.grid_h(), cfg.grid_w(), cfg.token_pixels());
}

std::string to_string(RolloutMode mode) { return mode == RolloutMode::raw ? "raw" : "half_identity"; }

RolloutMode parse_rollout_mode(const std::string& name) {
  if (name == "raw") return RolloutMode::raw;
  if (name == "half_identity") return RolloutMode::half_identity;
  throw ConfigError("unknown rollout mode '" + name + "'");
}

namespace {

using Mat = Eigen::MatrixXd;

Mat to_mat(const Tensor<double>& t) {
  Mat m(t.dim(0), t.dim(1));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) m(i, j) = t.at(i, j);
  return m;
}

}  // namespace

Tensor<double> rollout_matrix(const std::vector<AttentionRecord>& records, std::size_t image, RolloutMode mode) {
  std::map<std::size_t, std::pair<Mat, std::size_t>> layers;  // layer -> (head sum, head count)
  for (const auto& r : records) {
    if (r.image != image) continue;
    auto it = layers.find(r.layer);
    if (it == layers.end()) {
      layers.emplace(r.layer, std::make_pair(to_mat(r.matrix), std::size_t{1}));
    } else {
      if (static_cast<std::size_t>(it->second.first.rows()) != r.matrix.dim(0)) {
        throw DimensionError("attention_rollout: records of one image differ in size");
      }
      it->second.first += to_mat(r.matrix);
      ++it->second.second;
    }
  }
  if (layers.empty()) throw InputError("attention_rollout: no records for image " + std::to_string(image));
  const std::size_t num_layers = layers.rbegin()->first + 1;
  if (layers.size() != num_layers) {
    for (std::size_t l = 0; l < num_layers; ++l) {
      if (!layers.count(l)) {
        throw InputError("attention_rollout: layer " + std::to_string(l) + " missing for image " +
                         std::to_string(image));
      }
    }
  }
  const Eigen::Index n = layers.begin()->second.first.rows();
  Mat rolled = Mat::Identity(n, n);
  for (auto& [layer, acc] : layers) {
    Mat a = acc.first / static_cast<double>(acc.second);
    if (mode == RolloutMode::half_identity) {
      a = 0.5 * (a + Mat::Identity(n, n));
      for (Eigen::Index i = 0; i < n; ++i) a.row(i) /= a.row(i).sum();
    }
    rolled = a * rolled;
  }
  Tensor<double> out({static_cast<std::size_t>(n), static_cast<std::size_t>(n)});
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) out.at(i, j) = rolled(i, j);
  return out;
}

std::vector<RolloutMap> attention_rollout(const std::vector<AttentionRecord>& records, std::size_t grid_h,
                                          std::size_t grid_w, RolloutMode mode) {
  if (records.empty()) throw InputError("attention_rollout: no attention records");
  std::vector<std::size_t> images;
  for (const auto& r : records) images.push_back(r.image);
  std::sort(images.begin(), images.end());
  images.erase(std::unique(images.begin(), images.end()), images.end());

  const std::size_t n = grid_h * grid_w;
  std::vector<RolloutMap> out;
  for (std::size_t img : images) {
    const Tensor<double> r = rollout_matrix(records, img, mode);
    if (r.dim(0) != n + 1) throw DimensionError("attention_rollout: records do not match the token grid");
    double mass = 0.0;
    for (std::size_t j = 1; j <= n; ++j) mass += r.at(0, j);
    if (!(mass > 0.0)) {
      throw NumericError("attention_rollout: class token places no attention mass on patches for image " +
                         std::to_string(img));
    }
    RolloutMap m;
    m.image = img;
    m.map = Tensor<double>({grid_h, grid_w});
    for (std::size_t j = 0; j < n; ++j) m.map[j] = r.at(0, j + 1) / mass;
    out.push_back(std::move(m));
  }
  return out;
}

Tensor<double> cosine_similarity_matrix(const Tensor<double>& e) {
  if (e.rank() != 2) throw DimensionError("cosine_similarity_matrix: expected [N x D]");
  const std::size_t n = e.dim(0), d = e.dim(1);
  std::vector<double> norm(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) norm[i] += e.at(i, k) * e.at(i, k);
    norm[i] = std::sqrt(norm[i]);
  }
  Tensor<double> out({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (norm[i] == 0.0 || norm[j] == 0.0) continue;
      if (i == j) {
        out.at(i, j) = 1.0;
        continue;
      }
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += e.at(i, k) * e.at(j, k);
      out.at(i, j) = dot / (norm[i] * norm[j]);
    }
  return out;
}

Tensor<double> posemb_similarity(const PositionalParams<float>& pos, std::size_t grid_h, std::size_t grid_w) {
  Tensor<float> table;
  switch (pos.kind) {
    case PositionalKind::learned_1d:
      table = pos.table->value;
      break;
    case PositionalKind::learned_2d:
      table = build_2d_positional(pos.x_table->value, pos.y_table->value, pos.class_pos->value, grid_h, grid_w);
      break;
    default:
      throw UnsupportedError("position-embedding similarity needs a learned table, model uses '" +
                             to_string(pos.kind) + "'");
  }
  const std::size_t n = grid_h * grid_w;
  if (table.rank() != 2 || table.dim(0) != n + 1) {
    throw DimensionError("posemb_similarity: table " + shape_str(table.shape()) + " does not match grid");
  }
  const std::size_t d = table.dim(1);
  Tensor<double> patches({n, d});
  for (std::size_t i = 0; i < n * d; ++i) patches[i] = table[d + i];
  return cosine_similarity_matrix(patches);
}

PCAResult filter_pca(const Tensor<double>& e, std::size_t n_components, std::size_t patch_size, std::size_t channels) {
  if (e.rank() != 2) throw DimensionError("filter_pca: expected [(P*P*C) x D]");
  const std::size_t f = e.dim(0), d = e.dim(1);
  if (f != patch_size * patch_size * channels) {
    throw DimensionError("filter_pca: " + std::to_string(f) + " rows is not P*P*C for P=" +
                         std::to_string(patch_size) + ", C=" + std::to_string(channels));
  }
  if (n_components == 0 || n_components > std::min(f, d)) {
    throw ParameterError("filter_pca: n_components must be in [1, " + std::to_string(std::min(f, d)) + "]");
  }
  Mat x(f, d);
  for (std::size_t i = 0; i < f; ++i)
    for (std::size_t j = 0; j < d; ++j) x(i, j) = e.at(i, j);
  const Eigen::VectorXd mean = x.rowwise().mean();
  x.colwise() -= mean;
  const Mat cov = x * x.transpose() / static_cast<double>(d);
  Eigen::SelfAdjointEigenSolver<Mat> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("filter_pca: eigendecomposition failed");
  const Eigen::VectorXd& vals = solver.eigenvalues();  // ascending
  const Mat& vecs = solver.eigenvectors();
  double total = 0.0;
  for (Eigen::Index i = 0; i < vals.size(); ++i) total += std::max(0.0, vals(i));

  PCAResult r;
  r.filters = Tensor<double>({n_components, patch_size, patch_size, channels});
  for (std::size_t c = 0; c < n_components; ++c) {
    const Eigen::Index col = static_cast<Eigen::Index>(f - 1 - c);
    Eigen::VectorXd v = vecs.col(col);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    v.normalize();
    for (std::size_t i = 0; i < f; ++i) r.filters[c * f + i] = v(static_cast<Eigen::Index>(i));
    const double ev = std::max(0.0, vals(col));
    r.eigenvalues.push_back(ev);
    r.explained_variance_ratio.push_back(total > 0.0 ? ev / total : 0.0);
  }
  return r;
}

}  // namespace vit
