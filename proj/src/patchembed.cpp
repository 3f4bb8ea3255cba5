#include "vit/patchembed.hpp"

#include <cmath>

namespace vit {

void PatchifyConfig::validate() const {
  if (image_h == 0 || image_w == 0 || channels == 0 || patch_size == 0 || model_dim == 0) {
    throw ConfigError("patchify: all dimensions must be positive");
  }
  if (image_h % patch_size != 0 || image_w % patch_size != 0) {
    throw ConfigError("patch size " + std::to_string(patch_size) + " does not divide image " +
                      std::to_string(image_h) + "x" + std::to_string(image_w));
  }
}

std::string to_string(PositionalKind kind) {
  switch (kind) {
    case PositionalKind::none: return "none";
    case PositionalKind::learned_1d: return "learned_1d";
    case PositionalKind::learned_2d: return "learned_2d";
    case PositionalKind::relative: return "relative";
  }
  return "?";
}

PositionalKind parse_positional_kind(const std::string& name) {
  if (name == "none") return PositionalKind::none;
  if (name == "learned_1d") return PositionalKind::learned_1d;
  if (name == "learned_2d") return PositionalKind::learned_2d;
  if (name == "relative") return PositionalKind::relative;
  throw ConfigError("unknown positional scheme '" + name + "'");
}

template <typename T>
Tensor<T> extract_patches(const Tensor<T>& image, const PatchifyConfig& cfg) {
  cfg.validate();
  if (image.shape() != Shape{cfg.image_h, cfg.image_w, cfg.channels}) {
    throw DimensionError("extract_patches: image " + shape_str(image.shape()) + " does not match config");
  }
  const std::size_t p = cfg.patch_size, c = cfg.channels, gw = cfg.grid_w();
  Tensor<T> out({cfg.num_patches(), cfg.patch_dim()});
  for (std::size_t n = 0; n < cfg.num_patches(); ++n) {
    const std::size_t gr = n / gw, gc = n % gw;
    for (std::size_t pr = 0; pr < p; ++pr) {
      const T* src = image.ptr() + ((gr * p + pr) * cfg.image_w + gc * p) * c;
      std::copy_n(src, p * c, out.ptr() + n * cfg.patch_dim() + pr * p * c);
    }
  }
  return out;
}

template <typename T>
Tensor<T> assemble_patches(const Tensor<T>& patches, const PatchifyConfig& cfg) {
  cfg.validate();
  if (patches.shape() != Shape{cfg.num_patches(), cfg.patch_dim()}) {
    throw DimensionError("assemble_patches: patches " + shape_str(patches.shape()) + " do not match config");
  }
  const std::size_t p = cfg.patch_size, c = cfg.channels, gw = cfg.grid_w();
  Tensor<T> image({cfg.image_h, cfg.image_w, cfg.channels});
  for (std::size_t n = 0; n < cfg.num_patches(); ++n) {
    const std::size_t gr = n / gw, gc = n % gw;
    for (std::size_t pr = 0; pr < p; ++pr) {
      std::copy_n(patches.ptr() + n * cfg.patch_dim() + pr * p * c, p * c,
                  image.ptr() + ((gr * p + pr) * cfg.image_w + gc * p) * c);
    }
  }
  return image;
}

template <typename T>
Var<T> patchify(const Var<T>& images, std::size_t patch_size) {
  const Shape& s = images.shape();
  if (s.size() != 4) throw DimensionError("patchify: expected [B x H x W x C], got " + shape_str(s));
  if (patch_size == 0 || s[1] % patch_size != 0 || s[2] % patch_size != 0) {
    throw ConfigError("patch size " + std::to_string(patch_size) + " does not divide " + shape_str(s));
  }
  const std::size_t b = s[0], gh = s[1] / patch_size, gw = s[2] / patch_size, c = s[3];
  if (patch_size == 1) return ops::reshape(images, {b, gh * gw, c});
  auto x = ops::reshape(images, {b, gh, patch_size, gw, patch_size, c});
  x = ops::permute(x, {0, 1, 3, 2, 4, 5});
  return ops::reshape(x, {b, gh * gw, patch_size * patch_size * c});
}

template <typename T>
Var<T> build_2d_positional(const Var<T>& x_table, const Var<T>& y_table, const Var<T>& class_pos,
                           std::size_t grid_h, std::size_t grid_w) {
  const std::size_t half = x_table.value().shape().back();
  const std::size_t d = class_pos.value().size();
  if (d % 2 != 0) throw ConfigError("2-D positional embedding requires an even model dim, got " + std::to_string(d));
  if (x_table.shape() != Shape{grid_w, d / 2} || y_table.shape() != Shape{grid_h, d / 2} || half != d / 2) {
    throw DimensionError("build_2d_positional: tables " + shape_str(x_table.shape()) + ", " +
                         shape_str(y_table.shape()) + " do not match grid " + std::to_string(grid_h) + "x" +
                         std::to_string(grid_w) + " with D=" + std::to_string(d));
  }
  auto xs = ops::expand_leading(x_table, grid_h);                           // [Gh, Gw, D/2]
  auto ys = ops::permute(ops::expand_leading(y_table, grid_w), {1, 0, 2});  // [Gh, Gw, D/2]
  const Var<T> halves[] = {xs, ys};
  auto grid = ops::reshape(ops::concat<T>(halves, 2), {grid_h * grid_w, d});
  const Var<T> rows[] = {ops::reshape(class_pos, {1, d}), grid};
  return ops::concat<T>(rows, 0);
}

template <typename T>
Tensor<T> build_2d_positional(const Tensor<T>& x_table, const Tensor<T>& y_table, const Tensor<T>& class_pos,
                              std::size_t grid_h, std::size_t grid_w) {
  Tape<T> tape(false);
  return build_2d_positional(tape.constant(x_table), tape.constant(y_table), tape.constant(class_pos), grid_h, grid_w)
      .value();
}

template <typename T>
Var<T> embed(Tape<T>& tape, const Var<T>& patches, const EmbeddingParams<T>& params, const PositionalParams<T>& pos,
             std::size_t grid_h, std::size_t grid_w, const PatchTransform<T>& transform) {
  const Shape& s = patches.shape();
  if (s.size() != 3 || s[1] != grid_h * grid_w) {
    throw DimensionError("embed: patches " + shape_str(s) + " do not match grid " + std::to_string(grid_h) + "x" +
                         std::to_string(grid_w));
  }
  const auto& e = params.projection->value;
  if (e.rank() != 2 || e.dim(0) != s[2]) {
    throw DimensionError("embed: projection " + shape_str(e.shape()) + " vs patch dim " + std::to_string(s[2]));
  }
  const std::size_t b = s[0], n = s[1], d = e.dim(1);
  if (params.class_token->value.shape() != Shape{d}) throw DimensionError("embed: class token must be [D]");

  auto proj = ops::linear(patches, tape.param(*params.projection), tape.param(*params.bias));
  if (transform) proj = transform(proj);
  auto cls = ops::expand_leading(ops::reshape(tape.param(*params.class_token), {1, d}), b);
  const Var<T> parts[] = {cls, proj};
  auto z = ops::concat<T>(parts, 1);

  switch (pos.kind) {
    case PositionalKind::learned_1d: {
      if (pos.table->value.shape() != Shape{n + 1, d}) {
        throw DimensionError("embed: positional table " + shape_str(pos.table->value.shape()) + " expected " +
                             shape_str({n + 1, d}));
      }
      z = ops::add_broadcast(z, tape.param(*pos.table));
      break;
    }
    case PositionalKind::learned_2d: {
      auto table = build_2d_positional(tape.param(*pos.x_table), tape.param(*pos.y_table),
                                       tape.param(*pos.class_pos), grid_h, grid_w);
      z = ops::add_broadcast(z, table);
      break;
    }
    case PositionalKind::none:
    case PositionalKind::relative:
      break;
  }
  return z;
}

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& grid, std::size_t new_h, std::size_t new_w) {
  if (grid.rank() != 3) throw DimensionError("bilinear_resize: expected [Gh x Gw x D]");
  const std::size_t gh = grid.dim(0), gw = grid.dim(1), d = grid.dim(2);
  if (new_h == 0 || new_w == 0) throw DimensionError("bilinear_resize: target grid must be non-empty");
  if (gh == new_h && gw == new_w) return grid;
  auto coord = [](std::size_t i, std::size_t from, std::size_t to) {
    return to == 1 ? 0.0 : static_cast<double>(i) * static_cast<double>(from - 1) / static_cast<double>(to - 1);
  };
  Tensor<T> out({new_h, new_w, d});
  for (std::size_t i = 0; i < new_h; ++i) {
    const double sy = coord(i, gh, new_h);
    const std::size_t y0 = static_cast<std::size_t>(std::floor(sy));
    const std::size_t y1 = std::min(y0 + 1, gh - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t j = 0; j < new_w; ++j) {
      const double sx = coord(j, gw, new_w);
      const std::size_t x0 = static_cast<std::size_t>(std::floor(sx));
      const std::size_t x1 = std::min(x0 + 1, gw - 1);
      const double fx = sx - static_cast<double>(x0);
      const double w00 = (1 - fy) * (1 - fx), w01 = (1 - fy) * fx, w10 = fy * (1 - fx), w11 = fy * fx;
      for (std::size_t k = 0; k < d; ++k) {
        const double v = w00 * grid.at(y0, x0, k) + w01 * grid.at(y0, x1, k) + w10 * grid.at(y1, x0, k) +
                         w11 * grid.at(y1, x1, k);
        out.at(i, j, k) = static_cast<T>(v);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> interpolate_positional(const Tensor<T>& pos, std::size_t old_h, std::size_t old_w, std::size_t new_h,
                                 std::size_t new_w) {
  if (pos.rank() != 2 || pos.dim(0) != old_h * old_w + 1) {
    throw DimensionError("interpolate_positional: table " + shape_str(pos.shape()) + " does not hold " +
                         std::to_string(old_h) + "x" + std::to_string(old_w) + " + 1 rows");
  }
  if (old_h == new_h && old_w == new_w) return pos;
  const std::size_t d = pos.dim(1);
  Tensor<T> grid({old_h, old_w, d});
  std::copy(pos.data().begin() + d, pos.data().end(), grid.data().begin());
  const Tensor<T> resized = bilinear_resize(grid, new_h, new_w);
  Tensor<T> out({new_h * new_w + 1, d});
  std::copy_n(pos.ptr(), d, out.ptr());
  std::copy(resized.data().begin(), resized.data().end(), out.data().begin() + d);
  return out;
}

#define VIT_INSTANTIATE_PATCHEMBED(T)                                                                              \
  template Tensor<T> extract_patches(const Tensor<T>&, const PatchifyConfig&);                                     \
  template Tensor<T> assemble_patches(const Tensor<T>&, const PatchifyConfig&);                                    \
  template Var<T> patchify(const Var<T>&, std::size_t);                                                            \
  template Var<T> build_2d_positional(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t, std::size_t);      \
  template Tensor<T> build_2d_positional(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,        \
                                         std::size_t);                                                             \
  template Var<T> embed(Tape<T>&, const Var<T>&, const EmbeddingParams<T>&, const PositionalParams<T>&,            \
                        std::size_t, std::size_t, const PatchTransform<T>&);                                       \
  template Tensor<T> bilinear_resize(const Tensor<T>&, std::size_t, std::size_t);                                  \
  template Tensor<T> interpolate_positional(const Tensor<T>&, std::size_t, std::size_t, std::size_t, std::size_t);

VIT_INSTANTIATE_PATCHEMBED(float)
VIT_INSTANTIATE_PATCHEMBED(double)

}  // namespace vit
