#include "vit/harness/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

#include "vit/error.hpp"

namespace vit {

std::span<const std::uint8_t> Dataset::image(std::size_t i) const {
  if (i >= size()) throw InputError("dataset index " + std::to_string(i) + " out of range");
  return {pixels.data() + i * image_bytes(), image_bytes()};
}

void Dataset::validate() const {
  if (height == 0 || width == 0 || channels == 0) throw DataError("dataset '" + name + "' has empty image dims");
  if (pixels.size() != labels.size() * image_bytes()) {
    throw DataError("dataset '" + name + "': pixel buffer does not hold " + std::to_string(size()) + " images");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw DataError("dataset '" + name + "': label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                      " >= K=" + std::to_string(num_classes));
    }
  }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out = *this;
  out.pixels.clear();
  out.labels.clear();
  out.pixels.reserve(indices.size() * image_bytes());
  for (std::size_t i : indices) {
    auto img = image(i);
    out.pixels.insert(out.pixels.end(), img.begin(), img.end());
    out.labels.push_back(labels[i]);
  }
  return out;
}

Dataset Dataset::head(std::size_t n) const {
  if (n == 0 || n >= size()) return *this;
  Dataset out = *this;
  out.labels.resize(n);
  out.pixels.resize(n * image_bytes());
  return out;
}

template <typename T>
Tensor<T> normalize_images(std::span<const std::uint8_t> pixels, const Shape& shape) {
  Tensor<T> t(shape);
  if (t.size() != pixels.size()) throw DimensionError("normalize_images: buffer does not match " + shape_str(shape));
  for (std::size_t i = 0; i < pixels.size(); ++i) t[i] = static_cast<T>(pixels[i]) / T(127.5) - T(1);
  return t;
}

template <typename T>
Tensor<T> images_tensor(const Dataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw InputError("images_tensor: no indices");
  Tensor<T> t({indices.size(), data.height, data.width, data.channels});
  const std::size_t per = data.image_bytes();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    auto img = data.image(indices[k]);
    for (std::size_t j = 0; j < per; ++j) t[k * per + j] = static_cast<T>(img[j]) / T(127.5) - T(1);
  }
  return t;
}

template Tensor<float> normalize_images(std::span<const std::uint8_t>, const Shape&);
template Tensor<double> normalize_images(std::span<const std::uint8_t>, const Shape&);
template Tensor<float> images_tensor(const Dataset&, std::span<const std::size_t>);
template Tensor<double> images_tensor(const Dataset&, std::span<const std::size_t>);

std::vector<std::size_t> labels_of(const Dataset& data, std::span<const std::size_t> indices) {
  std::vector<std::size_t> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= data.size()) throw InputError("labels_of: index out of range");
    out.push_back(data.labels[i]);
  }
  return out;
}

namespace {

constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarRecord = 1 + 3 * kCifarSide * kCifarSide;

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void append_cifar(Dataset& out, const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  if (bytes.empty()) throw FormatError(path.string() + ": empty CIFAR-10 file", 0);
  if (bytes.size() % kCifarRecord != 0) {
    const std::size_t off = bytes.size() / kCifarRecord * kCifarRecord;
    throw FormatError(path.string() + ": truncated record (file size " + std::to_string(bytes.size()) +
                          " is not a multiple of " + std::to_string(kCifarRecord) + ")",
                      off);
  }
  const std::size_t n = bytes.size() / kCifarRecord;
  const std::size_t plane = kCifarSide * kCifarSide;
  out.pixels.reserve(out.pixels.size() + n * 3 * plane);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t off = r * kCifarRecord;
    const std::uint8_t label = bytes[off];
    if (label >= 10) {
      throw FormatError(path.string() + ": label " + std::to_string(label) + " out of range", off);
    }
    out.labels.push_back(label);
    // planar RGB -> interleaved HWC
    const std::uint8_t* src = bytes.data() + off + 1;
    for (std::size_t p = 0; p < plane; ++p)
      for (std::size_t c = 0; c < 3; ++c) out.pixels.push_back(src[c * plane + p]);
  }
}

Dataset empty_cifar(const std::string& split) {
  Dataset d;
  d.name = "cifar10";
  d.split = split;
  d.height = d.width = kCifarSide;
  d.channels = 3;
  d.num_classes = 10;
  return d;
}

}  // namespace

Dataset load_cifar10_file(const std::filesystem::path& path) {
  Dataset d = empty_cifar(path.stem().string());
  append_cifar(d, path);
  return d;
}

Dataset load_cifar10(const std::filesystem::path& dir, const std::string& split) {
  Dataset d = empty_cifar(split);
  if (split == "train") {
    for (int i = 1; i <= 5; ++i) append_cifar(d, dir / ("data_batch_" + std::to_string(i) + ".bin"));
  } else if (split == "test") {
    append_cifar(d, dir / "test_batch.bin");
  } else {
    throw ConfigError("unknown CIFAR-10 split '" + split + "'");
  }
  return d;
}

Dataset resize_dataset(const Dataset& data, std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) throw ParameterError("resize_dataset: zero target size");
  Dataset out = data;
  out.height = h;
  out.width = w;
  const std::size_t c = data.channels;
  out.pixels.assign(data.size() * h * w * c, 0);
  auto coord = [](std::size_t i, std::size_t n_out, std::size_t n_in) {
    return n_out == 1 ? 0.0 : static_cast<double>(i) * static_cast<double>(n_in - 1) / static_cast<double>(n_out - 1);
  };
  for (std::size_t n = 0; n < data.size(); ++n) {
    const std::uint8_t* src = data.pixels.data() + n * data.image_bytes();
    std::uint8_t* dst = out.pixels.data() + n * h * w * c;
    for (std::size_t y = 0; y < h; ++y) {
      const double fy = coord(y, h, data.height);
      const std::size_t y0 = static_cast<std::size_t>(fy);
      const std::size_t y1 = std::min(y0 + 1, data.height - 1);
      const double ty = fy - static_cast<double>(y0);
      for (std::size_t x = 0; x < w; ++x) {
        const double fx = coord(x, w, data.width);
        const std::size_t x0 = static_cast<std::size_t>(fx);
        const std::size_t x1 = std::min(x0 + 1, data.width - 1);
        const double tx = fx - static_cast<double>(x0);
        for (std::size_t k = 0; k < c; ++k) {
          auto at = [&](std::size_t yy, std::size_t xx) { return static_cast<double>(src[(yy * data.width + xx) * c + k]); };
          const double v = (1 - ty) * ((1 - tx) * at(y0, x0) + tx * at(y0, x1)) + ty * ((1 - tx) * at(y1, x0) + tx * at(y1, x1));
          dst[(y * w + x) * c + k] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        }
      }
    }
  }
  return out;
}

Dataset load_ppm(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  std::size_t pos = 0;
  // header tokens, skipping whitespace and comments
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    if (t.empty()) throw FormatError(path.string() + ": truncated PPM header", pos);
    return t;
  };
  if (token() != "P6") throw FormatError(path.string() + ": not a binary PPM (P6)", 0);
  std::size_t dims[3];
  for (auto& d : dims) {
    const std::size_t at = pos;
    const std::string t = token();
    if (t.find_first_not_of("0123456789") != std::string::npos || t.size() > 6) {
      throw FormatError(path.string() + ": bad PPM header field '" + t + "'", at);
    }
    d = std::stoul(t);
  }
  if (dims[2] != 255) throw FormatError(path.string() + ": only maxval 255 is supported", pos);
  if (dims[0] == 0 || dims[1] == 0) throw FormatError(path.string() + ": zero-sized image", pos);
  ++pos;  // single whitespace before the raster
  const std::size_t need = dims[0] * dims[1] * 3;
  if (bytes.size() < pos + need) throw FormatError(path.string() + ": truncated PPM raster", bytes.size());
  Dataset d;
  d.name = path.stem().string();
  d.split = "images";
  d.width = dims[0];
  d.height = dims[1];
  d.channels = 3;
  d.num_classes = 1;
  d.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.begin() + static_cast<std::ptrdiff_t>(pos + need));
  d.labels.push_back(0);
  return d;
}

Dataset load_image_source(const std::filesystem::path& path) {
  std::vector<std::filesystem::path> files;
  if (std::filesystem::is_directory(path)) {
    for (const auto& e : std::filesystem::directory_iterator(path)) {
      const auto ext = e.path().extension().string();
      if (e.is_regular_file() && (ext == ".bin" || ext == ".ppm")) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
  } else if (std::filesystem::exists(path)) {
    files.push_back(path);
  }
  if (files.empty()) throw DataError("no .bin or .ppm images found at " + path.string());
  Dataset out;
  for (const auto& f : files) {
    Dataset d = f.extension() == ".ppm" ? load_ppm(f) : load_cifar10_file(f);
    if (out.size() == 0) {
      const auto name = path.filename().string();
      out = std::move(d);
      out.name = name;
      continue;
    }
    if (d.height != out.height || d.width != out.width || d.channels != out.channels) {
      throw DataError(f.string() + ": image size differs from the first image");
    }
    out.num_classes = std::max(out.num_classes, d.num_classes);
    out.pixels.insert(out.pixels.end(), d.pixels.begin(), d.pixels.end());
    out.labels.insert(out.labels.end(), d.labels.begin(), d.labels.end());
  }
  return out;
}

std::string to_string(Separability s) {
  switch (s) {
    case Separability::trivial: return "trivial";
    case Separability::easy: return "easy";
    case Separability::hard: return "hard";
  }
  return "?";
}

Separability parse_separability(const std::string& name) {
  if (name == "trivial") return Separability::trivial;
  if (name == "easy") return Separability::easy;
  if (name == "hard") return Separability::hard;
  throw ConfigError("unknown separability '" + name + "'");
}

namespace {

// evenly spaced hues, full saturation
void class_color(std::size_t c, std::size_t k, double out[3]) {
  const double h = 6.0 * static_cast<double>(c) / static_cast<double>(k);
  const int sector = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double rgb[6][3] = {{1, f, 0}, {1 - f, 1, 0}, {0, 1, f}, {0, 1 - f, 1}, {f, 0, 1}, {1, 0, 1 - f}};
  for (int i = 0; i < 3; ++i) out[i] = 40.0 + 200.0 * rgb[sector][i];
}

std::uint8_t clamp_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace

Dataset synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed, const std::string& split) {
  if (spec.count == 0 || spec.num_classes == 0 || spec.height == 0 || spec.width == 0) {
    throw ParameterError("synthetic_dataset: count, classes and dims must be positive");
  }
  Dataset d;
  d.name = "synthetic";
  d.split = split;
  d.height = spec.height;
  d.width = spec.width;
  d.channels = 3;
  d.num_classes = spec.num_classes;
  d.pixels.resize(spec.count * d.image_bytes());
  d.labels.resize(spec.count);
  Rng rng(seed);
  const double noise = spec.separability == Separability::hard ? 40.0 : 12.0;
  const double jitter = spec.separability == Separability::hard ? 50.0 : 10.0;
  for (std::size_t i = 0; i < spec.count; ++i) {
    const std::size_t label = i % spec.num_classes;
    d.labels[i] = static_cast<std::uint16_t>(label);
    double col[3];
    class_color(label, spec.num_classes, col);
    for (double& v : col) v += jitter * (rng.uniform() - 0.5);
    std::size_t r0 = 0, c0 = 0, r1 = spec.height, c1 = spec.width;
    if (spec.separability != Separability::trivial) {
      const std::size_t min_h = std::max<std::size_t>(1, spec.height / (spec.separability == Separability::hard ? 4 : 2));
      const std::size_t min_w = std::max<std::size_t>(1, spec.width / (spec.separability == Separability::hard ? 4 : 2));
      const std::size_t rh = min_h + rng.uniform_int(spec.height - min_h + 1);
      const std::size_t rw = min_w + rng.uniform_int(spec.width - min_w + 1);
      r0 = rng.uniform_int(spec.height - rh + 1);
      c0 = rng.uniform_int(spec.width - rw + 1);
      r1 = r0 + rh;
      c1 = c0 + rw;
    }
    const double bg = 20.0 + 30.0 * rng.uniform();
    std::uint8_t* img = d.pixels.data() + i * d.image_bytes();
    for (std::size_t r = 0; r < spec.height; ++r)
      for (std::size_t c = 0; c < spec.width; ++c) {
        const bool inside = r >= r0 && r < r1 && c >= c0 && c < c1;
        for (std::size_t ch = 0; ch < 3; ++ch) {
          const double base = inside ? col[ch] : bg;
          img[(r * spec.width + c) * 3 + ch] = clamp_u8(base + noise * (rng.uniform() - 0.5));
        }
      }
  }
  return d;
}

void augment_image(std::span<std::uint8_t> image, std::size_t h, std::size_t w, std::size_t c,
                   const AugmentConfig& cfg, Rng& rng) {
  if (!cfg.enabled) return;
  if (image.size() != h * w * c) throw DimensionError("augment_image: buffer does not match dims");
  std::vector<std::uint8_t> src(image.begin(), image.end());
  const bool flip = cfg.flip && rng.uniform() < 0.5;
  const std::size_t p = cfg.pad;
  const long dy = static_cast<long>(rng.uniform_int(2 * p + 1)) - static_cast<long>(p);
  const long dx = static_cast<long>(rng.uniform_int(2 * p + 1)) - static_cast<long>(p);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t col = 0; col < w; ++col) {
      const long sr = static_cast<long>(r) + dy;
      long sc = static_cast<long>(col) + dx;
      std::uint8_t* dst = image.data() + (r * w + col) * c;
      if (sr < 0 || sc < 0 || sr >= static_cast<long>(h) || sc >= static_cast<long>(w)) {
        std::fill_n(dst, c, std::uint8_t{0});
        continue;
      }
      if (flip) sc = static_cast<long>(w) - 1 - sc;
      std::copy_n(src.data() + (static_cast<std::size_t>(sr) * w + static_cast<std::size_t>(sc)) * c, c, dst);
    }
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    std::size_t epoch, bool shuffle) {
  if (batch_size == 0) throw ParameterError("batch_size must be > 0");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (shuffle) {
    Rng rng = Rng::derive(seed, {epoch});
    rng.shuffle(order.begin(), order.end());
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < n; s += batch_size) {
    out.emplace_back(order.begin() + s, order.begin() + std::min(n, s + batch_size));
  }
  return out;
}

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices, const AugmentConfig& aug, Rng& rng) {
  if (indices.empty()) throw InputError("make_batch: no indices");
  Batch b;
  b.shape = {indices.size(), data.height, data.width, data.channels};
  b.indices.assign(indices.begin(), indices.end());
  b.labels = labels_of(data, indices);
  const std::size_t per = data.image_bytes();
  b.pixels.resize(indices.size() * per);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    auto img = data.image(indices[k]);
    std::span<std::uint8_t> dst(b.pixels.data() + k * per, per);
    std::copy(img.begin(), img.end(), dst.begin());
    augment_image(dst, data.height, data.width, data.channels, aug, rng);
  }
  b.images = normalize_images<float>(b.pixels, b.shape);
  return b;
}

Batches::Batches(const Dataset& data, std::size_t batch_size, std::uint64_t seed, std::size_t epoch, bool shuffle,
                 AugmentConfig aug)
    : data_(&data), seed_(seed), epoch_(epoch), aug_(aug), order_(epoch_batches(data.size(), batch_size, seed, epoch, shuffle)) {}

Batch Batches::get(std::size_t i) const {
  if (i >= order_.size()) throw InputError("batch index out of range");
  Rng rng = Rng::derive(seed_, {epoch_, i, 0xa11a});
  return make_batch(*data_, order_[i], aug_, rng);
}

bool Batches::next(Batch& out) {
  if (cursor_ >= order_.size()) return false;
  out = get(cursor_++);
  return true;
}

}  // namespace vit
