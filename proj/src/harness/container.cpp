#include "vit/harness/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "vit/error.hpp"

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace vit {

namespace {

std::size_t type_size(StoredType t) {
  switch (t) {
    case StoredType::f32: return 4;
    case StoredType::f64: return 8;
    case StoredType::u8: return 1;
  }
  return 0;
}

template <typename T>
StoredType stored_type_of() {
  if constexpr (std::is_same_v<T, float>) return StoredType::f32;
  else return StoredType::f64;
}

template <typename U>
void put(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  std::size_t offset() const { return off_; }

  void need(std::size_t n, const char* what) const {
    if (b_.size() - off_ < n) {
      throw FormatError(std::string("container truncated while reading ") + what, off_);
    }
  }
  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(b_[off_ + i]) << (8 * i));
    off_ += sizeof(U);
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = b_.subspan(off_, n);
    off_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t off_ = 0;
};

}  // namespace

template <typename T>
StoredTensor StoredTensor::from(std::string name, const Tensor<T>& t) {
  StoredTensor s;
  s.name = std::move(name);
  s.type = stored_type_of<T>();
  s.shape = t.shape();
  s.bytes.resize(t.size() * sizeof(T));
  std::memcpy(s.bytes.data(), t.ptr(), s.bytes.size());
  return s;
}

StoredTensor StoredTensor::from_bytes(std::string name, std::span<const std::uint8_t> data, Shape shape) {
  if (shape_size(shape) != data.size()) throw DimensionError("stored u8 tensor: data does not match shape");
  StoredTensor s;
  s.name = std::move(name);
  s.type = StoredType::u8;
  s.shape = std::move(shape);
  s.bytes.assign(data.begin(), data.end());
  return s;
}

StoredTensor StoredTensor::from_text(std::string name, const std::string& text) {
  if (text.empty()) {
    const std::uint8_t nul = 0;
    return from_bytes(std::move(name), {&nul, 1}, {1});
  }
  const auto* p = reinterpret_cast<const std::uint8_t*>(text.data());
  return from_bytes(std::move(name), {p, text.size()}, {text.size()});
}

template <typename T>
Tensor<T> StoredTensor::as() const {
  if (type != stored_type_of<T>()) {
    throw FormatError("tensor '" + name + "' has stored type " + std::to_string(static_cast<int>(type)), 0);
  }
  Tensor<T> t(shape);
  std::memcpy(t.ptr(), bytes.data(), bytes.size());
  return t;
}

std::string StoredTensor::text() const {
  if (type != StoredType::u8) throw FormatError("tensor '" + name + "' is not text", 0);
  std::string s(bytes.begin(), bytes.end());
  // empty text is stored as a single NUL byte
  if (s.size() == 1 && s[0] == '\0') s.clear();
  return s;
}

template StoredTensor StoredTensor::from(std::string, const Tensor<float>&);
template StoredTensor StoredTensor::from(std::string, const Tensor<double>&);
template Tensor<float> StoredTensor::as() const;
template Tensor<double> StoredTensor::as() const;

std::vector<std::uint8_t> encode_container(const std::vector<StoredTensor>& tensors) {
  std::vector<std::uint8_t> out(kContainerMagic, kContainerMagic + 4);
  put<std::uint32_t>(out, kContainerVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.name.size() > 0xffff) throw FormatError("tensor name too long: " + t.name.substr(0, 40) + "...", out.size());
    if (t.shape.empty() || t.shape.size() > 255) throw FormatError("tensor '" + t.name + "' has unsupported rank", out.size());
    if (t.bytes.size() != shape_size(t.shape) * type_size(t.type)) {
      throw FormatError("tensor '" + t.name + "' data does not match its shape", out.size());
    }
    put<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    out.push_back(static_cast<std::uint8_t>(t.type));
    out.push_back(static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) put<std::uint64_t>(out, d);
    out.insert(out.end(), t.bytes.begin(), t.bytes.end());
  }
  return out;
}

std::vector<StoredTensor> decode_container(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), kContainerMagic, 4) != 0) throw FormatError("bad magic, not a VITC container", 0);
  const auto version = r.get<std::uint32_t>("version");
  if (version != kContainerVersion) {
    throw VersionError("unsupported container version " + std::to_string(version) + " (expected " +
                           std::to_string(kContainerVersion) + ")",
                       4);
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  std::vector<StoredTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t start = r.offset();
    StoredTensor t;
    t.offset = start;
    const auto len = r.get<std::uint16_t>("name length");
    auto name = r.take(len, "name");
    t.name.assign(name.begin(), name.end());
    const auto type = r.get<std::uint8_t>("dtype");
    if (type > 2) throw FormatError("tensor '" + t.name + "' has unknown dtype " + std::to_string(type), start);
    t.type = static_cast<StoredType>(type);
    const auto rank = r.get<std::uint8_t>("rank");
    if (rank == 0) throw FormatError("tensor '" + t.name + "' has rank 0", start);
    std::size_t elems = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      const auto d = r.get<std::uint64_t>("dims");
      if (d == 0 || d > (std::size_t{1} << 40)) throw FormatError("tensor '" + t.name + "' has a bad dim", start);
      t.shape.push_back(static_cast<std::size_t>(d));
      elems *= static_cast<std::size_t>(d);
      if (elems > (std::size_t{1} << 40)) throw FormatError("tensor '" + t.name + "' is implausibly large", start);
    }
    auto data = r.take(elems * type_size(t.type), "tensor data");
    t.bytes.assign(data.begin(), data.end());
    out.push_back(std::move(t));
  }
  if (r.offset() != bytes.size()) {
    throw FormatError("trailing bytes after " + std::to_string(count) + " tensors", r.offset());
  }
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

void write_container(const std::filesystem::path& path, const std::vector<StoredTensor>& tensors) {
  write_file(path, encode_container(tensors));
}

std::vector<StoredTensor> read_container(const std::filesystem::path& path) {
  return decode_container(read_file(path));
}

}  // namespace vit
