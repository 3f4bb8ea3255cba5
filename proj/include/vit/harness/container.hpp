#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vit/tensor.hpp"

namespace vit {

/// On-disk element type codes.
enum class StoredType : std::uint8_t { f32 = 0, f64 = 1, u8 = 2 };

inline constexpr char kContainerMagic[4] = {'V', 'I', 'T', 'C'};
inline constexpr std::uint32_t kContainerVersion = 1;

/// One named tensor as raw little-endian bytes.
struct StoredTensor {
  std::string name;
  StoredType type = StoredType::f32;
  Shape shape;
  std::vector<std::uint8_t> bytes;
  /// Byte offset of this record in the file it was decoded from.
  std::size_t offset = 0;

  template <typename T>
  static StoredTensor from(std::string name, const Tensor<T>& t);
  static StoredTensor from_bytes(std::string name, std::span<const std::uint8_t> data, Shape shape);
  static StoredTensor from_text(std::string name, const std::string& text);

  /// Converts back; FormatError if the stored type is not T.
  template <typename T>
  Tensor<T> as() const;
  std::string text() const;
};

/// "VITC", u32 version, u32 count, then per tensor: u16 name length, name,
/// u8 type, u8 rank, rank x u64 dims, raw data. All integers little-endian.
std::vector<std::uint8_t> encode_container(const std::vector<StoredTensor>& tensors);

/// FormatError (with byte offset) on malformed input, VersionError on an
/// unknown version.
std::vector<StoredTensor> decode_container(std::span<const std::uint8_t> bytes);

void write_container(const std::filesystem::path& path, const std::vector<StoredTensor>& tensors);
std::vector<StoredTensor> read_container(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace vit
