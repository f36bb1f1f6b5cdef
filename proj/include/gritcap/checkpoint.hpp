#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gritcap/tensor.hpp"

namespace gritcap {

/// Named tensors plus a free-form UTF-8 metadata string (JSON by convention).
///
/// Binary layout, all integers little-endian:
///
///   8 bytes   magic "GRITTNSR"
///   u32       format version (1)
///   u64       metadata byte length, then the metadata bytes
///   u64       entry count
///   per entry:
///     u64     name byte length, then the name bytes
///     u64     rank, then rank x u64 dimensions
///     f64     numel values, IEEE-754 binary64, row-major
///
/// Round trips are bit-exact.
struct TensorFile {
  std::string metadata;
  std::vector<std::pair<std::string, Tensor>> entries;

  // Throws ValidationError when the entry is missing.
  const Tensor& at(std::string_view name) const;
};

std::string serialize_tensor_file(const TensorFile& file);
TensorFile deserialize_tensor_file(std::string_view bytes);

void save_tensor_file(const TensorFile& file, const std::filesystem::path& path);
TensorFile load_tensor_file(const std::filesystem::path& path);

}  // namespace gritcap
