#pragma once

#include "affclip/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace affclip {

/// Dense host tensor as stored on disk (row-major, values widened to float).
struct StoredTensor {
  std::vector<std::int64_t> shape;
  std::vector<float> values;

  std::int64_t numel() const;
  /// Views the tensor as rows x (numel / rows); rows = shape[0] by default.
  RowMatrix<float> matrix(std::int64_t rows = -1) const;
};

/// Reader/writer for the safetensors layout: u64 little-endian header length,
/// JSON header (dtype, shape, byte offsets per tensor, string metadata), then
/// the raw little-endian payload. Reads F32/F16/BF16/F64/I32/I64, writes F32.
struct TensorFile {
  std::map<std::string, StoredTensor> tensors;
  std::map<std::string, std::string> metadata;

  static TensorFile read(const std::filesystem::path& path);
  void write(const std::filesystem::path& path) const;

  bool contains(const std::string& name) const { return tensors.count(name) != 0; }
  const StoredTensor& at(const std::string& name) const;
};

}  // namespace affclip
