#include "affclip/tensor_file.hpp"

#include "affclip/errors.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>

namespace affclip {
namespace {

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

float half_to_float(std::uint16_t h) {
  const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
  std::uint32_t exp = (h >> 10) & 0x1Fu;
  std::uint32_t mant = h & 0x3FFu;
  std::uint32_t bits = 0;
  if (exp == 0) {
    if (mant == 0) {
      bits = sign;
    } else {
      exp = 127 - 15 + 1;
      while ((mant & 0x400u) == 0) {
        mant <<= 1;
        --exp;
      }
      mant &= 0x3FFu;
      bits = sign | (exp << 23) | (mant << 13);
    }
  } else if (exp == 0x1F) {
    bits = sign | 0x7F800000u | (mant << 13);
  } else {
    bits = sign | ((exp + 127 - 15) << 23) | (mant << 13);
  }
  return std::bit_cast<float>(bits);
}

std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "F32" || dtype == "I32") return 4;
  if (dtype == "F16" || dtype == "BF16") return 2;
  if (dtype == "F64" || dtype == "I64") return 8;
  return 0;
}

template <typename T>
T load(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

void widen(const std::string& dtype, const char* src, std::size_t n, float* dst) {
  for (std::size_t i = 0; i < n; ++i) {
    if (dtype == "F32") {
      dst[i] = load<float>(src + 4 * i);
    } else if (dtype == "F16") {
      dst[i] = half_to_float(load<std::uint16_t>(src + 2 * i));
    } else if (dtype == "BF16") {
      dst[i] = std::bit_cast<float>(static_cast<std::uint32_t>(load<std::uint16_t>(src + 2 * i)) << 16);
    } else if (dtype == "F64") {
      dst[i] = static_cast<float>(load<double>(src + 8 * i));
    } else if (dtype == "I32") {
      dst[i] = static_cast<float>(load<std::int32_t>(src + 4 * i));
    } else {
      dst[i] = static_cast<float>(load<std::int64_t>(src + 8 * i));
    }
  }
}

}  // namespace

std::int64_t StoredTensor::numel() const {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

RowMatrix<float> StoredTensor::matrix(std::int64_t rows) const {
  const std::int64_t n = numel();
  if (rows < 0) rows = shape.empty() ? 1 : shape.front();
  if (rows == 0 || n % rows != 0) throw InvalidInput("tensor of " + std::to_string(n) + " values cannot have " + std::to_string(rows) + " rows");
  return Eigen::Map<const RowMatrix<float>>(values.data(), rows, n / rows);
}

const StoredTensor& TensorFile::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw InvalidInput("tensor '" + name + "' not present");
  return it->second;
}

TensorFile TensorFile::read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open tensor file");
  std::uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof header_len);
  if (!in || header_len == 0 || header_len > (1ULL << 30)) throw IoError(path.string(), "bad tensor file header");
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw IoError(path.string(), "truncated tensor file header");
  std::vector<char> payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string(), std::string("malformed tensor file header: ") + e.what());
  }
  TensorFile file;
  for (auto& [name, entry] : j.items()) {
    if (name == "__metadata__") {
      for (auto& [k, v] : entry.items()) file.metadata[k] = v.is_string() ? v.get<std::string>() : v.dump();
      continue;
    }
    const std::string dtype = entry.at("dtype").get<std::string>();
    const std::size_t width = dtype_size(dtype);
    if (width == 0) throw IoError(path.string(), "unsupported dtype " + dtype + " for '" + name + "'");
    StoredTensor t;
    t.shape = entry.at("shape").get<std::vector<std::int64_t>>();
    const auto offsets = entry.at("data_offsets").get<std::vector<std::uint64_t>>();
    const auto n = static_cast<std::size_t>(t.numel());
    if (offsets.size() != 2 || offsets[1] < offsets[0] || offsets[1] > payload.size() ||
        offsets[1] - offsets[0] != n * width)
      throw IoError(path.string(), "inconsistent byte range for '" + name + "'");
    t.values.resize(n);
    widen(dtype, payload.data() + offsets[0], n, t.values.data());
    file.tensors.emplace(name, std::move(t));
  }
  return file;
}

void TensorFile::write(const std::filesystem::path& path) const {
  nlohmann::json header = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    if (static_cast<std::int64_t>(t.values.size()) != t.numel())
      throw InvalidInput("tensor '" + name + "' shape does not match its value count");
    const std::uint64_t bytes = t.values.size() * sizeof(float);
    header[name] = {{"dtype", "F32"}, {"shape", t.shape}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  if (!metadata.empty()) header["__metadata__"] = metadata;
  std::string text = header.dump();
  while (text.size() % 8 != 0) text.push_back(' ');

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : tensors)
    out.write(reinterpret_cast<const char*>(t.values.data()), static_cast<std::streamsize>(t.values.size() * sizeof(float)));
  if (!out) throw IoError(path.string(), "write failed");
}

}  // namespace affclip
