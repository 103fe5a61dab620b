// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

#include "restpose/archive.hpp"

#include <openssl/sha.h>

#include <algorithm>
#include <array>
#include <cstring>
#include <fstream>

#include "restpose/errors.hpp"

namespace restpose {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidParameter: return "invalid parameter";
    case ErrorKind::kDimension: return "dimension error";
    case ErrorKind::kConfig: return "config error";
    case ErrorKind::kFormat: return "format error";
    case ErrorKind::kData: return "data error";
    case ErrorKind::kParse: return "parse error";
    case ErrorKind::kIo: return "io error";
    case ErrorKind::kDependency: return "dependency error";
    case ErrorKind::kOptimization: return "optimization error";
    case ErrorKind::kDegenerate: return "degeneracy error";
    case ErrorKind::kEmptyInput: return "empty input";
    case ErrorKind::kInvariant: return "invariant violation";
  }
  return "error";
}

}  // namespace restpose

namespace restpose::io {
namespace {

constexpr std::array<std::uint8_t, 8> kMagic = {'R', 'P', 'A', 'R', 'C', 1, 0, 0};

std::size_t align8(std::size_t n) { return (n + 7) & ~std::size_t{7}; }

DType parse_dtype(const std::string& s) {
  if (s == "f32") return DType::kF32;
  if (s == "f64") return DType::kF64;
  if (s == "i32") return DType::kI32;
  fail(ErrorKind::kFormat, "unknown dtype '" + s + "'");
}

std::string shape_str(const std::vector<std::int64_t>& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

template <typename T>
NamedArray make_array(const std::string& name, DType dtype, std::span<const T> values,
                      std::vector<std::int64_t> shape) {
  NamedArray a;
  a.name = name;
  a.dtype = dtype;
  a.shape = std::move(shape);
  require(a.element_count() == static_cast<std::int64_t>(values.size()), ErrorKind::kDimension,
          "array '" + name + "' shape " + shape_str(a.shape) + " does not match " +
              std::to_string(values.size()) + " values");
  a.bytes.resize(values.size() * sizeof(T));
  if (!values.empty()) std::memcpy(a.bytes.data(), values.data(), a.bytes.size());
  return a;
}

template <typename T>
std::vector<T> copy_out(const NamedArray& a) {
  std::vector<T> out(a.bytes.size() / sizeof(T));
  if (!out.empty()) std::memcpy(out.data(), a.bytes.data(), a.bytes.size());
  return out;
}

}  // namespace

const char* dtype_name(DType t) {
  switch (t) {
    case DType::kF32: return "f32";
    case DType::kF64: return "f64";
    case DType::kI32: return "i32";
  }
  return "?";
}

std::size_t dtype_size(DType t) { return t == DType::kF64 ? 8 : 4; }

std::int64_t NamedArray::element_count() const {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

void Archive::put_raw(NamedArray array) {
  auto it = std::find_if(arrays_.begin(), arrays_.end(), [&](const NamedArray& a) { return a.name == array.name; });
  if (it != arrays_.end()) {
    *it = std::move(array);
  } else {
    arrays_.push_back(std::move(array));
  }
}

void Archive::put_f64(const std::string& name, std::span<const double> values, std::vector<std::int64_t> shape) {
  put_raw(make_array(name, DType::kF64, values, std::move(shape)));
}

void Archive::put_f32(const std::string& name, std::span<const float> values, std::vector<std::int64_t> shape) {
  put_raw(make_array(name, DType::kF32, values, std::move(shape)));
}

void Archive::put_i32(const std::string& name, std::span<const std::int32_t> values,
                      std::vector<std::int64_t> shape) {
  put_raw(make_array(name, DType::kI32, values, std::move(shape)));
}

bool Archive::contains(const std::string& name) const {
  return std::any_of(arrays_.begin(), arrays_.end(), [&](const NamedArray& a) { return a.name == name; });
}

const NamedArray& Archive::at(const std::string& name) const {
  for (const auto& a : arrays_) {
    if (a.name == name) return a;
  }
  fail(ErrorKind::kFormat, "missing array '" + name + "'");
}

const NamedArray& Archive::checked(const std::string& name, DType dtype,
                                   const std::vector<std::int64_t>& expected) const {
  const NamedArray& a = at(name);
  require(a.dtype == dtype, ErrorKind::kFormat,
          "array '" + name + "' has dtype " + dtype_name(a.dtype) + ", expected " + dtype_name(dtype));
  if (!expected.empty()) {
    bool ok = expected.size() == a.shape.size();
    for (std::size_t i = 0; ok && i < expected.size(); ++i) {
      ok = expected[i] < 0 || expected[i] == a.shape[i];
    }
    require(ok, ErrorKind::kFormat,
            "array '" + name + "' has shape " + shape_str(a.shape) + ", expected " + shape_str(expected));
  }
  return a;
}

std::vector<double> Archive::get_f64(const std::string& name, const std::vector<std::int64_t>& expected_shape) const {
  return copy_out<double>(checked(name, DType::kF64, expected_shape));
}

std::vector<float> Archive::get_f32(const std::string& name, const std::vector<std::int64_t>& expected_shape) const {
  return copy_out<float>(checked(name, DType::kF32, expected_shape));
}

std::vector<std::int32_t> Archive::get_i32(const std::string& name,
                                           const std::vector<std::int64_t>& expected_shape) const {
  return copy_out<std::int32_t>(checked(name, DType::kI32, expected_shape));
}

std::vector<std::uint8_t> Archive::serialize() const {
  nlohmann::json index;
  index["meta"] = meta;
  index["arrays"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& a : arrays_) {
    index["arrays"].push_back({{"name", a.name},
                               {"dtype", dtype_name(a.dtype)},
                               {"shape", a.shape},
                               {"offset", offset},
                               {"nbytes", a.bytes.size()}});
    offset = align8(offset + a.bytes.size());
  }
  std::string text = index.dump();
  text.resize(align8(text.size()), ' ');

  const std::size_t data_start = 16 + text.size();
  std::vector<std::uint8_t> out(data_start + offset, 0);
  std::memcpy(out.data(), kMagic.data(), kMagic.size());
  const std::uint64_t len = text.size();
  for (int i = 0; i < 8; ++i) out[8 + i] = static_cast<std::uint8_t>(len >> (8 * i));
  std::memcpy(out.data() + 16, text.data(), text.size());
  std::size_t cursor = 0;
  for (const auto& a : arrays_) {
    if (!a.bytes.empty()) std::memcpy(out.data() + data_start + cursor, a.bytes.data(), a.bytes.size());
    cursor = align8(cursor + a.bytes.size());
  }
  return out;
}

Archive Archive::deserialize(std::span<const std::uint8_t> bytes) {
  require(bytes.size() >= 16 && std::equal(kMagic.begin(), kMagic.end(), bytes.begin()), ErrorKind::kFormat,
          "not a named-array archive (bad magic)");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= std::uint64_t{bytes[8 + i]} << (8 * i);
  require(16 + len <= bytes.size(), ErrorKind::kFormat, "archive index truncated");
  nlohmann::json index;
  try {
    index = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, std::string("archive index is not valid JSON: ") + e.what());
  }
  const std::size_t data_start = 16 + len;
  Archive ar;
  if (index.contains("meta")) ar.meta = index["meta"];
  require(index.contains("arrays") && index["arrays"].is_array(), ErrorKind::kFormat, "archive index lacks 'arrays'");
  for (const auto& entry : index["arrays"]) {
    NamedArray a;
    try {
      a.name = entry.at("name").get<std::string>();
      a.dtype = parse_dtype(entry.at("dtype").get<std::string>());
      a.shape = entry.at("shape").get<std::vector<std::int64_t>>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto nbytes = entry.at("nbytes").get<std::size_t>();
      require(data_start + offset + nbytes <= bytes.size(), ErrorKind::kFormat,
              "array '" + a.name + "' payload truncated");
      require(static_cast<std::int64_t>(nbytes) == a.element_count() * static_cast<std::int64_t>(dtype_size(a.dtype)),
              ErrorKind::kFormat, "array '" + a.name + "' byte count does not match its shape");
      a.bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(data_start + offset),
                     bytes.begin() + static_cast<std::ptrdiff_t>(data_start + offset + nbytes));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kFormat, std::string("malformed archive entry: ") + e.what());
    }
    ar.arrays_.push_back(std::move(a));
  }
  return ar;
}

void Archive::save(const std::filesystem::path& path) const { write_file_bytes(path, serialize()); }

Archive Archive::load(const std::filesystem::path& path) { return deserialize(read_file_bytes(path)); }

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot open '" + path.string() + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorKind::kIo, "short write to '" + path.string() + "'");
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  std::array<unsigned char, SHA256_DIGEST_LENGTH> digest{};
  SHA256(bytes.data(), bytes.size(), digest.data());
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned char c : digest) {
    out.push_back(kHex[c >> 4]);
    out.push_back(kHex[c & 15]);
  }
  return out;
}

}  // namespace restpose::io
