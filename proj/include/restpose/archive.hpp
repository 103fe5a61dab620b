// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace restpose::io {

enum class DType { kF32, kF64, kI32 };

const char* dtype_name(DType t);
std::size_t dtype_size(DType t);

struct NamedArray {
  std::string name;
  DType dtype = DType::kF64;
  std::vector<std::int64_t> shape;
  std::vector<std::uint8_t> bytes;

  std::int64_t element_count() const;
};

// Named-array archive: an 8-byte magic, a little-endian u64 index length, a JSON
// index, then the 8-byte-aligned array payloads. See docs/archive_format.md.
//
// Serialization is deterministic: identical contents produce identical bytes.
class Archive {
 public:
  nlohmann::json meta = nlohmann::json::object();

  void put_f64(const std::string& name, std::span<const double> values, std::vector<std::int64_t> shape);
  void put_f32(const std::string& name, std::span<const float> values, std::vector<std::int64_t> shape);
  void put_i32(const std::string& name, std::span<const std::int32_t> values, std::vector<std::int64_t> shape);

  bool contains(const std::string& name) const;
  const NamedArray& at(const std::string& name) const;
  const std::vector<NamedArray>& arrays() const { return arrays_; }

  // Typed reads. `expected_shape` entries of -1 match any extent; a mismatch throws kFormat
  // naming the array.
  std::vector<double> get_f64(const std::string& name, const std::vector<std::int64_t>& expected_shape = {}) const;
  std::vector<float> get_f32(const std::string& name, const std::vector<std::int64_t>& expected_shape = {}) const;
  std::vector<std::int32_t> get_i32(const std::string& name,
                                    const std::vector<std::int64_t>& expected_shape = {}) const;

  std::vector<std::uint8_t> serialize() const;
  static Archive deserialize(std::span<const std::uint8_t> bytes);

  void save(const std::filesystem::path& path) const;
  static Archive load(const std::filesystem::path& path);

 private:
  void put_raw(NamedArray array);
  const NamedArray& checked(const std::string& name, DType dtype, const std::vector<std::int64_t>& expected) const;

  std::vector<NamedArray> arrays_;
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// Hex SHA-256 digest.
std::string sha256_hex(std::span<const std::uint8_t> bytes);

}  // namespace restpose::io
