/* Copyright 2026 The LayoutForge Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

// Tensor blob files: an 8-byte magic, a little-endian u32 format version, a
// u64 header length, a JSON header and then the raw little-endian tensor
// values. The header lists {name, shape, dtype, offset, nbytes} per tensor,
// with offsets relative to the start of the data section, plus arbitrary
// metadata under "meta".

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "layoutforge/error.hpp"
#include "layoutforge/tensor.hpp"

namespace lf {

static_assert(std::endian::native == std::endian::little,
              "blob I/O writes host byte order and assumes a little-endian host");

inline constexpr std::string_view kBlobMagic = "LFBLOB\x01\x00";
inline constexpr std::uint32_t kBlobVersion = 1;

template <typename T>
constexpr std::string_view dtype_name() {
  if constexpr (std::is_same_v<T, float>) return "f32";
  else return "f64";
}

struct BlobEntry {
  std::string dtype;
  Shape shape;
  std::vector<char> bytes;

  std::size_t count() const { return shape_size(shape); }

  template <typename T>
  std::vector<T> as() const {
    std::vector<T> out(count());
    if (dtype == "f32") {
      std::vector<float> raw(count());
      std::memcpy(raw.data(), bytes.data(), raw.size() * sizeof(float));
      std::copy(raw.begin(), raw.end(), out.begin());
    } else {
      std::vector<double> raw(count());
      std::memcpy(raw.data(), bytes.data(), raw.size() * sizeof(double));
      std::transform(raw.begin(), raw.end(), out.begin(), [](double v) { return static_cast<T>(v); });
    }
    return out;
  }
};

struct Blob {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::string> order;
  std::map<std::string, BlobEntry> tensors;

  template <typename T>
  void put(const std::string& name, const Tensor<T>& t) {
    put_raw<T>(name, t.shape(), t.values());
  }
  template <typename T>
  void put_raw(const std::string& name, const Shape& shape, const std::vector<T>& values) {
    BlobEntry e{std::string(dtype_name<T>()), shape, std::vector<char>(values.size() * sizeof(T))};
    std::memcpy(e.bytes.data(), values.data(), e.bytes.size());
    if (!tensors.count(name)) order.push_back(name);
    tensors[name] = std::move(e);
  }
  bool has(const std::string& name) const { return tensors.count(name) != 0; }

  const BlobEntry& at(const std::string& name) const {
    const auto it = tensors.find(name);
    if (it == tensors.end()) fail(ErrorCode::kCheckpoint, "blob: missing tensor '" + name + "'");
    return it->second;
  }

  // Copies a stored tensor into `dst`, which must have the recorded shape.
  template <typename T>
  void read_into(const std::string& name, Tensor<T>& dst) const {
    const auto& e = at(name);
    if (e.shape != dst.shape())
      fail(ErrorCode::kCheckpoint, "blob: tensor '" + name + "' has shape " + shape_string(e.shape) +
                                       ", expected " + shape_string(dst.shape()));
    dst.values() = e.as<T>();
  }
};

inline void write_blob(const std::string& path, const Blob& blob) {
  nlohmann::json header;
  header["format_version"] = kBlobVersion;
  header["meta"] = blob.meta;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& name : blob.order) {
    const auto& e = blob.tensors.at(name);
    header["tensors"].push_back(
        {{"name", name}, {"shape", e.shape}, {"dtype", e.dtype}, {"offset", offset}, {"nbytes", e.bytes.size()}});
    offset += e.bytes.size();
  }
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot open '" + path + "' for writing");
  const std::uint32_t version = kBlobVersion;
  const std::uint64_t header_len = text.size();
  out.write(kBlobMagic.data(), static_cast<std::streamsize>(kBlobMagic.size()));
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&header_len), sizeof header_len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& name : blob.order) {
    const auto& bytes = blob.tensors.at(name).bytes;
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  if (!out) fail(ErrorCode::kIo, "write to '" + path + "' failed");
}

// Reads a whole blob file; any structural problem raises a checkpoint error
// before a Blob is returned.
inline Blob read_blob(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open '" + path + "'");
  const std::vector<char> file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t fixed = kBlobMagic.size() + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (file.size() < fixed) fail(ErrorCode::kCheckpoint, "'" + path + "' is truncated (no header)");
  if (std::string_view(file.data(), kBlobMagic.size()) != kBlobMagic)
    fail(ErrorCode::kCheckpoint, "'" + path + "' is not a tensor blob (bad magic)");
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  std::memcpy(&version, file.data() + kBlobMagic.size(), sizeof version);
  std::memcpy(&header_len, file.data() + kBlobMagic.size() + sizeof version, sizeof header_len);
  if (version != kBlobVersion)
    fail(ErrorCode::kCheckpoint, "'" + path + "' has format version " + std::to_string(version) +
                                     ", expected " + std::to_string(kBlobVersion));
  if (file.size() - fixed < header_len) fail(ErrorCode::kCheckpoint, "'" + path + "' is truncated (header)");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(file.begin() + static_cast<std::ptrdiff_t>(fixed),
                                   file.begin() + static_cast<std::ptrdiff_t>(fixed + header_len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kCheckpoint, "'" + path + "' has a corrupt header: " + e.what());
  }
  const std::size_t data_start = fixed + header_len;
  const std::size_t data_size = file.size() - data_start;
  Blob blob;
  try {
    blob.meta = header.value("meta", nlohmann::json::object());
    for (const auto& t : header.at("tensors")) {
      BlobEntry e;
      e.dtype = t.at("dtype").get<std::string>();
      e.shape = t.at("shape").get<Shape>();
      const auto offset = t.at("offset").get<std::uint64_t>();
      const auto nbytes = t.at("nbytes").get<std::uint64_t>();
      const std::size_t width = e.dtype == "f32" ? 4 : e.dtype == "f64" ? 8 : 0;
      const auto name = t.at("name").get<std::string>();
      if (width == 0) fail(ErrorCode::kCheckpoint, "tensor '" + name + "' has unknown dtype " + e.dtype);
      if (nbytes != e.count() * width)
        fail(ErrorCode::kCheckpoint, "tensor '" + name + "' byte count does not match shape " + shape_string(e.shape));
      if (offset + nbytes > data_size)
        fail(ErrorCode::kCheckpoint, "'" + path + "' is truncated (tensor '" + name + "')");
      e.bytes.assign(file.begin() + static_cast<std::ptrdiff_t>(data_start + offset),
                     file.begin() + static_cast<std::ptrdiff_t>(data_start + offset + nbytes));
      blob.order.push_back(name);
      blob.tensors[name] = std::move(e);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kCheckpoint, "'" + path + "' header is malformed: " + e.what());
  }
  return blob;
}

}  // namespace lf
