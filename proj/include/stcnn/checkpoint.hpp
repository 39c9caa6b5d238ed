// Copyright 2026 The stcnn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container: "STCK1" magic, a JSON manifest mapping tensor names
// to shape/dtype/byte-offset, then raw little-endian buffers.

#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>

#include <json.hpp>

#include "stcnn/tensor.hpp"

namespace stcnn {

inline constexpr char kCheckpointMagic[5] = {'S', 'T', 'C', 'K', '1'};

template <typename T>
const char* dtype_tag() {
  if constexpr (sizeof(T) == 4) return "f32";
  else return "f64";
}

template <typename T>
void save_checkpoint(const std::string& path, const std::vector<std::string>& order,
                     const std::map<std::string, Tensor<T>>& tensors) {
  nlohmann::json manifest;
  manifest["dtype"] = dtype_tag<T>();
  manifest["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& name : order) {
    const Tensor<T>& t = tensors.at(name);
    nlohmann::json e;
    e["name"] = name;
    e["shape"] = t.shape();
    e["offset"] = offset;
    manifest["tensors"].push_back(e);
    offset += static_cast<std::uint64_t>(t.size()) * sizeof(T);
  }
  const std::string m = manifest.dump();
  std::ofstream os(path, std::ios::binary);
  STCNN_CHECK(os.good(), "cannot open checkpoint for writing: " << path);
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint64_t mlen = m.size();
  os.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
  os.write(m.data(), static_cast<std::streamsize>(m.size()));
  for (const auto& name : order) {
    const Tensor<T>& t = tensors.at(name);
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * static_cast<std::int64_t>(sizeof(T))));
  }
  STCNN_CHECK(os.good(), "short write to checkpoint " << path);
}

template <typename T>
std::map<std::string, Tensor<T>> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  STCNN_CHECK(is.good(), "cannot open checkpoint: " << path);
  char magic[sizeof(kCheckpointMagic)];
  is.read(magic, sizeof(magic));
  STCNN_CHECK(is.good() && std::equal(magic, magic + sizeof(magic), kCheckpointMagic),
              "bad checkpoint magic in " << path << " (want STCK1)");
  std::uint64_t mlen = 0;
  is.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
  std::string mstr(mlen, '\0');
  is.read(mstr.data(), static_cast<std::streamsize>(mlen));
  STCNN_CHECK(is.good(), "truncated checkpoint manifest in " << path);
  const nlohmann::json manifest = nlohmann::json::parse(mstr);
  STCNN_CHECK(manifest.at("dtype").get<std::string>() == dtype_tag<T>(),
              "checkpoint dtype " << manifest.at("dtype").get<std::string>() << " does not match "
                                  << dtype_tag<T>());
  std::map<std::string, Tensor<T>> out;
  const std::streampos data_start = is.tellg();
  for (const auto& e : manifest.at("tensors")) {
    const std::string name = e.at("name").get<std::string>();
    Shape shape = e.at("shape").get<Shape>();
    Tensor<T> t(shape);
    is.seekg(data_start + static_cast<std::streamoff>(e.at("offset").get<std::uint64_t>()));
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * static_cast<std::int64_t>(sizeof(T))));
    STCNN_CHECK(is.good(), "truncated tensor '" << name << "' in " << path);
    out.emplace(name, std::move(t));
  }
  return out;
}

}  // namespace stcnn
