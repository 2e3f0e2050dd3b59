// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0

#include "kgelm/numkit/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <unordered_map>

#include "kgelm/error.hpp"

namespace kgelm::num {

namespace {

constexpr char kMagic[8] = {'K', 'G', 'E', 'L', 'M', 'C', 'K', '1'};

template <typename T>
void to_le(T& v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    std::reverse(b, b + sizeof(T));
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  nlohmann::json manifest;
  manifest["format"] = "kgelm-checkpoint";
  manifest["version"] = 1;
  manifest["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : tensors) {
    const std::uint64_t nbytes = t.tensor.size() * sizeof(double);
    manifest["tensors"].push_back({{"name", t.name},
                                   {"shape", t.tensor.shape()},
                                   {"dtype", "f64"},
                                   {"offset", offset},
                                   {"nbytes", nbytes}});
    offset += nbytes;
  }
  const std::string header = manifest.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open checkpoint for writing: " + path.string());
  out.write(kMagic, sizeof(kMagic));
  std::uint64_t len = header.size();
  to_le(len);
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& t : tensors) {
    for (double x : t.tensor.data()) {
      to_le(x);
      out.write(reinterpret_cast<const char*>(&x), sizeof(x));
    }
  }
  if (!out) throw Error("failed writing checkpoint: " + path.string());
}

void save_checkpoint(const std::filesystem::path& path, std::span<const NamedVar> params) {
  std::vector<NamedTensor> tensors;
  tensors.reserve(params.size());
  for (const auto& p : params) tensors.push_back({p.name, p.var.value()});
  save_checkpoint(path, tensors);
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error("not a kgelm checkpoint: " + path.string());
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  to_le(len);
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (!in) throw Error("truncated checkpoint manifest: " + path.string());
  const auto manifest = nlohmann::json::parse(header);
  const auto payload_start = in.tellg();
  std::vector<NamedTensor> out;
  for (const auto& entry : manifest.at("tensors")) {
    if (entry.at("dtype") != "f64") throw Error("unsupported dtype in checkpoint: " + entry.at("dtype").dump());
    Shape shape = entry.at("shape").get<Shape>();
    const auto n = shape_numel(shape);
    const auto offset = entry.at("offset").get<std::uint64_t>();
    if (entry.at("nbytes").get<std::uint64_t>() != n * sizeof(double)) {
      throw Error("checkpoint entry size does not match shape: " + entry.at("name").get<std::string>());
    }
    std::vector<double> data(n);
    in.seekg(payload_start + static_cast<std::streamoff>(offset));
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw Error("truncated checkpoint payload: " + path.string());
    for (auto& x : data) to_le(x);
    out.push_back({entry.at("name").get<std::string>(), Tensor(std::move(shape), std::move(data))});
  }
  return out;
}

void load_into(const std::filesystem::path& path, std::span<NamedVar> params) {
  auto stored = load_checkpoint(path);
  std::unordered_map<std::string, Tensor*> by_name;
  for (auto& t : stored) by_name[t.name] = &t.tensor;
  for (auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw Error("checkpoint " + path.string() + " has no tensor " + p.name);
    if (it->second->shape() != p.var.shape()) {
      throw Error("shape mismatch for " + p.name + ": checkpoint " + shape_str(it->second->shape()) +
                  " vs model " + shape_str(p.var.shape()));
    }
  }
  for (auto& p : params) p.var.mutable_value() = *by_name[p.name];
}

}  // namespace kgelm::num
