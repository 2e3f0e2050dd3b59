// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Single-file tensor checkpoints:
//
//   bytes 0..7   magic "KGELMCK1"
//   bytes 8..15  manifest length L, uint64 little-endian
//   next L bytes JSON manifest {"format", "version", "tensors": [
//                  {"name", "shape", "dtype": "f64", "offset", "nbytes"}, ...]}
//   remainder    raw little-endian payloads; offsets are relative to here

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "kgelm/numkit/optim.hpp"
#include "kgelm/numkit/tensor.hpp"

namespace kgelm::num {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
void save_checkpoint(const std::filesystem::path& path, std::span<const NamedVar> params);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

/// Copies stored tensors into params by name. Every parameter must be present
/// with an identical shape.
void load_into(const std::filesystem::path& path, std::span<NamedVar> params);

}  // namespace kgelm::num
