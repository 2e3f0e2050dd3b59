// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace kgelm {

/// Raised for every contract violation in the library. Messages name the
/// offending object (parameter, triple, cui, example id) where one exists.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace kgelm
