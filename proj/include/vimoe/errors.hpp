// Copyright (c) 2026 The vimoe-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace vimoe {

// Shape or dimension disagreement between operands.
struct shape_error : std::runtime_error {
  explicit shape_error(const std::string& what) : std::runtime_error(what) {}
};

// A caller violated an operation precondition.
struct contract_error : std::runtime_error {
  explicit contract_error(const std::string& what) : std::runtime_error(what) {}
};

// Malformed or truncated file content.
struct format_error : std::runtime_error {
  explicit format_error(const std::string& what) : std::runtime_error(what) {}
};

// NaN or other numeric-domain failure.
struct numeric_error : std::runtime_error {
  explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace vimoe
