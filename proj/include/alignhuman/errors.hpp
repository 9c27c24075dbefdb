// Copyright (c) 2026 The AlignHuman-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace alignhuman {

/// Invalid shapes, out-of-domain arguments, malformed inputs.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed file contents (dataset lines, parameter documents, configs).
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// NaN/Inf or divergence detected during training or sampling.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A pipeline stage ran before the artifact it consumes exists.
class DependencyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace alignhuman
