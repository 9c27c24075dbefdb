// Copyright (c) 2026 The AlignHuman-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Everything except the CLI pipeline stages (alignhuman/pipeline.hpp), which
// additionally need libcrypto.

#pragma once

#include "alignhuman/autodiff.hpp"
#include "alignhuman/config.hpp"
#include "alignhuman/errors.hpp"
#include "alignhuman/evalsuite.hpp"
#include "alignhuman/flowmatch.hpp"
#include "alignhuman/optim.hpp"
#include "alignhuman/rng.hpp"
#include "alignhuman/segment.hpp"
#include "alignhuman/spectral.hpp"
#include "alignhuman/synthgen.hpp"
#include "alignhuman/tpo.hpp"
#include "alignhuman/velonet.hpp"
