// Copyright 2026 semamba authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include "semamba/checkpoint.hpp"
#include "semamba/gradcheck.hpp"
#include "semamba/losses.hpp"
#include "semamba/metrics.hpp"
#include "semamba/models.hpp"
#include "semamba/ops.hpp"
#include "semamba/pipeline.hpp"
#include "semamba/spectral.hpp"
#include "semamba/ssm.hpp"
#include "semamba/tensor.hpp"
#include "semamba/toml.hpp"
#include "semamba/wav.hpp"
