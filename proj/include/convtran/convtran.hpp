// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The convtran authors

#pragma once

#include "convtran/attention_map.hpp"
#include "convtran/backbone.hpp"
#include "convtran/checkpoint.hpp"
#include "convtran/cten.hpp"
#include "convtran/data.hpp"
#include "convtran/error.hpp"
#include "convtran/gradcheck.hpp"
#include "convtran/layers.hpp"
#include "convtran/model.hpp"
#include "convtran/ops.hpp"
#include "convtran/rng.hpp"
#include "convtran/settings.hpp"
#include "convtran/tensor.hpp"
#include "convtran/train.hpp"
#include "convtran/transformer.hpp"
