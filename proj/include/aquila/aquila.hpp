// Copyright 2026 The Aquila-Lite Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "aquila/autograd.hpp"
#include "aquila/checkpoint.hpp"
#include "aquila/commands.hpp"
#include "aquila/config.hpp"
#include "aquila/dataset.hpp"
#include "aquila/decoder.hpp"
#include "aquila/errors.hpp"
#include "aquila/gradcheck.hpp"
#include "aquila/lora.hpp"
#include "aquila/model.hpp"
#include "aquila/model_gradcheck.hpp"
#include "aquila/optim.hpp"
#include "aquila/params.hpp"
#include "aquila/positional.hpp"
#include "aquila/pyramid.hpp"
#include "aquila/region_map.hpp"
#include "aquila/sfi.hpp"
#include "aquila/tensor.hpp"
#include "aquila/trainer.hpp"
