// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "egmf/ablation.hpp"
#include "egmf/attention.hpp"
#include "egmf/autograd.hpp"
#include "egmf/checkpoint.hpp"
#include "egmf/config.hpp"
#include "egmf/data.hpp"
#include "egmf/encoders.hpp"
#include "egmf/enhancer.hpp"
#include "egmf/errors.hpp"
#include "egmf/fusion.hpp"
#include "egmf/lora.hpp"
#include "egmf/metrics.hpp"
#include "egmf/model.hpp"
#include "egmf/nn.hpp"
#include "egmf/ops.hpp"
#include "egmf/pipeline.hpp"
#include "egmf/rng.hpp"
#include "egmf/tensor.hpp"
#include "egmf/toy_lm.hpp"
#include "egmf/training.hpp"
#include "egmf/vocab.hpp"
