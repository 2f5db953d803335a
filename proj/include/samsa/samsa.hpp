#pragma once

#include "samsa/attention.hpp"
#include "samsa/checkpoint.hpp"
#include "samsa/counters.hpp"
#include "samsa/graph_bridge.hpp"
#include "samsa/gumbel.hpp"
#include "samsa/model.hpp"
#include "samsa/ops.hpp"
#include "samsa/optim.hpp"
#include "samsa/sampler.hpp"
#include "samsa/tasks.hpp"
#include "samsa/tensor.hpp"
#include "samsa/train.hpp"
#include "samsa/verification/verify.hpp"
