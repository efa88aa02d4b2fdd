#pragma once

#include "sbp/error.hpp"
#include "sbp/tensor.hpp"
#include "sbp/ops.hpp"
#include "sbp/blocks.hpp"
#include "sbp/box.hpp"
#include "sbp/losses.hpp"
#include "sbp/detection.hpp"
#include "sbp/decode.hpp"
#include "sbp/eval.hpp"
#include "sbp/graph.hpp"
#include "sbp/weights.hpp"
#include "sbp/forward.hpp"
#include "sbp/cost_model.hpp"
#include "sbp/gradcheck.hpp"
#include "sbp/version.hpp"
