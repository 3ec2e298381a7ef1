#pragma once

#include "xrseg/common.hpp"
#include "xrseg/tensor.hpp"
#include "xrseg/tape.hpp"
#include "xrseg/kernels.hpp"
#include "xrseg/ops.hpp"
#include "xrseg/model.hpp"
#include "xrseg/image.hpp"
#include "xrseg/data.hpp"
#include "xrseg/metrics.hpp"
#include "xrseg/checkpoint.hpp"
#include "xrseg/train.hpp"
#include "xrseg/run_config.hpp"
