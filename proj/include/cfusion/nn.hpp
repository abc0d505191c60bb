#pragma once

#include "cfusion/nn/net.hpp"
#include "cfusion/nn/serialize.hpp"
#include "cfusion/nn/tensor.hpp"
#include "cfusion/nn/train.hpp"
