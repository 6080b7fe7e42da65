#pragma once

#include "tsjepa/core.hpp"
#include "tsjepa/data.hpp"
#include "tsjepa/evaluation.hpp"
#include "tsjepa/network.hpp"
#include "tsjepa/numerics.hpp"
#include "tsjepa/objectives.hpp"
#include "tsjepa/optim.hpp"
#include "tsjepa/tokenizer.hpp"
#include "tsjepa/transformer.hpp"
