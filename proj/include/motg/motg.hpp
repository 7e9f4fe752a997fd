#pragma once

#include "motg/aggregate.hpp"
#include "motg/analysis.hpp"
#include "motg/autograd.hpp"
#include "motg/checkpoint.hpp"
#include "motg/config.hpp"
#include "motg/error.hpp"
#include "motg/generation.hpp"
#include "motg/grpo.hpp"
#include "motg/jsonl.hpp"
#include "motg/model.hpp"
#include "motg/rng.hpp"
#include "motg/sampling.hpp"
#include "motg/simplex.hpp"
#include "motg/tasks.hpp"
#include "motg/tensor.hpp"
#include "motg/train.hpp"
