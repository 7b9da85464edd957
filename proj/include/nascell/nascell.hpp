#pragma once

// Umbrella header for the whole library: a differentiable cell-based
// architecture search engine with rank-pooled dynamic-image preprocessing,
// bilevel weight/architecture optimization, discrete genotype derivation,
// and stacked-cell evaluation.

#include "nascell/cell.hpp"
#include "nascell/checkpoint.hpp"
#include "nascell/dataset.hpp"
#include "nascell/dynamic_image.hpp"
#include "nascell/errors.hpp"
#include "nascell/genotype.hpp"
#include "nascell/image.hpp"
#include "nascell/network.hpp"
#include "nascell/ops.hpp"
#include "nascell/optim.hpp"
#include "nascell/rng.hpp"
#include "nascell/run_config.hpp"
#include "nascell/search.hpp"
#include "nascell/tensor.hpp"
