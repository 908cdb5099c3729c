#pragma once

// Umbrella header for the cofind library: common-item selection across bags
// of feature vectors via unary+pairwise energy minimization.

#include "cofind/core.hpp"
#include "cofind/potentials.hpp"
#include "cofind/training.hpp"
#include "cofind/inference.hpp"
#include "cofind/synth.hpp"
#include "cofind/io.hpp"
#include "cofind/bench.hpp"
