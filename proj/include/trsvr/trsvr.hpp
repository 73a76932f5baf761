#pragma once

// Umbrella header for the trsvr library: variance-reduced trust-region
// optimization for finite sums, baseline optimizers, and the convergence
// diagnostics that go with them.

#include "trsvr/config.hpp"
#include "trsvr/core.hpp"
#include "trsvr/drivers.hpp"
#include "trsvr/errors.hpp"
#include "trsvr/estimators.hpp"
#include "trsvr/metrics.hpp"
#include "trsvr/problems.hpp"
#include "trsvr/theory.hpp"
#include "trsvr/tr_solver.hpp"
