// Umbrella header.
#pragma once

#include "slowfast/cache.hpp"
#include "slowfast/core.hpp"
#include "slowfast/harness.hpp"
#include "slowfast/predictor.hpp"
#include "slowfast/scheduler.hpp"
#include "slowfast/strategies.hpp"
#include "slowfast/trace.hpp"
