#pragma once

// Umbrella header: the whole blocked bouncy particle sampler toolkit.

#include "bbps/ar_model.hpp"
#include "bbps/blocking.hpp"
#include "bbps/common.hpp"
#include "bbps/config.hpp"
#include "bbps/csv.hpp"
#include "bbps/data_sim.hpp"
#include "bbps/diagnostics.hpp"
#include "bbps/factors.hpp"
#include "bbps/finite_diff.hpp"
#include "bbps/kalman.hpp"
#include "bbps/rng.hpp"
#include "bbps/runner.hpp"
#include "bbps/sampler.hpp"
#include "bbps/strategy_json.hpp"
#include "bbps/sv_model.hpp"
#include "bbps/target.hpp"
#include "bbps/thread_pool.hpp"
#include "bbps/trajectory.hpp"
