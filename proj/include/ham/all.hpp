#pragma once

#include "ham/adapters.hpp"
#include "ham/backbone.hpp"
#include "ham/config.hpp"
#include "ham/consolidate.hpp"
#include "ham/error.hpp"
#include "ham/experiment.hpp"
#include "ham/matrix.hpp"
#include "ham/merging.hpp"
#include "ham/metrics.hpp"
#include "ham/rng.hpp"
#include "ham/serialize.hpp"
#include "ham/tasks.hpp"
#include "ham/trainer.hpp"
