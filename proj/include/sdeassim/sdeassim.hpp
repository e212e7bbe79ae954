#pragma once

// Convenience umbrella: pulls in the whole library.

#include "config.hpp"
#include "core.hpp"
#include "csv.hpp"
#include "filters.hpp"
#include "kalman.hpp"
#include "metrics.hpp"
#include "models.hpp"
#include "observation.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "schemes.hpp"
#include "studies.hpp"
