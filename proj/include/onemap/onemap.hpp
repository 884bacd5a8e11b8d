#pragma once

#include "onemap/belief_map.hpp"
#include "onemap/benchmark.hpp"
#include "onemap/config.hpp"
#include "onemap/embedding.hpp"
#include "onemap/error.hpp"
#include "onemap/exploration.hpp"
#include "onemap/features.hpp"
#include "onemap/frame_io.hpp"
#include "onemap/grid.hpp"
#include "onemap/image.hpp"
#include "onemap/map_io.hpp"
#include "onemap/observation.hpp"
#include "onemap/planning.hpp"
#include "onemap/rng.hpp"
#include "onemap/simulator.hpp"
