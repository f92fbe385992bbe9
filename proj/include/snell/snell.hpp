#pragma once

// Everything except content_hash.hpp, which needs libcrypto.
#include "snell/error.hpp"
#include "snell/rng.hpp"
#include "snell/parallel.hpp"
#include "snell/model.hpp"
#include "snell/grid.hpp"
#include "snell/simulation.hpp"
#include "snell/lattice.hpp"
#include "snell/fixtures.hpp"
#include "snell/game.hpp"
#include "snell/regression.hpp"
#include "snell/game_lsmc.hpp"
#include "snell/bsde.hpp"
#include "snell/bsde_lsmc.hpp"
#include "snell/randomized.hpp"
#include "snell/config.hpp"
#include "snell/harness.hpp"
