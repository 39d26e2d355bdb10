#pragma once

// Umbrella header for the spin-wave reservoir computing library.

#include "magnonrc/aor.hpp"
#include "magnonrc/common.hpp"
#include "magnonrc/data.hpp"
#include "magnonrc/excitation.hpp"
#include "magnonrc/experiment.hpp"
#include "magnonrc/grid.hpp"
#include "magnonrc/psm.hpp"
#include "magnonrc/readout.hpp"
#include "magnonrc/sim.hpp"
