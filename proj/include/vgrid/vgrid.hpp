#pragma once

// Umbrella header for the voltgrid library: two-timescale volt-var control
// on radial feeders with learned capacitor scheduling and optimized
// inverter setpoints.

#include "vgrid/action.hpp"
#include "vgrid/convexopt.hpp"
#include "vgrid/drl.hpp"
#include "vgrid/errors.hpp"
#include "vgrid/feeder.hpp"
#include "vgrid/log.hpp"
#include "vgrid/powerflow.hpp"
#include "vgrid/profile.hpp"
#include "vgrid/rng.hpp"
#include "vgrid/sim.hpp"
#include "vgrid/socp.hpp"
#include "vgrid/summary.hpp"
