#pragma once

// Umbrella header for the robust optimal stopping toolkit.

#include "rstop/errors.hpp"
#include "rstop/io.hpp"
#include "rstop/lattice.hpp"
#include "rstop/measures.hpp"
#include "rstop/oracle.hpp"
#include "rstop/penalty.hpp"
#include "rstop/rbsde.hpp"
#include "rstop/stopping.hpp"
