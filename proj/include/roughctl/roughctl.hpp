#pragma once

// Everything at once; the scenario layer needs OpenSSL::Crypto at link time.
#include "roughctl/coefficients.hpp"
#include "roughctl/control.hpp"
#include "roughctl/controlled.hpp"
#include "roughctl/csv.hpp"
#include "roughctl/fbm.hpp"
#include "roughctl/flow.hpp"
#include "roughctl/grid.hpp"
#include "roughctl/hjb.hpp"
#include "roughctl/increments.hpp"
#include "roughctl/integrate.hpp"
#include "roughctl/interp.hpp"
#include "roughctl/lift.hpp"
#include "roughctl/measure.hpp"
#include "roughctl/parallel.hpp"
#include "roughctl/rde.hpp"
#include "roughctl/scenario.hpp"
