#pragma once

#include "cpdreg/ccpd.hpp"
#include "cpdreg/core.hpp"
#include "cpdreg/cpd.hpp"
#include "cpdreg/dataio.hpp"
#include "cpdreg/ecpd.hpp"
#include "cpdreg/errors.hpp"
#include "cpdreg/metrics.hpp"
#include "cpdreg/solver.hpp"
#include "cpdreg/synth.hpp"
