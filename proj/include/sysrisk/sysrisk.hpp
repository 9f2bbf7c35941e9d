#pragma once

// Umbrella header.

#include "sysrisk/control.hpp"
#include "sysrisk/errors.hpp"
#include "sysrisk/experiments.hpp"
#include "sysrisk/io.hpp"
#include "sysrisk/lq_oracle.hpp"
#include "sysrisk/meanfield.hpp"
#include "sysrisk/measures.hpp"
#include "sysrisk/model.hpp"
#include "sysrisk/parallel.hpp"
#include "sysrisk/rng.hpp"
#include "sysrisk/sde.hpp"
