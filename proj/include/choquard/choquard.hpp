#ifndef CHOQUARD_CHOQUARD_HPP
#define CHOQUARD_CHOQUARD_HPP

// Solver library. The config/report layer is in cli.hpp (needs json.hpp).

#include "error.hpp"
#include "grid.hpp"
#include "riesz.hpp"
#include "model.hpp"
#include "energy.hpp"
#include "flow.hpp"
#include "saddle.hpp"

#endif
