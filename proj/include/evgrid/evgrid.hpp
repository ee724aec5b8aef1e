#pragma once

#include "evgrid/cli.hpp"
#include "evgrid/common.hpp"
#include "evgrid/config.hpp"
#include "evgrid/experiments.hpp"
#include "evgrid/grid.hpp"
#include "evgrid/io.hpp"
#include "evgrid/scheduling.hpp"
#include "evgrid/std_types.hpp"
#include "evgrid/traffic.hpp"
