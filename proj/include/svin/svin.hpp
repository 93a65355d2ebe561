#pragma once

#include "svin/checkpoint.hpp"
#include "svin/grid.hpp"
#include "svin/interp_net.hpp"
#include "svin/io.hpp"
#include "svin/metrics.hpp"
#include "svin/motion_net.hpp"
#include "svin/phantom.hpp"
#include "svin/pyramid.hpp"
#include "svin/synthesis.hpp"
