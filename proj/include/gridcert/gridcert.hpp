#pragma once

#include "gridcert/core.hpp"
#include "gridcert/network.hpp"
#include "gridcert/lure.hpp"
#include "gridcert/gain.hpp"
#include "gridcert/certificates.hpp"
#include "gridcert/optimizer.hpp"
#include "gridcert/simulator.hpp"
