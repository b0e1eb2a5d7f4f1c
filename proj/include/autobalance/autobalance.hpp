#pragma once

#include "autobalance/linalg.hpp"
#include "autobalance/network.hpp"
#include "autobalance/loss.hpp"
#include "autobalance/optim.hpp"
#include "autobalance/balance.hpp"
#include "autobalance/pde.hpp"
#include "autobalance/quad.hpp"
#include "autobalance/diagnostics.hpp"
#include "autobalance/config.hpp"
#include "autobalance/harness.hpp"
