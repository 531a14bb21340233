// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "einsplit/mesh.hpp"
#include "einsplit/media.hpp"
#include "einsplit/fem.hpp"
#include "einsplit/fine_solver.hpp"
#include "einsplit/multiscale.hpp"
#include "einsplit/deim.hpp"
#include "einsplit/splitting.hpp"
#include "einsplit/stability.hpp"
#include "einsplit/experiment.hpp"
#include "einsplit/oracles.hpp"
