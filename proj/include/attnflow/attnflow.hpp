// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "attnflow/attention.hpp"
#include "attnflow/common.hpp"
#include "attnflow/dynamics.hpp"
#include "attnflow/geometry.hpp"
#include "attnflow/harness.hpp"
#include "attnflow/linalg.hpp"
#include "attnflow/rng.hpp"
#include "attnflow/stability.hpp"
