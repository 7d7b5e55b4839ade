#pragma once

#include "rlalm/errors.hpp"
#include "rlalm/operators.hpp"
#include "rlalm/projector.hpp"
#include "rlalm/problem.hpp"
#include "rlalm/analysis.hpp"
#include "rlalm/solvers.hpp"
#include "rlalm/ct.hpp"
#include "rlalm/experiments.hpp"
