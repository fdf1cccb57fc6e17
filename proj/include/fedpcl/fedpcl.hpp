#pragma once

#include "fedpcl/datahub.hpp"
#include "fedpcl/error.hpp"
#include "fedpcl/evaluate.hpp"
#include "fedpcl/experiment.hpp"
#include "fedpcl/federation.hpp"
#include "fedpcl/linalg.hpp"
#include "fedpcl/losses.hpp"
#include "fedpcl/projector.hpp"
#include "fedpcl/prototypes.hpp"
