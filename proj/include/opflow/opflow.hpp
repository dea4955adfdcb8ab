#pragma once

#include "opflow/error.hpp"
#include "opflow/random.hpp"
#include "opflow/parallel.hpp"
#include "opflow/graph.hpp"
#include "opflow/edge_list.hpp"
#include "opflow/models.hpp"
#include "opflow/dynamics.hpp"
#include "opflow/equilibrium.hpp"
#include "opflow/io.hpp"
#include "opflow/experiment.hpp"
