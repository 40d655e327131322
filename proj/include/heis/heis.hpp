#pragma once

#include "heis/errors.hpp"
#include "heis/point.hpp"
#include "heis/random.hpp"
#include "heis/parallel.hpp"
#include "heis/geodesic.hpp"
#include "heis/metric.hpp"
#include "heis/expr.hpp"
#include "heis/domain.hpp"
#include "heis/maps.hpp"
#include "heis/sampling.hpp"
#include "heis/covering.hpp"
#include "heis/modulus.hpp"
#include "heis/density_graph.hpp"
#include "heis/experiments.hpp"
#include "heis/io.hpp"
#include "heis/cli.hpp"
