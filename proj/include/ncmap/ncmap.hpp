#pragma once

#include "ncmap/adam.hpp"
#include "ncmap/error.hpp"
#include "ncmap/feature_field.hpp"
#include "ncmap/geometry.hpp"
#include "ncmap/mesh_io.hpp"
#include "ncmap/metrics.hpp"
#include "ncmap/neural_field.hpp"
#include "ncmap/registration.hpp"
#include "ncmap/rotations.hpp"
#include "ncmap/spatial_index.hpp"
#include "ncmap/summary.hpp"
#include "ncmap/synth.hpp"
#include "ncmap/training.hpp"
