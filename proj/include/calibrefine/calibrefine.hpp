#pragma once

#include "calibrefine/association.hpp"
#include "calibrefine/block_sampling.hpp"
#include "calibrefine/correction_refine.hpp"
#include "calibrefine/error.hpp"
#include "calibrefine/geometry.hpp"
#include "calibrefine/homography_fit.hpp"
#include "calibrefine/io.hpp"
#include "calibrefine/iterative_refine.hpp"
#include "calibrefine/least_squares.hpp"
#include "calibrefine/pipeline.hpp"
#include "calibrefine/ransac.hpp"
#include "calibrefine/simulator.hpp"
