#pragma once

#include "geomeval/error.hpp"
#include "geomeval/grid.hpp"
#include "geomeval/geometry.hpp"
#include "geomeval/parallel.hpp"
#include "geomeval/kdtree.hpp"
#include "geomeval/alignment.hpp"
#include "geomeval/tokens.hpp"
#include "geomeval/losses.hpp"
#include "geomeval/image.hpp"
#include "geomeval/metrics.hpp"
#include "geomeval/rng.hpp"
#include "geomeval/dual_stream.hpp"
#include "geomeval/synth.hpp"
#include "geomeval/io.hpp"
#include "geomeval/pipeline.hpp"
