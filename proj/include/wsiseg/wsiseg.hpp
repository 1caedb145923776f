#pragma once

#include "config.hpp"
#include "dct.hpp"
#include "errors.hpp"
#include "formats.hpp"
#include "geojson.hpp"
#include "geometry.hpp"
#include "image_io.hpp"
#include "mask.hpp"
#include "merge.hpp"
#include "metrics.hpp"
#include "parallel.hpp"
#include "pipeline.hpp"
#include "report.hpp"
#include "synth.hpp"
#include "tiling.hpp"
#include "tissue.hpp"
#include "vocabulary.hpp"
