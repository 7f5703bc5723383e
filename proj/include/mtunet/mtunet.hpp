#pragma once

// Umbrella header: the full library in dependency order.

#include "mtunet/errors.hpp"
#include "mtunet/version.hpp"
#include "mtunet/rng.hpp"
#include "mtunet/tensor.hpp"
#include "mtunet/graph.hpp"
#include "mtunet/ops.hpp"
#include "mtunet/init.hpp"
#include "mtunet/optimizer.hpp"
#include "mtunet/serialize.hpp"
#include "mtunet/image_io.hpp"
#include "mtunet/dataset.hpp"
#include "mtunet/backbone.hpp"
#include "mtunet/pattern_extractor.hpp"
#include "mtunet/matcher.hpp"
#include "mtunet/model.hpp"
#include "mtunet/evaluate.hpp"
#include "mtunet/config.hpp"
#include "mtunet/train.hpp"
#include "mtunet/explain.hpp"
#include "mtunet/manifest.hpp"
