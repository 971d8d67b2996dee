#pragma once

#include "posecl/contrastive.hpp"
#include "posecl/dataio_synth.hpp"
#include "posecl/embedding_nets.hpp"
#include "posecl/error.hpp"
#include "posecl/metrics.hpp"
#include "posecl/pose_geometry.hpp"
#include "posecl/tensor.hpp"
#include "posecl/weak_segmentation.hpp"
