#pragma once

#include "vdi/autodiff.hpp"
#include "vdi/checkpoint.hpp"
#include "vdi/data_io.hpp"
#include "vdi/encoders.hpp"
#include "vdi/error.hpp"
#include "vdi/feature_cache.hpp"
#include "vdi/inference.hpp"
#include "vdi/metrics.hpp"
#include "vdi/model.hpp"
#include "vdi/moment_head.hpp"
#include "vdi/nn.hpp"
#include "vdi/random.hpp"
#include "vdi/spatial_dynamic.hpp"
#include "vdi/text_pipeline.hpp"
#include "vdi/trainer.hpp"
#include "vdi/visual_context.hpp"
