#pragma once

#include "segfuse/catalog.hpp"
#include "segfuse/error.hpp"
#include "segfuse/fused_io.hpp"
#include "segfuse/fusion.hpp"
#include "segfuse/instancer.hpp"
#include "segfuse/metrics.hpp"
#include "segfuse/png_codec.hpp"
#include "segfuse/privacy.hpp"
#include "segfuse/raster.hpp"
#include "segfuse/service.hpp"
