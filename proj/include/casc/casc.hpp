#pragma once

#include "casc/backends/analytic.hpp"
#include "casc/backends/backend.hpp"
#include "casc/backends/external.hpp"
#include "casc/backends/protocol.hpp"
#include "casc/backends/transcript.hpp"
#include "casc/core/error.hpp"
#include "casc/core/grid.hpp"
#include "casc/core/parallel.hpp"
#include "casc/core/percentile.hpp"
#include "casc/core/rng.hpp"
#include "casc/io/tensor_file.hpp"
#include "casc/labeling.hpp"
#include "casc/metrics.hpp"
#include "casc/pipeline/config.hpp"
#include "casc/pipeline/digest.hpp"
#include "casc/pipeline/ledger.hpp"
#include "casc/pipeline/pipeline.hpp"
#include "casc/pipeline/split.hpp"
#include "casc/pipeline/sweep.hpp"
#include "casc/pipeline/synthetic.hpp"
#include "casc/prompting.hpp"
#include "casc/pseudo_label.hpp"
#include "casc/s3f.hpp"
#include "casc/volume.hpp"
