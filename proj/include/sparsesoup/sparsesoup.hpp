#pragma once

#include "sparsesoup/checkpoint.hpp"
#include "sparsesoup/config.hpp"
#include "sparsesoup/data.hpp"
#include "sparsesoup/errors.hpp"
#include "sparsesoup/harness.hpp"
#include "sparsesoup/mask.hpp"
#include "sparsesoup/merging.hpp"
#include "sparsesoup/metrics.hpp"
#include "sparsesoup/nn.hpp"
#include "sparsesoup/orchestrator.hpp"
#include "sparsesoup/parallel.hpp"
#include "sparsesoup/pruning.hpp"
#include "sparsesoup/report.hpp"
#include "sparsesoup/rng.hpp"
#include "sparsesoup/schedules.hpp"
