#pragma once

#include "fdan/attention.hpp"
#include "fdan/domain.hpp"
#include "fdan/error.hpp"
#include "fdan/kernel.hpp"
#include "fdan/matrix.hpp"
#include "fdan/metrics.hpp"
#include "fdan/model.hpp"
#include "fdan/pca.hpp"
#include "fdan/synth.hpp"
#include "fdan/tape.hpp"
#include "fdan/trainer.hpp"
