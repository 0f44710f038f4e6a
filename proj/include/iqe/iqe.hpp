#pragma once

#include "iqe/codebook.hpp"
#include "iqe/encoder.hpp"
#include "iqe/error.hpp"
#include "iqe/experiments.hpp"
#include "iqe/image.hpp"
#include "iqe/metrics.hpp"
#include "iqe/regression.hpp"
#include "iqe/spectral.hpp"
#include "iqe/synth.hpp"
