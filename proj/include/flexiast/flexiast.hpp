#pragma once

#include "flexiast/types.hpp"
#include "flexiast/resize.hpp"
#include "flexiast/spectrogram.hpp"
#include "flexiast/embedding.hpp"
#include "flexiast/encoder.hpp"
#include "flexiast/loss.hpp"
#include "flexiast/model.hpp"
#include "flexiast/config.hpp"
#include "flexiast/train.hpp"
#include "flexiast/metrics.hpp"
#include "flexiast/dataio.hpp"
