#pragma once

// Umbrella header.
#include "ssfam/autograd.hpp"
#include "ssfam/checkpoint.hpp"
#include "ssfam/data.hpp"
#include "ssfam/decoder.hpp"
#include "ssfam/encoder.hpp"
#include "ssfam/error.hpp"
#include "ssfam/image_io.hpp"
#include "ssfam/log.hpp"
#include "ssfam/losses.hpp"
#include "ssfam/metrics.hpp"
#include "ssfam/model.hpp"
#include "ssfam/modality.hpp"
#include "ssfam/optim.hpp"
#include "ssfam/parameters.hpp"
#include "ssfam/prompts.hpp"
#include "ssfam/raster.hpp"
#include "ssfam/rng.hpp"
#include "ssfam/trainer.hpp"
