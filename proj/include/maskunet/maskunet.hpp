#pragma once

// Umbrella header.

#include "maskunet/analysis.hpp"
#include "maskunet/checkpoint.hpp"
#include "maskunet/config.hpp"
#include "maskunet/data.hpp"
#include "maskunet/denoiser.hpp"
#include "maskunet/diffusion.hpp"
#include "maskunet/error.hpp"
#include "maskunet/experiment.hpp"
#include "maskunet/freeopt.hpp"
#include "maskunet/io.hpp"
#include "maskunet/mask_generator.hpp"
#include "maskunet/masking.hpp"
#include "maskunet/optim.hpp"
#include "maskunet/random.hpp"
#include "maskunet/sampling.hpp"
#include "maskunet/tensor.hpp"
#include "maskunet/train.hpp"
