#pragma once

// Umbrella header.

#include "frequnet/checkpoint.hpp"
#include "frequnet/config.hpp"
#include "frequnet/encoder.hpp"
#include "frequnet/error.hpp"
#include "frequnet/gradcheck.hpp"
#include "frequnet/gradcheck_suite.hpp"
#include "frequnet/losses.hpp"
#include "frequnet/model_config.hpp"
#include "frequnet/network.hpp"
#include "frequnet/ops.hpp"
#include "frequnet/optim.hpp"
#include "frequnet/parallel.hpp"
#include "frequnet/params.hpp"
#include "frequnet/phantom.hpp"
#include "frequnet/sld.hpp"
#include "frequnet/spectral.hpp"
#include "frequnet/tape.hpp"
#include "frequnet/tensor.hpp"
#include "frequnet/train.hpp"
#include "frequnet/wavelet.hpp"
