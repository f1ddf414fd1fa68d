#pragma once

#include "snnssl/tensor.hpp"
#include "snnssl/kernels.hpp"
#include "snnssl/autodiff.hpp"
#include "snnssl/ops.hpp"
#include "snnssl/neuron.hpp"
#include "snnssl/network.hpp"
#include "snnssl/loss.hpp"
#include "snnssl/dataio.hpp"
#include "snnssl/analysis.hpp"
#include "snnssl/augment.hpp"
#include "snnssl/trainer.hpp"
#include "snnssl/config.hpp"
#include "snnssl/selfcheck.hpp"
