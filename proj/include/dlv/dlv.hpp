#pragma once

#include "dlv/autodiff.hpp"
#include "dlv/checkpoint.hpp"
#include "dlv/config.hpp"
#include "dlv/conv.hpp"
#include "dlv/gradcheck.hpp"
#include "dlv/image.hpp"
#include "dlv/inn.hpp"
#include "dlv/losses.hpp"
#include "dlv/metrics.hpp"
#include "dlv/synth.hpp"
#include "dlv/tensor.hpp"
#include "dlv/trainer.hpp"
#include "dlv/wavelet.hpp"
