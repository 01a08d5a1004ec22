#pragma once

// Everything except the command-line front end.
#include "regfree/core.hpp"
#include "regfree/io.hpp"
#include "regfree/labelgen.hpp"
#include "regfree/slope.hpp"
#include "regfree/nn/tensor.hpp"
#include "regfree/nn/layers.hpp"
#include "regfree/ndp.hpp"
#include "regfree/network.hpp"
#include "regfree/objectives.hpp"
#include "regfree/metrics.hpp"
#include "regfree/inference.hpp"
#include "regfree/optim.hpp"
#include "regfree/checkpoint.hpp"
#include "regfree/dataset.hpp"
#include "regfree/synthdata.hpp"
#include "regfree/trainer.hpp"
