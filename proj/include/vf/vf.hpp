#pragma once

// Umbrella header for the vf video-forensics stack.

#include "vf/config.hpp"
#include "vf/data.hpp"
#include "vf/digest.hpp"
#include "vf/errors.hpp"
#include "vf/gradcheck.hpp"
#include "vf/models.hpp"
#include "vf/nn.hpp"
#include "vf/ops.hpp"
#include "vf/optim.hpp"
#include "vf/random.hpp"
#include "vf/svg.hpp"
#include "vf/tape.hpp"
#include "vf/tensor.hpp"
#include "vf/threads.hpp"
#include "vf/train.hpp"
