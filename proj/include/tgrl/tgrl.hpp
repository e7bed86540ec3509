#pragma once

#include "tgrl/checkpoint.hpp"
#include "tgrl/common.hpp"
#include "tgrl/env.hpp"
#include "tgrl/explain.hpp"
#include "tgrl/guidance.hpp"
#include "tgrl/harness.hpp"
#include "tgrl/nn.hpp"
#include "tgrl/ppo.hpp"
#include "tgrl/teacher.hpp"
#include "tgrl/teacher_training.hpp"
