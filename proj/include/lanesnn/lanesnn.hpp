#pragma once

#include "lanesnn/checkpoint.hpp"
#include "lanesnn/config.hpp"
#include "lanesnn/dataset.hpp"
#include "lanesnn/encoding.hpp"
#include "lanesnn/error.hpp"
#include "lanesnn/evaluation.hpp"
#include "lanesnn/numerics.hpp"
#include "lanesnn/preprocess.hpp"
#include "lanesnn/quantsim.hpp"
#include "lanesnn/snn.hpp"
#include "lanesnn/training.hpp"
