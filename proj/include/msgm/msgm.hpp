#pragma once

#include "msgm/numcore.hpp"
#include "msgm/tape.hpp"
#include "msgm/sde.hpp"
#include "msgm/score_model.hpp"
#include "msgm/scorenet.hpp"
#include "msgm/unlearn.hpp"
#include "msgm/sampler.hpp"
#include "msgm/likelihood.hpp"
#include "msgm/evalbench.hpp"
#include "msgm/io.hpp"
#include "msgm/config.hpp"
#include "msgm/experiment.hpp"
