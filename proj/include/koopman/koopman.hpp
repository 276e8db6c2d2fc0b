#pragma once

#include "koopman/assimilation.hpp"
#include "koopman/autodiff.hpp"
#include "koopman/config_json.hpp"
#include "koopman/cressman.hpp"
#include "koopman/data_model.hpp"
#include "koopman/error.hpp"
#include "koopman/experiments.hpp"
#include "koopman/koopman_model.hpp"
#include "koopman/metrics.hpp"
#include "koopman/optim.hpp"
#include "koopman/residual_cnn.hpp"
#include "koopman/runtime.hpp"
#include "koopman/trainer.hpp"
