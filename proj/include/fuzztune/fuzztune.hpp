#pragma once

#include "fuzztune/attacks.hpp"
#include "fuzztune/autodiff.hpp"
#include "fuzztune/checkpoint.hpp"
#include "fuzztune/config.hpp"
#include "fuzztune/data.hpp"
#include "fuzztune/fuzzy_domain.hpp"
#include "fuzztune/gradcheck.hpp"
#include "fuzztune/harness.hpp"
#include "fuzztune/losses.hpp"
#include "fuzztune/model.hpp"
#include "fuzztune/objective.hpp"
#include "fuzztune/tensor.hpp"
#include "fuzztune/train.hpp"
#include "fuzztune/verify.hpp"
