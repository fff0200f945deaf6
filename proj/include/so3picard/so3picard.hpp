#pragma once

#include "so3picard/lie.hpp"
#include "so3picard/diffusion.hpp"
#include "so3picard/score.hpp"
#include "so3picard/score_table.hpp"
#include "so3picard/samplers.hpp"
#include "so3picard/metrics.hpp"
#include "so3picard/experiment.hpp"
