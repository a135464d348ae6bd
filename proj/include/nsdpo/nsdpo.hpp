#pragma once

#include "nsdpo/core.hpp"
#include "nsdpo/dataset_io.hpp"
#include "nsdpo/dataset_tools.hpp"
#include "nsdpo/math.hpp"
#include "nsdpo/metrics.hpp"
#include "nsdpo/objectives.hpp"
#include "nsdpo/optimizer.hpp"
#include "nsdpo/theory.hpp"
