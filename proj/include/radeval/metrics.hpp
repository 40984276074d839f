#pragma once

#include "radeval/metrics/bootstrap.hpp"
#include "radeval/metrics/classification.hpp"
#include "radeval/metrics/graph.hpp"
#include "radeval/metrics/nlg.hpp"
#include "radeval/text.hpp"
