#pragma once

#include "stcn/coverage.hpp"
#include "stcn/dag.hpp"
#include "stcn/date.hpp"
#include "stcn/diagnose.hpp"
#include "stcn/error.hpp"
#include "stcn/gls.hpp"
#include "stcn/learn.hpp"
#include "stcn/model.hpp"
#include "stcn/node_fit.hpp"
#include "stcn/panel.hpp"
#include "stcn/panel_io.hpp"
#include "stcn/query.hpp"
#include "stcn/rng.hpp"
#include "stcn/score.hpp"
#include "stcn/spatial.hpp"
#include "stcn/splits.hpp"
#include "stcn/synthgen.hpp"
#include "stcn/variogram.hpp"
