#pragma once

#include "msret/aggregate.hpp"
#include "msret/errors.hpp"
#include "msret/eval.hpp"
#include "msret/grid.hpp"
#include "msret/log.hpp"
#include "msret/manifest.hpp"
#include "msret/parallel.hpp"
#include "msret/pipeline.hpp"
#include "msret/pyramid.hpp"
#include "msret/retrieval.hpp"
#include "msret/tensor_io.hpp"
#include "msret/whiten.hpp"
