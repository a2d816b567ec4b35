#pragma once

#include "graph_adapter/adapter.hpp"
#include "graph_adapter/classifier.hpp"
#include "graph_adapter/embedstore.hpp"
#include "graph_adapter/error.hpp"
#include "graph_adapter/evalharness.hpp"
#include "graph_adapter/gcncore.hpp"
#include "graph_adapter/graphkit.hpp"
#include "graph_adapter/trainer.hpp"
#include "graph_adapter/weights_file.hpp"
