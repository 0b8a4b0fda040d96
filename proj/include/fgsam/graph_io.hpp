#pragma once

#include "fgsam/graph.hpp"

#include <filesystem>

namespace fgsam::graph {

/// Directory layout: edges.csv (src,dst with src<dst), features.csv (n rows),
/// labels.csv (one column), meta.json {n, d0, num_classes}. Floats are written
/// with 17 significant digits so a save/load round trip is bit-exact.
void save_graph(const Graph& graph, const std::filesystem::path& directory);
Graph load_graph(const std::filesystem::path& directory);

}  // namespace fgsam::graph
