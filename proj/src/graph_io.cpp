#include "fgsam/graph_io.hpp"

#include <nlohmann/json.hpp>

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace fgsam::graph {
namespace fs = std::filesystem;
namespace {

std::ifstream open_input(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open " + path.string());
  return in;
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot write " + path.string());
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream s(line);
  while (std::getline(s, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

long long parse_int(const std::string& text, const fs::path& file, std::size_t line) {
  char* end = nullptr;
  errno = 0;
  const long long value = std::strtoll(text.c_str(), &end, 10);
  require(errno == 0 && end != text.c_str() && *end == '\0',
          file.string() + ":" + std::to_string(line) + ": malformed integer '" + text + "'");
  return value;
}

double parse_double(const std::string& text, const fs::path& file, std::size_t line) {
  char* end = nullptr;
  errno = 0;
  const double value = std::strtod(text.c_str(), &end);
  require(errno == 0 && end != text.c_str() && *end == '\0',
          file.string() + ":" + std::to_string(line) + ": malformed number '" + text + "'");
  return value;
}

std::string format_double(double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

// Reads data rows (header skipped, trailing CR stripped, blank lines ignored).
std::vector<std::pair<std::size_t, std::string>> read_rows(const fs::path& path) {
  std::ifstream in = open_input(path);
  std::vector<std::pair<std::size_t, std::string>> rows;
  std::string line;
  std::size_t number = 0;
  bool header = true;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    rows.emplace_back(number, line);
  }
  require(!header, path.string() + ": missing header row");
  return rows;
}

}  // namespace

void save_graph(const Graph& graph, const fs::path& directory) {
  fs::create_directories(directory);
  {
    std::ofstream out = open_output(directory / "edges.csv");
    out << "src,dst\n";
    for (const Edge& e : graph.edges()) out << e.u << ',' << e.v << '\n';
  }
  {
    std::ofstream out = open_output(directory / "features.csv");
    const Matrix& x = graph.features();
    for (Index j = 0; j < x.cols(); ++j) out << (j ? ",f" : "f") << j;
    out << '\n';
    for (Index i = 0; i < x.rows(); ++i) {
      for (Index j = 0; j < x.cols(); ++j) {
        if (j) out << ',';
        out << format_double(x(i, j));
      }
      out << '\n';
    }
  }
  {
    std::ofstream out = open_output(directory / "labels.csv");
    out << "label\n";
    for (int y : graph.labels()) out << y << '\n';
  }
  {
    nlohmann::json meta = {{"n", graph.num_nodes()},
                           {"d0", graph.feature_dim()},
                           {"num_classes", graph.num_classes()}};
    std::ofstream out = open_output(directory / "meta.json");
    out << meta.dump(2) << '\n';
  }
}

Graph load_graph(const fs::path& directory) {
  for (const char* name : {"meta.json", "edges.csv", "features.csv", "labels.csv"}) {
    require(fs::exists(directory / name), "graph directory " + directory.string() +
                                              " is missing " + name);
  }
  nlohmann::json meta;
  try {
    std::ifstream in = open_input(directory / "meta.json");
    meta = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error("meta.json: " + std::string(e.what()));
  }
  require(meta.is_object() && meta.contains("n") && meta.contains("d0") &&
              meta.contains("num_classes"),
          "meta.json: expected keys n, d0, num_classes");
  const auto n = meta.at("n").get<Index>();
  const auto d0 = meta.at("d0").get<Index>();
  const auto num_classes = meta.at("num_classes").get<int>();
  require(n >= 0 && d0 >= 0, "meta.json: negative dimension");

  const fs::path edge_file = directory / "edges.csv";
  std::vector<Edge> edges;
  for (const auto& [line, text] : read_rows(edge_file)) {
    const auto cells = split_csv(text);
    require(cells.size() == 2, edge_file.string() + ":" + std::to_string(line) +
                                   ": expected 2 columns");
    const long long u = parse_int(cells[0], edge_file, line);
    const long long v = parse_int(cells[1], edge_file, line);
    require(u >= 0 && v >= 0 && u < n && v < n,
            edge_file.string() + ":" + std::to_string(line) + ": endpoint out of range for n=" +
                std::to_string(n));
    edges.push_back({static_cast<std::int32_t>(u), static_cast<std::int32_t>(v)});
  }

  const fs::path feature_file = directory / "features.csv";
  const auto feature_rows = read_rows(feature_file);
  require(static_cast<Index>(feature_rows.size()) == n,
          feature_file.string() + ": " + std::to_string(feature_rows.size()) +
              " rows, meta.json declares n=" + std::to_string(n));
  Matrix x(n, d0);
  for (Index i = 0; i < n; ++i) {
    const auto& [line, text] = feature_rows[static_cast<std::size_t>(i)];
    const auto cells = split_csv(text);
    require(static_cast<Index>(cells.size()) == d0,
            feature_file.string() + ":" + std::to_string(line) + ": expected " +
                std::to_string(d0) + " columns");
    for (Index j = 0; j < d0; ++j) {
      x(i, j) = parse_double(cells[static_cast<std::size_t>(j)], feature_file, line);
    }
  }

  const fs::path label_file = directory / "labels.csv";
  const auto label_rows = read_rows(label_file);
  require(static_cast<Index>(label_rows.size()) == n,
          label_file.string() + ": " + std::to_string(label_rows.size()) +
              " rows, meta.json declares n=" + std::to_string(n));
  std::vector<int> labels;
  labels.reserve(label_rows.size());
  for (const auto& [line, text] : label_rows) {
    labels.push_back(static_cast<int>(parse_int(text, label_file, line)));
  }
  return build_graph(n, std::move(edges), std::move(x), std::move(labels), num_classes);
}

}  // namespace fgsam::graph
