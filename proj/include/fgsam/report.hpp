#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace fgsam::report {

/// Shortest text that reads back to the same double; empty for NaN.
std::string format_double(double value);

/// SHA-1 of "blob <size>\0<content>", as printed by `git hash-object`.
std::string git_blob_sha1(std::string_view content);

std::string read_file(const std::filesystem::path& file);
void write_file(const std::filesystem::path& file, std::string_view content);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> row);
  std::string str() const;
};

/// Writes `file` and a sibling `<file>.meta.json` holding `meta` plus the
/// column names and row count.
void write_csv(const std::filesystem::path& file, const CsvTable& table, nlohmann::json meta);

}  // namespace fgsam::report
