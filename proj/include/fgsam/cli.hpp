#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace fgsam::cli {

/// Subcommand names in usage order.
const std::vector<std::string>& subcommands();
std::string usage();

/// Resolved key=value settings of one subcommand. Keys are "section.key";
/// only the sections the subcommand reads are known, anything else is
/// rejected. Later writes win, so files are loaded before flags.
class Config {
 public:
  explicit Config(const std::string& subcommand);

  const std::string& subcommand() const { return subcommand_; }
  const std::vector<std::string>& sections() const { return sections_; }

  void load_file(const std::filesystem::path& file);
  void load_text(std::string_view text, const std::string& origin);
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  const std::string& get(const std::string& key) const;
  int get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key) const;

  /// Every setting except run.out, in a form load_text reads back.
  std::string echo() const;
  nlohmann::json to_json() const;

 private:
  std::string subcommand_;
  std::vector<std::string> sections_;
  std::map<std::string, std::string> values_;
};

/// Entry point of the `fgsam` executable. Returns the process exit code.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);  // args exclude the program name

}  // namespace fgsam::cli
