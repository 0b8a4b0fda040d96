#include "fgsam/cli.hpp"

#include "fgsam/common.hpp"
#include "fgsam/report.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>
#include <utility>

namespace fgsam::cli {
namespace {

using Defaults = std::vector<std::pair<std::string, std::string>>;

const Defaults& base_defaults() {
  static const Defaults table = {
      {"run.seed", "0"},
      {"run.out", ""},
      {"graph.dir", ""},
      {"graph.classes", "20"},
      {"graph.nodes_per_class", "50"},
      {"graph.p", "0.1"},
      {"graph.q", "0.005"},
      {"graph.distance", "2"},
      {"graph.dim", "32"},
      {"graph.feature_noise", "0"},
      {"graph.edge_noise", "0"},
      {"split.ratio", "12/4/4"},
      {"protocol.repeats", "5"},
      {"protocol.episodes", "1000"},
      {"protocol.patience", "10"},
      {"protocol.val_interval", "10"},
      {"protocol.val_tasks", "20"},
      {"protocol.test_tasks", "100"},
      {"protocol.way", "2"},
      {"protocol.shot", "3"},
      {"protocol.query", "10"},
      {"model.layers", "2"},
      {"model.hidden", "16"},
      {"model.embed_dim", "16"},
      {"model.scheme", "gcn-sym"},
      {"optim.name", "adam"},
      {"optim.lr", "0.005"},
      {"optim.rho", "0.05"},
      {"optim.lambda", "1"},
      {"optim.alpha", "0.7"},
      {"optim.k", "2"},
      {"optim.beta1", "0.9"},
      {"optim.beta2", "0.999"},
      {"optim.eps", "1e-8"},
      {"optim.weight_decay", "5e-4"},
      {"optim.base_route", "gnn"},
      {"nc.epochs", "200"},
      {"nc.patience", "20"},
      {"nc.train_frac", "0.6"},
      {"nc.val_frac", "0.2"},
      {"compare.optimizers", "adam,sam,fgsam,fgsam+"},
      {"landscape.dims", "1"},
      {"landscape.points", "41"},
      {"landscape.range", "1"},
      {"sweep.optimizers", "sam,fgsam+"},
      {"sweep.rhos", "0.01,0.05,0.1,0.5"},
      {"gradcheck.instances", "50"},
      {"bench.optimizers", "adam,sam,fgsam,fgsam+"},
      {"bench.timing_evals", "20"},
  };
  return table;
}

struct Command {
  std::string name;
  std::string summary;
  std::vector<std::string> sections;
  Defaults overrides;
};

const std::vector<Command>& commands() {
  static const std::vector<Command> table = {
      {"gen-csbm", "write a synthetic CSBM graph directory", {"run", "graph"}, {}},
      {"fsnc",
       "episodic few-shot training and meta-test with one optimizer",
       {"run", "graph", "split", "protocol", "model", "optim"},
       {}},
      {"compare",
       "paired few-shot runs of several optimizers plus a cost table",
       {"run", "graph", "split", "protocol", "model", "optim", "compare"},
       {}},
      {"nc", "full-batch node classification", {"run", "graph", "model", "optim", "nc"}, {}},
      {"landscape",
       "train node classification, then slice the loss around the result",
       {"run", "graph", "model", "optim", "nc", "landscape"},
       {{"nc.epochs", "100"}}},
      {"drift",
       "per-step drift of the cached gradients over fixed-length runs",
       {"run", "graph", "split", "protocol", "model", "optim"},
       {{"protocol.episodes", "200"}, {"protocol.repeats", "3"}, {"optim.name", "fgsam+"}}},
      {"rho-sweep",
       "training-loss curves over perturbation radii",
       {"run", "graph", "split", "protocol", "model", "optim", "sweep"},
       {{"protocol.episodes", "200"}}},
      {"verify-theorem",
       "compare raw and filtered optimal linear classifiers",
       {"run", "graph"},
       {{"graph.classes", "3"}, {"graph.p", "0.6"}, {"graph.q", "0.1"}, {"graph.dim", "4"}}},
      {"check-grads", "finite-difference audit of every analytic gradient", {"run", "gradcheck"}, {}},
      {"bench",
       "wall time per optimizer on a message-passing-heavy graph",
       {"run", "graph", "protocol", "model", "optim", "bench"},
       {{"graph.classes", "10"},
        {"graph.nodes_per_class", "500"},
        {"graph.p", "0.04"},
        {"graph.q", "0.002"},
        {"graph.dim", "64"},
        {"protocol.episodes", "200"},
        {"protocol.way", "5"}}},
  };
  return table;
}

const Command& find_command(const std::string& name) {
  for (const auto& c : commands()) {
    if (c.name == name) return c;
  }
  throw Error("unknown subcommand '" + name + "'");
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

}  // namespace

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& c : commands()) out.push_back(c.name);
    return out;
  }();
  return names;
}

std::string usage() {
  std::string out = "usage: fgsam <subcommand> [--config PATH] [flags]\n\nsubcommands:\n";
  for (const auto& c : commands()) {
    std::string name = c.name;
    name.resize(16, ' ');
    out += "  " + name + c.summary + "\n";
  }
  out += "\nrun `fgsam <subcommand> --help` for its flags\n";
  return out;
}

Config::Config(const std::string& subcommand) : subcommand_(subcommand) {
  const Command& cmd = find_command(subcommand);
  sections_ = cmd.sections;
  for (const auto& [key, value] : base_defaults()) {
    const std::string section = key.substr(0, key.find('.'));
    if (std::find(sections_.begin(), sections_.end(), section) != sections_.end()) {
      values_[key] = value;
    }
  }
  for (const auto& [key, value] : cmd.overrides) values_.at(key) = value;
}

void Config::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  require(it != values_.end(),
          "unknown config key '" + key + "' for subcommand " + subcommand_);
  it->second = value;
}

const std::string& Config::get(const std::string& key) const {
  auto it = values_.find(key);
  require(it != values_.end(), "config key '" + key + "' is not defined for " + subcommand_);
  return it->second;
}

void Config::load_file(const std::filesystem::path& file) {
  load_text(report::read_file(file), file.string());
}

void Config::load_text(std::string_view text, const std::string& origin) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::string section;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string where = origin + ":" + std::to_string(number);
    const std::string body = trim(line);
    if (body.empty() || body[0] == '#' || body[0] == ';') continue;
    if (body.front() == '[') {
      require(body.back() == ']' && body.size() > 2, where + ": malformed section header");
      section = trim(std::string_view(body).substr(1, body.size() - 2));
      continue;
    }
    const auto eq = body.find('=');
    require(eq != std::string::npos, where + ": expected key = value");
    require(!section.empty(), where + ": key outside of any [section]");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    require(!key.empty(), where + ": empty key");
    const std::string full = section + "." + key;
    require(values_.count(full) != 0,
            where + ": unknown key '" + full + "' for subcommand " + subcommand_);
    values_[full] = trim(std::string_view(body).substr(eq + 1));
  }
}

int Config::get_int(const std::string& key) const {
  const std::string& text = get(key);
  int value = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  require(res.ec == std::errc() && res.ptr == text.data() + text.size(),
          "config key '" + key + "': expected an integer, got '" + text + "'");
  return value;
}

std::uint64_t Config::get_u64(const std::string& key) const {
  const std::string& text = get(key);
  std::uint64_t value = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  require(res.ec == std::errc() && res.ptr == text.data() + text.size(),
          "config key '" + key + "': expected an unsigned integer, got '" + text + "'");
  return value;
}

namespace {

double parse_double(const std::string& key, const std::string& text) {
  double value = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  require(res.ec == std::errc() && res.ptr == text.data() + text.size(),
          "config key '" + key + "': expected a number, got '" + text + "'");
  return value;
}

}  // namespace

double Config::get_double(const std::string& key) const { return parse_double(key, get(key)); }

std::vector<std::string> Config::get_list(const std::string& key) const {
  std::vector<std::string> out;
  std::istringstream in(get(key));
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    require(!item.empty(), "config key '" + key + "': empty list entry");
    out.push_back(item);
  }
  require(!out.empty(), "config key '" + key + "': empty list");
  return out;
}

std::vector<double> Config::get_double_list(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : get_list(key)) out.push_back(parse_double(key, item));
  return out;
}

std::string Config::echo() const {
  std::string out = "# fgsam " + subcommand_ + "\n";
  for (const auto& section : sections_) {
    out += "\n[" + section + "]\n";
    for (const auto& [key, value] : values_) {
      if (key == "run.out") continue;
      const auto dot = key.find('.');
      if (key.compare(0, dot, section) != 0 || dot != section.size()) continue;
      out += key.substr(dot + 1) + " = " + value + "\n";
    }
  }
  return out;
}

nlohmann::json Config::to_json() const {
  nlohmann::json out = nlohmann::json::object();
  out["subcommand"] = subcommand_;
  for (const auto& [key, value] : values_) {
    if (key == "run.out") continue;
    const auto dot = key.find('.');
    out[key.substr(0, dot)][key.substr(dot + 1)] = value;
  }
  return out;
}

}  // namespace fgsam::cli
