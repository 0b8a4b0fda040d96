#include "fgsam/analysis.hpp"
#include "fgsam/cli.hpp"
#include "fgsam/csbm.hpp"
#include "fgsam/fsnc.hpp"
#include "fgsam/graph_io.hpp"
#include "fgsam/report.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <numeric>
#include <thread>

namespace fgsam::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using report::CsvTable;
using report::format_double;

// ---------------------------------------------------------------------------
// Flags
// ---------------------------------------------------------------------------

struct FlagSpec {
  std::string flag;
  std::vector<std::string> keys;  // first one the subcommand knows wins
  std::string help;
};

const std::vector<FlagSpec>& flag_specs() {
  static const std::vector<FlagSpec> table = {
      {"--seed", {"run.seed"}, "root seed (U64)"},
      {"--out", {"run.out"}, "output directory"},
      {"--graph", {"graph.dir"}, "graph directory written by gen-csbm"},
      {"--optimizer", {"optim.name"}, "adam|sam|fgsam|fgsam+"},
      {"--rho", {"optim.rho"}, "perturbation radius"},
      {"--lambda", {"optim.lambda"}, "weight of the GNN gradient"},
      {"--alpha", {"optim.alpha"}, "weight of the cached flatness gradient"},
      {"--k", {"optim.k"}, "exact-step interval"},
      {"--lr", {"optim.lr"}, "learning rate"},
      {"--weight-decay", {"optim.weight_decay"}, "L2 coefficient"},
      {"--way", {"protocol.way"}, "classes per task"},
      {"--shot", {"protocol.shot"}, "support nodes per class"},
      {"--query", {"protocol.query"}, "query nodes per class"},
      {"--episodes", {"nc.epochs", "protocol.episodes"}, "training episodes (epochs for nc)"},
      {"--patience", {"nc.patience", "protocol.patience"}, "non-improving validations before stop"},
      {"--val-interval", {"protocol.val_interval"}, "episodes between validations"},
      {"--val-tasks", {"protocol.val_tasks"}, "tasks per validation"},
      {"--test-tasks", {"protocol.test_tasks"}, "meta-test tasks"},
      {"--repeats", {"protocol.repeats"}, "independent repeats"},
      {"--hidden", {"model.hidden"}, "hidden width"},
      {"--layers", {"model.layers"}, "number of layers"},
      {"--scheme", {"model.scheme"}, "gcn-sym|mean-neighbors"},
      {"--split", {"split.ratio"}, "class split train/val/novel, e.g. 12/4/4"},
      {"--classes", {"graph.classes"}, "CSBM classes"},
      {"--nodes-per-class", {"graph.nodes_per_class"}, "CSBM nodes per class"},
      {"--p", {"graph.p"}, "intra-class edge probability"},
      {"--q", {"graph.q"}, "inter-class edge probability"},
      {"--dist", {"graph.distance"}, "distance between class means"},
      {"--dim", {"graph.dim"}, "feature dimension"},
      {"--feature-noise", {"graph.feature_noise"}, "std of added feature noise"},
      {"--edge-noise", {"graph.edge_noise"}, "fraction of random edges added"},
      {"--optimizers",
       {"compare.optimizers", "sweep.optimizers", "bench.optimizers"},
       "comma-separated optimizer list"},
      {"--rhos", {"sweep.rhos"}, "comma-separated rho list"},
      {"--dims", {"landscape.dims"}, "1 or 2"},
      {"--points", {"landscape.points"}, "grid points per axis"},
      {"--instances", {"gradcheck.instances"}, "random instances"},
  };
  return table;
}

// ---------------------------------------------------------------------------
// Settings -> library types
// ---------------------------------------------------------------------------

optim::Hyperparams hyperparams(const Config& c) {
  optim::Hyperparams hp;
  hp.lr = c.get_double("optim.lr");
  hp.rho = c.get_double("optim.rho");
  hp.lambda_topo = c.get_double("optim.lambda");
  hp.alpha = c.get_double("optim.alpha");
  hp.k = c.get_int("optim.k");
  hp.beta1 = c.get_double("optim.beta1");
  hp.beta2 = c.get_double("optim.beta2");
  hp.eps = c.get_double("optim.eps");
  hp.weight_decay = c.get_double("optim.weight_decay");
  const std::string& route = c.get("optim.base_route");
  require(route == "gnn" || route == "mlp",
          "optim.base_route must be gnn or mlp, got '" + route + "'");
  hp.base_route = route == "gnn" ? optim::Route::gnn : optim::Route::mlp;
  hp.validate();
  return hp;
}

fsnc::ProtocolConfig protocol(const Config& c) {
  fsnc::ProtocolConfig p;
  p.repeats = c.get_int("protocol.repeats");
  p.max_episodes = c.get_int("protocol.episodes");
  p.patience = c.get_int("protocol.patience");
  p.val_interval = c.get_int("protocol.val_interval");
  p.val_tasks = c.get_int("protocol.val_tasks");
  p.test_tasks = c.get_int("protocol.test_tasks");
  p.way = c.get_int("protocol.way");
  p.shot = c.get_int("protocol.shot");
  p.query = c.get_int("protocol.query");
  p.optimizer = c.get("optim.name");
  p.hyper = hyperparams(c);
  p.layers = c.get_int("model.layers");
  p.hidden = c.get_int("model.hidden");
  p.embed_dim = c.get_int("model.embed_dim");
  p.scheme = graph::parse_scheme(c.get("model.scheme"));
  p.seed = c.get_u64("run.seed");
  p.validate();
  return p;
}

graph::CsbmParams csbm_params(const Config& c) {
  graph::CsbmParams p;
  p.num_classes = c.get_int("graph.classes");
  p.nodes_per_class = c.get_int("graph.nodes_per_class");
  p.p = c.get_double("graph.p");
  p.q = c.get_double("graph.q");
  p.distance = c.get_double("graph.distance");
  p.dim = c.get_int("graph.dim");
  p.seed = derive_seed(c.get_u64("run.seed"), "graph");
  p.validate();
  return p;
}

struct Inputs {
  graph::Graph graph;
  std::string sha1;  // config echo plus any graph files read
};

Inputs load_inputs(const Config& c) {
  std::string digest_source = c.echo();
  const std::string& dir = c.get("graph.dir");
  auto g = [&] {
    if (!dir.empty()) {
      for (const char* name : {"edges.csv", "features.csv", "labels.csv", "meta.json"}) {
        digest_source += report::git_blob_sha1(report::read_file(fs::path(dir) / name));
      }
      return graph::load_graph(dir);
    }
    return graph::generate_csbm(csbm_params(c));
  }();
  const std::uint64_t noise = derive_seed(c.get_u64("run.seed"), "noise");
  const double sigma = c.get_double("graph.feature_noise");
  const double ratio = c.get_double("graph.edge_noise");
  require(sigma >= 0.0 && ratio >= 0.0, "noise levels must be non-negative");
  if (sigma > 0.0) g = graph::inject_feature_noise(g, sigma, derive_seed(noise, std::uint64_t{0}));
  if (ratio > 0.0) g = graph::inject_edge_noise(g, ratio, derive_seed(noise, std::uint64_t{1}));
  return {std::move(g), report::git_blob_sha1(digest_source)};
}

fsnc::ClassSplit class_split(const Config& c, const graph::Graph& g) {
  return fsnc::split_classes(g.num_classes(), fsnc::parse_split_ratio(c.get("split.ratio")),
                             derive_seed(c.get_u64("run.seed"), "split"));
}

fs::path output_dir(const Config& c) {
  const std::string& out = c.get("run.out");
  return out.empty() ? fs::path("runs") / c.subcommand() : fs::path(out);
}

json base_meta(const Config& c, const std::string& inputs_sha1) {
  json meta;
  meta["subcommand"] = c.subcommand();
  meta["seed"] = c.get_u64("run.seed");
  meta["config"] = c.to_json();
  meta["inputs_sha1"] = inputs_sha1;
  return meta;
}

void write_echo(const fs::path& dir, const Config& c) {
  report::write_file(dir / "config.ini", c.echo());
}

void write_json(const fs::path& file, const json& doc) {
  report::write_file(file, doc.dump(2) + "\n");
}

std::vector<std::string> split_cells(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    cells.push_back(line.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return cells;
}

CsvTable trace_table(const std::vector<optim::StepRecord>& trace) {
  CsvTable t{split_cells(optim::trace_csv_header()), {}};
  for (const auto& r : trace) t.add_row(split_cells(optim::trace_csv_row(r)));
  return t;
}

json counters_json(const optim::EvalCounters& c) { return {{"gnn", c.gnn}, {"mlp", c.mlp}}; }

std::string arm_dir_name(const std::string& optimizer) {
  return optimizer == "fgsam+" ? "fgsam_plus" : optimizer;
}

// Writes the per-repeat tables and report.json of one training run.
json write_train_report(const fs::path& dir, const fsnc::TrainReport& rep, const json& meta) {
  json doc = meta;
  doc["optimizer"] = rep.config.optimizer;
  json repeats = json::array();
  json stops = json::array();
  for (const auto& r : rep.repeats) {
    const std::string suffix = "_r" + std::to_string(r.repeat) + ".csv";
    json rmeta = meta;
    rmeta["repeat"] = r.repeat;
    rmeta["repeat_seed"] = r.seed;
    report::write_csv(dir / ("trace" + suffix), trace_table(r.trace), rmeta);

    CsvTable val{{"episode", "val_acc", "improved"}, {}};
    for (const auto& v : r.validations) {
      val.add_row({std::to_string(v.episode), format_double(v.accuracy), v.improved ? "1" : "0"});
    }
    report::write_csv(dir / ("validation" + suffix), val, rmeta);

    CsvTable test{{"task", "accuracy"}, {}};
    for (std::size_t i = 0; i < r.test.accuracies.size(); ++i) {
      test.add_row({std::to_string(i), format_double(r.test.accuracies[i])});
    }
    report::write_csv(dir / ("test" + suffix), test, rmeta);

    repeats.push_back({{"repeat", r.repeat},
                       {"seed", r.seed},
                       {"best_val_acc", r.best_val_acc},
                       {"best_episode", r.best_episode},
                       {"stop_episode", r.stop_episode},
                       {"test_acc_mean", r.test.mean},
                       {"test_acc_std", r.test.std},
                       {"trace", "trace" + suffix},
                       {"validations", "validation" + suffix},
                       {"test", "test" + suffix},
                       {"counters", counters_json(r.counters)},
                       {"wall_seconds", r.wall_seconds}});
    stops.push_back(r.stop_episode);
  }
  doc["best_val_acc"] = rep.best_val_acc;
  doc["stop_episode"] = stops;
  doc["test_acc_mean"] = rep.test_acc_mean;
  doc["test_acc_std"] = rep.test_acc_std;
  doc["counters"] = counters_json(rep.counters);
  doc["wall_seconds"] = rep.wall_seconds;
  doc["repeats"] = repeats;
  write_json(dir / "report.json", doc);
  return doc;
}

// Concatenation of per-repeat traces with cumulative counters carried over.
std::vector<optim::StepRecord> merged_trace(const fsnc::TrainReport& rep) {
  std::vector<optim::StepRecord> out;
  std::int64_t gnn = 0;
  std::int64_t mlp = 0;
  for (const auto& r : rep.repeats) {
    for (auto rec : r.trace) {
      rec.gnn_evals_cum += gnn;
      rec.mlp_evals_cum += mlp;
      out.push_back(rec);
    }
    gnn += r.counters.gnn;
    mlp += r.counters.mlp;
  }
  return out;
}

CsvTable cost_table(const std::vector<analysis::CostRow>& rows) {
  CsvTable t{{"optimizer", "steps", "gnn_evals", "mlp_evals", "wall_seconds", "wall_ratio"}, {}};
  for (const auto& r : rows) {
    t.add_row({r.optimizer, std::to_string(r.steps), std::to_string(r.gnn_evals),
               std::to_string(r.mlp_evals), format_double(r.wall_seconds),
               format_double(r.wall_ratio)});
  }
  return t;
}

unsigned thread_cap() {
  if (const char* env = std::getenv("FGSAM_THREADS")) {
    const int n = std::atoi(env);
    require(n >= 1, "FGSAM_THREADS must be a positive integer, got '" + std::string(env) + "'");
    return static_cast<unsigned>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_gen_csbm(const Config& c) {
  const fs::path out = output_dir(c);
  const Inputs in = load_inputs(c);
  graph::save_graph(in.graph, out);
  write_echo(out, c);
  std::printf("wrote %lld nodes, %zu edges, %d classes to %s\n",
              static_cast<long long>(in.graph.num_nodes()), in.graph.edges().size(),
              in.graph.num_classes(), out.string().c_str());
  return 0;
}

int cmd_fsnc(const Config& c) {
  const fs::path out = output_dir(c);
  const Inputs in = load_inputs(c);
  const fsnc::ProtocolConfig cfg = protocol(c);
  const fsnc::TrainReport rep = fsnc::train_protocol(cfg, in.graph, class_split(c, in.graph));
  write_echo(out, c);
  write_train_report(out, rep, base_meta(c, in.sha1));
  std::printf("%s: meta-test accuracy %.4f +- %.4f over %d repeats\n", cfg.optimizer.c_str(),
              rep.test_acc_mean, rep.test_acc_std, cfg.repeats);
  return 0;
}

int cmd_compare(const Config& c) {
  const fs::path out = output_dir(c);
  const Inputs in = load_inputs(c);
  const fsnc::ClassSplit split = class_split(c, in.graph);
  const fsnc::ProtocolConfig base = protocol(c);
  const std::vector<std::string> arms = c.get_list("compare.optimizers");
  for (const auto& name : arms) optim::parse_kind(name);

  std::vector<fsnc::TrainReport> reports(arms.size());
  std::vector<std::exception_ptr> failures(arms.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < arms.size(); i = next++) {
      try {
        fsnc::ProtocolConfig cfg = base;
        cfg.optimizer = arms[i];
        reports[i] = fsnc::train_protocol(cfg, in.graph, split);
      } catch (...) {
        failures[i] = std::current_exception();
      }
    }
  };
  const unsigned threads = std::min<unsigned>(thread_cap(), static_cast<unsigned>(arms.size()));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }

  write_echo(out, c);
  const json meta = base_meta(c, in.sha1);
  json summary = meta;
  json arm_docs = json::array();
  std::vector<analysis::NamedTrace> traces;
  for (std::size_t i = 0; i < arms.size(); ++i) {
    const std::string dir = arm_dir_name(arms[i]);
    write_train_report(out / dir, reports[i], meta);
    arm_docs.push_back({{"optimizer", arms[i]},
                        {"dir", dir},
                        {"test_acc_mean", reports[i].test_acc_mean},
                        {"test_acc_std", reports[i].test_acc_std},
                        {"best_val_acc", reports[i].best_val_acc},
                        {"counters", counters_json(reports[i].counters)},
                        {"wall_seconds", reports[i].wall_seconds}});
    traces.emplace_back(arms[i], merged_trace(reports[i]));
    std::printf("%-7s meta-test %.4f +- %.4f  gnn=%lld mlp=%lld\n", arms[i].c_str(),
                reports[i].test_acc_mean, reports[i].test_acc_std,
                static_cast<long long>(reports[i].counters.gnn),
                static_cast<long long>(reports[i].counters.mlp));
  }
  summary["arms"] = arm_docs;
  write_json(out / "summary.json", summary);
  report::write_csv(out / "cost.csv", cost_table(analysis::cost_report(traces)), meta);
  return 0;
}

fsnc::NcConfig nc_config(const Config& c) {
  fsnc::NcConfig nc;
  nc.max_epochs = c.get_int("nc.epochs");
  nc.patience = c.get_int("nc.patience");
  nc.optimizer = c.get("optim.name");
  nc.hyper = hyperparams(c);
  nc.layers = c.get_int("model.layers");
  nc.hidden = c.get_int("model.hidden");
  nc.scheme = graph::parse_scheme(c.get("model.scheme"));
  nc.seed = c.get_u64("run.seed");
  nc.validate();
  return nc;
}

fsnc::NodeMasks nc_masks(const Config& c, const graph::Graph& g) {
  return fsnc::random_masks(g.num_nodes(), c.get_double("nc.train_frac"),
                            c.get_double("nc.val_frac"),
                            derive_seed(c.get_u64("run.seed"), "split"));
}

int cmd_nc(const Config& c) {
  const fs::path out = output_dir(c);
  const Inputs in = load_inputs(c);
  const fsnc::NcReport rep = fsnc::standard_nc_train(nc_config(c), in.graph, nc_masks(c, in.graph));
  write_echo(out, c);
  const json meta = base_meta(c, in.sha1);
  report::write_csv(out / "trace.csv", trace_table(rep.trace), meta);
  CsvTable val{{"epoch", "val_acc"}, {}};
  for (std::size_t i = 0; i < rep.val_accuracies.size(); ++i) {
    val.add_row({std::to_string(i + 1), format_double(rep.val_accuracies[i])});
  }
  report::write_csv(out / "validation.csv", val, meta);
  json doc = meta;
  doc["optimizer"] = c.get("optim.name");
  doc["best_val_acc"] = rep.best_val_acc;
  doc["best_epoch"] = rep.best_epoch;
  doc["stop_epoch"] = rep.stop_epoch;
  doc["test_acc"] = rep.test_acc;
  doc["trace"] = "trace.csv";
  doc["counters"] = counters_json(rep.counters);
  doc["wall_seconds"] = rep.wall_seconds;
  write_json(out / "report.json", doc);
  std::printf("%s: test accuracy %.4f (best val %.4f at epoch %d)\n", c.get("optim.name").c_str(),
              rep.test_acc, rep.best_val_acc, rep.best_epoch);
  return 0;
}

int cmd_landscape(const Config& c) {
  const fs::path out = output_dir(c);
  const Inputs in = load_inputs(c);
  const fsnc::NcConfig nc = nc_config(c);
  const fsnc::NodeMasks masks = nc_masks(c, in.graph);
  const fsnc::NcReport rep = fsnc::standard_nc_train(nc, in.graph, masks);

  model::LossSpec spec;
  spec.nodes = masks.train;
  for (Index i : masks.train) spec.targets.push_back(in.graph.labels()[static_cast<std::size_t>(i)]);
  spec.weight_decay = nc.hyper.weight_decay;
  const double range = c.get_double("landscape.range");
  require(range > 0.0, "landscape.range must be positive");
  const auto grid = analysis::linspace(-range, range, c.get_int("landscape.points"));
  const graph::PropagationOperator op = graph::normalize(in.graph, nc.scheme);
  const analysis::LandscapeSlice slice = analysis::landscape_slice(
      rep.best_params, in.graph, op, spec, c.get_int("landscape.dims"), grid, nc.seed);

  write_echo(out, c);
  json meta = base_meta(c, in.sha1);
  meta["base_loss"] = slice.base_loss;
  meta["normalization"] = slice.normalization;
  meta["dims"] = slice.dims;
  CsvTable t{slice.dims == 1 ? std::vector<std::string>{"alpha", "loss"}
                             : std::vector<std::string>{"alpha", "beta", "loss"},
             {}};
  std::size_t idx = 0;
  for (double a : slice.alphas) {
    if (slice.dims == 1) {
      t.add_row({format_double(a), format_double(slice.losses[idx++])});
      continue;
    }
    for (double b : slice.betas) {
      t.add_row({format_double(a), format_double(b), format_double(slice.losses[idx++])});
    }
  }
  report::write_csv(out / "landscape.csv", t, meta);
  std::printf("base loss %.6f, %zu grid points\n", slice.base_loss, slice.losses.size());
  return 0;
}

int cmd_drift(const Config& c) {
  const fs::path out = output_dir(c);
  const Inputs in = load_inputs(c);
  fsnc::ProtocolConfig cfg = protocol(c);
  require(optim::parse_kind(cfg.optimizer) == optim::Kind::fgsam_plus,
          "drift needs optimizer fgsam+ (only its exact steps carry all four gradients)");
  cfg.capture_bundles = true;
  const fsnc::ClassSplit split = class_split(c, in.graph);

  write_echo(out, c);
  const json meta = base_meta(c, in.sha1);
  CsvTable summary{{"repeat", "points", "median_s", "median_h", "median_v", "median_G",
                    "median_s_rel", "median_h_rel", "median_v_rel", "median_G_rel"},
                   {}};
  using P = analysis::DriftPoint;
  for (int r = 0; r < cfg.repeats; ++r) {
    fsnc::ProtocolConfig run = cfg;
    run.seed = cfg.seed + static_cast<std::uint64_t>(r);
    const auto series = analysis::grad_drift(fsnc::run_episodes(run, in.graph, split.train).bundles);
    CsvTable t{{"step", "g_s", "g_h", "g_v", "g_G", "g_s_rel", "g_h_rel", "g_v_rel", "g_G_rel"}, {}};
    for (const auto& p : series.points) {
      t.add_row({std::to_string(p.step), format_double(p.s), format_double(p.h),
                 format_double(p.v), format_double(p.G), format_double(p.s_rel),
                 format_double(p.h_rel), format_double(p.v_rel), format_double(p.G_rel)});
    }
    json rmeta = meta;
    rmeta["repeat"] = r;
    report::write_csv(out / ("drift_r" + std::to_string(r) + ".csv"), t, rmeta);
    const std::vector<double> medians = {
        series.median(&P::s),     series.median(&P::h),     series.median(&P::v),
        series.median(&P::G),     series.median(&P::s_rel), series.median(&P::h_rel),
        series.median(&P::v_rel), series.median(&P::G_rel)};
    std::vector<std::string> row = {std::to_string(r), std::to_string(series.points.size())};
    for (double m : medians) row.push_back(format_double(m));
    summary.add_row(row);
    std::printf("repeat %d: median drift g_s=%.4g g_h=%.4g g_v=%.4g g_G=%.4g\n", r, medians[0],
                medians[1], medians[2], medians[3]);
  }
  report::write_csv(out / "drift_summary.csv", summary, meta);
  return 0;
}

int cmd_rho_sweep(const Config& c) {
  const fs::path out = output_dir(c);
  const Inputs in = load_inputs(c);
  const fsnc::ProtocolConfig cfg = protocol(c);
  const auto sweep =
      analysis::rho_sweep(cfg, in.graph, class_split(c, in.graph).train,
                          c.get_list("sweep.optimizers"), c.get_double_list("sweep.rhos"));
  for (const auto& w : sweep.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  CsvTable t{{"optimizer", "rho", "step", "loss", "grad_norm"}, {}};
  for (const auto& curve : sweep.curves) {
    for (const auto& r : curve.trace) {
      t.add_row({curve.optimizer, format_double(curve.rho), std::to_string(r.step),
                 format_double(r.loss), format_double(r.grad_norm)});
    }
  }
  write_echo(out, c);
  report::write_csv(out / "rho_sweep.csv", t, base_meta(c, in.sha1));
  std::printf("%zu curves of %d episodes\n", sweep.curves.size(), cfg.max_episodes);
  return 0;
}

int cmd_verify_theorem(const Config& c) {
  graph::CsbmParams p;
  p.num_classes = c.get_int("graph.classes");
  p.p = c.get_double("graph.p");
  p.q = c.get_double("graph.q");
  p.distance = c.get_double("graph.distance");
  p.dim = c.get_int("graph.dim");
  const analysis::TheoremReport rep = analysis::verify_theorem(p);
  std::printf("K=%d p=%g q=%g lambda=%.6g pairs=%zu\n", rep.num_classes, rep.p, rep.q, rep.lambda,
              rep.pairs.size());
  std::printf("max |w.b - w'.b'| = %.3e\n", rep.max_offset_gap);
  std::printf("min cosine(w, w') = %.15f\n", rep.min_cosine);
  if (!c.get("run.out").empty()) {
    const fs::path out = output_dir(c);
    CsvTable t{{"first", "second", "w_dot_b", "wf_dot_bf", "offset_gap", "cosine"}, {}};
    for (const auto& pr : rep.pairs) {
      t.add_row({std::to_string(pr.first), std::to_string(pr.second),
                 format_double(pr.w.dot(pr.b)), format_double(pr.w_filtered.dot(pr.b_filtered)),
                 format_double(pr.offset_gap), format_double(pr.cosine)});
    }
    write_echo(out, c);
    report::write_csv(out / "theorem.csv", t, base_meta(c, report::git_blob_sha1(c.echo())));
  }
  return rep.max_offset_gap <= 1e-9 ? 0 : 1;
}

int cmd_check_grads(const Config& c) {
  const auto start = std::chrono::steady_clock::now();
  const analysis::GradCheckReport rep =
      analysis::check_gradients(c.get_int("gradcheck.instances"), c.get_u64("run.seed"));
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::printf("%zu instances, max relative error %.3e (%.2f s)\n", rep.cases.size(),
              rep.max_rel_error, secs);
  if (!c.get("run.out").empty()) {
    const fs::path out = output_dir(c);
    CsvTable t{{"index", "kind", "nodes", "layers", "parameters", "max_rel_error"}, {}};
    for (const auto& k : rep.cases) {
      t.add_row({std::to_string(k.index), k.kind, std::to_string(k.nodes),
                 std::to_string(k.layers), std::to_string(k.parameters),
                 format_double(k.max_rel_error)});
    }
    write_echo(out, c);
    report::write_csv(out / "grad_check.csv", t, base_meta(c, report::git_blob_sha1(c.echo())));
  }
  return rep.max_rel_error < 1e-4 ? 0 : 1;
}

int cmd_bench(const Config& c) {
  const fs::path out = output_dir(c);
  const Inputs in = load_inputs(c);
  fsnc::ProtocolConfig cfg = protocol(c);
  std::vector<int> classes(static_cast<std::size_t>(in.graph.num_classes()));
  std::iota(classes.begin(), classes.end(), 0);

  // Cost of one evaluation on each route, same episode and weights.
  const graph::PropagationOperator op = graph::normalize(in.graph, cfg.scheme);
  model::Architecture arch{cfg.layers, in.graph.feature_dim(), cfg.hidden, cfg.embed_dim};
  const model::ModelParams params = model::init_params(arch, derive_seed(cfg.seed, "init"));
  const fsnc::Episode ep = fsnc::sample_episode(in.graph, classes, cfg.way, cfg.shot, cfg.query,
                                                derive_seed(cfg.seed, "episodes"));
  fsnc::EpisodeObjective objective(in.graph, op, arch, ep, cfg.hyper.weight_decay);
  const int reps = c.get_int("bench.timing_evals");
  require(reps >= 1, "bench.timing_evals must be positive");
  const auto time_route = [&](optim::Route route) {
    const auto start = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) objective.evaluate(params.flat(), route);
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
               .count() /
           reps;
  };
  const double gnn_ms = time_route(optim::Route::gnn);
  const double mlp_ms = time_route(optim::Route::mlp);

  std::vector<analysis::NamedTrace> traces;
  for (const auto& name : c.get_list("bench.optimizers")) {
    fsnc::ProtocolConfig run = cfg;
    run.optimizer = name;
    traces.emplace_back(name, fsnc::run_episodes(run, in.graph, classes).trace);
  }
  const auto rows = analysis::cost_report(traces);

  write_echo(out, c);
  json meta = base_meta(c, in.sha1);
  meta["nodes"] = in.graph.num_nodes();
  meta["edges"] = in.graph.edges().size();
  meta["mean_degree"] = 2.0 * static_cast<double>(in.graph.edges().size()) /
                        static_cast<double>(in.graph.num_nodes());
  meta["wall_gnn_eval_ms"] = gnn_ms;
  meta["wall_mlp_eval_ms"] = mlp_ms;
  meta["wall_eval_ratio"] = gnn_ms / mlp_ms;
  report::write_csv(out / "bench.csv", cost_table(rows), meta);
  std::printf("graph: %lld nodes, mean degree %.1f; eval ms gnn=%.3f mlp=%.3f (ratio %.1f)\n",
              static_cast<long long>(in.graph.num_nodes()), meta["mean_degree"].get<double>(),
              gnn_ms, mlp_ms, gnn_ms / mlp_ms);
  for (const auto& r : rows) {
    std::printf("%-7s steps=%lld gnn=%lld mlp=%lld wall=%.3fs ratio=%.3f\n", r.optimizer.c_str(),
                static_cast<long long>(r.steps), static_cast<long long>(r.gnn_evals),
                static_cast<long long>(r.mlp_evals), r.wall_seconds, r.wall_ratio);
  }
  return 0;
}

int dispatch(const Config& c) {
  const std::string& s = c.subcommand();
  if (s == "gen-csbm") return cmd_gen_csbm(c);
  if (s == "fsnc") return cmd_fsnc(c);
  if (s == "compare") return cmd_compare(c);
  if (s == "nc") return cmd_nc(c);
  if (s == "landscape") return cmd_landscape(c);
  if (s == "drift") return cmd_drift(c);
  if (s == "rho-sweep") return cmd_rho_sweep(c);
  if (s == "verify-theorem") return cmd_verify_theorem(c);
  if (s == "check-grads") return cmd_check_grads(c);
  if (s == "bench") return cmd_bench(c);
  throw Error("unhandled subcommand " + s);
}

}  // namespace

int run(const std::vector<std::string>& args) {
  if (args.empty() || args[0] == "-h" || args[0] == "--help") {
    std::fputs(usage().c_str(), args.empty() ? stderr : stdout);
    return args.empty() ? 2 : 0;
  }
  const std::string& sub = args[0];
  const auto& names = subcommands();
  if (std::find(names.begin(), names.end(), sub) == names.end()) {
    std::fprintf(stderr, "fgsam: unknown subcommand '%s'\n\n%s", sub.c_str(), usage().c_str());
    return 2;
  }

  try {
    Config config(sub);
    CLI::App app{"fgsam " + sub, "fgsam " + sub};
    std::string config_path;
    app.add_option("--config", config_path, "key = value file with [section] headers");

    struct Bound {
      std::string key;
      std::string value;
      CLI::Option* option = nullptr;
    };
    std::vector<Bound> bound;
    bound.reserve(flag_specs().size());
    for (const auto& spec : flag_specs()) {
      std::string key;
      for (const auto& k : spec.keys) {
        if (config.has(k)) {
          key = k;
          break;
        }
      }
      if (sub == "verify-theorem" && spec.flag == "--k") key = "graph.classes";
      if (key.empty()) continue;
      bound.push_back({key, "", nullptr});
      bound.back().option = app.add_option(spec.flag, bound.back().value, spec.help + " [" + key + "]");
    }

    std::vector<std::string> rest(args.rbegin(), args.rend() - 1);
    try {
      app.parse(rest);
    } catch (const CLI::ParseError& e) {
      if (e.get_exit_code() == 0) {
        std::fputs(app.help().c_str(), stdout);
        return 0;
      }
      std::fprintf(stderr, "fgsam %s: %s\n", sub.c_str(), e.what());
      return 2;
    }

    if (!config_path.empty()) config.load_file(config_path);
    for (const auto& b : bound) {
      if (b.option->count() > 0) config.set(b.key, b.value);
    }
    return dispatch(config);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "fgsam %s: error: %s\n", sub.c_str(), e.what());
    return 1;
  }
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace fgsam::cli
