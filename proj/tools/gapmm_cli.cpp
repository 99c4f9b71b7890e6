// gapmm command line: robust-fit, chl-train, trace-export.
// Exit codes: 0 ok, 1 runtime failure, 2 usage.

#include <charconv>
#include <cmath>
#include <memory>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gapmm/gapmm.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

/// Thrown for problems with the invocation found after CLI11 parsing.
struct UsageError {
  std::string message;
};

struct RuntimeError {
  std::string message;
};

void check(gapmm_status status, const std::string& what) {
  if (status == GAPMM_OK) return;
  std::string msg = what + ": " + gapmm_last_error();
  if (status == GAPMM_ERR_INVALID_ARGUMENT) throw UsageError{msg};
  throw RuntimeError{msg};
}

struct Globals {
  std::uint64_t seed = 1;
  int threads = 0;
  bool dump_config = false;
};

struct RobustFitArgs {
  std::string input;
  std::string instance;
  std::string kernel = "stq";
  double tau = 0.0;
  std::string strategy = "regemm";
  int rounds = 100;
  double eta = 0.5;
  double eta_prime = 0.75;
  int inner_iterations = 1;
  std::string out;
};

struct ChlTrainArgs {
  std::string arch = "8-6-6-4";
  std::string data = "synthetic:moons";
  std::string instance;
  std::string driver = "stochastic-sudemm";
  double rho = 0.5;
  double eta = 0.5;
  double lr = 0.05;
  int batch = 10;
  int epochs = 30;
  int max_passes = 40;
  int eval_passes = 100;
  long limit = 0;
  std::string out;
};

struct ExportArgs {
  std::vector<std::string> inputs;
  std::string out;
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw RuntimeError{"cannot create output directory '" + dir + "'"};
}

void write_json(const json& j, const std::string& path) {
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw RuntimeError{"cannot write '" + path + "'"};
}

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) throw UsageError{std::string(what) + " not found: " + path};
}

bool positive_integer(const std::string& s, long& value) {
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  return !s.empty() && ec == std::errc() && ptr == s.data() + s.size() && value >= 1;
}

// Strategy lists are validated before any work starts.
std::string validate_strategies(const std::string& list) {
  if (list == "all") return {};
  std::stringstream ss(list);
  for (std::string s; std::getline(ss, s, ',');) {
    if (s != "irls" && s != "joint-hq" && s != "graduated" && s != "regemm") {
      return "unknown strategy '" + s + "' (irls, joint-hq, graduated, regemm or all)";
    }
  }
  if (list.empty() || list.back() == ',') return "empty strategy in list";
  return {};
}

std::string validate_driver(const std::string& d) {
  if (d == "sudemm" || d == "stochastic-sudemm" || d == "regemm") return {};
  if (d.rfind("fixed:", 0) == 0) {
    long n = 0;
    if (positive_integer(d.substr(6), n) && n <= 1000000) return {};
  }
  return "unknown driver '" + d + "' (sudemm, stochastic-sudemm, fixed:<passes> or regemm)";
}

std::string validate_arch(const std::string& a) {
  int layers = 0;
  std::stringstream ss(a);
  for (std::string part; std::getline(ss, part, '-');) {
    long size = 0;
    if (!positive_integer(part, size) || size > 1000000) {
      return "bad architecture '" + a + "' (expected sizes like 8-6-6-4)";
    }
    ++layers;
  }
  if (layers < 3 || a.back() == '-') return "architecture needs at least one hidden layer";
  return {};
}

std::string sanitize(std::string s) {
  for (char& c : s) {
    if (c == ':' || c == '/' || c == ',') c = '-';
  }
  return s;
}

void apply_globals(const Globals& g) { check(gapmm_set_threads(g.threads), "threads"); }

int run_robust_fit(const Globals& g, RobustFitArgs a) {
  apply_globals(g);
  if (std::string err = validate_strategies(a.strategy); !err.empty()) throw UsageError{err};

  gapmm_ba_problem* problem = nullptr;
  std::string spec;
  if (a.input.rfind("synthetic:", 0) == 0) {
    spec = a.input.substr(10);
    if (spec.find("seed=") == std::string::npos) {
      spec += (spec.empty() ? "" : ",") + std::string("seed=") + std::to_string(g.seed);
    }
    check(gapmm_ba_synthetic(spec.c_str(), &problem), "synthetic input");
    if (a.instance.empty()) a.instance = "synthetic";
  } else {
    require_file(a.input, "input file");
    check(gapmm_ba_load(a.input.c_str(), &problem), a.input);
    if (a.instance.empty()) a.instance = fs::path(a.input).stem().string();
  }
  std::unique_ptr<gapmm_ba_problem, decltype(&gapmm_ba_free)> owner(problem, gapmm_ba_free);
  double tau = a.tau;
  if (tau <= 0.0) check(gapmm_ba_tau(problem, &tau), "tau");
  check(gapmm_ba_set_kernel(problem, a.kernel.c_str(), tau), "kernel");

  gapmm_robust_options opt;
  gapmm_robust_options_default(&opt);
  opt.rounds = a.rounds;
  opt.eta = a.eta;
  opt.eta_prime = a.eta_prime;
  opt.inner_iterations = a.inner_iterations;

  ensure_dir(a.out);
  if (g.dump_config) {
    json j = {{"command", "robust-fit"},
              {"input", a.input},
              {"instance", a.instance},
              {"kernel", a.kernel},
              {"tau", tau},
              {"strategy", a.strategy},
              {"rounds", a.rounds},
              {"eta", a.eta},
              {"eta_prime", a.eta_prime},
              {"inner_iterations", a.inner_iterations},
              {"seed", g.seed},
              {"threads", g.threads},
              {"out", a.out}};
    if (!spec.empty()) j["synthetic_spec"] = spec;
    write_json(j, (fs::path(a.out) / "config.json").string());
  }

  int64_t cams = 0, pts = 0, obs = 0;
  check(gapmm_ba_counts(problem, &cams, &pts, &obs), "counts");
  double initial = 0.0;
  check(gapmm_ba_cost(problem, &initial), "initial cost");
  std::cerr << "robust-fit: " << a.instance << ": " << cams << " cameras, " << pts << " points, "
            << obs << " observations, tau " << fmt(tau) << ", initial cost " << fmt(initial)
            << '\n';

  gapmm_benchmark* bench = nullptr;
  check(gapmm_robust_benchmark(problem, a.instance.c_str(), a.strategy.c_str(), &opt,
                               a.out.c_str(), &bench),
        "robust-fit");
  std::unique_ptr<gapmm_benchmark, decltype(&gapmm_benchmark_free)> bench_owner(
      bench, gapmm_benchmark_free);
  bool failed = false;
  for (int64_t i = 0; i < gapmm_benchmark_length(bench); ++i) {
    gapmm_benchmark_row row;
    check(gapmm_benchmark_row_at(bench, i, &row), "benchmark row");
    if (row.error != nullptr) {
      failed = true;
      std::cerr << "robust-fit: " << row.strategy << " failed: " << row.error << '\n';
    } else {
      std::cerr << "robust-fit: " << row.strategy << ": final cost " << fmt(row.final_cost)
                << " after " << row.rounds << " rounds (" << fmt(row.wall_ms) << " ms)\n";
    }
  }
  return failed ? kExitFailure : kExitOk;
}

int run_chl_train(const Globals& g, ChlTrainArgs a) {
  apply_globals(g);
  if (std::string err = validate_driver(a.driver); !err.empty()) throw UsageError{err};
  if (std::string err = validate_arch(a.arch); !err.empty()) throw UsageError{err};
  std::vector<long> sizes;
  {
    std::stringstream ss(a.arch);
    for (std::string part; std::getline(ss, part, '-');) sizes.push_back(std::stol(part));
  }

  gapmm_dataset* data = nullptr;
  json data_config;
  if (a.data.rfind("synthetic:", 0) == 0) {
    // synthetic:moons[,n=<samples>][,noise=<sigma>]
    std::stringstream ss(a.data.substr(10));
    std::string kind;
    std::getline(ss, kind, ',');
    if (kind != "moons") throw UsageError{"unknown synthetic dataset '" + kind + "'"};
    long n = 200;
    double noise = 0.35;
    for (std::string item; std::getline(ss, item, ',');) {
      const auto eq = item.find('=');
      const std::string key = item.substr(0, eq);
      const std::string value = eq == std::string::npos ? "" : item.substr(eq + 1);
      try {
        if (key == "n") {
          n = std::stol(value);
        } else if (key == "noise") {
          noise = std::stod(value);
        } else {
          throw UsageError{"unknown synthetic dataset key '" + key + "'"};
        }
      } catch (const std::logic_error&) {
        throw UsageError{"bad value in '" + item + "'"};
      }
    }
    check(gapmm_dataset_synthetic(static_cast<int>(n), static_cast<int>(sizes.front()),
                                  static_cast<int>(sizes.back()), noise, g.seed, &data),
          "synthetic data");
    data_config = {{"kind", "synthetic"}, {"samples", n}, {"noise", noise}};
    if (a.instance.empty()) a.instance = "moons";
  } else if (a.data.rfind("idx:", 0) == 0) {
    const std::string paths = a.data.substr(4);
    const auto comma = paths.find(',');
    if (comma == std::string::npos) throw UsageError{"idx data needs idx:<images>,<labels>"};
    const std::string images = paths.substr(0, comma), labels = paths.substr(comma + 1);
    require_file(images, "data file");
    require_file(labels, "data file");
    check(gapmm_dataset_idx(images.c_str(), labels.c_str(), static_cast<int>(sizes.back()),
                            a.limit, &data),
          "idx data");
    data_config = {{"kind", "idx"}, {"images", images}, {"labels", labels}, {"limit", a.limit}};
    if (a.instance.empty()) a.instance = fs::path(images).stem().string();
  } else {
    throw UsageError{"--data must be synthetic:moons or idx:<images>,<labels>"};
  }
  std::unique_ptr<gapmm_dataset, decltype(&gapmm_dataset_free)> owner(data, gapmm_dataset_free);

  gapmm_chl_options opt;
  gapmm_chl_options_default(&opt);
  opt.architecture = a.arch.c_str();
  opt.driver = a.driver.c_str();
  opt.rho = a.rho;
  opt.eta = a.eta;
  opt.learning_rate = a.lr;
  opt.batch = a.batch;
  opt.epochs = a.epochs;
  opt.max_passes = a.max_passes;
  opt.eval_passes = a.eval_passes;
  opt.seed = g.seed;

  ensure_dir(a.out);
  if (g.dump_config) {
    write_json({{"command", "chl-train"},
                {"arch", a.arch},
                {"data", data_config},
                {"instance", a.instance},
                {"driver", a.driver},
                {"rho", a.rho},
                {"eta", a.eta},
                {"lr", a.lr},
                {"batch", a.batch},
                {"epochs", a.epochs},
                {"max_passes", a.max_passes},
                {"eval_passes", a.eval_passes},
                {"seed", g.seed},
                {"threads", g.threads},
                {"out", a.out}},
               (fs::path(a.out) / "config.json").string());
  }

  gapmm_trace* trace = nullptr;
  check(gapmm_chl_train(data, &opt, &trace), "chl-train");
  std::unique_ptr<gapmm_trace, decltype(&gapmm_trace_free)> trace_owner(trace, gapmm_trace_free);

  const std::string stem = a.instance + "__" + sanitize(a.driver);
  const fs::path out(a.out);
  check(gapmm_trace_save_csv(trace, (out / (stem + ".csv")).string().c_str()), "trace");
  check(gapmm_trace_save_epochs_csv(trace, (out / (stem + ".epochs.csv")).string().c_str()),
        "epoch trace");
  gapmm_run_summary s;
  check(gapmm_trace_summary(trace, &s), "summary");
  {
    std::ofstream f(out / "summary.csv");
    f << "instance,strategy,final_upper,final_lower,accuracy,iterations,total_passes,"
         "skipped_steps\n"
      << a.instance << ',' << a.driver << ',' << fmt(s.final_value) << ','
      << fmt(s.final_lower) << ',' << fmt(s.accuracy) << ',' << s.iterations << ','
      << s.total_passes << ',' << s.skipped_steps << '\n';
    if (!f) throw RuntimeError{"cannot write summary.csv"};
  }
  std::cerr << "chl-train: " << a.driver << ": " << s.iterations << " iterations, "
            << s.total_passes << " passes, full-dataset upper " << fmt(s.final_value)
            << ", lower " << fmt(s.final_lower) << ", accuracy " << fmt(s.accuracy) << '\n';
  return kExitOk;
}

int run_trace_export(const Globals& g, const ExportArgs& a) {
  for (const auto& p : a.inputs) require_file(p, "trace file");
  if (g.dump_config) {
    write_json({{"command", "trace-export"}, {"inputs", a.inputs}, {"out", a.out}},
               a.out + ".config.json");
  }
  std::vector<const char*> paths;
  for (const auto& p : a.inputs) paths.push_back(p.c_str());
  int64_t rows = 0;
  const gapmm_status st = gapmm_trace_export(paths.data(), paths.size(), a.out.c_str(), &rows);
  if (st == GAPMM_ERR_SCHEMA_MISMATCH) throw RuntimeError{gapmm_last_error()};
  check(st, "trace-export");
  std::cerr << "trace-export: " << rows << " rows from " << a.inputs.size() << " traces\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gap-controlled majorization-minimization experiments", "gapmm"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Seed for data generation, initialization and batching")
      ->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads, 0 for all cores")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  app.add_flag("--dump-config", g.dump_config, "Write the resolved configuration as JSON");
  app.set_version_flag("--version", gapmm_version());

  RobustFitArgs rf;
  auto* robust = app.add_subcommand("robust-fit", "Robust bundle adjustment with one or more strategies");
  robust->add_option("--input", rf.input, "BAL file or synthetic:<spec>, e.g. synthetic:c=8,p=200,obs=0.5,out=0.3")
      ->required();
  robust->add_option("--instance", rf.instance, "Instance name used in output file names");
  robust->add_option("--kernel", rf.kernel, "Robust kernel")
      ->capture_default_str()
      ->check(CLI::IsMember({"stq", "welsch", "quadratic"}));
  robust->add_option("--tau", rf.tau, "Kernel scale; 0 keeps the input's (synthetic tau or 4)")
      ->check(CLI::NonNegativeNumber);
  robust->add_option("--strategy", rf.strategy,
                     "irls, joint-hq, graduated, regemm, a comma list or all")
      ->capture_default_str()
      ->check([](const std::string& s) { return validate_strategies(s); });
  robust->add_option("--rounds", rf.rounds, "Outer rounds")->capture_default_str()->check(CLI::PositiveNumber);
  robust->add_option("--eta", rf.eta, "Acceptance weight eta")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  robust->add_option("--eta-prime", rf.eta_prime, "Upper end of the sigma window")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  robust->add_option("--inner-iterations", rf.inner_iterations, "LM linearizations per round")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  robust->add_option("--out", rf.out, "Output directory")->required();

  ChlTrainArgs ct;
  auto* chl = app.add_subcommand("chl-train", "Train a layered energy model with a chosen driver");
  chl->add_option("--arch", ct.arch, "Layer sizes")->capture_default_str()->check(
      [](const std::string& s) { return validate_arch(s); });
  chl->add_option("--data", ct.data,
                  "synthetic:moons[,n=<samples>][,noise=<sigma>] or idx:<images>,<labels>")
      ->capture_default_str();
  chl->add_option("--instance", ct.instance, "Instance name used in output file names");
  chl->add_option("--driver", ct.driver,
                  "sudemm, stochastic-sudemm, fixed:<passes> or regemm; sudemm and fixed use "
                  "--batch, regemm is full-batch")
      ->capture_default_str()
      ->check([](const std::string& s) { return validate_driver(s); });
  chl->add_option("--rho", ct.rho, "Gap tolerance factor rho")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  chl->add_option("--eta", ct.eta, "ReGeMM acceptance weight")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  chl->add_option("--lr", ct.lr, "Step size on the per-sample mean gradient")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  chl->add_option("--batch", ct.batch, "Mini-batch size; 0 runs sudemm full-batch and gives fixed one batch of all samples")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  chl->add_option("--epochs", ct.epochs, "Passes over the data (full-batch drivers: iterations)")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  chl->add_option("--max-passes", ct.max_passes, "Inference pass cap per iteration")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  chl->add_option("--eval-passes", ct.eval_passes, "Cold passes per sample for full-dataset bounds")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  chl->add_option("--limit", ct.limit, "Keep the first N idx samples, 0 for all")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  chl->add_option("--out", ct.out, "Output directory")->required();

  ExportArgs ex;
  auto* exp = app.add_subcommand("trace-export", "Merge trace CSVs into instance,strategy,t,metric,value");
  exp->add_option("inputs", ex.inputs, "Trace CSVs named <instance>__<strategy>.csv")->required();
  exp->add_option("--out", ex.out, "Output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*robust) return run_robust_fit(g, rf);
    if (*chl) return run_chl_train(g, ct);
    return run_trace_export(g, ex);
  } catch (const UsageError& e) {
    std::cerr << "gapmm: " << e.message << "\nRun with --help for more information.\n";
    return kExitUsage;
  } catch (const RuntimeError& e) {
    std::cerr << "gapmm: error: " << e.message << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "gapmm: error: " << e.what() << '\n';
    return kExitFailure;
  }
}
