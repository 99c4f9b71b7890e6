#include "gapmm/gapmm.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <new>
#include <random>
#include <string>
#include <vector>

#include "gapmm/ba_problem.hpp"
#include "gapmm/chl.hpp"
#include "gapmm/datasets.hpp"
#include "gapmm/drivers.hpp"
#include "gapmm/error.hpp"
#include "gapmm/parallel.hpp"
#include "gapmm/robust_fitting.hpp"
#include "gapmm/trace.hpp"
#include "gapmm/trace_export.hpp"

struct gapmm_trace {
  gapmm::RunTrace trace;
  gapmm_run_summary summary{};
  std::string driver;
};

struct gapmm_ba_problem {
  gapmm::BAProblem problem;
};

struct gapmm_benchmark {
  std::vector<gapmm::BenchmarkRow> rows;
};

struct gapmm_dataset {
  std::vector<gapmm::Sample> samples;
};

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

thread_local std::string last_error;

gapmm_status to_status(gapmm::ErrorCode code) {
  using gapmm::ErrorCode;
  switch (code) {
    case ErrorCode::kInvalidArgument: return GAPMM_ERR_INVALID_ARGUMENT;
    case ErrorCode::kDimensionMismatch: return GAPMM_ERR_DIMENSION_MISMATCH;
    case ErrorCode::kUnsupported: return GAPMM_ERR_UNSUPPORTED;
    case ErrorCode::kParse: return GAPMM_ERR_PARSE;
    case ErrorCode::kIo: return GAPMM_ERR_IO;
    case ErrorCode::kNotConverged: return GAPMM_ERR_NOT_CONVERGED;
    case ErrorCode::kInvariantViolation: return GAPMM_ERR_INVARIANT_VIOLATION;
    case ErrorCode::kProjectionSingular: return GAPMM_ERR_PROJECTION_SINGULAR;
    case ErrorCode::kSchemaMismatch: return GAPMM_ERR_SCHEMA_MISMATCH;
  }
  return GAPMM_ERR_INTERNAL;
}

gapmm_status set_error(gapmm_status status, const std::string& message) {
  last_error = message;
  return status;
}

template <typename F>
gapmm_status guarded(F&& body) {
  try {
    body();
    last_error.clear();
    return GAPMM_OK;
  } catch (const gapmm::Error& e) {
    return set_error(to_status(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return set_error(GAPMM_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return set_error(GAPMM_ERR_INTERNAL, e.what());
  } catch (...) {
    return set_error(GAPMM_ERR_INTERNAL, "unknown failure");
  }
}

void need(const void* p, const char* what) {
  if (p == nullptr) gapmm::fail(gapmm::ErrorCode::kInvalidArgument, std::string(what) + " is NULL");
}

gapmm::RobustFitConfig robust_config(const gapmm_robust_options* options) {
  gapmm_robust_options o;
  gapmm_robust_options_default(&o);
  if (options != nullptr) o = *options;
  using gapmm::ErrorCode;
  gapmm::require(o.rounds >= 1, ErrorCode::kInvalidArgument, "rounds must be >= 1");
  gapmm::require(o.inner_iterations >= 1, ErrorCode::kInvalidArgument,
                 "inner iterations must be >= 1");
  gapmm::require(o.eta > 0.0 && o.eta <= 1.0 && o.eta_prime > o.eta && o.eta_prime <= 1.0,
                 ErrorCode::kInvalidArgument, "need 0 < eta < eta' <= 1");
  gapmm::RobustFitConfig config;
  config.rounds = o.rounds;
  config.eta = o.eta;
  config.eta_prime = o.eta_prime;
  config.lm.max_iterations = o.inner_iterations;
  return config;
}

std::vector<gapmm::RobustStrategy> parse_strategy_list(const std::string& list) {
  using gapmm::RobustStrategy;
  if (list == "all") {
    return {RobustStrategy::kIrls, RobustStrategy::kJointHq, RobustStrategy::kGraduated,
            RobustStrategy::kReGeMM};
  }
  std::vector<RobustStrategy> out;
  std::size_t pos = 0;
  while (pos <= list.size()) {
    const std::size_t comma = std::min(list.find(',', pos), list.size());
    out.push_back(gapmm::parse_robust_strategy(std::string_view(list).substr(pos, comma - pos)));
    pos = comma + 1;
  }
  return out;
}

void fill_counts(gapmm_run_summary& s, const gapmm::RunTrace& trace) {
  s.iterations = static_cast<int64_t>(trace.records.size());
  s.total_passes = trace.total_passes();
  s.epochs = static_cast<int64_t>(trace.epochs.size());
  s.skipped_steps = 0;
  for (const auto& r : trace.records) {
    if (r.flags & gapmm::kFlagSkippedStep) ++s.skipped_steps;
  }
}

struct ChlDriver {
  enum Kind { kSuDeMM, kStochastic, kFixed, kReGeMM } kind = kStochastic;
  int fixed_passes = 0;
};

ChlDriver parse_chl_driver(const std::string& name) {
  ChlDriver d;
  if (name == "sudemm") {
    d.kind = ChlDriver::kSuDeMM;
  } else if (name == "stochastic-sudemm") {
    d.kind = ChlDriver::kStochastic;
  } else if (name == "regemm") {
    d.kind = ChlDriver::kReGeMM;
  } else if (name.rfind("fixed:", 0) == 0) {
    d.kind = ChlDriver::kFixed;
    const std::string n = name.substr(6);
    std::size_t used = 0;
    int passes = 0;
    try {
      passes = std::stoi(n, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (n.empty() || used != n.size() || passes < 1) {
      gapmm::fail(gapmm::ErrorCode::kInvalidArgument, "bad pass count in driver '" + name + "'");
    }
    d.fixed_passes = passes;
  } else {
    gapmm::fail(gapmm::ErrorCode::kInvalidArgument,
                "unknown driver '" + name +
                    "' (expected sudemm, stochastic-sudemm, fixed:<passes> or regemm)");
  }
  return d;
}

}  // namespace

extern "C" {

const char* gapmm_version(void) { return "0.1.0"; }

const char* gapmm_status_string(gapmm_status status) {
  switch (status) {
    case GAPMM_OK: return "ok";
    case GAPMM_ERR_INVALID_ARGUMENT: return "invalid argument";
    case GAPMM_ERR_DIMENSION_MISMATCH: return "dimension mismatch";
    case GAPMM_ERR_UNSUPPORTED: return "unsupported";
    case GAPMM_ERR_PARSE: return "parse error";
    case GAPMM_ERR_IO: return "i/o error";
    case GAPMM_ERR_NOT_CONVERGED: return "not converged";
    case GAPMM_ERR_INVARIANT_VIOLATION: return "invariant violation";
    case GAPMM_ERR_PROJECTION_SINGULAR: return "projection singular";
    case GAPMM_ERR_SCHEMA_MISMATCH: return "schema mismatch";
    case GAPMM_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* gapmm_last_error(void) { return last_error.c_str(); }

gapmm_status gapmm_set_threads(int threads) {
  return guarded([&] {
    gapmm::require(threads >= 0, gapmm::ErrorCode::kInvalidArgument, "threads must be >= 0");
    gapmm::set_thread_count(threads);
  });
}

int gapmm_threads(void) { return gapmm::thread_count(); }

// -- traces -------------------------------------------------------------------

int64_t gapmm_trace_length(const gapmm_trace* trace) {
  return trace == nullptr ? 0 : static_cast<int64_t>(trace->trace.records.size());
}

gapmm_status gapmm_trace_row_at(const gapmm_trace* trace, int64_t index, gapmm_trace_row* row) {
  return guarded([&] {
    need(trace, "trace");
    need(row, "row");
    if (index < 0 || index >= gapmm_trace_length(trace)) {
      gapmm::fail(gapmm::ErrorCode::kInvalidArgument, "row index out of range");
    }
    const gapmm::TraceRecord& r = trace->trace.records[static_cast<std::size_t>(index)];
    *row = {r.t, r.upper, r.lower, r.c_t, r.gap, r.grad_norm, r.passes, r.step_norm, r.flags};
  });
}

gapmm_status gapmm_trace_summary(const gapmm_trace* trace, gapmm_run_summary* summary) {
  return guarded([&] {
    need(trace, "trace");
    need(summary, "summary");
    *summary = trace->summary;
  });
}

const char* gapmm_trace_driver(const gapmm_trace* trace) {
  return trace == nullptr ? "" : trace->driver.c_str();
}

const char* gapmm_trace_status(const gapmm_trace* trace) {
  return trace == nullptr ? "" : gapmm::to_string(trace->trace.status);
}

gapmm_status gapmm_trace_save_csv(const gapmm_trace* trace, const char* path) {
  return guarded([&] {
    need(trace, "trace");
    need(path, "path");
    gapmm::save_trace_csv(trace->trace, path);
  });
}

gapmm_status gapmm_trace_save_epochs_csv(const gapmm_trace* trace, const char* path) {
  return guarded([&] {
    need(trace, "trace");
    need(path, "path");
    gapmm::save_epoch_csv(trace->trace, path);
  });
}

void gapmm_trace_free(gapmm_trace* trace) { delete trace; }

gapmm_status gapmm_trace_export(const char* const* paths, size_t count, const char* out_path,
                                int64_t* rows_written) {
  return guarded([&] {
    need(out_path, "output path");
    if (count > 0) need(paths, "paths");
    std::vector<std::string> in;
    for (size_t i = 0; i < count; ++i) {
      need(paths[i], "input path");
      in.emplace_back(paths[i]);
    }
    const std::size_t n = gapmm::export_traces(in, out_path);
    if (rows_written != nullptr) *rows_written = static_cast<int64_t>(n);
  });
}

// -- robust fitting -----------------------------------------------------------

gapmm_status gapmm_ba_load(const char* path, gapmm_ba_problem** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    auto handle = std::make_unique<gapmm_ba_problem>();
    handle->problem = gapmm::load_bal(path, gapmm::RobustKernel::smooth_truncated_quadratic(
                                                gapmm::SyntheticBASpec{}.tau));
    *out = handle.release();
  });
}

gapmm_status gapmm_ba_synthetic(const char* spec, gapmm_ba_problem** out) {
  return guarded([&] {
    need(spec, "spec");
    need(out, "out");
    auto handle = std::make_unique<gapmm_ba_problem>();
    handle->problem = gapmm::synth_ba(gapmm::parse_synthetic_ba_spec(spec)).problem;
    *out = handle.release();
  });
}

gapmm_status gapmm_ba_set_kernel(gapmm_ba_problem* problem, const char* kernel, double tau) {
  return guarded([&] {
    need(problem, "problem");
    need(kernel, "kernel");
    problem->problem.kernel = gapmm::RobustKernel::parse(kernel, tau);
  });
}

gapmm_status gapmm_ba_counts(const gapmm_ba_problem* problem, int64_t* cameras, int64_t* points,
                             int64_t* observations) {
  return guarded([&] {
    need(problem, "problem");
    if (cameras) *cameras = static_cast<int64_t>(problem->problem.cameras.size());
    if (points) *points = static_cast<int64_t>(problem->problem.points.size());
    if (observations) *observations = static_cast<int64_t>(problem->problem.observations.size());
  });
}

gapmm_status gapmm_ba_tau(const gapmm_ba_problem* problem, double* tau) {
  return guarded([&] {
    need(problem, "problem");
    need(tau, "tau");
    *tau = problem->problem.kernel.tau();
  });
}

gapmm_status gapmm_ba_cost(const gapmm_ba_problem* problem, double* cost) {
  return guarded([&] {
    need(problem, "problem");
    need(cost, "cost");
    *cost = gapmm::robust_cost(gapmm::BAModel(problem->problem),
                               gapmm::pack_parameters(problem->problem));
  });
}

void gapmm_ba_free(gapmm_ba_problem* problem) { delete problem; }

void gapmm_robust_options_default(gapmm_robust_options* options) {
  if (options == nullptr) return;
  const gapmm::RobustFitConfig config;
  options->rounds = config.rounds;
  options->eta = config.eta;
  options->eta_prime = config.eta_prime;
  options->inner_iterations = config.lm.max_iterations;
}

gapmm_status gapmm_robust_fit(const gapmm_ba_problem* problem, const char* strategy,
                              const gapmm_robust_options* options, gapmm_trace** out) {
  return guarded([&] {
    need(problem, "problem");
    need(strategy, "strategy");
    need(out, "out");
    const gapmm::RobustStrategy s = gapmm::parse_robust_strategy(strategy);
    const gapmm::RobustFitConfig config = robust_config(options);
    const gapmm::BAModel model(problem->problem);
    auto handle = std::make_unique<gapmm_trace>();
    handle->trace = gapmm::run_robust_strategy(model, gapmm::pack_parameters(problem->problem), s,
                                               config);
    handle->driver = gapmm::to_string(s);
    gapmm_run_summary& sum = handle->summary;
    sum.final_value = gapmm::robust_cost(model, handle->trace.theta);
    sum.final_lower = kNaN;
    sum.accuracy = kNaN;
    fill_counts(sum, handle->trace);
    *out = handle.release();
  });
}

gapmm_status gapmm_robust_benchmark(const gapmm_ba_problem* problem, const char* instance,
                                    const char* strategies, const gapmm_robust_options* options,
                                    const char* out_dir, gapmm_benchmark** out) {
  return guarded([&] {
    need(problem, "problem");
    need(instance, "instance");
    need(strategies, "strategies");
    need(out, "out");
    gapmm::require(*instance != '\0', gapmm::ErrorCode::kInvalidArgument,
                   "instance name is empty");
    const auto list = parse_strategy_list(strategies);
    const gapmm::RobustFitConfig config = robust_config(options);
    std::vector<gapmm::BenchmarkInstance> instances(1);
    instances[0].name = instance;
    instances[0].problem = problem->problem;
    auto handle = std::make_unique<gapmm_benchmark>();
    handle->rows = gapmm::run_ba_benchmark(instances, list, config, out_dir ? out_dir : "");
    *out = handle.release();
  });
}

int64_t gapmm_benchmark_length(const gapmm_benchmark* benchmark) {
  return benchmark == nullptr ? 0 : static_cast<int64_t>(benchmark->rows.size());
}

gapmm_status gapmm_benchmark_row_at(const gapmm_benchmark* benchmark, int64_t index,
                                    gapmm_benchmark_row* row) {
  return guarded([&] {
    need(benchmark, "benchmark");
    need(row, "row");
    if (index < 0 || index >= gapmm_benchmark_length(benchmark)) {
      gapmm::fail(gapmm::ErrorCode::kInvalidArgument, "row index out of range");
    }
    const gapmm::BenchmarkRow& r = benchmark->rows[static_cast<std::size_t>(index)];
    *row = {r.instance.c_str(), r.strategy.c_str(), r.final_cost, r.rounds, r.wall_ms,
            r.error.empty() ? nullptr : r.error.c_str()};
  });
}

void gapmm_benchmark_free(gapmm_benchmark* benchmark) { delete benchmark; }

// -- energy-model training -------------------------------------------------------

gapmm_status gapmm_dataset_synthetic(int samples, int input_dim, int classes, double noise,
                                     uint64_t seed, gapmm_dataset** out) {
  return guarded([&] {
    need(out, "out");
    gapmm::ClassificationSpec spec;
    spec.samples = samples;
    spec.input_dim = input_dim;
    spec.classes = classes;
    spec.noise = noise;
    spec.seed = seed;
    auto handle = std::make_unique<gapmm_dataset>();
    handle->samples = gapmm::synth_classification(spec);
    *out = handle.release();
  });
}

gapmm_status gapmm_dataset_idx(const char* images_path, const char* labels_path, int classes,
                               int64_t limit, gapmm_dataset** out) {
  return guarded([&] {
    need(images_path, "images path");
    need(labels_path, "labels path");
    need(out, "out");
    gapmm::require(limit >= 0, gapmm::ErrorCode::kInvalidArgument, "limit must be >= 0");
    const gapmm::IdxTensor images = gapmm::load_idx(images_path);
    const gapmm::IdxTensor labels = gapmm::load_idx(labels_path);
    auto handle = std::make_unique<gapmm_dataset>();
    handle->samples =
        gapmm::idx_samples(images, labels, classes, static_cast<std::size_t>(limit));
    *out = handle.release();
  });
}

gapmm_status gapmm_dataset_shape(const gapmm_dataset* dataset, int64_t* samples,
                                 int64_t* input_dim, int64_t* output_dim) {
  return guarded([&] {
    need(dataset, "dataset");
    const auto& s = dataset->samples;
    if (samples) *samples = static_cast<int64_t>(s.size());
    if (input_dim) *input_dim = s.empty() ? 0 : static_cast<int64_t>(s.front().x.size());
    if (output_dim) *output_dim = s.empty() ? 0 : static_cast<int64_t>(s.front().y.size());
  });
}

void gapmm_dataset_free(gapmm_dataset* dataset) { delete dataset; }

void gapmm_chl_options_default(gapmm_chl_options* options) {
  if (options == nullptr) return;
  options->architecture = "8-6-6-4";
  options->driver = "stochastic-sudemm";
  options->rho = 0.5;
  options->eta = 0.5;
  options->learning_rate = 0.05;
  options->batch = 10;
  options->epochs = 30;
  options->max_passes = 40;
  options->eval_passes = 100;
  options->seed = 1;
}

gapmm_status gapmm_chl_train(const gapmm_dataset* dataset, const gapmm_chl_options* options,
                             gapmm_trace** out) {
  return guarded([&] {
    using gapmm::ErrorCode;
    need(dataset, "dataset");
    need(out, "out");
    gapmm_chl_options o;
    gapmm_chl_options_default(&o);
    if (options != nullptr) o = *options;
    need(o.architecture, "architecture");
    need(o.driver, "driver");
    const ChlDriver driver = parse_chl_driver(o.driver);
    gapmm::require(o.rho > 0.0 && o.rho < 1.0, ErrorCode::kInvalidArgument,
                   "rho must be in (0, 1)");
    gapmm::require(o.eta > 0.0 && o.eta <= 1.0, ErrorCode::kInvalidArgument,
                   "eta must be in (0, 1]");
    gapmm::require(o.learning_rate > 0.0 && std::isfinite(o.learning_rate),
                   ErrorCode::kInvalidArgument, "learning rate must be > 0");
    gapmm::require(o.batch >= 0, ErrorCode::kInvalidArgument, "batch must be >= 0");
    gapmm::require(o.epochs >= 1, ErrorCode::kInvalidArgument, "epochs must be >= 1");
    gapmm::require(o.max_passes >= 1, ErrorCode::kInvalidArgument, "max passes must be >= 1");
    gapmm::require(o.eval_passes >= 1, ErrorCode::kInvalidArgument, "eval passes must be >= 1");

    const gapmm::NetLayout layout = gapmm::parse_architecture(o.architecture);
    const auto& samples = dataset->samples;
    gapmm::require(!samples.empty(), ErrorCode::kInvalidArgument, "dataset is empty");
    if (samples.front().x.size() != layout.size(0) ||
        samples.front().y.size() != layout.size(layout.layers())) {
      gapmm::fail(ErrorCode::kDimensionMismatch,
                  "architecture " + std::string(o.architecture) + " does not fit samples with " +
                      std::to_string(samples.front().x.size()) + " inputs and " +
                      std::to_string(samples.front().y.size()) + " outputs");
    }

    std::mt19937_64 rng(o.seed);
    const gapmm::LayeredNet net0 = gapmm::LayeredNet::random(layout, rng);
    const gapmm::ChlProblem problem(layout, samples);
    const auto n = static_cast<double>(samples.size());
    // The full-batch drivers see the summed objective, so a mean-gradient
    // step of learning_rate corresponds to L = n / learning_rate.
    const double full_lipschitz = n / o.learning_rate;

    auto handle = std::make_unique<gapmm_trace>();
    handle->driver = o.driver;
    ChlDriver::Kind kind = driver.kind;
    // With a mini-batch size, sudemm applies its gap rule per batch.
    if (kind == ChlDriver::kSuDeMM && o.batch > 0) kind = ChlDriver::kStochastic;
    switch (kind) {
      case ChlDriver::kSuDeMM: {
        gapmm::SuDeMMConfig c;
        c.rho = o.rho;
        c.lipschitz = full_lipschitz;
        c.iterations = o.epochs;
        c.r_max = o.max_passes;
        c.check_descent = false;
        handle->trace = gapmm::run_sudemm(problem, net0.pack(), c);
        break;
      }
      case ChlDriver::kReGeMM: {
        gapmm::ReGeMMConfig c;
        c.eta = o.eta;
        c.iterations = o.epochs;
        c.r_max = o.max_passes;
        c.theta_update = gapmm::ThetaUpdate::kGradientStep;
        c.lipschitz = full_lipschitz;
        c.tolerance = -1.0;
        handle->trace = gapmm::run_regemm(problem, net0.pack(), c);
        break;
      }
      case ChlDriver::kStochastic:
      case ChlDriver::kFixed: {
        gapmm::StochasticSuDeMMConfig c;
        c.alpha = gapmm::PowerSchedule::constant(o.learning_rate);
        c.rho = gapmm::PowerSchedule::constant(o.rho * o.learning_rate);
        const int batch = o.batch == 0 ? static_cast<int>(samples.size())
                                       : std::min<int>(o.batch, static_cast<int>(samples.size()));
        c.batch_size = batch;
        const int per_epoch = static_cast<int>(samples.size()) / batch;  // as in the driver
        c.iterations = o.epochs * per_epoch;
        c.r_max = o.max_passes;
        c.seed = o.seed;
        c.fixed_passes = driver.fixed_passes;
        c.epoch_eval_passes = o.eval_passes;
        handle->trace = gapmm::run_stochastic_sudemm(problem, net0.pack(), c);
        break;
      }
    }

    const gapmm::EpochRecord final_eval =
        gapmm::evaluate_bounds(problem, handle->trace.theta, o.eval_passes);
    gapmm_run_summary& sum = handle->summary;
    sum.final_value = final_eval.upper;
    sum.final_lower = final_eval.lower;
    sum.accuracy = gapmm::classification_accuracy(
        gapmm::LayeredNet::unpack(layout, handle->trace.theta), samples);
    fill_counts(sum, handle->trace);
    *out = handle.release();
  });
}

}  // extern "C"
