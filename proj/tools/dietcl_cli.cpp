// dietcl command line: run / sweep / ablate / report, plus helpers.
//
// Exit codes: 0 success, 2 configuration or usage error, 3 runtime failure.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "dietcl/harness.hpp"

namespace fs = std::filesystem;
using namespace dietcl;

namespace {

constexpr int kConfigFailure = 2;
constexpr int kRuntimeFailure = 3;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "runs";
  bool resume = false;
  int jobs = 1;
};

ExperimentConfig load(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
  if (c.seed) {
    cfg = with_seed(cfg, *c.seed);
    cfg.seeds = {*c.seed};
  }
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* app, Common& c, bool jobs) {
  app->add_option("-c,--config", c.config, "JSON experiment config (defaults if omitted)");
  app->add_option("-s,--seed", c.seed, "override the seed");
  app->add_option("-o,--out", c.out, "output directory")->capture_default_str();
  app->add_flag("-r,--resume", c.resume, "continue from the last task-boundary checkpoint");
  if (jobs) app->add_option("-j,--jobs", c.jobs, "concurrent runs")->capture_default_str();
}

void print_summary(const std::vector<RunRecord>& records) {
  for (const auto& r : records) {
    std::printf("%-60s A(T)=%.4f  A-bar=%.4f\n", r.run_id.c_str(), r.final_accuracy(), r.average_accuracy());
  }
}

std::vector<RunRecord> collect_runs(const fs::path& root) {
  std::vector<fs::path> dirs;
  if (fs::exists(root / "config.json")) dirs.push_back(root);
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_regular_file() && entry.path().filename() == "summary.tsv") dirs.push_back(entry.path().parent_path());
  }
  std::sort(dirs.begin(), dirs.end());
  dirs.erase(std::unique(dirs.begin(), dirs.end()), dirs.end());
  std::vector<RunRecord> records;
  for (const auto& d : dirs) {
    RunRecord r = load_run_record(d);
    if (!r.evals.empty()) records.push_back(std::move(r));
  }
  return records;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Budgeted continual learning with sparse labels"};
  app.require_subcommand(1);

  Common run_opts, sweep_opts, ablate_opts, thr_opts;
  int stop_after = -1;
  auto* run = app.add_subcommand("run", "train one configuration over its stream");
  add_common(run, run_opts, false);
  run->add_option("--stop-after", stop_after, "stop after this many tasks");

  auto* sweep = app.add_subcommand("sweep", "run every point of the config's sweep axes");
  add_common(sweep, sweep_opts, true);

  auto* ablate = app.add_subcommand("ablate", "run the DietCL component ablation matrix");
  add_common(ablate, ablate_opts, true);

  std::string report_runs, report_out;
  auto* report = app.add_subcommand("report", "emit tables and charts from run directories");
  report->add_option("runs", report_runs, "directory holding runs")->required();
  report->add_option("-o,--out", report_out, "figure directory (default <runs>/figures)");

  std::vector<std::int64_t> candidates{300, 350, 400, 450};
  std::vector<int> validation{1, 2, 3};
  auto* threshold = app.add_subcommand("threshold", "cross-validate the joint-phase threshold");
  add_common(threshold, thr_opts, false);
  threshold->add_option("--candidates", candidates, "candidate thresholds")->capture_default_str();
  threshold->add_option("--tasks", validation, "validation task counts k")->capture_default_str();

  std::string dump_out;
  auto* defaults = app.add_subcommand("defaults", "print the fully resolved default config");
  defaults->add_option("-o,--out", dump_out, "write to file instead of stdout");

  std::string corpus_out;
  std::string corpus_config;
  auto* corpus = app.add_subcommand("make-corpus", "write the configured synthetic corpus as manifest + pack");
  corpus->add_option("-c,--config", corpus_config, "JSON experiment config");
  corpus->add_option("-o,--out", corpus_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigFailure;
  }

  try {
    if (*run) {
      const ExperimentConfig cfg = load(run_opts);
      RunOptions opts;
      opts.resume = run_opts.resume;
      opts.stop_after = stop_after;
      opts.cache_dir = fs::path(run_opts.out) / "cache";
      const fs::path dir = fs::path(run_opts.out) / cfg.name;
      const RunRecord r = run_experiment(cfg, dir, opts);
      for (const auto& e : r.evals) std::printf("task %d  a_t=%.4f  pooled=%.4f\n", e.task, e.a_t, e.pooled);
      if (!r.evals.empty()) std::printf("A-bar=%.4f  run dir %s\n", r.average_accuracy(), dir.string().c_str());
    } else if (*sweep) {
      const ExperimentConfig cfg = load(sweep_opts);
      RunOptions opts;
      opts.resume = sweep_opts.resume;
      const auto records = run_sweep(cfg, sweep_opts.out, opts, sweep_opts.jobs);
      print_summary(records);
      emit_figures(records, fs::path(sweep_opts.out) / "figures");
    } else if (*ablate) {
      const ExperimentConfig cfg = load(ablate_opts);
      RunOptions opts;
      opts.resume = ablate_opts.resume;
      const auto records = ablation_matrix(cfg, ablate_opts.out, opts, ablate_opts.jobs);
      print_summary(records);
      emit_figures(records, fs::path(ablate_opts.out) / "figures");
    } else if (*report) {
      const auto records = collect_runs(report_runs);
      if (records.empty()) throw InputError("no runs found under " + report_runs);
      const fs::path out = report_out.empty() ? fs::path(report_runs) / "figures" : fs::path(report_out);
      for (const auto& f : emit_figures(records, out)) std::printf("%s\n", f.string().c_str());
    } else if (*threshold) {
      const ExperimentConfig cfg = load(thr_opts);
      RunOptions opts;
      opts.cache_dir = fs::path(thr_opts.out) / "cache";
      const ThresholdStudy study = threshold_study(cfg, candidates, validation, opts);
      for (const auto& [c, curve] : study.accuracy) {
        std::printf("threshold %lld:", static_cast<long long>(c));
        for (double a : curve) std::printf(" %.4f", a);
        std::printf("\n");
      }
      for (const auto& [k, c] : study.selected) std::printf("k=%d selects %lld\n", k, static_cast<long long>(c));
    } else if (*defaults) {
      const std::string text = config_to_json_text(ExperimentConfig{});
      if (dump_out.empty()) {
        std::cout << text;
      } else {
        std::ofstream(dump_out) << text;
      }
    } else if (*corpus) {
      const ExperimentConfig cfg = corpus_config.empty() ? ExperimentConfig{} : load_config(corpus_config);
      write_corpus(corpus_out, make_synthetic_corpus(cfg.corpus.synthetic));
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigFailure;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntimeFailure;
  }
  return 0;
}
