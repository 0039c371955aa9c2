#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dietcl/eval.hpp"
#include "dietcl/synthetic.hpp"
#include "dietcl/trainers.hpp"

namespace dietcl {

/// Either a manifest on disk or the procedural corpus.
struct CorpusSource {
  std::filesystem::path manifest;  // empty = synthetic
  SyntheticConfig synthetic;
};

/// Optional masked-autoencoder warm start before the stream begins. The last
/// `holdout_classes` classes of the corpus are removed from the stream and
/// only feed this stage.
struct PretrainConfig {
  std::int64_t steps = 0;
  int holdout_classes = 0;
  int batch = 48;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct ProbeConfig {
  bool enabled = false;
  int task = 2;
  std::int64_t every = 10;
  std::size_t cap = 256;
};

/// Sweep axes; empty axes are not swept. A num_tasks sweep keeps the stream's
/// total budget fixed: per-task budget = total_budget / T, which must divide.
struct SweepAxes {
  std::vector<std::string> method;
  std::vector<std::int64_t> budget;
  std::vector<double> label_rate;
  std::vector<int> num_tasks;
  std::int64_t total_budget = 0;  // 0 = per_task_budget * stream.num_tasks
};

struct ExperimentConfig {
  std::string name = "run";
  CorpusSource corpus;
  StreamConfig stream;
  ModelConfig model;
  PretrainConfig pretrain;
  TrainerConfig trainer;
  ProbeConfig probe;
  SweepAxes sweep;
  std::vector<std::uint64_t> seeds{0};
  std::uint64_t seed = 0;

  void validate() const;
};

/// JSON round trip. Unknown keys and wrong types raise ConfigError; absent
/// keys keep their defaults, and to_json always writes every field.
ExperimentConfig config_from_json_text(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& file);
std::string config_to_json_text(const ExperimentConfig& cfg);

/// Copy of `cfg` with every seed-dependent field driven by `seed`.
ExperimentConfig with_seed(ExperimentConfig cfg, std::uint64_t seed);

/// Hash of the resolved configuration text.
std::uint64_t experiment_hash(const ExperimentConfig& cfg);

struct RunOptions {
  bool resume = false;
  // Shared directory for pre-trained warm starts; empty disables caching.
  std::filesystem::path cache_dir;
  // Stop after this many tasks (testing resume); negative = run all.
  int stop_after = -1;
};

struct RunRecord {
  std::string run_id;
  std::uint64_t config_hash = 0;
  std::filesystem::path dir;
  std::map<std::string, std::string> tags;
  std::vector<EvalResult> evals;
  std::vector<BudgetAccountant> ledgers;
  std::vector<StepRecord> losses;  // only for tasks trained by this process
  std::optional<StabilityTrace> trace;
  std::map<std::string, std::string> environment;
  std::uint64_t metrics_hash = 0;

  double final_accuracy() const;    // A(T)
  double average_accuracy() const;  // A-bar
};

/// The corpus and the stream-facing view of it (held-out pre-training classes
/// removed).
struct PreparedData {
  Corpus corpus;
  std::vector<std::size_t> pretrain_images;
  std::vector<StreamTask> tasks;
};

PreparedData prepare_data(const ExperimentConfig& cfg);

/// Reconstruction-only warm start of `model` on `images` (not budgeted).
void pretrain_mae(ModelBundle& model, const ImageStore& store, const std::vector<std::size_t>& images,
                  const PretrainConfig& cfg);

/// Starting model for a run: fresh init or the (cached) pre-trained one.
ModelBundle initial_model(const ExperimentConfig& cfg, const PreparedData& data, const RunOptions& opts);

/// Builds the stream, trains task by task, evaluates after every task and
/// persists metrics, ledgers, losses, events and per-task checkpoints in
/// `dir`. With opts.resume it continues after the last complete checkpoint.
RunRecord run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& dir, const RunOptions& opts = {});

/// Re-reads a finished or partial run directory.
RunRecord load_run_record(const std::filesystem::path& dir);

struct SweepPoint {
  std::string run_id;
  ExperimentConfig cfg;
  std::map<std::string, std::string> tags;
};

std::vector<SweepPoint> expand_sweep(const ExperimentConfig& base);

/// Runs every sweep point (x seeds) under `root/<run_id>` and writes
/// `root/sweep.tsv`. Points already complete are reused when opts.resume.
std::vector<RunRecord> run_sweep(const ExperimentConfig& base, const std::filesystem::path& root,
                                 const RunOptions& opts = {}, int jobs = 1);

/// DietCL component switches of the ablation tables.
struct AblationRow {
  std::string name;
  bool masked_loss = false;
  bool balanced_buffer = false;
  bool reconstruction = false;
};

/// The six distinct configurations used by the three ablation orders.
const std::vector<AblationRow>& ablation_rows();
/// Each order lists four row names, from Replay to the full method.
const std::vector<std::vector<std::string>>& ablation_orders();

ExperimentConfig ablation_config(const ExperimentConfig& base, const AblationRow& row);

std::vector<RunRecord> ablation_matrix(const ExperimentConfig& base, const std::filesystem::path& root,
                                       const RunOptions& opts = {}, int jobs = 1);

/// Cross-validated joint-phase threshold: for each k in `validation_tasks`
/// the candidate maximising a_k over the first k tasks.
struct ThresholdStudy {
  std::vector<std::int64_t> candidates;
  std::map<std::int64_t, std::vector<double>> accuracy;  // candidate -> a_1..a_K
  std::map<int, std::int64_t> selected;                  // k -> chosen threshold
};

ThresholdStudy threshold_study(const ExperimentConfig& base, const std::vector<std::int64_t>& candidates,
                               const std::vector<int>& validation_tasks, const RunOptions& opts = {});

/// Tables (TSV) and SVG charts from run records: per-task accuracy curves,
/// budget curves, the ablation table and stability traces. Returns the files
/// written.
std::vector<std::filesystem::path> emit_figures(const std::vector<RunRecord>& records,
                                                const std::filesystem::path& out_dir);

}  // namespace dietcl
