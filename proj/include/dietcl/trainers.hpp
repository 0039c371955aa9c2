#pragma once

#include <cstdint>
#include <functional>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dietcl/budget.hpp"
#include "dietcl/buffer.hpp"
#include "dietcl/losses.hpp"
#include "dietcl/model.hpp"
#include "dietcl/optim.hpp"
#include "dietcl/stream.hpp"

namespace dietcl {

enum class Method { dietcl, er, er_ace, gdumb, ewc, mas, one_stage, two_stage };

std::string to_string(Method method);
Method method_from_string(const std::string& name);

struct TrainerConfig {
  Method method = Method::dietcl;
  std::int64_t per_task_budget = 500;
  // Joint-phase ceiling B-hat; units beyond it go to buffer-only fine-tuning.
  std::int64_t threshold = 400;
  // Rows of one forward-backward pass (one compute unit).
  int reference_batch = 48;
  // Rows per optimizer update; a multiple of reference_batch.
  int effective_batch = 48;
  double base_lr = 1e-4;
  int lr_reference_batch = 256;
  AdamWConfig adamw;
  double alpha_r = 50.0;
  ReconstructionReduction reduction = ReconstructionReduction::mean;

  // DietCL component toggles (all on = the full method).
  bool mask_current = true;
  bool balanced_buffer = true;
  bool buffer_includes_current = true;
  // Keep AdamW moments across the joint -> fine-tune boundary.
  bool keep_moments_between_phases = true;

  // ER / ER-ACE.
  bool er_balanced = true;
  std::size_t reservoir_capacity = 0;

  // EWC / MAS.
  double ewc_lambda = 100.0;
  double mas_lambda = 1.0;
  // Importance passes per task; negative = min(50, budget / 10).
  std::int64_t importance_batches = -1;

  // TwoStage: fraction of the budget spent on reconstruction-only steps.
  double two_stage_fraction = 0.8;

  // Time-incremental streams: classes may recur across tasks.
  bool recurring_classes = false;

  std::uint64_t seed = 0;

  int accumulation_steps() const { return effective_batch / reference_batch; }
  double peak_lr() const { return scaled_learning_rate(base_lr, effective_batch, lr_reference_batch); }
  std::int64_t importance_passes() const;
  void validate() const;
};

struct TrainerEvent {
  int task = 0;
  std::string name;
  std::string detail;
};

struct StepRecord {
  int task = 0;
  std::string phase;
  std::int64_t step = 0;
  double lr = 0;
  LossReport report;
};

struct TaskOutcome {
  int task = 0;
  BudgetAccountant ledger{0};
  BudgetPlan plan;
  std::vector<StepRecord> steps;
  std::string checkpoint;
  double seconds = 0;
};

/// Everything a trainer carries from task to task.
struct LearnerState {
  ModelBundle model;
  // Starting point for GDumb's per-task re-initialisation.
  ModelBundle initial;
  AdamW optimizer;
  BalancedBuffer buffer;
  ReservoirBuffer reservoir;
  Rng rng;
  Rng head_rng;
  std::vector<TrainerEvent> events;
  // EWC / MAS accumulated importance and anchor weights, by parameter name.
  std::map<std::string, Matrix> importance;
  std::map<std::string, Matrix> anchor;

  LearnerState() = default;
  LearnerState(ModelBundle start, const TrainerConfig& cfg);

  /// Writes model, optimizer, buffers, generator states, importance and
  /// events into `dir` so a run can resume bit-exactly at a task boundary.
  void save(const std::filesystem::path& dir) const;
  /// Restores state written by save(); buffer ids are resolved against `corpus`.
  static LearnerState load(const std::filesystem::path& dir, const Corpus& corpus);
};

/// Called with the live model before the first update (step 0) and then every
/// `every` optimizer updates of a task. Probing never charges the budget.
struct StepHook {
  std::function<void(const ModelBundle&, std::int64_t step)> on_step;
  std::int64_t every = 0;
};

/// Trains one task with the configured method under a fresh per-task budget.
TaskOutcome train_task(const TrainerConfig& cfg, const StreamTask& task, const ImageStore& images,
                       LearnerState& state, const StepHook& hook = {});

/// Classes exposed by the task's labeled data, sorted.
std::vector<int> labeled_classes(const StreamTask& task);

}  // namespace dietcl
