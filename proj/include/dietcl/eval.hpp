#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dietcl/model.hpp"
#include "dietcl/stream.hpp"

namespace dietcl {

/// Accuracies after training on task `task` (0-based), for every seen task.
struct EvalResult {
  int task = 0;
  std::int64_t step_index = 0;
  std::map<int, double> per_task_accuracy;
  double a_t = 0;     // unweighted mean over seen tasks
  double pooled = 0;  // accuracy over the union of seen test sets
};

/// Predicted class ids (argmax over the full seen-class head, no mask).
std::vector<int> predict_classes(const ModelBundle& model, const ImageStore& images,
                                 std::span<const Example> examples, std::size_t batch = 256);

/// Top-1 accuracy on `examples`. Throws EvaluationError on an empty set or an
/// example without a label.
double task_accuracy(const ModelBundle& model, const ImageStore& images, std::span<const Example> examples);

/// Fraction of predictions equal to labels.
double accuracy_of(std::span<const int> predictions, std::span<const int> labels);

/// Mean of per-task accuracies a_1..a_t (the seen-task average).
double average_seen_accuracy(std::span<const double> per_task);

/// Mean of a_1..a_T along the stream.
double stream_average(std::span<const double> a_values);

/// Evaluates tasks[0..t] and fills both a_t and the pooled union accuracy.
EvalResult evaluate_seen(const ModelBundle& model, const ImageStore& images, std::span<const StreamTask> tasks,
                         int t);

/// Accuracy curves of several origin tasks' probe sets sampled during one
/// task's training.
struct StabilityTrace {
  std::vector<std::int64_t> steps;
  std::map<int, std::vector<double>> accuracy;  // origin task -> one value per step

  void record(std::int64_t step, const ModelBundle& model, const ImageStore& images,
              const std::map<int, std::vector<Example>>& probes);
};

/// Per-origin probe subsets: the first `cap` test examples of every task up to
/// and including `upto`.
std::map<int, std::vector<Example>> make_probe_sets(std::span<const StreamTask> tasks, int upto, std::size_t cap = 256);

/// Stability-gap depth for one origin task: accuracy at the first probe minus
/// the minimum accuracy over the trace.
double dip_statistic(const StabilityTrace& trace, int origin);

/// Line records `run_id<TAB>task<TAB>step<TAB>metric<TAB>value`.
struct MetricRecord {
  std::string run_id;
  int task = 0;
  std::int64_t step = 0;
  std::string metric;
  double value = 0;
};

std::vector<MetricRecord> to_records(const std::string& run_id, const EvalResult& result);
void append_records(const std::filesystem::path& file, std::span<const MetricRecord> records);
std::vector<MetricRecord> read_records(const std::filesystem::path& file);
std::string format_record(const MetricRecord& record);

}  // namespace dietcl
