#include "dietcl/eval.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

namespace dietcl {

std::vector<int> predict_classes(const ModelBundle& model, const ImageStore& images, std::span<const Example> examples,
                                 std::size_t batch) {
  if (model.num_outputs() == 0) throw EvaluationError("model head has no classes");
  std::vector<int> out;
  out.reserve(examples.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < examples.size(); start += batch) {
    const std::size_t end = std::min(examples.size(), start + batch);
    idx.clear();
    for (std::size_t i = start; i < end; ++i) idx.push_back(examples[i].image);
    const Matrix logits = model.forward_classify(gather_patches(images, idx, model.config()));
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      Eigen::Index best = 0;
      logits.row(r).maxCoeff(&best);
      out.push_back(model.seen_classes()[static_cast<std::size_t>(best)]);
    }
  }
  return out;
}

double accuracy_of(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) throw EvaluationError("prediction and label counts differ");
  if (labels.empty()) throw EvaluationError("accuracy of an empty set");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

namespace {

std::vector<int> labels_of(std::span<const Example> examples) {
  std::vector<int> labels;
  labels.reserve(examples.size());
  for (const auto& ex : examples) {
    if (!ex.label) throw EvaluationError("test example " + ex.id + " has no label");
    labels.push_back(*ex.label);
  }
  return labels;
}

}  // namespace

double task_accuracy(const ModelBundle& model, const ImageStore& images, std::span<const Example> examples) {
  if (examples.empty()) throw EvaluationError("empty test set");
  const auto labels = labels_of(examples);
  return accuracy_of(predict_classes(model, images, examples), labels);
}

double average_seen_accuracy(std::span<const double> per_task) {
  if (per_task.empty()) throw EvaluationError("no seen task to average");
  return std::accumulate(per_task.begin(), per_task.end(), 0.0) / static_cast<double>(per_task.size());
}

double stream_average(std::span<const double> a_values) {
  if (a_values.empty()) throw EvaluationError("empty accuracy curve");
  return std::accumulate(a_values.begin(), a_values.end(), 0.0) / static_cast<double>(a_values.size());
}

EvalResult evaluate_seen(const ModelBundle& model, const ImageStore& images, std::span<const StreamTask> tasks, int t) {
  if (t < 0 || static_cast<std::size_t>(t) >= tasks.size()) throw EvaluationError("task index out of range");
  EvalResult result;
  result.task = t;
  std::vector<double> accs;
  std::size_t correct = 0, total = 0;
  for (int k = 0; k <= t; ++k) {
    const auto& test = tasks[static_cast<std::size_t>(k)].test;
    if (test.empty()) continue;
    const auto labels = labels_of(test);
    const auto preds = predict_classes(model, images, test);
    const double acc = accuracy_of(preds, labels);
    result.per_task_accuracy[k] = acc;
    accs.push_back(acc);
    for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == labels[i] ? 1 : 0;
    total += preds.size();
  }
  if (accs.empty()) throw EvaluationError("no seen task has test data");
  result.a_t = average_seen_accuracy(accs);
  result.pooled = static_cast<double>(correct) / static_cast<double>(total);
  return result;
}

void StabilityTrace::record(std::int64_t step, const ModelBundle& model, const ImageStore& images,
                            const std::map<int, std::vector<Example>>& probes) {
  steps.push_back(step);
  for (const auto& [origin, examples] : probes) accuracy[origin].push_back(task_accuracy(model, images, examples));
}

std::map<int, std::vector<Example>> make_probe_sets(std::span<const StreamTask> tasks, int upto, std::size_t cap) {
  std::map<int, std::vector<Example>> probes;
  for (int k = 0; k <= upto && static_cast<std::size_t>(k) < tasks.size(); ++k) {
    const auto& test = tasks[static_cast<std::size_t>(k)].test;
    if (test.empty()) continue;
    probes[k].assign(test.begin(), test.begin() + static_cast<std::ptrdiff_t>(std::min(cap, test.size())));
  }
  return probes;
}

double dip_statistic(const StabilityTrace& trace, int origin) {
  const auto it = trace.accuracy.find(origin);
  if (it == trace.accuracy.end() || it->second.empty()) throw EvaluationError("no probe data for origin task");
  return it->second.front() - *std::min_element(it->second.begin(), it->second.end());
}

std::string format_record(const MetricRecord& r) {
  std::ostringstream out;
  out.precision(17);
  out << r.run_id << '\t' << r.task << '\t' << r.step << '\t' << r.metric << '\t' << r.value;
  return out.str();
}

std::vector<MetricRecord> to_records(const std::string& run_id, const EvalResult& result) {
  std::vector<MetricRecord> out;
  for (const auto& [k, acc] : result.per_task_accuracy) {
    out.push_back({run_id, result.task, result.step_index, "acc_task" + std::to_string(k), acc});
  }
  out.push_back({run_id, result.task, result.step_index, "a_t", result.a_t});
  out.push_back({run_id, result.task, result.step_index, "pooled", result.pooled});
  return out;
}

void append_records(const std::filesystem::path& file, std::span<const MetricRecord> records) {
  std::ofstream out(file, std::ios::app);
  if (!out) throw EvaluationError("cannot append metrics to " + file.string());
  for (const auto& r : records) out << format_record(r) << '\n';
}

std::vector<MetricRecord> read_records(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw EvaluationError("cannot read metrics " + file.string());
  std::vector<MetricRecord> out;
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    MetricRecord r;
    std::getline(fields, r.run_id, '\t');
    fields >> r.task >> r.step >> r.metric >> r.value;
    if (!fields) throw EvaluationError("malformed metric record: " + line);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace dietcl
