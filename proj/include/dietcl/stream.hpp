#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dietcl/corpus.hpp"

namespace dietcl {

enum class StreamMode { class_incremental, time_incremental };

/// How sparsify_labels picks which examples keep their labels.
enum class LabelSparsity {
  per_class,  // ceil(rate * count(c)) labels for every class c in the task
  global,     // ceil(rate * n) labels over the whole task
};

struct StreamConfig {
  StreamMode mode = StreamMode::class_incremental;
  int num_tasks = 5;
  double label_rate = 0.01;
  std::uint64_t seed = 0;
  std::filesystem::path corpus_manifest;
  // Fraction of every class held out as test data before streaming.
  double test_fraction = 0.1;
  LabelSparsity sparsity = LabelSparsity::per_class;
};

/// One time step of the stream. `classes` is sorted ascending.
struct StreamTask {
  int index = 0;
  std::vector<Example> labeled;
  std::vector<Example> unlabeled;
  std::vector<Example> test;
  std::vector<int> classes;

  std::size_t volume() const { return labeled.size() + unlabeled.size(); }
};

std::vector<StreamTask> build_class_incremental_stream(const Corpus& corpus, const StreamConfig& cfg);
std::vector<StreamTask> build_time_incremental_stream(const Corpus& corpus, const StreamConfig& cfg);

/// Dispatches on cfg.mode.
std::vector<StreamTask> build_stream(const Corpus& corpus, const StreamConfig& cfg);

/// Re-draws which training examples of `task` expose their labels.
///
/// The pool is labeled + unlabeled (withheld labels are restored first), so
/// the result depends only on (pool, rate, seed): applying it twice is a
/// no-op, and label sets at a lower rate are prefixes of the sets at a
/// higher rate because every class is ranked by a seeded id hash.
StreamTask sparsify_labels(const StreamTask& task, double rate, std::uint64_t seed,
                           LabelSparsity mode = LabelSparsity::per_class);

/// Number of labels a class of `count` examples keeps at `rate`.
std::size_t labeled_quota(std::size_t count, double rate);

/// Stream snapshot: one directory holding `stream.tsv` (task, classes) and
/// `task_<k>_{labeled,unlabeled,test}.txt` id lists in stream order.
void save_stream_snapshot(const std::filesystem::path& dir, const std::vector<StreamTask>& tasks);
std::vector<StreamTask> load_stream_snapshot(const std::filesystem::path& dir, const Corpus& corpus);

}  // namespace dietcl
