#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <vector>

#include "dietcl/core.hpp"
#include "dietcl/corpus.hpp"
#include "dietcl/stream.hpp"

namespace dietcl {

/// A stored labeled example: id and label plus the corpus image it points at.
struct BufferEntry {
  std::string id;
  std::size_t image = 0;
  int label = 0;
  int task = 0;
};

/// Draw counts for `groups` groups sharing `batch` slots: every group gets
/// batch / groups, and the remainder goes to the first groups of a shuffled
/// visiting order, so counts differ by at most one.
std::vector<std::size_t> balanced_quotas(std::size_t groups, std::size_t batch, Rng& rng);

/// Task-balanced store of every labeled example seen so far. Unbounded.
class BalancedBuffer {
 public:
  /// Stores all labeled examples of `task` under its index.
  /// Throws ContractViolation if the task was inserted before.
  void update(const StreamTask& task);

  /// Round-robin over nonempty tasks in shuffled order; per-task draw counts
  /// differ by at most one. Within a task, draws are without replacement
  /// unless the quota exceeds the task's size. Tasks listed in `exclude` are
  /// skipped. Throws SamplingError if nothing is left to sample.
  std::vector<BufferEntry> sample_balanced(std::size_t batch, Rng& rng,
                                           std::optional<int> exclude = std::nullopt) const;

  /// Uniform with replacement over all stored entries (pooled, not balanced).
  std::vector<BufferEntry> sample_uniform(std::size_t batch, Rng& rng,
                                          std::optional<int> exclude = std::nullopt) const;

  std::size_t size() const;
  std::size_t nonempty_tasks(std::optional<int> exclude = std::nullopt) const;
  bool contains_task(int task) const { return per_task_.count(task) != 0; }
  const std::map<int, std::vector<BufferEntry>>& per_task() const { return per_task_; }

  /// Snapshot: `buffer.tsv` with one `task<TAB>id` line per entry.
  void save(const std::filesystem::path& file) const;
  static BalancedBuffer load(const std::filesystem::path& file, const Corpus& corpus);

 private:
  std::map<int, std::vector<BufferEntry>> per_task_;
};

/// Classic reservoir sampling buffer (capacity 0 = unbounded) with its own
/// seeded generator.
class ReservoirBuffer {
 public:
  explicit ReservoirBuffer(std::size_t capacity = 0, std::uint64_t seed = 0);

  /// Offers one labeled example. Unlabeled examples throw ContractViolation.
  void offer(const Example& item, int task);

  std::vector<BufferEntry> sample_uniform(std::size_t batch, Rng& rng) const;
  /// Task-balanced draw over the retained slots, grouped by origin task.
  std::vector<BufferEntry> sample_balanced(std::size_t batch, Rng& rng) const;

  const std::vector<BufferEntry>& slots() const { return slots_; }
  std::size_t seen() const { return seen_; }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return slots_.empty(); }

  void save(const std::filesystem::path& file) const;
  static ReservoirBuffer load(const std::filesystem::path& file, const Corpus& corpus);

 private:
  std::size_t capacity_;
  std::size_t seen_ = 0;
  std::vector<BufferEntry> slots_;
  Rng rng_;
};

}  // namespace dietcl
