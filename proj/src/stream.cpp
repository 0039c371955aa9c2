#include "dietcl/stream.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace dietcl {

namespace {

// Guards ceil/floor against products such as 0.07 * 100 = 7.000000000000001.
constexpr double kRateSlack = 1e-9;

std::size_t holdout_quota(std::size_t count, double fraction) {
  if (fraction <= 0.0 || count < 2) return 0;
  auto n = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(count) + kRateSlack));
  n = std::max<std::size_t>(n, 1);
  return std::min(n, count - 1);
}

void check_rate(double rate) {
  if (!(rate > 0.0) || rate > 1.0) {
    throw ConfigError("label rate must lie in (0, 1], got " + std::to_string(rate));
  }
}

void check_common(const Corpus& corpus, const StreamConfig& cfg) {
  if (corpus.examples.empty()) throw IngestionError("corpus is empty");
  if (cfg.num_tasks < 1) throw ConfigError("num_tasks must be >= 1");
  check_rate(cfg.label_rate);
  if (cfg.test_fraction < 0.0 || cfg.test_fraction >= 1.0) {
    throw ConfigError("test_fraction must lie in [0, 1)");
  }
}

/// Ids ranked by a seeded hash; ties (astronomically unlikely) fall back to id.
void rank_by_hash(std::vector<const Example*>& items, std::uint64_t seed) {
  std::vector<std::pair<std::uint64_t, const Example*>> keyed;
  keyed.reserve(items.size());
  for (const auto* ex : items) keyed.emplace_back(stable_hash(ex->id, seed), ex);
  std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first < b.first : a.second->id < b.second->id;
  });
  for (std::size_t i = 0; i < items.size(); ++i) items[i] = keyed[i].second;
}

/// Ids of examples held out for testing: a seeded, per-class hash prefix.
std::unordered_set<std::string> holdout_ids(const Corpus& corpus, const StreamConfig& cfg) {
  std::map<int, std::vector<const Example*>> by_class;
  for (const auto& ex : corpus.examples) {
    if (ex.label) by_class[*ex.label].push_back(&ex);
  }
  std::unordered_set<std::string> ids;
  const auto seed = derive_seed(cfg.seed, "holdout");
  for (auto& [cls, items] : by_class) {
    rank_by_hash(items, seed);
    const auto n = holdout_quota(items.size(), cfg.test_fraction);
    for (std::size_t i = 0; i < n; ++i) ids.insert(items[i]->id);
  }
  return ids;
}

std::vector<int> sorted_classes(const std::vector<Example>& examples) {
  std::set<int> seen;
  for (const auto& ex : examples) {
    if (ex.label) seen.insert(*ex.label);
    else if (ex.withheld_label) seen.insert(*ex.withheld_label);
  }
  return {seen.begin(), seen.end()};
}

}  // namespace

std::size_t labeled_quota(std::size_t count, double rate) {
  check_rate(rate);
  const auto n = static_cast<std::size_t>(std::ceil(rate * static_cast<double>(count) - kRateSlack));
  return std::min(n, count);
}

StreamTask sparsify_labels(const StreamTask& task, double rate, std::uint64_t seed, LabelSparsity mode) {
  check_rate(rate);
  std::vector<Example> pool;
  pool.reserve(task.volume());
  for (const auto& ex : task.labeled) pool.push_back(ex);
  for (const auto& ex : task.unlabeled) {
    Example restored = ex;
    if (!restored.label) restored.label = restored.withheld_label;
    restored.withheld_label.reset();
    pool.push_back(std::move(restored));
  }
  std::sort(pool.begin(), pool.end(), [](const Example& a, const Example& b) {
    return a.image != b.image ? a.image < b.image : a.id < b.id;
  });

  std::unordered_set<std::string> keep;
  if (mode == LabelSparsity::per_class) {
    std::map<int, std::vector<const Example*>> by_class;
    for (const auto& ex : pool) {
      if (ex.label) by_class[*ex.label].push_back(&ex);
    }
    for (auto& [cls, items] : by_class) {
      rank_by_hash(items, seed);
      const auto n = labeled_quota(items.size(), rate);
      for (std::size_t i = 0; i < n; ++i) keep.insert(items[i]->id);
    }
  } else {
    std::vector<const Example*> items;
    for (const auto& ex : pool) {
      if (ex.label) items.push_back(&ex);
    }
    rank_by_hash(items, seed);
    const auto n = labeled_quota(items.size(), rate);
    for (std::size_t i = 0; i < n; ++i) keep.insert(items[i]->id);
  }

  StreamTask out;
  out.index = task.index;
  out.classes = task.classes;
  out.test = task.test;
  for (auto& ex : pool) {
    if (keep.count(ex.id)) {
      out.labeled.push_back(std::move(ex));
    } else {
      ex.withheld_label = ex.label;
      ex.label.reset();
      out.unlabeled.push_back(std::move(ex));
    }
  }
  return out;
}

std::vector<StreamTask> build_class_incremental_stream(const Corpus& corpus, const StreamConfig& cfg) {
  check_common(corpus, cfg);
  if (cfg.mode != StreamMode::class_incremental) {
    throw ConfigError("build_class_incremental_stream called with a time-incremental config");
  }
  std::set<int> present;
  for (const auto& ex : corpus.examples) {
    if (!ex.label) throw IngestionError("class-incremental corpus example " + ex.id + " has no class");
    present.insert(*ex.label);
  }
  std::vector<int> classes(present.begin(), present.end());
  const auto num_tasks = static_cast<std::size_t>(cfg.num_tasks);
  if (classes.size() < num_tasks) {
    throw ConfigError("corpus has " + std::to_string(classes.size()) + " nonempty classes, fewer than " +
                      std::to_string(num_tasks) + " tasks");
  }
  Rng rng(derive_seed(cfg.seed, "class-order"));
  shuffle_in_place(classes, rng);

  std::unordered_map<int, int> task_of_class;
  const std::size_t base = classes.size() / num_tasks;
  const std::size_t extra = classes.size() % num_tasks;
  std::vector<StreamTask> tasks(num_tasks);
  std::size_t cursor = 0;
  for (std::size_t t = 0; t < num_tasks; ++t) {
    const std::size_t group = base + (t < extra ? 1 : 0);
    tasks[t].index = static_cast<int>(t);
    for (std::size_t i = 0; i < group; ++i) {
      tasks[t].classes.push_back(classes[cursor]);
      task_of_class[classes[cursor]] = static_cast<int>(t);
      ++cursor;
    }
    std::sort(tasks[t].classes.begin(), tasks[t].classes.end());
  }

  const auto test_ids = holdout_ids(corpus, cfg);
  for (const auto& ex : corpus.examples) {
    auto& task = tasks[static_cast<std::size_t>(task_of_class.at(*ex.label))];
    if (test_ids.count(ex.id)) task.test.push_back(ex);
    else task.labeled.push_back(ex);
  }

  const auto label_seed = derive_seed(cfg.seed, "labels");
  for (auto& task : tasks) task = sparsify_labels(task, cfg.label_rate, label_seed, cfg.sparsity);
  return tasks;
}

std::vector<StreamTask> build_time_incremental_stream(const Corpus& corpus, const StreamConfig& cfg) {
  check_common(corpus, cfg);
  if (cfg.mode != StreamMode::time_incremental) {
    throw ConfigError("build_time_incremental_stream called with a class-incremental config");
  }
  std::vector<const Example*> order;
  order.reserve(corpus.examples.size());
  for (const auto& ex : corpus.examples) {
    if (!ex.timestamp) throw IngestionError("time-incremental corpus example " + ex.id + " has no timestamp");
    order.push_back(&ex);
  }
  const auto num_tasks = static_cast<std::size_t>(cfg.num_tasks);
  if (order.size() < num_tasks) throw ConfigError("fewer examples than tasks");
  std::stable_sort(order.begin(), order.end(), [](const Example* a, const Example* b) {
    return *a->timestamp != *b->timestamp ? *a->timestamp < *b->timestamp : a->id < b->id;
  });

  const auto test_ids = holdout_ids(corpus, cfg);
  const std::size_t base = order.size() / num_tasks;
  const std::size_t extra = order.size() % num_tasks;
  std::vector<StreamTask> tasks(num_tasks);
  std::size_t cursor = 0;
  for (std::size_t t = 0; t < num_tasks; ++t) {
    auto& task = tasks[t];
    task.index = static_cast<int>(t);
    const std::size_t chunk = base + (t < extra ? 1 : 0);
    for (std::size_t i = 0; i < chunk; ++i, ++cursor) {
      const Example& ex = *order[cursor];
      if (test_ids.count(ex.id)) task.test.push_back(ex);
      else task.labeled.push_back(ex);
    }
    // Unlabeled corpus examples can never be labeled; park them before sparsifying.
    std::vector<Example> labeled;
    for (auto& ex : task.labeled) {
      if (ex.label) labeled.push_back(std::move(ex));
      else task.unlabeled.push_back(std::move(ex));
    }
    task.labeled = std::move(labeled);
    task.classes = sorted_classes(task.labeled);
  }
  const auto label_seed = derive_seed(cfg.seed, "labels");
  for (auto& task : tasks) task = sparsify_labels(task, cfg.label_rate, label_seed, cfg.sparsity);
  return tasks;
}

std::vector<StreamTask> build_stream(const Corpus& corpus, const StreamConfig& cfg) {
  return cfg.mode == StreamMode::class_incremental ? build_class_incremental_stream(corpus, cfg)
                                                   : build_time_incremental_stream(corpus, cfg);
}

void save_stream_snapshot(const std::filesystem::path& dir, const std::vector<StreamTask>& tasks) {
  std::filesystem::create_directories(dir);
  std::ofstream index(dir / "stream.tsv");
  if (!index) throw IngestionError("cannot write stream snapshot in " + dir.string());
  index << "# task\tclasses\n";
  for (const auto& task : tasks) {
    index << task.index << '\t';
    for (std::size_t i = 0; i < task.classes.size(); ++i) index << (i ? "," : "") << task.classes[i];
    index << '\n';
    const auto write_ids = [&](const std::string& part, const std::vector<Example>& items) {
      std::ofstream out(dir / ("task_" + std::to_string(task.index) + "_" + part + ".txt"));
      for (const auto& ex : items) out << ex.id << '\n';
    };
    write_ids("labeled", task.labeled);
    write_ids("unlabeled", task.unlabeled);
    write_ids("test", task.test);
  }
}

std::vector<StreamTask> load_stream_snapshot(const std::filesystem::path& dir, const Corpus& corpus) {
  std::unordered_map<std::string, const Example*> by_id;
  for (const auto& ex : corpus.examples) by_id.emplace(ex.id, &ex);

  std::ifstream index(dir / "stream.tsv");
  if (!index) throw IngestionError("no stream snapshot in " + dir.string());
  std::vector<StreamTask> tasks;
  std::string line;
  while (std::getline(index, line)) {
    if (line.empty() || line[0] == '#') continue;
    StreamTask task;
    std::istringstream fields(line);
    std::string classes;
    fields >> task.index;
    std::getline(fields >> std::ws, classes);
    std::istringstream cls(classes);
    for (std::string c; std::getline(cls, c, ',');) {
      if (!c.empty()) task.classes.push_back(std::stoi(c));
    }
    const auto read_ids = [&](const std::string& part, std::vector<Example>& out, bool hide) {
      std::ifstream in(dir / ("task_" + std::to_string(task.index) + "_" + part + ".txt"));
      if (!in) throw IngestionError("stream snapshot is missing " + part + " ids of task " + std::to_string(task.index));
      for (std::string id; std::getline(in, id);) {
        if (id.empty()) continue;
        const auto it = by_id.find(id);
        if (it == by_id.end()) throw IngestionError("snapshot id " + id + " is not in the corpus");
        Example ex = *it->second;
        if (hide) {
          ex.withheld_label = ex.label;
          ex.label.reset();
        }
        out.push_back(std::move(ex));
      }
    };
    read_ids("labeled", task.labeled, false);
    read_ids("unlabeled", task.unlabeled, true);
    read_ids("test", task.test, false);
    tasks.push_back(std::move(task));
  }
  return tasks;
}

}  // namespace dietcl
