#include <algorithm>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "dietcl/stream.hpp"
#include "dietcl/synthetic.hpp"

using namespace dietcl;
namespace fs = std::filesystem;

namespace {

Corpus toy_corpus(int classes, int per_class, bool timestamps = false, double fixed_time = -1) {
  Corpus c;
  c.shape = {2, 2, 1};
  c.num_classes = classes;
  c.images = ImageStore(c.shape);
  const std::vector<float> px(4, 0.5f);
  for (int k = 0; k < classes; ++k) {
    for (int i = 0; i < per_class; ++i) {
      Example ex;
      ex.id = "k" + std::to_string(k) + "_" + std::to_string(i);
      ex.image = c.images.add(px);
      ex.label = k;
      if (timestamps) ex.timestamp = fixed_time >= 0 ? fixed_time : static_cast<double>((k * 7919 + i * 104729) % 1000);
      c.examples.push_back(ex);
    }
  }
  return c;
}

std::set<std::string> ids(const std::vector<Example>& xs) {
  std::set<std::string> out;
  for (const auto& x : xs) out.insert(x.id);
  return out;
}

std::size_t count_class(const std::vector<Example>& xs, int c) {
  return static_cast<std::size_t>(std::count_if(xs.begin(), xs.end(), [&](const Example& e) {
    return (e.label ? *e.label : *e.withheld_label) == c;
  }));
}

}  // namespace

TEST_CASE("class-incremental partition: 10 classes into 5 disjoint tasks of 2") {
  const Corpus c = toy_corpus(10, 20);
  StreamConfig cfg;
  cfg.num_tasks = 5;
  cfg.label_rate = 0.1;
  const auto tasks = build_class_incremental_stream(c, cfg);
  REQUIRE(tasks.size() == 5);
  std::set<int> all;
  for (const auto& t : tasks) {
    CHECK(t.classes.size() == 2);
    for (int k : t.classes) CHECK(all.insert(k).second);
    std::set<int> classes(t.classes.begin(), t.classes.end());
    for (const auto& e : t.labeled) CHECK(classes.count(*e.label));
    for (const auto& e : t.unlabeled) {
      CHECK_FALSE(e.label.has_value());
      CHECK(classes.count(*e.withheld_label));
    }
    for (const auto& e : t.test) CHECK(classes.count(*e.label));
  }
  CHECK(all.size() == 10);
}

TEST_CASE("near-equal groups put the extra classes first") {
  const Corpus c = toy_corpus(11, 4);
  StreamConfig cfg;
  cfg.num_tasks = 4;
  const auto tasks = build_stream(c, cfg);
  CHECK(tasks[0].classes.size() == 3);
  CHECK(tasks[1].classes.size() == 3);
  CHECK(tasks[2].classes.size() == 3);
  CHECK(tasks[3].classes.size() == 2);
}

TEST_CASE("every corpus example lands in exactly one task split") {
  const Corpus c = toy_corpus(6, 30);
  StreamConfig cfg;
  cfg.num_tasks = 3;
  cfg.label_rate = 0.05;
  const auto tasks = build_stream(c, cfg);
  std::set<std::string> seen;
  std::size_t total = 0;
  for (const auto& t : tasks) {
    const auto l = ids(t.labeled), u = ids(t.unlabeled), te = ids(t.test);
    for (const auto& id : l) CHECK_FALSE(u.count(id));
    CHECK(l.size() + u.size() == t.volume());
    total += l.size() + u.size() + te.size();
    seen.insert(l.begin(), l.end());
    seen.insert(u.begin(), u.end());
    seen.insert(te.begin(), te.end());
  }
  CHECK(total == c.examples.size());
  CHECK(seen.size() == c.examples.size());
}

TEST_CASE("test holdout is 10 percent of every class") {
  const Corpus c = toy_corpus(4, 50);
  StreamConfig cfg;
  cfg.num_tasks = 2;
  const auto tasks = build_stream(c, cfg);
  for (const auto& t : tasks) {
    for (int k : t.classes) CHECK(count_class(t.test, k) == 5);
  }
}

TEST_CASE("stream construction is deterministic and seed dependent") {
  const Corpus c = toy_corpus(12, 25);
  StreamConfig cfg;
  cfg.num_tasks = 4;
  cfg.label_rate = 0.1;
  cfg.seed = 3;
  const auto a = build_stream(c, cfg), b = build_stream(c, cfg);
  for (std::size_t t = 0; t < a.size(); ++t) {
    CHECK(a[t].classes == b[t].classes);
    CHECK(ids(a[t].labeled) == ids(b[t].labeled));
    CHECK(ids(a[t].test) == ids(b[t].test));
  }
  cfg.seed = 4;
  const auto d = build_stream(c, cfg);
  bool differs = false;
  for (std::size_t t = 0; t < a.size(); ++t) differs = differs || a[t].classes != d[t].classes;
  CHECK(differs);
}

TEST_CASE("stream construction errors") {
  StreamConfig cfg;
  cfg.num_tasks = 5;
  CHECK_THROWS_AS(build_stream(toy_corpus(3, 5), cfg), ConfigError);
  CHECK_THROWS_AS(build_stream(Corpus{}, cfg), IngestionError);
  cfg.num_tasks = 1;
  cfg.label_rate = 0.0;
  CHECK_THROWS_AS(build_stream(toy_corpus(3, 5), cfg), ConfigError);
  cfg.label_rate = 1.5;
  CHECK_THROWS_AS(build_stream(toy_corpus(3, 5), cfg), ConfigError);
  cfg.label_rate = 0.5;
  cfg.mode = StreamMode::time_incremental;
  CHECK_THROWS_AS(build_stream(toy_corpus(3, 5), cfg), IngestionError);
}

TEST_CASE("labeled quota uses the ceiling") {
  CHECK(labeled_quota(200, 0.01) == 2);
  CHECK(labeled_quota(201, 0.01) == 3);
  CHECK(labeled_quota(100, 0.07) == 7);
  CHECK(labeled_quota(5, 0.01) == 1);
  CHECK(labeled_quota(10, 1.0) == 10);
  CHECK(labeled_quota(1000000, 0.01) == 10000);
}

TEST_CASE("sparsify_labels: per-class counts, identity at rate 1, idempotence, nesting") {
  StreamTask task;
  for (int k = 0; k < 3; ++k) {
    for (int i = 0; i < 200 + 37 * k; ++i) {
      Example ex;
      ex.id = "x" + std::to_string(k) + "_" + std::to_string(i);
      ex.image = static_cast<std::size_t>(k * 1000 + i);
      ex.label = k;
      task.labeled.push_back(ex);
    }
  }
  task.classes = {0, 1, 2};
  const auto low = sparsify_labels(task, 0.01, 11);
  CHECK(count_class(low.labeled, 0) == 2);
  CHECK(count_class(low.labeled, 1) == 3);
  CHECK(count_class(low.labeled, 2) == 3);
  CHECK(low.volume() == task.volume());

  const auto all = sparsify_labels(low, 1.0, 11);
  CHECK(all.unlabeled.empty());
  CHECK(ids(all.labeled) == ids(task.labeled));

  const auto again = sparsify_labels(low, 0.01, 11);
  CHECK(ids(again.labeled) == ids(low.labeled));

  std::set<std::string> prev;
  for (double r : {0.005, 0.01, 0.05, 0.1, 0.5}) {
    const auto s = ids(sparsify_labels(task, r, 11).labeled);
    CHECK(std::includes(s.begin(), s.end(), prev.begin(), prev.end()));
    prev = s;
  }
  CHECK_THROWS_AS(sparsify_labels(task, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(sparsify_labels(task, 1.01, 1), ConfigError);

  const auto global = sparsify_labels(task, 0.01, 11, LabelSparsity::global);
  CHECK(global.labeled.size() == labeled_quota(task.labeled.size(), 0.01));
}

TEST_CASE("time-incremental chunks are contiguous in time and equal in size") {
  Corpus c = toy_corpus(4, 25, true);
  StreamConfig cfg;
  cfg.mode = StreamMode::time_incremental;
  cfg.num_tasks = 4;
  cfg.label_rate = 0.2;
  const auto tasks = build_stream(c, cfg);
  double prev_max = -1e300;
  for (const auto& t : tasks) {
    CHECK(t.volume() + t.test.size() == 25);
    double lo = 1e300, hi = -1e300;
    for (const auto* xs : {&t.labeled, &t.unlabeled, &t.test}) {
      for (const auto& e : *xs) {
        lo = std::min(lo, *e.timestamp);
        hi = std::max(hi, *e.timestamp);
      }
    }
    CHECK(prev_max <= lo);
    prev_max = hi;
  }
}

TEST_CASE("all-equal timestamps fall back to id order") {
  Corpus c = toy_corpus(2, 50, true, 5.0);
  StreamConfig cfg;
  cfg.mode = StreamMode::time_incremental;
  cfg.num_tasks = 4;
  cfg.test_fraction = 0.0;
  cfg.label_rate = 1.0;
  const auto tasks = build_stream(c, cfg);
  std::vector<std::string> sorted_ids;
  for (const auto& e : c.examples) sorted_ids.push_back(e.id);
  std::sort(sorted_ids.begin(), sorted_ids.end());
  std::size_t at = 0;
  for (const auto& t : tasks) {
    CHECK(t.volume() == 25);
    const auto s = ids(t.labeled);
    for (std::size_t i = 0; i < 25; ++i) CHECK(s.count(sorted_ids[at++]));
  }
}

TEST_CASE("time-incremental rosters may overlap") {
  SyntheticConfig sc;
  sc.num_classes = 6;
  sc.per_class = 40;
  sc.timestamps = true;
  sc.time_spread = 0.5;
  StreamConfig cfg;
  cfg.mode = StreamMode::time_incremental;
  cfg.num_tasks = 3;
  cfg.label_rate = 0.5;
  const auto tasks = build_stream(make_synthetic_corpus(sc), cfg);
  std::set<int> a(tasks[0].classes.begin(), tasks[0].classes.end());
  bool overlap = false;
  for (int k : tasks[1].classes) overlap = overlap || a.count(k);
  CHECK(overlap);
}

TEST_CASE("stream snapshot round trip") {
  const fs::path dir = fs::temp_directory_path() / "dietcl_stream_snapshot";
  fs::remove_all(dir);
  const Corpus c = toy_corpus(6, 20);
  StreamConfig cfg;
  cfg.num_tasks = 3;
  cfg.label_rate = 0.1;
  const auto tasks = build_stream(c, cfg);
  save_stream_snapshot(dir, tasks);
  const auto back = load_stream_snapshot(dir, c);
  REQUIRE(back.size() == tasks.size());
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    CHECK(back[t].classes == tasks[t].classes);
    REQUIRE(back[t].labeled.size() == tasks[t].labeled.size());
    for (std::size_t i = 0; i < tasks[t].labeled.size(); ++i) CHECK(back[t].labeled[i].id == tasks[t].labeled[i].id);
    CHECK(ids(back[t].unlabeled) == ids(tasks[t].unlabeled));
    for (const auto& e : back[t].unlabeled) CHECK_FALSE(e.label.has_value());
    CHECK(ids(back[t].test) == ids(tasks[t].test));
  }
  fs::remove_all(dir);
}

TEST_CASE("manifest corpus round trip through an image pack") {
  const fs::path dir = fs::temp_directory_path() / "dietcl_corpus_rt";
  fs::remove_all(dir);
  SyntheticConfig sc;
  sc.num_classes = 3;
  sc.per_class = 5;
  sc.timestamps = true;
  const Corpus c = make_synthetic_corpus(sc);
  write_corpus(dir, c);
  const Corpus back = load_corpus(dir / "manifest.tsv");
  REQUIRE(back.examples.size() == c.examples.size());
  CHECK(back.shape == c.shape);
  CHECK(back.num_classes == 3);
  for (std::size_t i = 0; i < c.examples.size(); ++i) {
    CHECK(back.examples[i].id == c.examples[i].id);
    CHECK(back.examples[i].label == c.examples[i].label);
    CHECK(*back.examples[i].timestamp == doctest::Approx(*c.examples[i].timestamp));
    const auto a = c.images.image(c.examples[i].image), b = back.images.image(back.examples[i].image);
    CHECK(std::equal(a.begin(), a.end(), b.begin()));
  }
  fs::remove_all(dir);
}

TEST_CASE("synthetic corpus is deterministic with pixels in range") {
  SyntheticConfig sc;
  sc.num_classes = 4;
  sc.per_class = 10;
  const Corpus a = make_synthetic_corpus(sc), b = make_synthetic_corpus(sc);
  REQUIRE(a.images.size() == 40);
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    const auto x = a.images.image(i), y = b.images.image(i);
    CHECK(std::equal(x.begin(), x.end(), y.begin()));
    for (float v : x) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
}
