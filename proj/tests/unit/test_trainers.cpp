#include <algorithm>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "dietcl/synthetic.hpp"
#include "dietcl/trainers.hpp"

using namespace dietcl;
namespace fs = std::filesystem;

namespace {

const std::vector<Method> kAllMethods{Method::dietcl, Method::er,   Method::er_ace,    Method::gdumb,
                                      Method::ewc,    Method::mas,  Method::one_stage, Method::two_stage};

struct World {
  Corpus corpus;
  std::vector<StreamTask> tasks;
  ModelConfig model;

  World() {
    SyntheticConfig sc;
    sc.num_classes = 6;
    sc.per_class = 30;
    sc.shape = {8, 8, 1};
    sc.primitive_size = 3;
    sc.primitives = 6;
    sc.parts_per_class = 2;
    corpus = make_synthetic_corpus(sc);
    StreamConfig st;
    st.num_tasks = 3;
    st.label_rate = 0.2;
    st.seed = 4;
    tasks = build_class_incremental_stream(corpus, st);
    model.image = sc.shape;
    model.patch = 4;
    model.embed_dim = 8;
    model.depth = 1;
    model.heads = 2;
    model.mlp_ratio = 2;
    model.decoder_dim = 8;
    model.decoder_depth = 1;
    model.decoder_heads = 2;
    model.mask_ratio = 0.5;
  }
};

const World& world() {
  static const World w;
  return w;
}

TrainerConfig small_config(Method m, std::int64_t budget = 24) {
  TrainerConfig c;
  c.method = m;
  c.per_task_budget = budget;
  c.threshold = budget * 2 / 3;
  c.reference_batch = 6;
  c.effective_batch = 6;
  c.base_lr = 0.05;
  c.seed = 5;
  return c;
}

struct StreamRun {
  std::vector<TaskOutcome> outcomes;
  LearnerState state;
};

StreamRun run_stream(const TrainerConfig& cfg, int tasks = 3, const StepHook& hook = {}) {
  const World& w = world();
  StreamRun run{{}, LearnerState(ModelBundle(w.model, 9), cfg)};
  for (int t = 0; t < tasks; ++t) {
    run.outcomes.push_back(train_task(cfg, w.tasks[static_cast<std::size_t>(t)], w.corpus.images, run.state, hook));
  }
  return run;
}

std::vector<double> loss_sequence(const StreamRun& run) {
  std::vector<double> out;
  for (const auto& o : run.outcomes) {
    for (const auto& s : o.steps) out.push_back(s.report.total);
  }
  return out;
}

std::vector<std::string> event_names(const LearnerState& st, int task) {
  std::vector<std::string> out;
  for (const auto& e : st.events) {
    if (e.task == task) out.push_back(e.name);
  }
  return out;
}

}  // namespace

TEST_CASE("method names round trip") {
  for (Method m : kAllMethods) CHECK(method_from_string(to_string(m)) == m);
  CHECK_THROWS_AS(method_from_string("sgd"), ConfigError);
}

TEST_CASE("config validation") {
  TrainerConfig c = small_config(Method::dietcl);
  c.effective_batch = 9;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config(Method::dietcl);
  c.per_task_budget = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config(Method::two_stage);
  c.two_stage_fraction = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config(Method::ewc);
  CHECK(c.importance_passes() == 2);
  c.per_task_budget = 5000;
  CHECK(c.importance_passes() == 50);
  c.importance_batches = 7;
  CHECK(c.importance_passes() == 7);
}

TEST_CASE("every method stays within budget and drains it when it can") {
  for (Method m : kAllMethods) {
    CAPTURE(to_string(m));
    for (int accum : {1, 2}) {
      TrainerConfig cfg = small_config(m, 25);
      cfg.effective_batch = cfg.reference_batch * accum;
      const auto run = run_stream(cfg);
      for (const auto& o : run.outcomes) {
        CHECK(o.ledger.spent() <= cfg.per_task_budget);
        CHECK(o.ledger.total() == cfg.per_task_budget);
        std::int64_t sum = 0;
        for (const auto& e : o.ledger.ledger()) sum += e.units;
        CHECK(sum == o.ledger.spent());
        // Leftover is less than one whole update per phase.
        const std::int64_t phases = m == Method::dietcl || m == Method::two_stage ? 2 : 1;
        CHECK(cfg.per_task_budget - o.ledger.spent() < phases * accum);
      }
    }
  }
}

TEST_CASE("dietcl split follows the threshold") {
  TrainerConfig cfg = small_config(Method::dietcl, 500);
  cfg.threshold = 400;
  auto run = run_stream(cfg, 1);
  CHECK(run.outcomes[0].ledger.spent_in("joint") == 400);
  CHECK(run.outcomes[0].ledger.spent_in("finetune") == 100);

  cfg.per_task_budget = 300;
  run = run_stream(cfg, 1);
  CHECK(run.outcomes[0].ledger.spent_in("joint") == 300);
  CHECK(run.outcomes[0].ledger.spent_in("finetune") == 0);
}

TEST_CASE("dietcl order of operations per task") {
  const auto run = run_stream(small_config(Method::dietcl));
  const std::vector<std::string> expected{"expand_head", "buffer_update", "split_budget", "joint_phase",
                                          "finetune_phase"};
  for (int t = 0; t < 3; ++t) CHECK(event_names(run.state, t) == expected);
}

TEST_CASE("dietcl batch composition by phase") {
  const auto run = run_stream(small_config(Method::dietcl));
  for (const auto& o : run.outcomes) {
    for (const auto& e : o.ledger.ledger()) {
      if (e.phase == "finetune") {
        CHECK(e.composition == "m=6");
      } else {
        CHECK(e.phase == "joint");
        CHECK(e.composition == "l=2,u=2,m=2");
      }
    }
  }
  TrainerConfig no_rec = small_config(Method::dietcl);
  no_rec.alpha_r = 0.0;
  const auto run2 = run_stream(no_rec, 1);
  for (const auto& e : run2.outcomes[0].ledger.ledger()) {
    if (e.phase == "joint") CHECK(e.composition == "l=3,m=3");
  }
}

TEST_CASE("dietcl with no unlabeled data trains without the reconstruction term") {
  const World& w = world();
  StreamTask task = w.tasks[0];
  task.unlabeled.clear();
  const TrainerConfig cfg = small_config(Method::dietcl);
  LearnerState st(ModelBundle(w.model, 9), cfg);
  const auto out = train_task(cfg, task, w.corpus.images, st);
  CHECK(out.ledger.spent() == cfg.per_task_budget);
  for (const auto& s : out.steps) {
    CHECK(s.report.l_r == 0.0);
    CHECK(s.report.n_unlabeled == 0);
  }
}

TEST_CASE("toggles change the joint batches") {
  TrainerConfig cfg = small_config(Method::dietcl);
  cfg.buffer_includes_current = false;
  const auto run = run_stream(cfg, 2);
  // Task 0 has no earlier task to replay, so the joint phase has no buffer rows.
  for (const auto& e : run.outcomes[0].ledger.ledger()) {
    if (e.phase == "joint") CHECK(e.composition == "l=2,u=2");
  }
  for (const auto& e : run.outcomes[1].ledger.ledger()) {
    if (e.phase == "joint") CHECK(e.composition == "l=2,u=2,m=2");
  }
}

TEST_CASE("er starts from current labels only and then replays half") {
  const auto run = run_stream(small_config(Method::er), 2);
  const auto& first = run.outcomes[0].ledger.ledger();
  CHECK(first.front().composition == "l=6");
  CHECK(first.back().composition == "l=3,m=3");
  for (const auto& e : run.outcomes[1].ledger.ledger()) CHECK(e.composition == "l=3,m=3");
  CHECK(run.state.reservoir.seen() == world().tasks[0].labeled.size() + world().tasks[1].labeled.size());
}

TEST_CASE("gdumb re-initialises from the same weights every task") {
  const auto run = run_stream(small_config(Method::gdumb));
  std::set<std::string> hashes;
  int reinits = 0;
  for (const auto& e : run.state.events) {
    if (e.name == "reinit") {
      hashes.insert(e.detail);
      ++reinits;
    }
  }
  CHECK(reinits == 3);
  CHECK(hashes.size() == 1);
  CHECK(*hashes.begin() == std::to_string(run.state.initial.backbone_hash()));

  // After task 0 the buffer is exactly task 0's labels.
  const auto one = run_stream(small_config(Method::gdumb), 1);
  CHECK(one.state.buffer.size() == world().tasks[0].labeled.size());
  CHECK(one.state.buffer.per_task().size() == 1);
}

TEST_CASE("ewc and mas charge importance passes to the task") {
  for (Method m : {Method::ewc, Method::mas}) {
    TrainerConfig cfg = small_config(m, 60);
    cfg.importance_batches = 5;
    const auto run = run_stream(cfg, 2);
    for (const auto& o : run.outcomes) {
      CHECK(o.ledger.spent_in("importance") == 5);
      CHECK(o.ledger.spent_in("train") == 55);
    }
    CHECK_FALSE(run.state.importance.empty());
    for (const auto& [name, f] : run.state.importance) CHECK(f.minCoeff() >= 0.0f);
  }
}

TEST_CASE("ewc with zero strength matches plain fine-tuning") {
  TrainerConfig off = small_config(Method::ewc);
  off.ewc_lambda = 0.0;
  TrainerConfig on = off;
  on.ewc_lambda = 1e4;
  const auto a = run_stream(off, 2);
  const auto b = run_stream(on, 2);
  // Task 0 has no anchor yet, so both runs agree there.
  REQUIRE(a.outcomes[0].steps.size() == b.outcomes[0].steps.size());
  for (std::size_t i = 0; i < a.outcomes[0].steps.size(); ++i) {
    CHECK(a.outcomes[0].steps[i].report.total == b.outcomes[0].steps[i].report.total);
  }
  // With zero strength the loss is the classification term alone.
  for (const auto& s : a.outcomes[1].steps) CHECK(s.report.total == s.report.l_m);
  bool differs = false;
  for (const auto& s : b.outcomes[1].steps) differs |= s.report.total != s.report.l_m;
  CHECK(differs);
}

TEST_CASE("two-stage with no pre-training matches buffer-only training") {
  TrainerConfig two = small_config(Method::two_stage);
  two.two_stage_fraction = 0.0;
  const auto a = run_stream(two);
  const auto b = run_stream(small_config(Method::one_stage));
  CHECK(loss_sequence(a) == loss_sequence(b));
  CHECK(a.state.model.weights_hash() == b.state.model.weights_hash());
  for (const auto& o : a.outcomes) CHECK(o.ledger.spent_in("pretrain") == 0);

  TrainerConfig full = small_config(Method::two_stage);
  full.two_stage_fraction = 0.5;
  const auto c = run_stream(full, 1);
  CHECK(c.outcomes[0].ledger.spent_in("pretrain") == 12);
  CHECK(c.outcomes[0].ledger.spent_in("finetune") == 12);
}

TEST_CASE("fixed seeds give bit-identical loss sequences") {
  for (Method m : kAllMethods) {
    CAPTURE(to_string(m));
    const auto a = run_stream(small_config(m));
    const auto b = run_stream(small_config(m));
    const auto la = loss_sequence(a), lb = loss_sequence(b);
    CHECK(la.size() >= 10);
    CHECK(la == lb);
    CHECK(a.state.model.weights_hash() == b.state.model.weights_hash());
    TrainerConfig other = small_config(m);
    other.seed = 6;
    CHECK(loss_sequence(run_stream(other)) != la);
  }
}

TEST_CASE("head grows monotonically") {
  for (Method m : kAllMethods) {
    const World& w = world();
    const TrainerConfig cfg = small_config(m);
    LearnerState st(ModelBundle(w.model, 9), cfg);
    std::vector<int> previous;
    for (const auto& task : w.tasks) {
      train_task(cfg, task, w.corpus.images, st);
      const auto& now = st.model.seen_classes();
      CHECK(now.size() >= previous.size());
      CHECK(std::equal(previous.begin(), previous.end(), now.begin()));
      previous = now;
    }
    CHECK(previous.size() == 6);
  }
}

TEST_CASE("probing is free and fires at step 0 and every n updates") {
  std::vector<std::int64_t> calls;
  StepHook hook;
  hook.every = 4;
  hook.on_step = [&](const ModelBundle&, std::int64_t step) { calls.push_back(step); };
  const auto probed = run_stream(small_config(Method::dietcl), 1, hook);
  const auto plain = run_stream(small_config(Method::dietcl), 1);
  CHECK(calls == std::vector<std::int64_t>{0, 4, 8, 12, 16, 20, 24});
  CHECK(probed.outcomes[0].ledger.spent() == plain.outcomes[0].ledger.spent());
  CHECK(loss_sequence(probed) == loss_sequence(plain));
}

TEST_CASE("learner state round trip resumes bit-exactly") {
  for (Method m : kAllMethods) {
    CAPTURE(to_string(m));
    const World& w = world();
    const TrainerConfig cfg = small_config(m);
    LearnerState live(ModelBundle(w.model, 9), cfg);
    train_task(cfg, w.tasks[0], w.corpus.images, live);
    const fs::path dir = fs::temp_directory_path() / ("dietcl_state_" + to_string(m));
    fs::remove_all(dir);
    live.save(dir);
    LearnerState restored = LearnerState::load(dir, w.corpus);
    const auto a = train_task(cfg, w.tasks[1], w.corpus.images, live);
    const auto b = train_task(cfg, w.tasks[1], w.corpus.images, restored);
    REQUIRE(a.steps.size() == b.steps.size());
    for (std::size_t i = 0; i < a.steps.size(); ++i) CHECK(a.steps[i].report.total == b.steps[i].report.total);
    CHECK(live.model.weights_hash() == restored.model.weights_hash());
    CHECK(live.events.size() == restored.events.size());
    fs::remove_all(dir);
  }
}
