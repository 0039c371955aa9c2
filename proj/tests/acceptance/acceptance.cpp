// Acceptance checks 1-10. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails. Experiment-backed criteria keep their runs
// under --work and reuse finished runs on a second invocation.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "CLI11.hpp"
#include "dietcl/harness.hpp"
#include "dietcl/losses.hpp"

namespace fs = std::filesystem;
using namespace dietcl;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

struct Context {
  fs::path work;
  ExperimentConfig desk;
  int jobs = 1;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string join(const std::vector<double>& xs, const char* f = "%.3f") {
  std::string out;
  for (double x : xs) out += (out.empty() ? "" : ",") + fmt(f, x);
  return out;
}

RunOptions resumable() {
  RunOptions o;
  o.resume = true;
  return o;
}

const std::vector<Method> kMethods{Method::dietcl, Method::er,  Method::er_ace,    Method::gdumb,
                                   Method::ewc,    Method::mas, Method::one_stage, Method::two_stage};

// One desk run per method at seed 0, shared by criteria 1 and 3.
std::vector<RunRecord> method_runs(Context& ctx) {
  static std::vector<RunRecord> runs;
  if (!runs.empty()) return runs;
  ExperimentConfig base = with_seed(ctx.desk, 0);
  base.seeds = {0};
  base.sweep = SweepAxes{};
  for (Method m : kMethods) base.sweep.method.push_back(to_string(m));
  runs = run_sweep(base, ctx.work / "methods", resumable(), ctx.jobs);
  return runs;
}

// ---------------------------------------------------------------------------

Verdict budget_exactness(Context& ctx) {
  std::ostringstream why;
  bool ok = true;
  for (const auto& r : method_runs(ctx)) {
    const std::string m = r.tags.at("method");
    const auto budget = ctx.desk.trainer.per_task_budget;
    if (r.ledgers.size() != static_cast<std::size_t>(ctx.desk.stream.num_tasks)) {
      ok = false;
      why << m << ": " << r.ledgers.size() << " ledgers; ";
      continue;
    }
    for (const auto& l : r.ledgers) {
      if (l.spent() != budget) {
        ok = false;
        why << m << ": spent " << l.spent() << " of " << budget << "; ";
      }
    }
    if (m == "ewc" || m == "mas") {
      TrainerConfig tc = ctx.desk.trainer;
      for (const auto& l : r.ledgers) {
        if (l.spent_in("importance") != tc.importance_passes()) {
          ok = false;
          why << m << ": importance units " << l.spent_in("importance") << "; ";
        }
      }
    }
  }
  BudgetAccountant dual(1000);
  dual.charge("contrastive", OpKind::dual_view_step, 100);
  if (dual.spent() != 200) {
    ok = false;
    why << "dual-view charge wrong; ";
  }
  BudgetAccountant full(500);
  full.charge("p", OpKind::single_view_step, 500);
  bool rejected = false;
  try {
    full.charge("p", OpKind::single_view_step, 1);
  } catch (const BudgetExhausted&) {
    rejected = full.spent() == 500;
  }
  ok = ok && rejected;
  if (ok) why << kMethods.size() << " methods x " << ctx.desk.stream.num_tasks << " tasks spend exactly "
              << ctx.desk.trainer.per_task_budget << " units; dual-view=2, importance passes ledgered";
  return {ok, why.str()};
}

// Independent scalar oracles for the losses.
using MatD = MatrixT<double>;

double ce_row(const std::vector<double>& z, std::size_t y) {
  double m = -1e300;
  for (double v : z) m = std::max(m, v);
  double s = 0;
  for (double v : z) s += std::exp(v - m);
  return std::log(s) + m - z[y];
}

Verdict loss_oracles(Context&) {
  Rng rng(2024);
  auto normal_matrix = [&](int r, int c) {
    MatD m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = 3.0 * standard_normal(rng);
    return m;
  };
  double worst_mask = 0;
  for (int inst = 0; inst < 1000; ++inst) {
    const int rows = 1 + static_cast<int>(uniform_index(rng, 6));
    const int cols = 2 + static_cast<int>(uniform_index(rng, 9));
    const MatD z = normal_matrix(rows, cols);
    std::vector<int> perm(static_cast<std::size_t>(cols));
    std::iota(perm.begin(), perm.end(), 0);
    shuffle_in_place(perm, rng);
    std::vector<int> active(perm.begin(), perm.begin() + 1 + static_cast<long>(uniform_index(rng, cols)));
    std::sort(active.begin(), active.end());
    std::vector<int> labels;
    for (int r = 0; r < rows; ++r) labels.push_back(active[uniform_index(rng, active.size())]);
    double oracle = 0;
    for (int r = 0; r < rows; ++r) {
      std::vector<double> kept;
      std::size_t y = 0;
      for (int c : active) {
        if (c == labels[static_cast<std::size_t>(r)]) y = kept.size();
        kept.push_back(z(r, c));
      }
      oracle += ce_row(kept, y);
    }
    oracle /= rows;
    const double got = masked_classification_loss<double>(z, labels, ClassMask{active}, rows).value;
    worst_mask = std::max(worst_mask, std::abs(got - oracle));
  }

  double worst_mse = 0;
  for (int inst = 0; inst < 200; ++inst) {
    const int rows = static_cast<int>(uniform_index(rng, 5)), cols = 1 + static_cast<int>(uniform_index(rng, 20));
    const MatD p = normal_matrix(rows, cols), t = normal_matrix(rows, cols);
    double s = 0;
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) s += (p(i, j) - t(i, j)) * (p(i, j) - t(i, j));
    }
    const double oracle = rows == 0 ? 0.0 : s / (rows * cols);
    worst_mse = std::max(worst_mse, std::abs(reconstruction_loss<double>(p, t).value - oracle));
  }

  double worst_joint = 0;
  for (int inst = 0; inst < 100; ++inst) {
    LossConfig cfg;
    cfg.alpha_r = 100.0 * uniform01(rng);
    const double r = uniform01(rng), m = uniform01(rng), b = uniform01(rng);
    worst_joint = std::max(worst_joint, std::abs(joint_loss(r, m, b, cfg) - (cfg.alpha_r * r + m + b)));
  }

  // Central differences on 100 random tensors for each differentiable loss,
  // scored per tensor as |analytic - numeric| / (|analytic| + |numeric|).
  double worst_grad = 0;
  const double h = 1e-6;
  for (int inst = 0; inst < 100; ++inst) {
    const int rows = 1 + static_cast<int>(uniform_index(rng, 4)), cols = 2 + static_cast<int>(uniform_index(rng, 6));
    MatD z = normal_matrix(rows, cols);
    const MatD t = normal_matrix(rows, cols);
    std::vector<int> labels, all_labels;
    std::vector<int> active{0, cols - 1};
    for (int r = 0; r < rows; ++r) {
      labels.push_back(active[uniform_index(rng, 2)]);
      all_labels.push_back(static_cast<int>(uniform_index(rng, cols)));
    }
    const std::vector<std::function<LossValue<double>(const MatD&)>> fns{
        [&](const MatD& x) { return masked_classification_loss<double>(x, labels, ClassMask{active}, rows); },
        [&](const MatD& x) { return buffer_loss<double>(x, all_labels, rows); },
        [&](const MatD& x) { return reconstruction_loss<double>(x, t); }};
    for (const auto& f : fns) {
      const MatD g = f(z).grad;
      MatD numeric(z.rows(), z.cols());
      for (Eigen::Index i = 0; i < z.size(); ++i) {
        const double keep = z.data()[i];
        z.data()[i] = keep + h;
        const double up = f(z).value;
        z.data()[i] = keep - h;
        const double down = f(z).value;
        z.data()[i] = keep;
        numeric.data()[i] = (up - down) / (2 * h);
      }
      const double scale = g.norm() + numeric.norm();
      if (scale > 0) worst_grad = std::max(worst_grad, (g - numeric).norm() / scale);
    }
  }
  const bool ok = worst_mask <= 1e-6 && worst_mse <= 1e-12 && worst_joint <= 1e-12 && worst_grad < 1e-4;
  return {ok, "masked-CE max err " + fmt("%.2e", worst_mask) + " (1000 inst), MSE max err " + fmt("%.2e", worst_mse) +
                  ", joint max err " + fmt("%.2e", worst_joint) + ", grad max rel err " + fmt("%.2e", worst_grad)};
}

std::vector<std::vector<std::string>> read_tsv(const fs::path& file) {
  std::vector<std::vector<std::string>> rows;
  std::ifstream in(file);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, '\t')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

Verdict algorithm_order(Context& ctx) {
  const RunRecord* run = nullptr;
  const auto& runs = method_runs(ctx);
  for (const auto& r : runs) {
    if (r.tags.at("method") == "dietcl") run = &r;
  }
  if (!run) return {false, "no DietCL run"};
  std::map<int, std::vector<std::string>> events;
  for (const auto& row : read_tsv(run->dir / "events.tsv")) {
    if (row.size() >= 2) events[std::stoi(row[0])].push_back(row[1]);
  }
  const std::vector<std::string> expected{"expand_head", "buffer_update", "split_budget", "joint_phase",
                                          "finetune_phase"};
  std::ostringstream why;
  bool ok = events.size() == static_cast<std::size_t>(ctx.desk.stream.num_tasks);
  for (const auto& [t, names] : events) {
    if (names != expected) {
      ok = false;
      why << "task " << t << " event order differs; ";
    }
  }
  const auto B = ctx.desk.trainer.per_task_budget, thr = ctx.desk.trainer.threshold;
  for (std::size_t t = 0; t < run->ledgers.size(); ++t) {
    const auto& l = run->ledgers[t];
    if (l.spent_in("joint") != std::min(B, thr) || l.spent_in("finetune") != B - std::min(B, thr)) {
      ok = false;
      why << "task " << t << " split " << l.spent_in("joint") << "/" << l.spent_in("finetune") << "; ";
    }
    for (const auto& e : l.ledger()) {
      if (e.phase == "finetune" && e.composition.rfind("m=", 0) != 0) {
        ok = false;
        why << "finetune batch with " << e.composition << "; ";
      }
    }
  }
  if (ok) why << "per task: expand_head > buffer_update > split_budget > joint(" << std::min(B, thr) << ") > finetune("
              << B - std::min(B, thr) << "), finetune batches buffer-only";
  return {ok, why.str()};
}

Verdict buffer_properties(Context& ctx) {
  std::ostringstream why;
  bool ok = true;
  const PreparedData data = prepare_data(ctx.desk);
  BalancedBuffer buf;
  std::size_t expected = 0;
  for (const auto& t : data.tasks) {
    buf.update(t);
    expected += t.labeled.size();
  }
  if (buf.size() != expected) {
    ok = false;
    why << "stored " << buf.size() << " != " << expected << "; ";
  }
  Rng rng(77);
  const int batches = 10000;
  const std::size_t b = 16;
  std::map<int, double> counts;
  for (int i = 0; i < batches; ++i) {
    for (const auto& e : buf.sample_balanced(b, rng)) counts[e.task] += 1;
  }
  const double n = static_cast<double>(batches * b), p = 1.0 / static_cast<double>(counts.size());
  double worst_z = 0;
  for (const auto& [t, c] : counts) worst_z = std::max(worst_z, std::abs(c - n * p) / std::sqrt(n * p * (1 - p)));
  ok = ok && worst_z <= 3.0 && counts.size() == data.tasks.size();

  const int items = 10, trials = 10000;
  std::vector<double> hits(items, 0.0);
  for (int trial = 0; trial < trials; ++trial) {
    ReservoirBuffer r(1, derive_seed(5, "trial" + std::to_string(trial)));
    for (int i = 0; i < items; ++i) {
      Example ex;
      ex.id = std::to_string(i);
      ex.label = 0;
      r.offer(ex, 0);
    }
    hits[static_cast<std::size_t>(std::stoi(r.slots().front().id))] += 1;
  }
  double chi2 = 0;
  for (double h : hits) chi2 += (h - trials / double(items)) * (h - trials / double(items)) / (trials / double(items));
  const double pval = boost::math::cdf(boost::math::complement(boost::math::chi_squared(items - 1), chi2));
  ok = ok && pval > 0.01;
  why << "stored " << buf.size() << " = sum of labels; balanced max |z| " << fmt("%.2f", worst_z)
      << " over 10k batches; reservoir chi2 p=" << fmt("%.3f", pval);
  return {ok, why.str()};
}

Verdict metric_formulas(Context& ctx) {
  std::ostringstream why;
  bool ok = true;
  const std::vector<int> pred{1, 2, 3, 4, 5}, truth{1, 2, 3, 0, 0};
  ok = ok && accuracy_of(pred, truth) == 0.6;
  ok = ok && average_seen_accuracy(std::vector<double>{0.5, 0.7}) == (0.5 + 0.7) / 2;
  ok = ok && stream_average(std::vector<double>{1.0, 0.5}) == 0.75;
  // a_t from a stored run equals the mean of its per-task accuracies, and
  // the stream average equals the mean of the a_t values.
  const auto& runs = method_runs(ctx);
  double worst = 0;
  for (const auto& r : runs) {
    double sum_a = 0;
    for (const auto& e : r.evals) {
      double s = 0;
      for (const auto& [k, a] : e.per_task_accuracy) s += a;
      worst = std::max(worst, std::abs(e.a_t - s / static_cast<double>(e.per_task_accuracy.size())));
      sum_a += e.a_t;
    }
    worst = std::max(worst, std::abs(r.average_accuracy() - sum_a / static_cast<double>(r.evals.size())));
  }
  ok = ok && worst == 0.0;

  const PreparedData data = prepare_data(ctx.desk);
  ModelConfig mc = ctx.desk.model;
  mc.image = data.corpus.shape;
  ModelBundle m(mc, 3);
  Rng rng(4);
  m.expand_classification_head(data.tasks[0].classes, rng);
  std::vector<std::size_t> idx;
  for (const auto& e : data.tasks[0].test) idx.push_back(e.image);
  const Matrix x = gather_patches(data.corpus.images, idx, mc);
  const Matrix before = m.forward_classify(x);
  m.expand_classification_head(data.tasks[1].classes, rng);
  const Matrix after = m.forward_classify(x);
  const bool exact = (after.leftCols(before.cols()).array() == before.array()).all();
  ok = ok && exact;
  why << "hand values exact; stored a_t/A-bar recompute with max err " << fmt("%.1e", worst) << "; head expansion "
      << (exact ? "bit-exact" : "CHANGED old logits") << " on " << idx.size() << " images";
  return {ok, why.str()};
}

// ---------------------------------------------------------------------------
// Experiment-backed criteria.

using Table = std::map<std::string, std::map<std::int64_t, std::map<std::uint64_t, double>>>;

Table abar_table(const std::vector<RunRecord>& records) {
  Table t;
  for (const auto& r : records) {
    t[r.tags.at("method")][std::stoll(r.tags.at("budget"))][std::stoull(r.tags.at("seed"))] = r.average_accuracy();
  }
  return t;
}

double mean_over(const std::map<std::uint64_t, double>& by_seed) {
  double s = 0;
  for (const auto& [k, v] : by_seed) s += v;
  return s / static_cast<double>(by_seed.size());
}

Verdict budget_curves(Context& ctx) {
  ExperimentConfig cfg = ctx.desk;
  cfg.sweep = SweepAxes{};
  cfg.sweep.method = {"er", "dietcl"};
  cfg.sweep.budget = {50, 100, 200, 400, 800};
  const auto records = run_sweep(cfg, ctx.work / "budget_sweep", resumable(), ctx.jobs);
  emit_figures(records, ctx.work / "budget_sweep" / "figures");
  const Table t = abar_table(records);
  std::vector<double> er, diet;
  for (auto b : cfg.sweep.budget) {
    er.push_back(mean_over(t.at("er").at(b)));
    diet.push_back(mean_over(t.at("dietcl").at(b)));
  }
  const auto peak = std::max_element(er.begin(), er.end());
  const bool er_peaks = peak != er.end() - 1 && er.back() < *peak - 0.01;
  bool diet_monotone = true;
  for (std::size_t i = 1; i < diet.size(); ++i) diet_monotone = diet_monotone && diet[i] >= diet[i - 1] - 0.01;
  int wins = 0;
  const auto top = cfg.sweep.budget.back();
  for (const auto& [seed, a] : t.at("dietcl").at(top)) wins += a >= t.at("er").at(top).at(seed) ? 1 : 0;
  const int seeds = static_cast<int>(t.at("dietcl").at(top).size());
  const bool ok = er_peaks && diet_monotone && 3 * wins >= 2 * seeds;
  std::ostringstream why;
  why << "mean A-bar over budgets 50..800: ER " << join(er) << (er_peaks ? " (peaks, declines)" : " (no decline)")
      << "; DietCL " << join(diet) << (diet_monotone ? " (monotone)" : " (not monotone)") << "; DietCL>=ER at "
      << top << " in " << wins << "/" << seeds << " seeds";
  return {ok, why.str()};
}

Verdict stability_gap(Context& ctx) {
  ExperimentConfig cfg = ctx.desk;
  cfg.probe.enabled = true;
  cfg.probe.task = 2;
  cfg.probe.every = 2;
  cfg.sweep = SweepAxes{};
  cfg.sweep.method = {"er", "dietcl"};
  // 300 of a 500-step budget, scaled to the desk budget.
  cfg.sweep.budget = {std::lround(0.6 * static_cast<double>(ctx.desk.trainer.per_task_budget))};
  const auto records = run_sweep(cfg, ctx.work / "stability", resumable(), ctx.jobs);
  emit_figures(records, ctx.work / "stability" / "figures");
  std::map<std::string, std::map<std::string, double>> dip;
  for (const auto& r : records) {
    if (!r.trace) return {false, "run " + r.run_id + " has no probe trace"};
    dip[r.tags.at("method")][r.tags.at("seed")] = dip_statistic(*r.trace, 0);
  }
  int wins = 0;
  std::vector<double> er, diet;
  for (const auto& [seed, d] : dip.at("er")) {
    er.push_back(d);
    diet.push_back(dip.at("dietcl").at(seed));
    wins += d > dip.at("dietcl").at(seed) ? 1 : 0;
  }
  const int seeds = static_cast<int>(er.size());
  return {3 * wins >= 2 * seeds, "task-0 dip during task 2 at budget " + std::to_string(cfg.sweep.budget.front()) +
                                     ": ER " + join(er) + " vs DietCL " + join(diet) + "; ER deeper in " +
                                     std::to_string(wins) + "/" + std::to_string(seeds) + " seeds"};
}

Verdict ablation_order(Context& ctx) {
  ExperimentConfig cfg = ctx.desk;
  cfg.sweep = SweepAxes{};
  const auto records = ablation_matrix(cfg, ctx.work / "ablation", resumable(), ctx.jobs);
  emit_figures(records, ctx.work / "ablation" / "figures");
  std::map<std::string, std::map<std::string, double>> a;
  for (const auto& r : records) a[r.tags.at("ablation")][r.tags.at("seed")] = r.average_accuracy();
  auto mean = [&](const std::string& row) {
    double s = 0;
    for (const auto& [k, v] : a.at(row)) s += v;
    return s / static_cast<double>(a.at(row).size());
  };
  const auto& order = ablation_orders().front();
  std::vector<double> means;
  bool nondecreasing = true;
  for (std::size_t i = 0; i < order.size(); ++i) {
    means.push_back(mean(order[i]));
    if (i > 0) nondecreasing = nondecreasing && means[i] >= means[i - 1];
  }
  int best = 0;
  for (const auto& [seed, full] : a.at("full")) {
    bool strictly = true;
    for (const auto& [row, by_seed] : a) {
      if (row != "full") strictly = strictly && full > by_seed.at(seed);
    }
    best += strictly ? 1 : 0;
  }
  const int seeds = static_cast<int>(a.at("full").size());
  std::ostringstream why;
  why << "mean A-bar";
  for (std::size_t i = 0; i < order.size(); ++i) why << (i ? " > " : " ") << order[i] << " " << fmt("%.3f", means[i]);
  why << "; full strictly best in " << best << "/" << seeds << " seeds; other orders:";
  for (std::size_t k = 1; k < ablation_orders().size(); ++k) {
    why << " [";
    for (const auto& row : ablation_orders()[k]) why << row << " " << fmt("%.3f", mean(row)) << " ";
    why << "]";
  }
  return {nondecreasing && 3 * best >= 2 * seeds, why.str()};
}

Verdict threshold_consistency(Context& ctx) {
  const auto B = ctx.desk.trainer.per_task_budget;
  // Candidates at the same fractions of the budget as 300..450 of 500.
  std::vector<std::int64_t> candidates;
  for (double f : {0.6, 0.7, 0.8, 0.9}) candidates.push_back(static_cast<std::int64_t>(std::lround(f * B)));
  const ThresholdStudy study = threshold_study(with_seed(ctx.desk, 0), candidates, {1, 2, 3});
  std::map<std::int64_t, int> votes;
  for (const auto& [k, c] : study.selected) ++votes[c];
  int top = 0;
  for (const auto& [c, n] : votes) top = std::max(top, n);
  std::ostringstream why;
  for (const auto& [c, curve] : study.accuracy) why << c << ": " << join(curve) << "; ";
  why << "selected";
  for (const auto& [k, c] : study.selected) why << " k=" << k << "->" << c;
  return {top >= 2, why.str()};
}

Verdict determinism_resume(Context& ctx) {
  ExperimentConfig cfg = with_seed(ctx.desk, 0);
  cfg.sweep = SweepAxes{};
  cfg.seeds = {0};
  cfg.name = "determinism";
  const fs::path root = ctx.work / "determinism";
  fs::remove_all(root);
  const RunRecord a = run_experiment(cfg, root / "a");
  const RunRecord b = run_experiment(cfg, root / "b");
  RunOptions stop;
  stop.stop_after = 2;
  run_experiment(cfg, root / "c", stop);
  const RunRecord c = run_experiment(cfg, root / "c", resumable());
  const bool same = a.metrics_hash == b.metrics_hash;
  const bool resumed = c.metrics_hash == a.metrics_hash && c.evals.size() == a.evals.size();
  std::ostringstream why;
  why << "metric stream hash " << std::hex << a.metrics_hash << (same ? " repeated" : " NOT repeated")
      << "; resume after task 2 " << (resumed ? "matches" : "DIFFERS");
  return {same && resumed, why.str()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DietCL acceptance checks"};
  std::string work = "acceptance_work";
  std::string config = std::string(DIETCL_SOURCE_DIR) + "/configs/desk.json";
  std::vector<int> only;
  int jobs = 1;
  app.add_option("--work", work, "directory for experiment runs")->capture_default_str();
  app.add_option("--config", config, "desk experiment config")->capture_default_str();
  app.add_option("--only", only, "run only these criteria");
  app.add_option("-j,--jobs", jobs, "concurrent runs")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  Context ctx;
  ctx.work = work;
  ctx.jobs = jobs;
  try {
    ctx.desk = load_config(config);
    ctx.desk.validate();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "cannot load %s: %s\n", config.c_str(), e.what());
    return 2;
  }
  fs::create_directories(ctx.work);

  const std::vector<std::pair<const char*, std::function<Verdict(Context&)>>> criteria{
      {"budget exactness", budget_exactness},
      {"loss oracles", loss_oracles},
      {"algorithm order", algorithm_order},
      {"buffer statistics", buffer_properties},
      {"metric formulas", metric_formulas},
      {"budget curves", budget_curves},
      {"stability gap", stability_gap},
      {"ablation ordering", ablation_order},
      {"threshold consistency", threshold_consistency},
      {"determinism and resume", determinism_resume},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Verdict v;
    try {
      v = criteria[i].second(ctx);
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failed += v.pass ? 0 : 1;
    std::printf("%s %2d %s: %s\n", v.pass ? "PASS" : "FAIL", id, criteria[i].first, v.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
