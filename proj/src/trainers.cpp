#include "dietcl/trainers.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

namespace dietcl {

std::string to_string(Method method) {
  switch (method) {
    case Method::dietcl: return "dietcl";
    case Method::er: return "er";
    case Method::er_ace: return "er_ace";
    case Method::gdumb: return "gdumb";
    case Method::ewc: return "ewc";
    case Method::mas: return "mas";
    case Method::one_stage: return "one_stage";
    case Method::two_stage: return "two_stage";
  }
  return "unknown";
}

Method method_from_string(const std::string& name) {
  for (Method m : {Method::dietcl, Method::er, Method::er_ace, Method::gdumb, Method::ewc, Method::mas,
                   Method::one_stage, Method::two_stage}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown method '" + name + "'");
}

std::int64_t TrainerConfig::importance_passes() const {
  const std::int64_t n = importance_batches >= 0 ? importance_batches : std::min<std::int64_t>(50, per_task_budget / 10);
  return std::min(n, per_task_budget);
}

void TrainerConfig::validate() const {
  if (per_task_budget < 1) throw ConfigError("per_task_budget must be >= 1");
  if (threshold < 1) throw ConfigError("threshold must be >= 1");
  if (reference_batch < 2) throw ConfigError("reference_batch must be >= 2");
  if (effective_batch < reference_batch || effective_batch % reference_batch != 0) {
    throw ConfigError("effective_batch must be a positive multiple of reference_batch");
  }
  if (!(base_lr > 0.0)) throw ConfigError("base_lr must be positive");
  if (alpha_r < 0.0) throw ConfigError("alpha_r must be >= 0");
  if (two_stage_fraction < 0.0 || two_stage_fraction > 1.0) throw ConfigError("two_stage_fraction must lie in [0, 1]");
  if (ewc_lambda < 0.0 || mas_lambda < 0.0) throw ConfigError("regularisation strengths must be >= 0");
}

std::vector<int> labeled_classes(const StreamTask& task) {
  std::set<int> classes;
  for (const auto& ex : task.labeled) classes.insert(*ex.label);
  return {classes.begin(), classes.end()};
}

LearnerState::LearnerState(ModelBundle start, const TrainerConfig& cfg)
    : model(start),
      initial(std::move(start)),
      optimizer(cfg.adamw),
      reservoir(cfg.reservoir_capacity, derive_seed(cfg.seed, "reservoir")),
      rng(derive_seed(cfg.seed, "sampling")),
      head_rng(derive_seed(cfg.seed, "head")) {}

namespace {

void write_named_matrices(const std::filesystem::path& file, const std::map<std::string, Matrix>& mats) {
  std::ofstream out(file, std::ios::binary);
  const std::uint64_t n = mats.size();
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  for (const auto& [name, m] : mats) {
    const std::uint64_t len = name.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(name.data(), static_cast<std::streamsize>(len));
    write_matrix(out, m);
  }
}

std::map<std::string, Matrix> read_named_matrices(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw InputError("cannot read " + file.string());
  std::map<std::string, Matrix> mats;
  std::uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof(n));
  for (std::uint64_t i = 0; in && i < n; ++i) {
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string name(len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(len));
    mats.emplace(std::move(name), read_matrix(in));
  }
  return mats;
}

}  // namespace

void LearnerState::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  model.save(dir / "model.ckpt");
  initial.save(dir / "initial.ckpt");
  {
    std::ofstream out(dir / "optimizer.bin", std::ios::binary);
    optimizer.save(out);
  }
  buffer.save(dir / "buffer.tsv");
  reservoir.save(dir / "reservoir.tsv");
  {
    std::ofstream out(dir / "rng.txt");
    out << rng << '\n' << head_rng << '\n';
  }
  write_named_matrices(dir / "importance.bin", importance);
  write_named_matrices(dir / "anchor.bin", anchor);
  std::ofstream out(dir / "events.tsv");
  for (const auto& e : events) out << e.task << '\t' << e.name << '\t' << e.detail << '\n';
}

LearnerState LearnerState::load(const std::filesystem::path& dir, const Corpus& corpus) {
  LearnerState st;
  st.model = ModelBundle::load(dir / "model.ckpt");
  st.initial = ModelBundle::load(dir / "initial.ckpt");
  {
    std::ifstream in(dir / "optimizer.bin", std::ios::binary);
    if (!in) throw InputError("missing optimizer state in " + dir.string());
    st.optimizer.load(in);
  }
  st.buffer = BalancedBuffer::load(dir / "buffer.tsv", corpus);
  st.reservoir = ReservoirBuffer::load(dir / "reservoir.tsv", corpus);
  {
    std::ifstream in(dir / "rng.txt");
    if (!in) throw InputError("missing generator state in " + dir.string());
    in >> st.rng >> st.head_rng;
  }
  st.importance = read_named_matrices(dir / "importance.bin");
  st.anchor = read_named_matrices(dir / "anchor.bin");
  std::ifstream in(dir / "events.tsv");
  for (std::string line; std::getline(in, line);) {
    std::istringstream fields(line);
    TrainerEvent e;
    std::string task;
    std::getline(fields, task, '\t');
    std::getline(fields, e.name, '\t');
    std::getline(fields, e.detail);
    e.task = std::stoi(task);
    st.events.push_back(std::move(e));
  }
  return st;
}

namespace {

/// Endless shuffled pass over [0, n): reshuffles at every epoch boundary.
class Cursor {
 public:
  Cursor(std::size_t n, Rng& rng) : order_(n) {
    std::iota(order_.begin(), order_.end(), 0);
    shuffle_in_place(order_, rng);
  }

  std::vector<std::size_t> next(std::size_t count, Rng& rng) {
    std::vector<std::size_t> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count && !order_.empty(); ++i) {
      if (pos_ == order_.size()) {
        shuffle_in_place(order_, rng);
        pos_ = 0;
        ++epochs_;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

  bool empty() const { return order_.empty(); }

 private:
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  std::size_t epochs_ = 0;
};

struct Batch {
  std::vector<std::size_t> images;
  std::vector<int> labels;  // class ids
};

Batch batch_of(const std::vector<Example>& pool, const std::vector<std::size_t>& picks) {
  Batch b;
  for (auto i : picks) {
    b.images.push_back(pool[i].image);
    b.labels.push_back(pool[i].label.value_or(-1));
  }
  return b;
}

Batch batch_of(const std::vector<BufferEntry>& entries) {
  Batch b;
  for (const auto& e : entries) {
    b.images.push_back(e.image);
    b.labels.push_back(e.label);
  }
  return b;
}

std::string composition(int l, int u, int m) {
  std::string out;
  const auto add = [&](const char* key, int n) {
    if (n <= 0) return;
    if (!out.empty()) out += ',';
    out += key;
    out += '=';
    out += std::to_string(n);
  };
  add("l", l);
  add("u", u);
  add("m", m);
  return out;
}

/// One task of training for any method.
class TaskRun {
 public:
  TaskRun(const TrainerConfig& cfg, const StreamTask& task, const ImageStore& images, LearnerState& st,
          const StepHook& hook)
      : cfg_(cfg), task_(task), images_(images), st_(st), hook_(hook) {
    outcome_.task = task.index;
    outcome_.ledger = BudgetAccountant(cfg.per_task_budget);
    loss_cfg_.alpha_r = cfg.alpha_r;
    loss_cfg_.reduction = cfg.reduction;
  }

  TaskOutcome run() {
    const auto start = std::chrono::steady_clock::now();
    switch (cfg_.method) {
      case Method::dietcl: dietcl(); break;
      case Method::er:
      case Method::er_ace: er(); break;
      case Method::gdumb: gdumb(); break;
      case Method::ewc:
      case Method::mas: regularised(); break;
      case Method::one_stage: one_stage(); break;
      case Method::two_stage: two_stage(); break;
    }
    outcome_.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return std::move(outcome_);
  }

 private:
  int rows() const { return cfg_.reference_batch; }

  void event(const std::string& name, const std::string& detail = {}) {
    st_.events.push_back(TrainerEvent{task_.index, name, detail});
  }

  void expand_head() {
    const auto classes = labeled_classes(task_);
    const int before = st_.model.num_outputs();
    const int added = st_.model.expand_classification_head(classes, st_.head_rng, cfg_.recurring_classes);
    event("expand_head", std::to_string(before) + "+" + std::to_string(added));
  }

  void update_buffer() {
    st_.buffer.update(task_);
    event("buffer_update", std::to_string(task_.labeled.size()) + " labels, " + std::to_string(st_.buffer.size()) +
                               " stored");
  }

  void probe_start() {
    if (hook_.on_step) hook_.on_step(st_.model, 0);
  }

  ClassMask current_mask() const { return st_.model.mask_for(labeled_classes(task_)); }

  std::vector<int> columns(const std::vector<int>& labels) const {
    std::vector<int> cols;
    cols.reserve(labels.size());
    for (int y : labels) cols.push_back(st_.model.column_of(y));
    return cols;
  }

  /// Forward + backward of a cross-entropy term; returns its value.
  double classify_pass(const Batch& batch, const ClassMask* mask, int normalizer, double grad_scale) {
    if (batch.images.empty()) return 0.0;
    const Matrix patches = gather_patches(images_, batch.images, st_.model.config());
    ClassifyCache cache;
    const Matrix logits = st_.model.forward_classify(patches, &cache);
    const auto cols = columns(batch.labels);
    const LossValue<float> loss = mask ? masked_classification_loss<float>(logits, cols, *mask, normalizer)
                                       : buffer_loss<float>(logits, cols, normalizer);
    st_.model.backward_classify(loss.grad * static_cast<float>(grad_scale), cache);
    return loss.value;
  }

  /// Forward + backward of the masked reconstruction term scaled by `weight`.
  double reconstruct_pass(const std::vector<std::size_t>& image_ids, double weight, double grad_scale) {
    if (image_ids.empty()) return 0.0;
    const MaskedBatch mb =
        make_masked_batch(images_, image_ids, st_.model.config(), st_.model.config().mask_ratio, st_.rng);
    ReconstructCache cache;
    const Matrix pred = st_.model.forward_reconstruct(mb, &cache);
    const LossValue<float> loss = reconstruction_loss<float>(pred, mb.targets, cfg_.reduction);
    if (weight > 0.0 && pred.size() > 0) {
      st_.model.backward_reconstruct(loss.grad * static_cast<float>(weight * grad_scale), mb, cache);
    }
    return loss.value;
  }

  struct PassResult {
    LossReport report;
    std::string composition;
  };

  /// Runs up to `units` units of optimizer updates. `pass(grad_scale)` does one
  /// forward-backward at the reference batch; `penalty()` may add gradient
  /// terms once per update and returns their value.
  template <typename Pass, typename Penalty>
  void run_phase(const std::string& phase, std::int64_t units, Pass&& pass, Penalty&& penalty) {
    const int accum = cfg_.accumulation_steps();
    const std::int64_t updates = units / accum;
    const CosineSchedule schedule{cfg_.peak_lr(), updates};
    auto params = st_.model.parameters();
    for (std::int64_t s = 0; s < updates; ++s) {
      if (!outcome_.ledger.can_afford(OpKind::single_view_step, accum)) break;
      st_.model.zero_grad();
      LossReport sum;
      std::string comp;
      for (int a = 0; a < accum; ++a) {
        PassResult r = pass(1.0 / accum);
        sum.l_r += r.report.l_r / accum;
        sum.l_m += r.report.l_m / accum;
        sum.l_b += r.report.l_b / accum;
        sum.total += r.report.total / accum;
        sum.n_labeled += r.report.n_labeled;
        sum.n_unlabeled += r.report.n_unlabeled;
        sum.n_buffer += r.report.n_buffer;
        comp = std::move(r.composition);
      }
      sum.total += penalty();
      if (!std::isfinite(sum.total)) throw NumericalError("total", "non-finite loss in phase " + phase);
      const double lr = schedule.at(s);
      st_.optimizer.step(params, lr);
      outcome_.ledger.charge(phase, OpKind::single_view_step, accum, comp);
      outcome_.steps.push_back(StepRecord{task_.index, phase, step_, lr, sum});
      ++step_;
      if (hook_.on_step && hook_.every > 0 && step_ % hook_.every == 0) hook_.on_step(st_.model, step_);
    }
  }

  template <typename Pass>
  void run_phase(const std::string& phase, std::int64_t units, Pass&& pass) {
    run_phase(phase, units, std::forward<Pass>(pass), [] { return 0.0; });
  }

  PassResult buffer_only_pass(double grad_scale, bool balanced, std::optional<int> exclude = std::nullopt) {
    const auto entries = balanced ? st_.buffer.sample_balanced(static_cast<std::size_t>(rows()), st_.rng, exclude)
                                  : st_.buffer.sample_uniform(static_cast<std::size_t>(rows()), st_.rng, exclude);
    PassResult r;
    r.report.l_b = classify_pass(batch_of(entries), nullptr, rows(), grad_scale);
    r.report.total = r.report.l_b;
    r.report.n_buffer = rows();
    r.composition = composition(0, 0, rows());
    return r;
  }

  // Algorithm order: expand head, update buffer, split budget, joint phase,
  // then buffer-only fine-tuning.
  void dietcl() {
    expand_head();
    update_buffer();
    outcome_.plan = split_budget(cfg_.per_task_budget, cfg_.threshold);
    event("split_budget", "joint=" + std::to_string(outcome_.plan.joint) +
                              " finetune=" + std::to_string(outcome_.plan.finetune));
    probe_start();

    const bool use_unlabeled = cfg_.alpha_r > 0.0;
    int b_l, b_m, b_u;
    if (use_unlabeled) {
      b_l = rows() / 3;
      b_m = rows() / 3;
      b_u = rows() - b_l - b_m;
    } else {
      b_l = rows() / 2;
      b_m = rows() - b_l;
      b_u = 0;
    }
    if (task_.unlabeled.empty()) b_u = 0;
    const ClassMask mask = current_mask();
    const std::optional<int> exclude =
        cfg_.buffer_includes_current ? std::nullopt : std::optional<int>(task_.index);
    Cursor labeled(task_.labeled.size(), st_.rng);
    Cursor unlabeled(task_.unlabeled.size(), st_.rng);

    event("joint_phase", "units=" + std::to_string(outcome_.plan.joint));
    run_phase("joint", outcome_.plan.joint, [&](double gs) {
      PassResult r;
      int n_l = 0, n_m = 0, n_u = 0;
      if (!labeled.empty()) {
        const Batch lab = batch_of(task_.labeled, labeled.next(static_cast<std::size_t>(b_l), st_.rng));
        r.report.l_m = classify_pass(lab, cfg_.mask_current ? &mask : nullptr, b_l, gs);
        n_l = b_l;
      }
      if (st_.buffer.nonempty_tasks(exclude) > 0) {
        const auto entries = cfg_.balanced_buffer
                                 ? st_.buffer.sample_balanced(static_cast<std::size_t>(b_m), st_.rng, exclude)
                                 : st_.buffer.sample_uniform(static_cast<std::size_t>(b_m), st_.rng, exclude);
        r.report.l_b = classify_pass(batch_of(entries), nullptr, b_m, gs);
        n_m = b_m;
      }
      if (b_u > 0) {
        std::vector<std::size_t> ids;
        for (auto i : unlabeled.next(static_cast<std::size_t>(b_u), st_.rng)) ids.push_back(task_.unlabeled[i].image);
        r.report.l_r = reconstruct_pass(ids, cfg_.alpha_r, gs);
        n_u = b_u;
      }
      r.report.total = joint_loss(r.report.l_r, r.report.l_m, r.report.l_b, loss_cfg_);
      r.report.n_labeled = n_l;
      r.report.n_unlabeled = n_u;
      r.report.n_buffer = n_m;
      r.composition = composition(n_l, n_u, n_m);
      return r;
    });

    if (!cfg_.keep_moments_between_phases) st_.optimizer.reset();
    event("finetune_phase", "units=" + std::to_string(outcome_.plan.finetune));
    run_phase("finetune", outcome_.plan.finetune, [&](double gs) { return buffer_only_pass(gs, cfg_.balanced_buffer); });
  }

  // Experience replay: half current labels, half replay, reservoir updates
  // during the first pass over the current labels.
  void er() {
    expand_head();
    probe_start();
    const bool ace = cfg_.method == Method::er_ace;
    const ClassMask mask = current_mask();
    Cursor labeled(task_.labeled.size(), st_.rng);
    std::vector<char> offered(task_.labeled.size(), 0);
    event("train_phase", "units=" + std::to_string(cfg_.per_task_budget));
    run_phase("train", cfg_.per_task_budget, [&](double gs) {
      const bool replay = !st_.reservoir.empty();
      int b_cur = labeled.empty() ? 0 : (replay ? rows() / 2 : rows());
      int b_buf = rows() - b_cur;
      if (!replay) b_buf = 0;
      PassResult r;
      const auto picks = labeled.next(static_cast<std::size_t>(b_cur), st_.rng);
      const Batch cur = batch_of(task_.labeled, picks);
      if (b_buf > 0) {
        const auto entries = cfg_.er_balanced ? st_.reservoir.sample_balanced(static_cast<std::size_t>(b_buf), st_.rng)
                                              : st_.reservoir.sample_uniform(static_cast<std::size_t>(b_buf), st_.rng);
        r.report.l_b = classify_pass(batch_of(entries), nullptr, ace ? b_buf : b_cur + b_buf, gs);
      }
      if (b_cur > 0) {
        r.report.l_m = ace ? classify_pass(cur, &mask, b_cur, gs) : classify_pass(cur, nullptr, b_cur + b_buf, gs);
      }
      for (auto i : picks) {
        if (!offered[i]) {
          offered[i] = 1;
          st_.reservoir.offer(task_.labeled[i], task_.index);
        }
      }
      r.report.total = r.report.l_m + r.report.l_b;
      r.report.n_labeled = b_cur;
      r.report.n_buffer = b_buf;
      r.composition = composition(b_cur, 0, b_buf);
      return r;
    });
  }

  // Re-initialise from the starting checkpoint, then learn from the balanced
  // buffer alone with logits restricted to the seen classes.
  void gdumb() {
    std::vector<int> seen = st_.model.seen_classes();
    for (int c : labeled_classes(task_)) {
      if (std::find(seen.begin(), seen.end(), c) == seen.end()) seen.push_back(c);
    }
    st_.model = st_.initial;
    st_.optimizer.reset();
    event("reinit", std::to_string(st_.model.backbone_hash()));
    Rng head_rng(derive_seed(cfg_.seed, "gdumb-head"));
    st_.model.expand_classification_head(seen, head_rng);
    event("expand_head", "0+" + std::to_string(seen.size()));
    update_buffer();
    probe_start();
    const ClassMask mask = st_.model.full_mask();
    event("train_phase", "units=" + std::to_string(cfg_.per_task_budget));
    run_phase("train", cfg_.per_task_budget, [&](double gs) {
      const auto entries = st_.buffer.sample_balanced(static_cast<std::size_t>(rows()), st_.rng);
      PassResult r;
      const Batch b = batch_of(entries);
      r.report.l_b = classify_pass(b, &mask, rows(), gs);
      r.report.total = r.report.l_b;
      r.report.n_buffer = rows();
      r.composition = composition(0, 0, rows());
      return r;
    });
  }

  std::vector<Parameter*> regularised_parameters() {
    auto params = st_.model.encoder_parameters();
    params.push_back(&st_.model.head_weight());
    params.push_back(&st_.model.head_bias());
    return params;
  }

  double apply_penalty(double lambda) {
    if (lambda <= 0.0 || st_.importance.empty()) return 0.0;
    double value = 0.0;
    for (Parameter* p : regularised_parameters()) {
      const auto imp = st_.importance.find(p->name);
      const auto anc = st_.anchor.find(p->name);
      if (imp == st_.importance.end() || anc == st_.anchor.end()) continue;
      const Eigen::Index r = std::min(imp->second.rows(), p->value.rows());
      const Eigen::Index c = std::min(imp->second.cols(), p->value.cols());
      const Matrix diff = p->value.topLeftCorner(r, c) - anc->second.topLeftCorner(r, c);
      const Matrix& f = imp->second;
      value += lambda * (f.topLeftCorner(r, c).array() * diff.array().square()).sum();
      Matrix g = Matrix::Zero(p->value.rows(), p->value.cols());
      g.topLeftCorner(r, c) = (2.0 * lambda) * (f.topLeftCorner(r, c).array() * diff.array()).matrix().cast<float>();
      p->accumulate(g);
    }
    return value;
  }

  // EWC / MAS: current labels only, quadratic pull towards earlier weights,
  // importance estimated after training and charged to this task.
  void regularised() {
    expand_head();
    probe_start();
    const bool ewc = cfg_.method == Method::ewc;
    const double lambda = ewc ? cfg_.ewc_lambda : cfg_.mas_lambda;
    const std::int64_t estimation = task_.labeled.empty() ? 0 : cfg_.importance_passes();
    const std::int64_t train_units = cfg_.per_task_budget - estimation;
    Cursor labeled(task_.labeled.size(), st_.rng);
    event("train_phase", "units=" + std::to_string(train_units));
    if (!labeled.empty()) {
      run_phase(
          "train", train_units,
          [&](double gs) {
            PassResult r;
            const Batch b = batch_of(task_.labeled, labeled.next(static_cast<std::size_t>(rows()), st_.rng));
            r.report.l_m = classify_pass(b, nullptr, rows(), gs);
            r.report.total = r.report.l_m;
            r.report.n_labeled = rows();
            r.composition = composition(rows(), 0, 0);
            return r;
          },
          [&] { return apply_penalty(lambda); });
    }

    event("importance_estimation", "passes=" + std::to_string(estimation));
    if (estimation == 0) return;
    auto params = regularised_parameters();
    std::map<std::string, Matrix> fresh;
    for (Parameter* p : params) fresh[p->name] = Matrix::Zero(p->value.rows(), p->value.cols());
    for (std::int64_t i = 0; i < estimation; ++i) {
      if (!outcome_.ledger.can_afford(OpKind::importance_estimation_step)) break;
      st_.model.zero_grad();
      const Batch b = batch_of(task_.labeled, labeled.next(static_cast<std::size_t>(rows()), st_.rng));
      const Matrix patches = gather_patches(images_, b.images, st_.model.config());
      ClassifyCache cache;
      const Matrix logits = st_.model.forward_classify(patches, &cache);
      if (ewc) {
        const LossValue<float> loss = buffer_loss<float>(logits, columns(b.labels), rows());
        st_.model.backward_classify(loss.grad, cache);
      } else {
        // Gradient of the mean squared L2 norm of the outputs.
        st_.model.backward_classify(logits * (2.0f / static_cast<float>(rows())), cache);
      }
      for (Parameter* p : params) {
        if (ewc) {
          fresh[p->name] += p->grad.cwiseAbs2();
        } else {
          fresh[p->name] += p->grad.cwiseAbs();
        }
      }
      outcome_.ledger.charge("importance", OpKind::importance_estimation_step, 1, composition(rows(), 0, 0));
    }
    st_.model.zero_grad();
    for (Parameter* p : params) {
      Matrix f = fresh[p->name] / static_cast<float>(estimation);
      auto& total = st_.importance[p->name];
      if (total.size() > 0) {
        f.topLeftCorner(std::min(total.rows(), f.rows()), std::min(total.cols(), f.cols())) +=
            total.topLeftCorner(std::min(total.rows(), f.rows()), std::min(total.cols(), f.cols()));
      }
      total = std::move(f);
      st_.anchor[p->name] = p->value;
    }
  }

  void one_stage() {
    expand_head();
    update_buffer();
    probe_start();
    event("train_phase", "units=" + std::to_string(cfg_.per_task_budget));
    run_phase("train", cfg_.per_task_budget, [&](double gs) { return buffer_only_pass(gs, false); });
  }

  // Reconstruction-only pre-training on current unlabeled data, then
  // supervised fine-tuning on the buffer.
  void two_stage() {
    expand_head();
    update_buffer();
    probe_start();
    const std::int64_t pretrain =
        task_.unlabeled.empty()
            ? 0
            : static_cast<std::int64_t>(std::floor(cfg_.two_stage_fraction * static_cast<double>(cfg_.per_task_budget)));
    // No shuffle when there is nothing to pre-train, so rho = 0 draws exactly
    // the batches of buffer-only training.
    Cursor unlabeled(pretrain > 0 ? task_.unlabeled.size() : 0, st_.rng);
    event("pretrain_phase", "units=" + std::to_string(pretrain));
    run_phase("pretrain", pretrain, [&](double gs) {
      std::vector<std::size_t> ids;
      for (auto i : unlabeled.next(static_cast<std::size_t>(rows()), st_.rng)) ids.push_back(task_.unlabeled[i].image);
      PassResult r;
      r.report.l_r = reconstruct_pass(ids, 1.0, gs);
      r.report.total = r.report.l_r;
      r.report.n_unlabeled = rows();
      r.composition = composition(0, rows(), 0);
      return r;
    });
    if (!cfg_.keep_moments_between_phases) st_.optimizer.reset();
    event("finetune_phase", "units=" + std::to_string(cfg_.per_task_budget - pretrain));
    run_phase("finetune", cfg_.per_task_budget - pretrain, [&](double gs) { return buffer_only_pass(gs, false); });
  }

  const TrainerConfig& cfg_;
  const StreamTask& task_;
  const ImageStore& images_;
  LearnerState& st_;
  const StepHook& hook_;
  LossConfig loss_cfg_;
  TaskOutcome outcome_;
  std::int64_t step_ = 0;
};

}  // namespace

TaskOutcome train_task(const TrainerConfig& cfg, const StreamTask& task, const ImageStore& images, LearnerState& state,
                       const StepHook& hook) {
  cfg.validate();
  return TaskRun(cfg, task, images, state, hook).run();
}

}  // namespace dietcl
