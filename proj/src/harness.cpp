#include "dietcl/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include <Eigen/Core>

#include "json.hpp"

namespace dietcl {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

namespace {

class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  void get_path(const char* key, fs::path& out) {
    std::string s = out.string();
    get(key, s);
    out = s;
  }

  template <typename Enum, typename Parse>
  void get_enum(const char* key, Enum& out, Parse parse) {
    std::string s;
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    get(key, s);
    out = parse(s);
  }

  const json* child(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

StreamMode stream_mode_from(const std::string& s) {
  if (s == "class_incremental") return StreamMode::class_incremental;
  if (s == "time_incremental") return StreamMode::time_incremental;
  throw ConfigError("unknown stream mode '" + s + "'");
}

std::string to_text(StreamMode m) {
  return m == StreamMode::class_incremental ? "class_incremental" : "time_incremental";
}

LabelSparsity sparsity_from(const std::string& s) {
  if (s == "per_class") return LabelSparsity::per_class;
  if (s == "global") return LabelSparsity::global;
  throw ConfigError("unknown label sparsity '" + s + "'");
}

std::string to_text(LabelSparsity s) { return s == LabelSparsity::per_class ? "per_class" : "global"; }

ReconstructionReduction reduction_from(const std::string& s) {
  if (s == "mean") return ReconstructionReduction::mean;
  if (s == "sum") return ReconstructionReduction::sum;
  throw ConfigError("unknown reconstruction reduction '" + s + "'");
}

std::string to_text(ReconstructionReduction r) { return r == ReconstructionReduction::mean ? "mean" : "sum"; }

void read_synthetic(const json& j, SyntheticConfig& c) {
  ObjectReader r(j, "corpus.synthetic");
  r.get("num_classes", c.num_classes);
  r.get("per_class", c.per_class);
  r.get("height", c.shape.height);
  r.get("width", c.shape.width);
  r.get("channels", c.shape.channels);
  r.get("primitives", c.primitives);
  r.get("parts_per_class", c.parts_per_class);
  r.get("primitive_size", c.primitive_size);
  r.get("jitter", c.jitter);
  r.get("distractors", c.distractors);
  r.get("noise", c.noise);
  r.get("background", c.background);
  r.get("timestamps", c.timestamps);
  r.get("time_spread", c.time_spread);
  r.get("seed", c.seed);
  r.finish();
}

json write_synthetic(const SyntheticConfig& c) {
  return json{{"num_classes", c.num_classes}, {"per_class", c.per_class},
              {"height", c.shape.height},     {"width", c.shape.width},
              {"channels", c.shape.channels}, {"primitives", c.primitives},
              {"parts_per_class", c.parts_per_class}, {"primitive_size", c.primitive_size},
              {"jitter", c.jitter},           {"distractors", c.distractors},
              {"noise", c.noise},             {"background", c.background},
              {"timestamps", c.timestamps},   {"time_spread", c.time_spread},
              {"seed", c.seed}};
}

void read_trainer(const json& j, TrainerConfig& t) {
  ObjectReader r(j, "trainer");
  r.get_enum("method", t.method, method_from_string);
  r.get("per_task_budget", t.per_task_budget);
  r.get("threshold", t.threshold);
  r.get("reference_batch", t.reference_batch);
  r.get("effective_batch", t.effective_batch);
  r.get("base_lr", t.base_lr);
  r.get("lr_reference_batch", t.lr_reference_batch);
  if (const json* a = r.child("adamw")) {
    ObjectReader ar(*a, "trainer.adamw");
    ar.get("beta1", t.adamw.beta1);
    ar.get("beta2", t.adamw.beta2);
    ar.get("eps", t.adamw.eps);
    ar.get("weight_decay", t.adamw.weight_decay);
    ar.finish();
  }
  r.get("alpha_r", t.alpha_r);
  r.get_enum("reconstruction_reduction", t.reduction, reduction_from);
  r.get("mask_current", t.mask_current);
  r.get("balanced_buffer", t.balanced_buffer);
  r.get("buffer_includes_current", t.buffer_includes_current);
  r.get("keep_moments_between_phases", t.keep_moments_between_phases);
  r.get("er_balanced", t.er_balanced);
  r.get("reservoir_capacity", t.reservoir_capacity);
  r.get("ewc_lambda", t.ewc_lambda);
  r.get("mas_lambda", t.mas_lambda);
  r.get("importance_batches", t.importance_batches);
  r.get("two_stage_fraction", t.two_stage_fraction);
  r.get("recurring_classes", t.recurring_classes);
  r.finish();
}

json write_trainer(const TrainerConfig& t) {
  json j;
  j["method"] = to_string(t.method);
  j["per_task_budget"] = t.per_task_budget;
  j["threshold"] = t.threshold;
  j["reference_batch"] = t.reference_batch;
  j["effective_batch"] = t.effective_batch;
  j["base_lr"] = t.base_lr;
  j["lr_reference_batch"] = t.lr_reference_batch;
  j["adamw"] = json{{"beta1", t.adamw.beta1},
                    {"beta2", t.adamw.beta2},
                    {"eps", t.adamw.eps},
                    {"weight_decay", t.adamw.weight_decay}};
  j["alpha_r"] = t.alpha_r;
  j["reconstruction_reduction"] = to_text(t.reduction);
  j["mask_current"] = t.mask_current;
  j["balanced_buffer"] = t.balanced_buffer;
  j["buffer_includes_current"] = t.buffer_includes_current;
  j["keep_moments_between_phases"] = t.keep_moments_between_phases;
  j["er_balanced"] = t.er_balanced;
  j["reservoir_capacity"] = t.reservoir_capacity;
  j["ewc_lambda"] = t.ewc_lambda;
  j["mas_lambda"] = t.mas_lambda;
  j["importance_batches"] = t.importance_batches;
  j["two_stage_fraction"] = t.two_stage_fraction;
  j["recurring_classes"] = t.recurring_classes;
  return j;
}

ExperimentConfig read_config(const json& j) {
  ExperimentConfig cfg;
  ObjectReader r(j, "config");
  r.get("name", cfg.name);
  r.get("seed", cfg.seed);
  r.get("seeds", cfg.seeds);
  if (const json* c = r.child("corpus")) {
    ObjectReader cr(*c, "corpus");
    cr.get_path("manifest", cfg.corpus.manifest);
    if (const json* s = cr.child("synthetic")) read_synthetic(*s, cfg.corpus.synthetic);
    cr.finish();
  }
  if (const json* s = r.child("stream")) {
    ObjectReader sr(*s, "stream");
    sr.get_enum("mode", cfg.stream.mode, stream_mode_from);
    sr.get("num_tasks", cfg.stream.num_tasks);
    sr.get("label_rate", cfg.stream.label_rate);
    sr.get("test_fraction", cfg.stream.test_fraction);
    sr.get_enum("sparsity", cfg.stream.sparsity, sparsity_from);
    sr.finish();
  }
  if (const json* m = r.child("model")) {
    ObjectReader mr(*m, "model");
    mr.get("patch", cfg.model.patch);
    mr.get("embed_dim", cfg.model.embed_dim);
    mr.get("depth", cfg.model.depth);
    mr.get("heads", cfg.model.heads);
    mr.get("mlp_ratio", cfg.model.mlp_ratio);
    mr.get("decoder_dim", cfg.model.decoder_dim);
    mr.get("decoder_depth", cfg.model.decoder_depth);
    mr.get("decoder_heads", cfg.model.decoder_heads);
    mr.get("mask_ratio", cfg.model.mask_ratio);
    mr.finish();
  }
  if (const json* p = r.child("pretrain")) {
    ObjectReader pr(*p, "pretrain");
    pr.get("steps", cfg.pretrain.steps);
    pr.get("holdout_classes", cfg.pretrain.holdout_classes);
    pr.get("batch", cfg.pretrain.batch);
    pr.get("lr", cfg.pretrain.lr);
    pr.get("seed", cfg.pretrain.seed);
    pr.finish();
  }
  if (const json* t = r.child("trainer")) read_trainer(*t, cfg.trainer);
  if (const json* p = r.child("probe")) {
    ObjectReader pr(*p, "probe");
    pr.get("enabled", cfg.probe.enabled);
    pr.get("task", cfg.probe.task);
    pr.get("every", cfg.probe.every);
    pr.get("cap", cfg.probe.cap);
    pr.finish();
  }
  if (const json* s = r.child("sweep")) {
    ObjectReader sr(*s, "sweep");
    sr.get("method", cfg.sweep.method);
    sr.get("budget", cfg.sweep.budget);
    sr.get("label_rate", cfg.sweep.label_rate);
    sr.get("num_tasks", cfg.sweep.num_tasks);
    sr.get("total_budget", cfg.sweep.total_budget);
    sr.finish();
  }
  r.finish();
  return cfg;
}

json write_config(const ExperimentConfig& cfg) {
  json j;
  j["name"] = cfg.name;
  j["seed"] = cfg.seed;
  j["seeds"] = cfg.seeds;
  j["corpus"] = json{{"manifest", cfg.corpus.manifest.string()}, {"synthetic", write_synthetic(cfg.corpus.synthetic)}};
  j["stream"] = json{{"mode", to_text(cfg.stream.mode)},
                     {"num_tasks", cfg.stream.num_tasks},
                     {"label_rate", cfg.stream.label_rate},
                     {"test_fraction", cfg.stream.test_fraction},
                     {"sparsity", to_text(cfg.stream.sparsity)}};
  j["model"] = json{{"patch", cfg.model.patch},
                    {"embed_dim", cfg.model.embed_dim},
                    {"depth", cfg.model.depth},
                    {"heads", cfg.model.heads},
                    {"mlp_ratio", cfg.model.mlp_ratio},
                    {"decoder_dim", cfg.model.decoder_dim},
                    {"decoder_depth", cfg.model.decoder_depth},
                    {"decoder_heads", cfg.model.decoder_heads},
                    {"mask_ratio", cfg.model.mask_ratio}};
  j["pretrain"] = json{{"steps", cfg.pretrain.steps},
                       {"holdout_classes", cfg.pretrain.holdout_classes},
                       {"batch", cfg.pretrain.batch},
                       {"lr", cfg.pretrain.lr},
                       {"seed", cfg.pretrain.seed}};
  j["trainer"] = write_trainer(cfg.trainer);
  j["probe"] = json{{"enabled", cfg.probe.enabled},
                    {"task", cfg.probe.task},
                    {"every", cfg.probe.every},
                    {"cap", cfg.probe.cap}};
  j["sweep"] = json{{"method", cfg.sweep.method},
                    {"budget", cfg.sweep.budget},
                    {"label_rate", cfg.sweep.label_rate},
                    {"num_tasks", cfg.sweep.num_tasks},
                    {"total_budget", cfg.sweep.total_budget}};
  return j;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (name.empty()) throw ConfigError("name must not be empty");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (stream.num_tasks < 1) throw ConfigError("stream.num_tasks must be >= 1");
  if (!(stream.label_rate > 0.0) || stream.label_rate > 1.0) throw ConfigError("stream.label_rate must lie in (0, 1]");
  if (stream.test_fraction < 0.0 || stream.test_fraction >= 1.0) {
    throw ConfigError("stream.test_fraction must lie in [0, 1)");
  }
  if (corpus.manifest.empty()) {
    corpus.synthetic.validate();
    ModelConfig m = model;
    m.image = corpus.synthetic.shape;
    m.validate();
    if (pretrain.holdout_classes >= corpus.synthetic.num_classes) {
      throw ConfigError("pretrain.holdout_classes leaves no class for the stream");
    }
  }
  if (pretrain.steps < 0 || pretrain.holdout_classes < 0) throw ConfigError("pretrain values must be >= 0");
  if (pretrain.steps > 0 && (pretrain.batch < 1 || !(pretrain.lr > 0.0))) {
    throw ConfigError("pretrain.batch and pretrain.lr must be positive");
  }
  if (probe.enabled && (probe.every < 1 || probe.task < 0 || probe.cap < 1)) {
    throw ConfigError("probe needs every >= 1, task >= 0, cap >= 1");
  }
  trainer.validate();
  for (const auto& m : sweep.method) method_from_string(m);
  for (auto b : sweep.budget) {
    if (b < 1) throw ConfigError("sweep budgets must be >= 1");
  }
  for (double r : sweep.label_rate) {
    if (!(r > 0.0) || r > 1.0) throw ConfigError("sweep label rates must lie in (0, 1]");
  }
  for (int t : sweep.num_tasks) {
    if (t < 1) throw ConfigError("sweep num_tasks must be >= 1");
  }
  if (!sweep.budget.empty() && !sweep.num_tasks.empty()) {
    throw ConfigError("sweep.budget and sweep.num_tasks cannot both be swept: num_tasks fixes the per-task budget");
  }
}

ExperimentConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig cfg = read_config(j);
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config " + file.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return config_from_json_text(buf.str());
}

std::string config_to_json_text(const ExperimentConfig& cfg) { return write_config(cfg).dump(2) + "\n"; }

ExperimentConfig with_seed(ExperimentConfig cfg, std::uint64_t seed) {
  cfg.seed = seed;
  cfg.stream.seed = seed;
  cfg.trainer.seed = seed;
  return cfg;
}

std::uint64_t experiment_hash(const ExperimentConfig& cfg) { return stable_hash(config_to_json_text(cfg)); }

// ---------------------------------------------------------------------------
// Data and warm start

PreparedData prepare_data(const ExperimentConfig& cfg) {
  PreparedData data;
  data.corpus = cfg.corpus.manifest.empty() ? make_synthetic_corpus(cfg.corpus.synthetic)
                                            : load_corpus(cfg.corpus.manifest);
  const int holdout = cfg.pretrain.holdout_classes;
  if (holdout > 0) {
    if (holdout >= data.corpus.num_classes) throw ConfigError("pretrain.holdout_classes leaves no class for the stream");
    const int keep = data.corpus.num_classes - holdout;
    std::vector<Example> stream_examples;
    for (auto& ex : data.corpus.examples) {
      if (ex.label && *ex.label >= keep) {
        data.pretrain_images.push_back(ex.image);
      } else {
        stream_examples.push_back(std::move(ex));
      }
    }
    data.corpus.examples = std::move(stream_examples);
    data.corpus.num_classes = keep;
  } else if (cfg.pretrain.steps > 0) {
    for (const auto& ex : data.corpus.examples) data.pretrain_images.push_back(ex.image);
  }
  StreamConfig sc = cfg.stream;
  sc.corpus_manifest = cfg.corpus.manifest;
  data.tasks = build_stream(data.corpus, sc);
  return data;
}

void pretrain_mae(ModelBundle& model, const ImageStore& store, const std::vector<std::size_t>& images,
                  const PretrainConfig& cfg) {
  if (cfg.steps <= 0) return;
  if (images.empty()) throw ConfigError("pre-training requested but no pre-training images");
  Rng rng(derive_seed(cfg.seed, "pretrain"));
  AdamW opt;
  const CosineSchedule schedule{cfg.lr, cfg.steps};
  std::vector<std::size_t> order(images);
  shuffle_in_place(order, rng);
  std::size_t pos = 0;
  auto params = model.parameters();
  for (std::int64_t s = 0; s < cfg.steps; ++s) {
    std::vector<std::size_t> batch;
    for (int i = 0; i < cfg.batch; ++i) {
      if (pos == order.size()) {
        shuffle_in_place(order, rng);
        pos = 0;
      }
      batch.push_back(order[pos++]);
    }
    model.zero_grad();
    const MaskedBatch mb = make_masked_batch(store, batch, model.config(), model.config().mask_ratio, rng);
    ReconstructCache cache;
    const Matrix pred = model.forward_reconstruct(mb, &cache);
    const auto loss = reconstruction_loss<float>(pred, mb.targets, ReconstructionReduction::mean);
    if (!std::isfinite(loss.value)) throw NumericalError("l_r", "non-finite loss during pre-training");
    model.backward_reconstruct(loss.grad, mb, cache);
    opt.step(params, schedule.at(s));
  }
  model.zero_grad();
}

ModelBundle initial_model(const ExperimentConfig& cfg, const PreparedData& data, const RunOptions& opts) {
  ModelConfig mc = cfg.model;
  mc.image = data.corpus.shape;
  mc.validate();
  if (cfg.pretrain.steps <= 0) return ModelBundle(mc, derive_seed(cfg.seed, "model"));

  // The warm start is shared by every seed: it plays the role of a fixed
  // pre-trained checkpoint.
  json key{{"model", model_config_string(mc)},
           {"pretrain", write_config(cfg).at("pretrain")},
           {"corpus", write_config(cfg).at("corpus")}};
  std::ostringstream name;
  name << "pretrain_" << std::hex << stable_hash(key.dump()) << ".ckpt";
  if (!opts.cache_dir.empty()) {
    const fs::path cached = opts.cache_dir / name.str();
    if (fs::exists(cached)) return ModelBundle::load(cached);
  }
  ModelBundle model(mc, derive_seed(cfg.pretrain.seed, "model"));
  pretrain_mae(model, data.corpus.images, data.pretrain_images, cfg.pretrain);
  if (!opts.cache_dir.empty()) {
    fs::create_directories(opts.cache_dir);
    std::ostringstream tmp_name;
    tmp_name << name.str() << ".tmp" << std::this_thread::get_id();
    const fs::path tmp = opts.cache_dir / tmp_name.str();
    model.save(tmp);
    fs::rename(tmp, opts.cache_dir / name.str());
  }
  return model;
}

// ---------------------------------------------------------------------------
// Single run

double RunRecord::final_accuracy() const {
  if (evals.empty()) throw EvaluationError("run " + run_id + " has no evaluation");
  return evals.back().a_t;
}

double RunRecord::average_accuracy() const {
  std::vector<double> a;
  for (const auto& e : evals) a.push_back(e.a_t);
  return stream_average(a);
}

namespace {

std::string read_text(const fs::path& file) {
  std::ifstream in(file);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file);
  if (!out) throw InputError("cannot write " + file.string());
  out << text;
}

/// Keeps header/comment lines and lines whose leading integer field in
/// column `col` is <= last_task.
void truncate_by_task(const fs::path& file, std::size_t col, int last_task) {
  if (!fs::exists(file)) return;
  std::ifstream in(file);
  std::ostringstream kept;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      kept << line << '\n';
      continue;
    }
    std::istringstream fields(line);
    std::string field;
    for (std::size_t i = 0; i <= col; ++i) std::getline(fields, field, '\t');
    if (std::stoi(field) <= last_task) kept << line << '\n';
  }
  in.close();
  write_text(file, kept.str());
}

std::map<std::string, std::string> environment_stamp() {
  std::map<std::string, std::string> env;
#ifdef __VERSION__
  env["compiler"] = __VERSION__;
#endif
  env["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                 std::to_string(EIGEN_MINOR_VERSION);
#ifdef NDEBUG
  env["build"] = "release";
#else
  env["build"] = "debug";
#endif
  env["hardware_threads"] = std::to_string(std::thread::hardware_concurrency());
  return env;
}

std::vector<EvalResult> evals_from_records(const std::vector<MetricRecord>& records) {
  std::map<int, EvalResult> by_task;
  for (const auto& r : records) {
    auto& e = by_task[r.task];
    e.task = r.task;
    e.step_index = r.step;
    if (r.metric == "a_t") {
      e.a_t = r.value;
    } else if (r.metric == "pooled") {
      e.pooled = r.value;
    } else if (r.metric.rfind("acc_task", 0) == 0) {
      e.per_task_accuracy[std::stoi(r.metric.substr(8))] = r.value;
    }
  }
  std::vector<EvalResult> out;
  for (auto& [t, e] : by_task) out.push_back(std::move(e));
  return out;
}

void append_losses(const fs::path& file, const std::vector<StepRecord>& steps) {
  const bool fresh = !fs::exists(file);
  std::ofstream out(file, std::ios::app);
  out.precision(9);
  if (fresh) out << "#task\tphase\tstep\tlr\tl_r\tl_m\tl_b\ttotal\tn_l\tn_u\tn_m\n";
  for (const auto& s : steps) {
    out << s.task << '\t' << s.phase << '\t' << s.step << '\t' << s.lr << '\t' << s.report.l_r << '\t'
        << s.report.l_m << '\t' << s.report.l_b << '\t' << s.report.total << '\t' << s.report.n_labeled << '\t'
        << s.report.n_unlabeled << '\t' << s.report.n_buffer << '\n';
  }
}

std::vector<StepRecord> read_losses(const fs::path& file) {
  std::vector<StepRecord> out;
  std::ifstream in(file);
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream f(line);
    StepRecord s;
    f >> s.task >> s.phase >> s.step >> s.lr >> s.report.l_r >> s.report.l_m >> s.report.l_b >> s.report.total >>
        s.report.n_labeled >> s.report.n_unlabeled >> s.report.n_buffer;
    if (f) out.push_back(std::move(s));
  }
  return out;
}

void append_ledger(const fs::path& file, int task, const BudgetAccountant& ledger) {
  const bool fresh = !fs::exists(file);
  std::ofstream out(file, std::ios::app);
  if (fresh) out << "#task\tphase\tkind\tunits\tcumulative\tcomposition\n";
  for (const auto& e : ledger.ledger()) {
    out << task << '\t' << e.phase << '\t' << to_string(e.kind) << '\t' << e.units << '\t' << e.cumulative << '\t'
        << e.composition << '\n';
  }
}

void write_trace(const fs::path& file, int task, const StabilityTrace& trace) {
  std::ofstream out(file);
  out.precision(17);
  out << "#task\tstep\torigin\taccuracy\n";
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    for (const auto& [origin, accs] : trace.accuracy) {
      out << task << '\t' << trace.steps[i] << '\t' << origin << '\t' << accs[i] << '\n';
    }
  }
}

std::optional<StabilityTrace> read_trace(const fs::path& file) {
  if (!fs::exists(file)) return std::nullopt;
  StabilityTrace trace;
  std::ifstream in(file);
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream f(line);
    int task = 0, origin = 0;
    std::int64_t step = 0;
    double acc = 0;
    f >> task >> step >> origin >> acc;
    if (trace.steps.empty() || trace.steps.back() != step) trace.steps.push_back(step);
    trace.accuracy[origin].push_back(acc);
  }
  return trace;
}

std::map<std::string, std::string> read_tags(const fs::path& file) {
  std::map<std::string, std::string> tags;
  std::ifstream in(file);
  for (std::string line; std::getline(in, line);) {
    const auto tab = line.find('\t');
    if (tab != std::string::npos) tags[line.substr(0, tab)] = line.substr(tab + 1);
  }
  return tags;
}

void write_tags(const fs::path& file, const std::map<std::string, std::string>& tags) {
  std::ofstream out(file);
  for (const auto& [k, v] : tags) out << k << '\t' << v << '\n';
}

fs::path checkpoint_dir(const fs::path& run, int task) { return run / "checkpoints" / ("task_" + std::to_string(task)); }

int last_complete_task(const fs::path& run, int num_tasks) {
  for (int t = num_tasks - 1; t >= 0; --t) {
    if (fs::exists(checkpoint_dir(run, t) / "COMPLETE")) return t;
  }
  return -1;
}

std::string hex(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << v;
  return out.str();
}

}  // namespace

RunRecord run_experiment(const ExperimentConfig& cfg, const fs::path& dir, const RunOptions& opts) {
  cfg.validate();
  fs::create_directories(dir);
  const std::string text = config_to_json_text(cfg);
  const std::uint64_t hash = stable_hash(text);
  const fs::path config_file = dir / "config.json";
  if (opts.resume && fs::exists(config_file)) {
    if (stable_hash(read_text(config_file)) != hash) {
      throw ConfigError("cannot resume " + dir.string() + ": stored config differs from the requested one");
    }
  }
  write_text(config_file, text);

  RunRecord record;
  record.run_id = cfg.name;
  record.config_hash = hash;
  record.dir = dir;
  record.environment = environment_stamp();
  record.tags = read_tags(dir / "tags.tsv");
  {
    json env(record.environment);
    env["config_hash"] = hex(hash);
    write_text(dir / "environment.json", env.dump(2) + "\n");
  }

  const PreparedData data = prepare_data(cfg);
  const int num_tasks = static_cast<int>(data.tasks.size());
  const fs::path metrics_file = dir / "metrics.tsv";
  const fs::path losses_file = dir / "losses.tsv";
  const fs::path ledger_file = dir / "ledger.tsv";

  int start = 0;
  LearnerState state;
  const int resume_from = opts.resume ? last_complete_task(dir, num_tasks) : -1;
  if (resume_from >= 0) {
    state = LearnerState::load(checkpoint_dir(dir, resume_from), data.corpus);
    start = resume_from + 1;
    truncate_by_task(metrics_file, 1, resume_from);
    truncate_by_task(losses_file, 0, resume_from);
    truncate_by_task(ledger_file, 0, resume_from);
    record.evals = evals_from_records(read_records(metrics_file));
    for (int t = 0; t <= resume_from; ++t) {
      record.ledgers.push_back(BudgetAccountant::load(dir / "ledgers" / ("task_" + std::to_string(t) + ".tsv"),
                                                      cfg.trainer.per_task_budget));
    }
    record.trace = read_trace(dir / "probe.tsv");
  } else {
    for (const char* f : {"metrics.tsv", "losses.tsv", "ledger.tsv", "probe.tsv", "summary.tsv", "error.txt"}) {
      fs::remove(dir / f);
    }
    fs::remove_all(dir / "checkpoints");
    fs::remove_all(dir / "ledgers");
    save_stream_snapshot(dir / "stream", data.tasks);
    state = LearnerState(initial_model(cfg, data, opts), cfg.trainer);
  }
  fs::create_directories(dir / "ledgers");

  for (int t = start; t < num_tasks; ++t) {
    if (opts.stop_after >= 0 && t >= opts.stop_after) break;
    StepHook hook;
    StabilityTrace trace;
    std::map<int, std::vector<Example>> probes;
    const bool probing = cfg.probe.enabled && cfg.probe.task == t;
    if (probing) {
      probes = make_probe_sets(data.tasks, t, cfg.probe.cap);
      hook.every = cfg.probe.every;
      hook.on_step = [&](const ModelBundle& model, std::int64_t step) {
        trace.record(step, model, data.corpus.images, probes);
      };
    }

    TaskOutcome outcome;
    EvalResult eval;
    try {
      outcome = train_task(cfg.trainer, data.tasks[static_cast<std::size_t>(t)], data.corpus.images, state, hook);
      eval = evaluate_seen(state.model, data.corpus.images, data.tasks, t);
    } catch (const Error& e) {
      const std::int64_t step = outcome.steps.empty() ? 0 : outcome.steps.back().step;
      write_text(dir / "error.txt", "task " + std::to_string(t) + " step " + std::to_string(step) + ": " + e.what() + "\n");
      throw;
    }
    eval.step_index = t;

    const auto records = to_records(cfg.name, eval);
    append_records(metrics_file, records);
    append_losses(losses_file, outcome.steps);
    append_ledger(ledger_file, t, outcome.ledger);
    outcome.ledger.save(dir / "ledgers" / ("task_" + std::to_string(t) + ".tsv"));
    if (probing) {
      write_trace(dir / "probe.tsv", t, trace);
      record.trace = trace;
    }
    {
      std::ofstream timing(dir / "timing.tsv", std::ios::app);
      timing << t << '\t' << outcome.seconds << '\n';
    }

    const fs::path ckpt = checkpoint_dir(dir, t);
    state.save(ckpt);
    write_text(ckpt / "COMPLETE", std::to_string(t) + "\n");
    {
      std::ofstream events(dir / "events.tsv");
      for (const auto& e : state.events) events << e.task << '\t' << e.name << '\t' << e.detail << '\n';
    }

    record.evals.push_back(eval);
    record.ledgers.push_back(outcome.ledger);
    record.losses.insert(record.losses.end(), outcome.steps.begin(), outcome.steps.end());
  }

  record.metrics_hash = stable_hash(read_text(metrics_file));
  if (static_cast<int>(record.evals.size()) == num_tasks) {
    std::ostringstream summary;
    summary.precision(17);
    summary << "#run_id\tconfig_hash\ttasks\tA_T\tA_bar\tpooled_T\tmetrics_hash\n"
            << record.run_id << '\t' << hex(hash) << '\t' << num_tasks << '\t' << record.final_accuracy() << '\t'
            << record.average_accuracy() << '\t' << record.evals.back().pooled << '\t' << hex(record.metrics_hash)
            << '\n';
    write_text(dir / "summary.tsv", summary.str());
  }
  return record;
}

RunRecord load_run_record(const fs::path& dir) {
  if (!fs::exists(dir / "config.json")) throw InputError("no run in " + dir.string());
  const ExperimentConfig cfg = load_config(dir / "config.json");
  RunRecord record;
  record.run_id = cfg.name;
  record.config_hash = experiment_hash(cfg);
  record.dir = dir;
  record.tags = read_tags(dir / "tags.tsv");
  if (fs::exists(dir / "metrics.tsv")) {
    record.evals = evals_from_records(read_records(dir / "metrics.tsv"));
    record.metrics_hash = stable_hash(read_text(dir / "metrics.tsv"));
  }
  for (std::size_t t = 0; t < record.evals.size(); ++t) {
    const fs::path f = dir / "ledgers" / ("task_" + std::to_string(t) + ".tsv");
    if (fs::exists(f)) record.ledgers.push_back(BudgetAccountant::load(f, cfg.trainer.per_task_budget));
  }
  record.losses = read_losses(dir / "losses.tsv");
  record.trace = read_trace(dir / "probe.tsv");
  if (fs::exists(dir / "environment.json")) {
    const json env = json::parse(read_text(dir / "environment.json"));
    for (const auto& [k, v] : env.items()) {
      if (v.is_string()) record.environment[k] = v.get<std::string>();
    }
  }
  return record;
}

// ---------------------------------------------------------------------------
// Sweeps and ablations

namespace {

std::string number_text(double v) {
  std::ostringstream out;
  out << v;
  return out.str();
}

std::vector<RunRecord> run_points(const std::vector<SweepPoint>& points, const fs::path& root, const RunOptions& opts,
                                  int jobs) {
  fs::create_directories(root);
  RunOptions run_opts = opts;
  if (run_opts.cache_dir.empty()) run_opts.cache_dir = root / "cache";
  std::vector<RunRecord> records(points.size());
  std::vector<std::exception_ptr> errors(points.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < points.size(); i = next++) {
      const auto& p = points[i];
      const fs::path dir = root / p.run_id;
      try {
        if (opts.resume && fs::exists(dir / "summary.tsv")) {
          records[i] = load_run_record(dir);
        } else {
          fs::create_directories(dir);
          write_tags(dir / "tags.tsv", p.tags);
          records[i] = run_experiment(p.cfg, dir, run_opts);
        }
        records[i].tags = p.tags;
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n = std::max(1, std::min<int>(jobs, static_cast<int>(points.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int i = 0; i < n; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return records;
}

void write_run_table(const fs::path& file, const std::vector<RunRecord>& records,
                     const std::vector<std::string>& tag_columns) {
  std::ofstream out(file);
  out.precision(17);
  out << "#run_id";
  for (const auto& c : tag_columns) out << '\t' << c;
  out << "\tA_T\tA_bar\tpooled_T\tconfig_hash\n";
  for (const auto& r : records) {
    out << r.run_id;
    for (const auto& c : tag_columns) {
      const auto it = r.tags.find(c);
      out << '\t' << (it == r.tags.end() ? "-" : it->second);
    }
    out << '\t' << r.final_accuracy() << '\t' << r.average_accuracy() << '\t' << r.evals.back().pooled << '\t'
        << hex(r.config_hash) << '\n';
  }
}

}  // namespace

std::vector<SweepPoint> expand_sweep(const ExperimentConfig& base) {
  base.validate();
  const auto& ax = base.sweep;
  const std::vector<std::string> methods = ax.method.empty() ? std::vector<std::string>{to_string(base.trainer.method)}
                                                             : ax.method;
  const std::vector<std::int64_t> budgets =
      ax.budget.empty() ? std::vector<std::int64_t>{base.trainer.per_task_budget} : ax.budget;
  const std::vector<double> rates = ax.label_rate.empty() ? std::vector<double>{base.stream.label_rate} : ax.label_rate;
  const std::vector<int> lengths = ax.num_tasks.empty() ? std::vector<int>{base.stream.num_tasks} : ax.num_tasks;
  const std::int64_t total =
      ax.total_budget > 0 ? ax.total_budget : base.trainer.per_task_budget * base.stream.num_tasks;

  std::vector<SweepPoint> points;
  for (auto seed : base.seeds) {
    for (const auto& m : methods) {
      for (auto b : budgets) {
        for (double r : rates) {
          for (int T : lengths) {
            SweepPoint p;
            p.cfg = with_seed(base, seed);
            p.cfg.trainer.method = method_from_string(m);
            p.cfg.trainer.per_task_budget = b;
            p.cfg.stream.label_rate = r;
            p.cfg.stream.num_tasks = T;
            if (!ax.num_tasks.empty()) {
              if (total % T != 0) {
                throw ConfigError("total budget " + std::to_string(total) + " is not divisible by " +
                                  std::to_string(T) + " tasks");
              }
              p.cfg.trainer.per_task_budget = total / T;
            }
            p.cfg.sweep = SweepAxes{};
            p.cfg.seeds = {seed};
            p.run_id = base.name + "-" + m + "-b" + std::to_string(p.cfg.trainer.per_task_budget) + "-r" +
                       number_text(r) + "-T" + std::to_string(T) + "-s" + std::to_string(seed);
            p.cfg.name = p.run_id;
            p.tags = {{"method", m},
                      {"budget", std::to_string(p.cfg.trainer.per_task_budget)},
                      {"label_rate", number_text(r)},
                      {"num_tasks", std::to_string(T)},
                      {"seed", std::to_string(seed)}};
            points.push_back(std::move(p));
          }
        }
      }
    }
  }
  return points;
}

std::vector<RunRecord> run_sweep(const ExperimentConfig& base, const fs::path& root, const RunOptions& opts,
                                 int jobs) {
  const auto points = expand_sweep(base);
  auto records = run_points(points, root, opts, jobs);
  write_run_table(root / "sweep.tsv", records, {"method", "budget", "label_rate", "num_tasks", "seed"});
  return records;
}

const std::vector<AblationRow>& ablation_rows() {
  static const std::vector<AblationRow> rows{
      {"replay", false, false, false}, {"lm", true, false, false},    {"bb", false, true, false},
      {"lm_bb", true, true, false},    {"lm_lr", true, false, true}, {"full", true, true, true},
  };
  return rows;
}

const std::vector<std::vector<std::string>>& ablation_orders() {
  static const std::vector<std::vector<std::string>> orders{
      {"replay", "lm", "lm_bb", "full"},
      {"replay", "bb", "lm_bb", "full"},
      {"replay", "bb", "lm_lr", "full"},
  };
  return orders;
}

ExperimentConfig ablation_config(const ExperimentConfig& base, const AblationRow& row) {
  ExperimentConfig cfg = base;
  cfg.trainer.method = Method::dietcl;
  cfg.trainer.mask_current = row.masked_loss;
  cfg.trainer.balanced_buffer = row.balanced_buffer;
  const double alpha = base.trainer.alpha_r > 0.0 ? base.trainer.alpha_r : TrainerConfig{}.alpha_r;
  cfg.trainer.alpha_r = row.reconstruction ? alpha : 0.0;
  return cfg;
}

std::vector<RunRecord> ablation_matrix(const ExperimentConfig& base, const fs::path& root, const RunOptions& opts,
                                       int jobs) {
  base.validate();
  std::vector<SweepPoint> points;
  for (auto seed : base.seeds) {
    for (const auto& row : ablation_rows()) {
      SweepPoint p;
      p.cfg = ablation_config(with_seed(base, seed), row);
      p.cfg.sweep = SweepAxes{};
      p.cfg.seeds = {seed};
      p.run_id = base.name + "-ablation-" + row.name + "-s" + std::to_string(seed);
      p.cfg.name = p.run_id;
      p.tags = {{"ablation", row.name}, {"seed", std::to_string(seed)}, {"method", "dietcl"}};
      points.push_back(std::move(p));
    }
  }
  auto records = run_points(points, root, opts, jobs);
  write_run_table(root / "ablation_runs.tsv", records, {"ablation", "seed"});
  return records;
}

ThresholdStudy threshold_study(const ExperimentConfig& base, const std::vector<std::int64_t>& candidates,
                               const std::vector<int>& validation_tasks, const RunOptions& opts) {
  if (candidates.empty()) throw ConfigError("no threshold candidates");
  if (validation_tasks.empty()) throw ConfigError("no validation task");
  ExperimentConfig cfg = base;
  cfg.trainer.method = Method::dietcl;
  cfg.validate();
  const int K = *std::max_element(validation_tasks.begin(), validation_tasks.end());
  if (K > cfg.stream.num_tasks || *std::min_element(validation_tasks.begin(), validation_tasks.end()) < 1) {
    throw ConfigError("validation tasks must lie in [1, num_tasks]");
  }
  const PreparedData data = prepare_data(cfg);
  const ModelBundle start = initial_model(cfg, data, opts);

  ThresholdStudy study;
  study.candidates = candidates;
  for (auto c : candidates) {
    if (study.accuracy.count(c)) continue;
    TrainerConfig tc = cfg.trainer;
    tc.threshold = c;
    LearnerState state(start, tc);
    auto& curve = study.accuracy[c];
    for (int t = 0; t < K; ++t) {
      train_task(tc, data.tasks[static_cast<std::size_t>(t)], data.corpus.images, state);
      curve.push_back(evaluate_seen(state.model, data.corpus.images, data.tasks, t).a_t);
    }
  }
  for (int k : validation_tasks) {
    study.selected[k] = select_threshold(candidates, k, [&](std::int64_t c, int kk) {
      return study.accuracy.at(c)[static_cast<std::size_t>(kk - 1)];
    });
  }
  return study;
}

}  // namespace dietcl
