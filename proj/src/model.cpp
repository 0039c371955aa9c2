#include "dietcl/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace dietcl {

namespace {

constexpr char kModelMagic[8] = {'D', 'C', 'L', 'M', 'O', 'D', 'L', '1'};

void write_string(std::ostream& out, const std::string& s) {
  const std::uint64_t n = s.size();
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  out.write(s.data(), static_cast<std::streamsize>(n));
}

std::string read_string(std::istream& in) {
  std::uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof(n));
  if (!in || n > (1u << 20)) throw InputError("corrupt string record in checkpoint");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  return s;
}

ModelConfig parse_model_config(const std::string& text) {
  ModelConfig cfg;
  std::istringstream in(text);
  for (std::string kv; std::getline(in, kv, ';');) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = kv.substr(0, eq);
    const std::string value = kv.substr(eq + 1);
    if (key == "image") {
      char x1 = 0, x2 = 0;
      std::istringstream dims(value);
      dims >> cfg.image.height >> x1 >> cfg.image.width >> x2 >> cfg.image.channels;
    } else if (key == "patch") cfg.patch = std::stoi(value);
    else if (key == "embed_dim") cfg.embed_dim = std::stoi(value);
    else if (key == "depth") cfg.depth = std::stoi(value);
    else if (key == "heads") cfg.heads = std::stoi(value);
    else if (key == "mlp_ratio") cfg.mlp_ratio = std::stoi(value);
    else if (key == "decoder_dim") cfg.decoder_dim = std::stoi(value);
    else if (key == "decoder_depth") cfg.decoder_depth = std::stoi(value);
    else if (key == "decoder_heads") cfg.decoder_heads = std::stoi(value);
    else if (key == "mask_ratio") cfg.mask_ratio = std::stod(value);
  }
  return cfg;
}

std::uint64_t hash_params(const std::vector<const Parameter*>& params, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (const auto* p : params) {
    h = stable_hash(p->name, h);
    h = stable_hash(std::string_view(reinterpret_cast<const char*>(p->value.data()),
                                     static_cast<std::size_t>(p->value.size()) * sizeof(float)),
                    h);
  }
  return h;
}

}  // namespace

void ModelConfig::validate() const {
  if (patch < 1 || image.height < 1 || image.width < 1 || image.channels < 1) {
    throw ConfigError("model: image and patch sizes must be positive");
  }
  if (image.height % patch != 0 || image.width % patch != 0) {
    throw ConfigError("model: image " + to_string(image) + " does not split into whole " + std::to_string(patch) +
                      "-pixel patches");
  }
  if (embed_dim % 4 != 0 || decoder_dim % 4 != 0) throw ConfigError("model: embedding dims must be divisible by 4");
  if (mask_ratio < 0.0 || mask_ratio >= 1.0) throw ConfigError("model: mask_ratio must lie in [0, 1)");
  if (depth < 1 || decoder_depth < 0 || mlp_ratio < 1) throw ConfigError("model: bad depth or mlp ratio");
}

Matrix apply_class_mask(const Matrix& logits, const ClassMask& mask) {
  if (mask.active.empty()) throw ContractViolation("class mask has no active class");
  std::vector<char> live(static_cast<std::size_t>(logits.cols()), 0);
  for (int c : mask.active) {
    if (c < 0 || c >= logits.cols()) throw ContractViolation("class mask column " + std::to_string(c) + " out of range");
    live[static_cast<std::size_t>(c)] = 1;
  }
  Matrix out = logits;
  for (Eigen::Index c = 0; c < out.cols(); ++c) {
    if (!live[static_cast<std::size_t>(c)]) out.col(c).array() += kMaskedLogit;
  }
  return out;
}

Matrix patchify(std::span<const float> image, const ModelConfig& cfg) {
  if (image.size() != cfg.image.size()) {
    throw InputError("image has " + std::to_string(image.size()) + " values, model expects " + to_string(cfg.image));
  }
  const int p = cfg.patch, c = cfg.image.channels, w = cfg.image.width;
  Matrix out(cfg.num_patches(), cfg.patch_dim());
  for (int gy = 0; gy < cfg.grid_h(); ++gy) {
    for (int gx = 0; gx < cfg.grid_w(); ++gx) {
      float* row = out.row(gy * cfg.grid_w() + gx).data();
      for (int dy = 0; dy < p; ++dy) {
        const float* src = image.data() + (static_cast<std::size_t>(gy * p + dy) * w + gx * p) * c;
        std::copy(src, src + p * c, row + dy * p * c);
      }
    }
  }
  return out;
}

std::vector<float> unpatchify(const Matrix& patches, const ModelConfig& cfg) {
  if (patches.rows() != cfg.num_patches() || patches.cols() != cfg.patch_dim()) {
    throw InputError("unpatchify: patch matrix has the wrong shape");
  }
  const int p = cfg.patch, c = cfg.image.channels, w = cfg.image.width;
  std::vector<float> image(cfg.image.size());
  for (int gy = 0; gy < cfg.grid_h(); ++gy) {
    for (int gx = 0; gx < cfg.grid_w(); ++gx) {
      const float* row = patches.row(gy * cfg.grid_w() + gx).data();
      for (int dy = 0; dy < p; ++dy) {
        std::copy(row + dy * p * c, row + (dy + 1) * p * c,
                  image.data() + (static_cast<std::size_t>(gy * p + dy) * w + gx * p) * c);
      }
    }
  }
  return image;
}

PatchMask mask_patches(std::span<const float> image, const ModelConfig& cfg, double mask_ratio, Rng& rng) {
  cfg.validate();
  if (mask_ratio < 0.0 || mask_ratio >= 1.0) throw ConfigError("mask_ratio must lie in [0, 1)");
  const Matrix patches = patchify(image, cfg);
  const int n = cfg.num_patches();
  const int n_mask = std::min(n - 1, static_cast<int>(std::lround(mask_ratio * n)));
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  shuffle_in_place(order, rng);
  PatchMask out;
  out.masked.assign(order.begin(), order.begin() + n_mask);
  out.visible.assign(order.begin() + n_mask, order.end());
  std::sort(out.masked.begin(), out.masked.end());
  std::sort(out.visible.begin(), out.visible.end());
  out.targets.resize(n_mask, cfg.patch_dim());
  for (int i = 0; i < n_mask; ++i) out.targets.row(i) = patches.row(out.masked[static_cast<std::size_t>(i)]);
  return out;
}

ModelBundle::ModelBundle(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const int d = cfg_.embed_dim;
  patch_embed_ = Linear("encoder.patch_embed", cfg_.patch_dim(), d, rng);
  pos_table_ = sincos_position_table(cfg_.grid_h(), cfg_.grid_w(), d);
  for (int i = 0; i < cfg_.depth; ++i) {
    blocks_.emplace_back("encoder.block" + std::to_string(i), d, cfg_.heads, d * cfg_.mlp_ratio, rng);
  }
  norm_ = LayerNorm("encoder.norm", d);
  head_weight_.name = "head.weight";
  head_weight_.value.resize(0, d);
  head_weight_.zero_grad();
  head_bias_.name = "head.bias";
  head_bias_.decay = false;
  head_bias_.value.resize(1, 0);
  head_bias_.zero_grad();

  const int dd = cfg_.decoder_dim;
  decoder_embed_ = Linear("decoder.embed", d, dd, rng);
  mask_token_.name = "decoder.mask_token";
  mask_token_.decay = false;
  mask_token_.value.resize(1, dd);
  for (Eigen::Index i = 0; i < dd; ++i) mask_token_.value(0, i) = static_cast<float>(0.02 * standard_normal(rng));
  mask_token_.zero_grad();
  decoder_pos_table_ = sincos_position_table(cfg_.grid_h(), cfg_.grid_w(), dd);
  for (int i = 0; i < cfg_.decoder_depth; ++i) {
    decoder_blocks_.emplace_back("decoder.block" + std::to_string(i), dd, cfg_.decoder_heads, dd * cfg_.mlp_ratio,
                                 rng);
  }
  decoder_norm_ = LayerNorm("decoder.norm", dd);
  decoder_predict_ = Linear("decoder.predict", dd, cfg_.patch_dim(), rng);
}

int ModelBundle::column_of(int class_id) const {
  const auto it = std::find(seen_classes_.begin(), seen_classes_.end(), class_id);
  if (it == seen_classes_.end()) throw ContractViolation("class " + std::to_string(class_id) + " is not in the head");
  return static_cast<int>(it - seen_classes_.begin());
}

bool ModelBundle::has_class(int class_id) const {
  return std::find(seen_classes_.begin(), seen_classes_.end(), class_id) != seen_classes_.end();
}

ClassMask ModelBundle::mask_for(std::span<const int> class_ids) const {
  ClassMask mask;
  for (int c : class_ids) mask.active.push_back(column_of(c));
  std::sort(mask.active.begin(), mask.active.end());
  mask.active.erase(std::unique(mask.active.begin(), mask.active.end()), mask.active.end());
  return mask;
}

ClassMask ModelBundle::full_mask() const {
  ClassMask mask;
  mask.active.resize(seen_classes_.size());
  std::iota(mask.active.begin(), mask.active.end(), 0);
  return mask;
}

int ModelBundle::expand_classification_head(std::span<const int> new_classes, Rng& rng, bool allow_recurring) {
  std::vector<int> fresh;
  for (int c : new_classes) {
    if (c < 0) throw ContractViolation("class ids must be non-negative");
    const bool known = has_class(c) || std::find(fresh.begin(), fresh.end(), c) != fresh.end();
    if (known) {
      if (!allow_recurring) throw ContractViolation("class " + std::to_string(c) + " is already in the head");
      continue;
    }
    fresh.push_back(c);
  }
  if (fresh.empty()) return 0;
  const Eigen::Index old_rows = head_weight_.value.rows();
  const Eigen::Index rows = old_rows + static_cast<Eigen::Index>(fresh.size());
  Matrix weight(rows, cfg_.embed_dim);
  weight.topRows(old_rows) = head_weight_.value;
  for (Eigen::Index r = old_rows; r < rows; ++r) {
    for (Eigen::Index c = 0; c < weight.cols(); ++c) weight(r, c) = static_cast<float>(0.02 * standard_normal(rng));
  }
  Matrix bias = Matrix::Zero(1, rows);
  bias.leftCols(old_rows) = head_bias_.value;
  head_weight_.value = std::move(weight);
  head_bias_.value = std::move(bias);
  head_weight_.zero_grad();
  head_bias_.zero_grad();
  seen_classes_.insert(seen_classes_.end(), fresh.begin(), fresh.end());
  return static_cast<int>(fresh.size());
}

Matrix ModelBundle::encode(const Matrix& patches, std::span<const int> positions, int seq_len,
                           EncoderCache* cache) const {
  if (patches.cols() != cfg_.patch_dim()) throw InputError("patch rows have the wrong width for this model");
  if (static_cast<std::size_t>(patches.rows()) != positions.size() || seq_len < 1 || patches.rows() % seq_len != 0) {
    throw InputError("patch rows do not form whole sequences");
  }
  Matrix x = patch_embed_.forward(patches, cache ? &cache->embed : nullptr);
  for (Eigen::Index r = 0; r < x.rows(); ++r) x.row(r) += pos_table_.row(positions[static_cast<std::size_t>(r)]);
  if (cache) {
    cache->blocks.resize(blocks_.size());
    cache->seq_len = seq_len;
  }
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    x = blocks_[i].forward(x, seq_len, cache ? &cache->blocks[i] : nullptr);
  }
  return norm_.forward(x, cache ? &cache->norm : nullptr);
}

Matrix ModelBundle::backward_encoder(const Matrix& d_tokens, const EncoderCache& cache) {
  Matrix d = norm_.backward(d_tokens, cache.norm);
  for (std::size_t i = blocks_.size(); i-- > 0;) d = blocks_[i].backward(d, cache.seq_len, cache.blocks[i]);
  return patch_embed_.backward(d, cache.embed);
}

Matrix ModelBundle::encode_pooled(const Matrix& patches, EncoderCache* cache) const {
  const int n = cfg_.num_patches();
  if (patches.rows() % n != 0) throw InputError("patch rows do not form whole images");
  std::vector<int> positions(static_cast<std::size_t>(patches.rows()));
  for (std::size_t r = 0; r < positions.size(); ++r) positions[r] = static_cast<int>(r % static_cast<std::size_t>(n));
  const Matrix tokens = encode(patches, positions, n, cache);
  const Eigen::Index batch = patches.rows() / n;
  Matrix pooled(batch, cfg_.embed_dim);
  for (Eigen::Index b = 0; b < batch; ++b) pooled.row(b) = tokens.middleRows(b * n, n).colwise().mean();
  return pooled;
}

Matrix ModelBundle::forward_classify(const Matrix& patches, ClassifyCache* cache) const {
  Matrix pooled = encode_pooled(patches, cache ? &cache->encoder : nullptr);
  // One dot product per logit, so a column's value does not depend on how
  // many other columns the head has.
  Matrix logits(pooled.rows(), head_weight_.value.rows());
  for (Eigen::Index b = 0; b < pooled.rows(); ++b) {
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      logits(b, c) = pooled.row(b).dot(head_weight_.value.row(c)) + head_bias_.value(0, c);
    }
  }
  if (cache) cache->pooled = std::move(pooled);
  return logits;
}

void ModelBundle::backward_classify(const Matrix& d_logits, const ClassifyCache& cache) {
  head_weight_.accumulate(d_logits.transpose() * cache.pooled);
  head_bias_.accumulate(d_logits.colwise().sum());
  const Matrix d_pooled = d_logits * head_weight_.value;
  const int n = cfg_.num_patches();
  Matrix d_tokens(d_pooled.rows() * n, cfg_.embed_dim);
  const float inv = 1.0f / static_cast<float>(n);
  for (Eigen::Index b = 0; b < d_pooled.rows(); ++b) {
    d_tokens.middleRows(b * n, n).rowwise() = d_pooled.row(b) * inv;
  }
  backward_encoder(d_tokens, cache.encoder);
}

Matrix ModelBundle::forward_reconstruct(const MaskedBatch& batch, ReconstructCache* cache) const {
  const int n = cfg_.num_patches();
  const int nv = batch.visible_per_image;
  const int nm = batch.masked_per_image;
  if (nm == 0) return Matrix(0, cfg_.patch_dim());
  if (nv + nm != n) throw InputError("masked batch does not cover every patch");
  const Matrix tokens = encode(batch.visible, batch.visible_pos, nv, cache ? &cache->encoder : nullptr);
  const Matrix embedded = decoder_embed_.forward(tokens, cache ? &cache->embed : nullptr);
  Matrix full(static_cast<Eigen::Index>(batch.batch) * n, cfg_.decoder_dim);
  for (int b = 0; b < batch.batch; ++b) {
    for (int i = 0; i < nm; ++i) {
      full.row(b * n + batch.masked_pos[static_cast<std::size_t>(b * nm + i)]) = mask_token_.value.row(0);
    }
    for (int i = 0; i < nv; ++i) {
      full.row(b * n + batch.visible_pos[static_cast<std::size_t>(b * nv + i)]) = embedded.row(b * nv + i);
    }
  }
  for (Eigen::Index r = 0; r < full.rows(); ++r) full.row(r) += decoder_pos_table_.row(r % n);
  if (cache) cache->blocks.resize(decoder_blocks_.size());
  for (std::size_t i = 0; i < decoder_blocks_.size(); ++i) {
    full = decoder_blocks_[i].forward(full, n, cache ? &cache->blocks[i] : nullptr);
  }
  const Matrix pred_all =
      decoder_predict_.forward(decoder_norm_.forward(full, cache ? &cache->norm : nullptr), cache ? &cache->predict : nullptr);
  Matrix pred(static_cast<Eigen::Index>(batch.batch) * nm, cfg_.patch_dim());
  for (int b = 0; b < batch.batch; ++b) {
    for (int i = 0; i < nm; ++i) {
      pred.row(b * nm + i) = pred_all.row(b * n + batch.masked_pos[static_cast<std::size_t>(b * nm + i)]);
    }
  }
  return pred;
}

void ModelBundle::backward_reconstruct(const Matrix& d_pred, const MaskedBatch& batch, const ReconstructCache& cache) {
  const int n = cfg_.num_patches();
  const int nv = batch.visible_per_image;
  const int nm = batch.masked_per_image;
  if (nm == 0) return;
  Matrix d_all = Matrix::Zero(static_cast<Eigen::Index>(batch.batch) * n, cfg_.patch_dim());
  for (int b = 0; b < batch.batch; ++b) {
    for (int i = 0; i < nm; ++i) {
      d_all.row(b * n + batch.masked_pos[static_cast<std::size_t>(b * nm + i)]) = d_pred.row(b * nm + i);
    }
  }
  Matrix d = decoder_norm_.backward(decoder_predict_.backward(d_all, cache.predict), cache.norm);
  for (std::size_t i = decoder_blocks_.size(); i-- > 0;) d = decoder_blocks_[i].backward(d, n, cache.blocks[i]);
  Matrix d_mask = Matrix::Zero(1, cfg_.decoder_dim);
  Matrix d_embedded(static_cast<Eigen::Index>(batch.batch) * nv, cfg_.decoder_dim);
  for (int b = 0; b < batch.batch; ++b) {
    for (int i = 0; i < nm; ++i) d_mask += d.row(b * n + batch.masked_pos[static_cast<std::size_t>(b * nm + i)]);
    for (int i = 0; i < nv; ++i) {
      d_embedded.row(b * nv + i) = d.row(b * n + batch.visible_pos[static_cast<std::size_t>(b * nv + i)]);
    }
  }
  mask_token_.accumulate(d_mask);
  backward_encoder(decoder_embed_.backward(d_embedded, cache.embed), cache.encoder);
}

std::vector<Parameter*> ModelBundle::encoder_parameters() {
  std::vector<Parameter*> out{&patch_embed_.weight, &patch_embed_.bias};
  for (auto& b : blocks_) b.collect(out);
  out.push_back(&norm_.gamma);
  out.push_back(&norm_.beta);
  return out;
}

std::vector<Parameter*> ModelBundle::decoder_parameters() {
  std::vector<Parameter*> out{&decoder_embed_.weight, &decoder_embed_.bias, &mask_token_};
  for (auto& b : decoder_blocks_) b.collect(out);
  out.push_back(&decoder_norm_.gamma);
  out.push_back(&decoder_norm_.beta);
  out.push_back(&decoder_predict_.weight);
  out.push_back(&decoder_predict_.bias);
  return out;
}

std::vector<Parameter*> ModelBundle::parameters() {
  auto out = encoder_parameters();
  out.push_back(&head_weight_);
  out.push_back(&head_bias_);
  for (auto* p : decoder_parameters()) out.push_back(p);
  return out;
}

std::vector<const Parameter*> ModelBundle::parameters() const {
  auto mutable_params = const_cast<ModelBundle*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

void ModelBundle::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

std::uint64_t ModelBundle::weights_hash() const {
  std::uint64_t h = hash_params(parameters(), 0);
  for (int c : seen_classes_) h = mix64(h ^ static_cast<std::uint64_t>(c));
  return h;
}

std::uint64_t ModelBundle::backbone_hash() const {
  auto* self = const_cast<ModelBundle*>(this);
  std::vector<const Parameter*> params;
  for (auto* p : self->encoder_parameters()) params.push_back(p);
  for (auto* p : self->decoder_parameters()) params.push_back(p);
  return hash_params(params, 1);
}

void ModelBundle::save(std::ostream& out) const {
  out.write(kModelMagic, sizeof(kModelMagic));
  write_string(out, model_config_string(cfg_));
  const std::uint64_t n_classes = seen_classes_.size();
  out.write(reinterpret_cast<const char*>(&n_classes), sizeof(n_classes));
  for (int c : seen_classes_) {
    const std::int64_t v = c;
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  const auto params = parameters();
  const std::uint64_t n_params = params.size();
  out.write(reinterpret_cast<const char*>(&n_params), sizeof(n_params));
  for (const auto* p : params) {
    write_string(out, p->name);
    write_matrix(out, p->value);
  }
}

ModelBundle ModelBundle::load(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kModelMagic, sizeof(magic)) != 0) throw InputError("not a model checkpoint");
  ModelBundle model(parse_model_config(read_string(in)), 0);
  std::uint64_t n_classes = 0;
  in.read(reinterpret_cast<char*>(&n_classes), sizeof(n_classes));
  for (std::uint64_t i = 0; i < n_classes; ++i) {
    std::int64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    model.seen_classes_.push_back(static_cast<int>(v));
  }
  std::uint64_t n_params = 0;
  in.read(reinterpret_cast<char*>(&n_params), sizeof(n_params));
  auto params = model.parameters();
  if (!in || n_params != params.size()) throw InputError("checkpoint parameter count does not match its config");
  for (auto* p : params) {
    const std::string name = read_string(in);
    if (name != p->name) throw InputError("checkpoint parameter '" + name + "' where '" + p->name + "' was expected");
    p->value = read_matrix(in);
    p->zero_grad();
  }
  if (model.head_weight_.value.rows() != static_cast<Eigen::Index>(n_classes)) {
    throw InputError("checkpoint head width does not match its class roster");
  }
  return model;
}

void ModelBundle::save(const std::filesystem::path& file) const {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw InputError("cannot write checkpoint " + file.string());
  save(out);
}

ModelBundle ModelBundle::load(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw InputError("cannot read checkpoint " + file.string());
  return load(in);
}

Matrix gather_patches(const ImageStore& images, std::span<const std::size_t> indices, const ModelConfig& cfg) {
  const int n = cfg.num_patches();
  Matrix out(static_cast<Eigen::Index>(indices.size()) * n, cfg.patch_dim());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    out.middleRows(static_cast<Eigen::Index>(i) * n, n) = patchify(images.image(indices[i]), cfg);
  }
  return out;
}

MaskedBatch make_masked_batch(const ImageStore& images, std::span<const std::size_t> indices, const ModelConfig& cfg,
                              double mask_ratio, Rng& rng) {
  MaskedBatch batch;
  batch.batch = static_cast<int>(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    PatchMask mask = mask_patches(images.image(indices[i]), cfg, mask_ratio, rng);
    if (i == 0) {
      batch.visible_per_image = static_cast<int>(mask.visible.size());
      batch.masked_per_image = static_cast<int>(mask.masked.size());
      batch.visible.resize(static_cast<Eigen::Index>(indices.size()) * batch.visible_per_image, cfg.patch_dim());
      batch.targets.resize(static_cast<Eigen::Index>(indices.size()) * batch.masked_per_image, cfg.patch_dim());
    }
    const Matrix patches = patchify(images.image(indices[i]), cfg);
    for (int v = 0; v < batch.visible_per_image; ++v) {
      batch.visible.row(static_cast<Eigen::Index>(i) * batch.visible_per_image + v) =
          patches.row(mask.visible[static_cast<std::size_t>(v)]);
    }
    if (batch.masked_per_image > 0) {
      batch.targets.middleRows(static_cast<Eigen::Index>(i) * batch.masked_per_image, batch.masked_per_image) =
          mask.targets;
    }
    batch.visible_pos.insert(batch.visible_pos.end(), mask.visible.begin(), mask.visible.end());
    batch.masked_pos.insert(batch.masked_pos.end(), mask.masked.begin(), mask.masked.end());
  }
  return batch;
}

std::string model_config_string(const ModelConfig& cfg) {
  std::ostringstream out;
  out.precision(17);
  out << "image=" << to_string(cfg.image) << ";patch=" << cfg.patch << ";embed_dim=" << cfg.embed_dim
      << ";depth=" << cfg.depth << ";heads=" << cfg.heads << ";mlp_ratio=" << cfg.mlp_ratio
      << ";decoder_dim=" << cfg.decoder_dim << ";decoder_depth=" << cfg.decoder_depth
      << ";decoder_heads=" << cfg.decoder_heads << ";mask_ratio=" << cfg.mask_ratio;
  return out.str();
}

std::uint64_t config_hash(const ModelConfig& cfg) { return stable_hash(model_config_string(cfg)); }

}  // namespace dietcl
