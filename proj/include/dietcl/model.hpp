#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dietcl/corpus.hpp"
#include "dietcl/layers.hpp"

namespace dietcl {

struct ModelConfig {
  ImageShape image{32, 32, 3};
  int patch = 8;
  int embed_dim = 128;
  int depth = 4;
  int heads = 4;
  int mlp_ratio = 4;
  int decoder_dim = 64;
  int decoder_depth = 1;
  int decoder_heads = 4;
  double mask_ratio = 0.75;

  int grid_h() const { return image.height / patch; }
  int grid_w() const { return image.width / patch; }
  int num_patches() const { return grid_h() * grid_w(); }
  int patch_dim() const { return patch * patch * image.channels; }
  /// Throws ConfigError for images that do not split into whole patches.
  void validate() const;
};

/// Head columns (positions in the seen-class order) whose logits stay live.
struct ClassMask {
  std::vector<int> active;
};

/// Pre-softmax value added to inactive logits; exp() of it underflows to 0.
inline constexpr float kMaskedLogit = -1e30f;

/// Copies `logits` and pushes every inactive column to kMaskedLogit.
/// Throws ContractViolation for an empty or out-of-range mask.
Matrix apply_class_mask(const Matrix& logits, const ClassMask& mask);

/// (num_patches x patch_dim) patch rows; row p is grid cell (p / grid_w,
/// p % grid_w) and each row is ordered (dy, dx, channel).
Matrix patchify(std::span<const float> image, const ModelConfig& cfg);
std::vector<float> unpatchify(const Matrix& patches, const ModelConfig& cfg);

struct PatchMask {
  std::vector<int> visible;  // sorted
  std::vector<int> masked;   // sorted
  Matrix targets;            // exact pixel crops of the masked patches, in `masked` order
};

/// Masks round(mask_ratio * num_patches) patches chosen uniformly at random.
PatchMask mask_patches(std::span<const float> image, const ModelConfig& cfg, double mask_ratio, Rng& rng);

struct EncoderCache {
  LinearCache embed;
  std::vector<BlockCache> blocks;
  LayerNormCache norm;
  int seq_len = 0;
};

struct ClassifyCache {
  EncoderCache encoder;
  Matrix pooled;
};

/// Visible patches of a batch of masked images, ready for the MAE path.
struct MaskedBatch {
  int batch = 0;
  int visible_per_image = 0;
  int masked_per_image = 0;
  Matrix visible;                  // (batch * visible_per_image) x patch_dim
  std::vector<int> visible_pos;    // patch index of every visible row
  std::vector<int> masked_pos;     // patch index of every masked target row
  Matrix targets;                  // (batch * masked_per_image) x patch_dim
};

struct ReconstructCache {
  EncoderCache encoder;
  LinearCache embed;
  std::vector<BlockCache> blocks;
  LayerNormCache norm;
  LinearCache predict;
};

/// Encoder, classification head and reconstruction decoder of one learner,
/// plus the roster of classes the head currently covers. Copying a bundle
/// deep-copies every weight.
class ModelBundle {
 public:
  ModelBundle() = default;
  ModelBundle(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const std::vector<int>& seen_classes() const { return seen_classes_; }
  int num_outputs() const { return static_cast<int>(seen_classes_.size()); }

  /// Head column of a class id; throws ContractViolation if unseen.
  int column_of(int class_id) const;
  bool has_class(int class_id) const;
  /// Mask of the head columns of `class_ids` (all must be seen).
  ClassMask mask_for(std::span<const int> class_ids) const;
  ClassMask full_mask() const;

  /// Appends one head row per new class, copying old rows untouched. New rows
  /// are drawn from N(0, 0.02^2) with zero bias. With `allow_recurring` set,
  /// already-seen classes are skipped; otherwise they are a ContractViolation.
  /// Returns the number of classes added.
  int expand_classification_head(std::span<const int> new_classes, Rng& rng, bool allow_recurring = false);

  /// Logits (batch x num_outputs) for full images given as patch rows stacked
  /// image after image.
  Matrix forward_classify(const Matrix& patches, ClassifyCache* cache = nullptr) const;
  /// Pooled encoder features (batch x embed_dim).
  Matrix encode_pooled(const Matrix& patches, EncoderCache* cache = nullptr) const;
  void backward_classify(const Matrix& d_logits, const ClassifyCache& cache);

  /// Predicted pixels of every masked patch, in `batch.masked_pos` order.
  Matrix forward_reconstruct(const MaskedBatch& batch, ReconstructCache* cache = nullptr) const;
  void backward_reconstruct(const Matrix& d_pred, const MaskedBatch& batch, const ReconstructCache& cache);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::vector<Parameter*> encoder_parameters();
  std::vector<Parameter*> decoder_parameters();
  Parameter& head_weight() { return head_weight_; }
  Parameter& head_bias() { return head_bias_; }
  const Parameter& head_weight() const { return head_weight_; }
  const Parameter& head_bias() const { return head_bias_; }
  void zero_grad();

  /// Stable hash over every weight value and the class roster.
  std::uint64_t weights_hash() const;
  /// Hash over encoder and decoder weights only.
  std::uint64_t backbone_hash() const;

  /// Binary checkpoint: magic, config, class roster, then every parameter
  /// by name. Loading reproduces the bundle bit-exactly.
  void save(std::ostream& out) const;
  static ModelBundle load(std::istream& in);
  void save(const std::filesystem::path& file) const;
  static ModelBundle load(const std::filesystem::path& file);

 private:
  Matrix encode(const Matrix& patches, std::span<const int> positions, int seq_len, EncoderCache* cache) const;
  Matrix backward_encoder(const Matrix& d_tokens, const EncoderCache& cache);

  ModelConfig cfg_;
  Linear patch_embed_;
  Matrix pos_table_;
  std::vector<TransformerBlock> blocks_;
  LayerNorm norm_;
  Parameter head_weight_;  // (num_outputs x embed_dim)
  Parameter head_bias_;    // (1 x num_outputs)
  Linear decoder_embed_;
  Parameter mask_token_;
  Matrix decoder_pos_table_;
  std::vector<TransformerBlock> decoder_blocks_;
  LayerNorm decoder_norm_;
  Linear decoder_predict_;
  std::vector<int> seen_classes_;
};

/// Stacks the patch rows of corpus images (image after image).
Matrix gather_patches(const ImageStore& images, std::span<const std::size_t> indices, const ModelConfig& cfg);

/// Masks every image independently and assembles a MaskedBatch.
MaskedBatch make_masked_batch(const ImageStore& images, std::span<const std::size_t> indices,
                              const ModelConfig& cfg, double mask_ratio, Rng& rng);

std::string model_config_string(const ModelConfig& cfg);
std::uint64_t config_hash(const ModelConfig& cfg);

}  // namespace dietcl
