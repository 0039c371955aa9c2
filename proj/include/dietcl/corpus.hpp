#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dietcl/core.hpp"

namespace dietcl {

/// One image of a corpus. Pixels live in the owning corpus' ImageStore and are
/// addressed by `image`; examples are cheap to copy between tasks and buffers.
struct Example {
  std::string id;
  std::size_t image = 0;
  std::optional<int> label;
  std::optional<double> timestamp;
  // Ground truth of an example whose label was withheld by sparsification.
  // Trainers never read it; it only lets a task be re-sparsified and lets
  // analysis code score unlabeled data.
  std::optional<int> withheld_label;
};

/// Contiguous HWC float storage for same-shaped images with values in [0,1].
class ImageStore {
 public:
  ImageStore() = default;
  explicit ImageStore(ImageShape shape) : shape_(shape) {}

  const ImageShape& shape() const { return shape_; }
  std::size_t size() const { return shape_.size() == 0 ? 0 : pixels_.size() / shape_.size(); }

  std::size_t add(std::span<const float> image);
  std::span<const float> image(std::size_t index) const;

 private:
  ImageShape shape_;
  std::vector<float> pixels_;
};

struct Corpus {
  ImageShape shape;
  int num_classes = 0;
  std::vector<Example> examples;
  ImageStore images;
};

/// Reads a line-delimited manifest: `id<TAB>path<TAB>class[<TAB>timestamp]`.
/// Paths are relative to the manifest's directory and name either a binary
/// PGM/PPM file or an entry `file.pack#index` of an image pack. Empty lines
/// and lines starting with '#' are skipped; class or timestamp may be empty
/// or '-'.
Corpus load_corpus(const std::filesystem::path& manifest);

struct ManifestRecord {
  std::string id;
  std::string path;
  std::optional<int> label;
  std::optional<double> timestamp;
};

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& manifest);
void write_manifest(const std::filesystem::path& manifest, std::span<const ManifestRecord> records);

/// Image pack: "DCLPACK1", then uint32 count, height, width, channels, then
/// count*H*W*C little-endian float32 values.
void write_image_pack(const std::filesystem::path& file, const ImageStore& images);
ImageStore read_image_pack(const std::filesystem::path& file);

/// Binary netpbm (P5 grey / P6 RGB, maxval <= 255) scaled to [0,1].
std::vector<float> read_netpbm(const std::filesystem::path& file, ImageShape& shape);

}  // namespace dietcl
