#pragma once

#include <cstdint>
#include <filesystem>

#include "dietcl/corpus.hpp"

namespace dietcl {

/// Procedural small-image corpus standing in for a real labeled dataset.
///
/// Every class is a fixed arrangement of `parts_per_class` stroke primitives
/// drawn from a shared bank, so classes overlap in their parts and differ in
/// which parts sit where. Instances add positional jitter, contrast changes,
/// random distractor parts, a smooth background and pixel noise.
struct SyntheticConfig {
  int num_classes = 20;
  int per_class = 500;
  ImageShape shape{16, 16, 1};
  int primitives = 12;
  int parts_per_class = 3;
  int primitive_size = 5;
  int jitter = 1;
  int distractors = 1;
  double noise = 0.08;
  double background = 0.25;
  // When set, examples get timestamps: class c is centred at c / num_classes
  // with spread `time_spread`, so a time-ordered stream drifts across classes.
  bool timestamps = false;
  double time_spread = 0.1;
  std::uint64_t seed = 7;

  void validate() const;
};

Corpus make_synthetic_corpus(const SyntheticConfig& cfg);

/// Writes `images.pack` and `manifest.tsv` into `dir`; load_corpus() on the
/// manifest returns an equal corpus.
void write_corpus(const std::filesystem::path& dir, const Corpus& corpus);

}  // namespace dietcl
