#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dietcl {

/// Base of every error raised by the framework.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration (bad rates, too few classes, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Corpus or manifest content that cannot be ingested.
class IngestionError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition of an operation was violated by the caller.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Tensor shapes or image dimensions that do not match.
class InputError : public Error {
 public:
  using Error::Error;
};

class SamplingError : public Error {
 public:
  using Error::Error;
};

class EvaluationError : public Error {
 public:
  using Error::Error;
};

/// A charge would push spent units past the per-task total.
class BudgetExhausted : public Error {
 public:
  using Error::Error;
};

/// A loss component came out NaN or infinite. `source()` names the component.
class NumericalError : public Error {
 public:
  NumericalError(std::string source, const std::string& what)
      : Error(what), source_(std::move(source)) {}
  const std::string& source() const noexcept { return source_; }

 private:
  std::string source_;
};

using Rng = std::mt19937_64;

/// Uniform index in [0, n). n must be positive.
std::size_t uniform_index(Rng& rng, std::size_t n);

/// Uniform double in [0, 1) from the top 53 bits of one draw.
double uniform01(Rng& rng);

/// Standard normal draw (Box-Muller, one value per two uniforms).
double standard_normal(Rng& rng);

/// In-place Fisher-Yates shuffle driven by `uniform_index`.
template <typename T>
void shuffle_in_place(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::swap(items[i - 1], items[uniform_index(rng, i)]);
  }
}

/// Stable 64-bit hash (FNV-1a followed by a splitmix finalizer), independent
/// of the standard library's std::hash.
std::uint64_t stable_hash(std::string_view text, std::uint64_t seed = 0);
std::uint64_t mix64(std::uint64_t x);

/// Derive a child seed from a parent seed and a label.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);

struct ImageShape {
  int height = 0;
  int width = 0;
  int channels = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width) *
           static_cast<std::size_t>(channels);
  }
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

std::string to_string(const ImageShape& shape);

}  // namespace dietcl
