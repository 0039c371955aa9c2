#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "dietcl/layers.hpp"

namespace dietcl {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

/// Decoupled-weight-decay Adam. State is keyed by parameter name; when a
/// parameter grows (head expansion) its moments grow with zeros and the old
/// entries are kept. Parameters not touched by the last backward pass are
/// left alone.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  void step(const std::vector<Parameter*>& params, double lr);

  /// Drops every moment estimate (used when the model is re-initialised).
  void reset();

  void save(std::ostream& out) const;
  void load(std::istream& in);

  const AdamWConfig& config() const { return cfg_; }

 private:
  struct State {
    Matrix m;
    Matrix v;
    std::int64_t steps = 0;
  };
  AdamWConfig cfg_;
  std::map<std::string, State> state_;
};

/// Half-cosine decay from `peak` to 0 over `length` optimizer steps.
struct CosineSchedule {
  double peak = 1e-4;
  std::int64_t length = 1;

  double at(std::int64_t step) const;
};

/// Base learning rate scaled linearly from the reference batch to the
/// effective batch.
double scaled_learning_rate(double base_lr, int effective_batch, int lr_reference_batch = 256);

}  // namespace dietcl
