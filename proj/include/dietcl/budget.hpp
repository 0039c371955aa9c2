#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace dietcl {

/// Kinds of compute a trainer may spend. One unit is one forward-backward
/// pass at the reference batch size.
enum class OpKind {
  single_view_step,            // 1 unit
  dual_view_step,              // 2 units: two augmented views, two backward passes
  importance_estimation_step,  // 1 unit: EWC/MAS importance pass
};

int unit_cost(OpKind kind);
std::string to_string(OpKind kind);
OpKind op_kind_from_string(const std::string& name);

struct LedgerEntry {
  std::string phase;
  OpKind kind = OpKind::single_view_step;
  std::int64_t units = 0;
  std::int64_t cumulative = 0;
  // Per-source batch composition of the charged passes, e.g. "l=16,u=16,m=16".
  std::string composition;
};

/// Hard per-task compute ledger. `spent() <= total()` always holds: a charge
/// that would overshoot throws BudgetExhausted and leaves the ledger untouched.
class BudgetAccountant {
 public:
  explicit BudgetAccountant(std::int64_t total);

  std::int64_t total() const { return total_; }
  std::int64_t spent() const { return spent_; }
  std::int64_t remaining() const { return total_ - spent_; }
  const std::vector<LedgerEntry>& ledger() const { return ledger_; }

  bool can_afford(OpKind kind, std::int64_t count = 1) const;
  void charge(const std::string& phase, OpKind kind, std::int64_t count, std::string composition = {});

  /// Units recorded under `phase`.
  std::int64_t spent_in(const std::string& phase) const;

  /// Line records: phase, op kind, units, cumulative, composition.
  void save(const std::filesystem::path& file) const;
  static BudgetAccountant load(const std::filesystem::path& file, std::int64_t total);

 private:
  std::int64_t total_;
  std::int64_t spent_ = 0;
  std::vector<LedgerEntry> ledger_;
};

/// Two-phase split of a per-task budget: `joint` units on the labeled +
/// unlabeled + buffer objective, the rest on buffer-only fine-tuning.
struct BudgetPlan {
  std::int64_t total = 0;
  std::int64_t joint = 0;
  std::int64_t finetune = 0;
  std::int64_t threshold = 0;
};

BudgetPlan split_budget(std::int64_t total, std::int64_t threshold);

/// Evaluates a candidate threshold and returns the average accuracy up to
/// validation task k (1-based).
using ThresholdRunner = std::function<double(std::int64_t threshold, int k)>;

/// Candidate with the highest runner score; ties go to the smaller threshold.
std::int64_t select_threshold(const std::vector<std::int64_t>& candidates, int validation_tasks,
                              const ThresholdRunner& runner);

}  // namespace dietcl
