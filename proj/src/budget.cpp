#include "dietcl/budget.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "dietcl/core.hpp"

namespace dietcl {

int unit_cost(OpKind kind) {
  switch (kind) {
    case OpKind::single_view_step: return 1;
    case OpKind::dual_view_step: return 2;
    case OpKind::importance_estimation_step: return 1;
  }
  return 1;
}

std::string to_string(OpKind kind) {
  switch (kind) {
    case OpKind::single_view_step: return "single_view_step";
    case OpKind::dual_view_step: return "dual_view_step";
    case OpKind::importance_estimation_step: return "importance_estimation_step";
  }
  return "unknown";
}

OpKind op_kind_from_string(const std::string& name) {
  if (name == "single_view_step") return OpKind::single_view_step;
  if (name == "dual_view_step") return OpKind::dual_view_step;
  if (name == "importance_estimation_step") return OpKind::importance_estimation_step;
  throw ConfigError("unknown op kind '" + name + "'");
}

BudgetAccountant::BudgetAccountant(std::int64_t total) : total_(total) {
  if (total < 0) throw ConfigError("budget total must be non-negative");
}

bool BudgetAccountant::can_afford(OpKind kind, std::int64_t count) const {
  return count >= 1 && spent_ + unit_cost(kind) * count <= total_;
}

void BudgetAccountant::charge(const std::string& phase, OpKind kind, std::int64_t count, std::string composition) {
  if (count < 1) throw ContractViolation("charge count must be >= 1");
  const std::int64_t units = unit_cost(kind) * count;
  if (spent_ + units > total_) {
    throw BudgetExhausted("charging " + std::to_string(units) + " units in phase '" + phase + "' exceeds budget (" +
                          std::to_string(spent_) + "/" + std::to_string(total_) + " spent)");
  }
  spent_ += units;
  ledger_.push_back(LedgerEntry{phase, kind, units, spent_, std::move(composition)});
}

std::int64_t BudgetAccountant::spent_in(const std::string& phase) const {
  std::int64_t sum = 0;
  for (const auto& e : ledger_) {
    if (e.phase == phase) sum += e.units;
  }
  return sum;
}

void BudgetAccountant::save(const std::filesystem::path& file) const {
  std::ofstream out(file);
  if (!out) throw ConfigError("cannot write ledger " + file.string());
  out << "# phase\top_kind\tunits\tcumulative\tcomposition\n";
  for (const auto& e : ledger_) {
    out << e.phase << '\t' << to_string(e.kind) << '\t' << e.units << '\t' << e.cumulative << '\t'
        << (e.composition.empty() ? "-" : e.composition) << '\n';
  }
}

BudgetAccountant BudgetAccountant::load(const std::filesystem::path& file, std::int64_t total) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read ledger " + file.string());
  BudgetAccountant acct(total);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    LedgerEntry e;
    std::string kind;
    fields >> e.phase >> kind >> e.units >> e.cumulative >> e.composition;
    if (e.composition == "-") e.composition.clear();
    e.kind = op_kind_from_string(kind);
    acct.spent_ += e.units;
    if (acct.spent_ > total || acct.spent_ != e.cumulative) throw ConfigError("inconsistent ledger " + file.string());
    acct.ledger_.push_back(std::move(e));
  }
  return acct;
}

BudgetPlan split_budget(std::int64_t total, std::int64_t threshold) {
  if (total < 1) throw ContractViolation("split_budget: total must be >= 1");
  if (threshold < 1) throw ContractViolation("split_budget: threshold must be >= 1");
  BudgetPlan plan;
  plan.total = total;
  plan.threshold = threshold;
  plan.joint = std::min(total, threshold);
  plan.finetune = total - plan.joint;
  return plan;
}

std::int64_t select_threshold(const std::vector<std::int64_t>& candidates, int validation_tasks,
                              const ThresholdRunner& runner) {
  if (candidates.empty()) throw ConfigError("select_threshold: no candidate thresholds");
  if (validation_tasks < 1) throw ConfigError("select_threshold: need at least one validation task");
  std::vector<std::int64_t> sorted = candidates;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::int64_t best = sorted.front();
  double best_score = runner(best, validation_tasks);
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    const double score = runner(sorted[i], validation_tasks);
    if (score > best_score) {
      best_score = score;
      best = sorted[i];
    }
  }
  return best;
}

}  // namespace dietcl
