#include "dietcl/buffer.hpp"

#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace dietcl {

namespace {

/// `quota` draws from `items`: without replacement when possible.
void draw_from(const std::vector<BufferEntry>& items, std::size_t quota, Rng& rng,
               std::vector<BufferEntry>& out) {
  if (quota == 0) return;
  if (items.size() >= quota) {
    std::vector<std::size_t> idx(items.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < quota; ++i) {
      std::swap(idx[i], idx[i + uniform_index(rng, idx.size() - i)]);
      out.push_back(items[idx[i]]);
    }
  } else {
    for (std::size_t i = 0; i < quota; ++i) out.push_back(items[uniform_index(rng, items.size())]);
  }
}

std::vector<BufferEntry> balanced_over(const std::vector<const std::vector<BufferEntry>*>& groups,
                                       std::size_t batch, Rng& rng) {
  if (groups.empty()) throw SamplingError("buffer has no nonempty task to sample from");
  if (batch == 0) throw ContractViolation("buffer batch size must be >= 1");
  const auto quota = balanced_quotas(groups.size(), batch, rng);
  std::vector<BufferEntry> out;
  out.reserve(batch);
  for (std::size_t g = 0; g < groups.size(); ++g) draw_from(*groups[g], quota[g], rng, out);
  return out;
}

std::unordered_map<std::string, const Example*> index_corpus(const Corpus& corpus) {
  std::unordered_map<std::string, const Example*> by_id;
  for (const auto& ex : corpus.examples) by_id.emplace(ex.id, &ex);
  return by_id;
}

void write_entries(std::ostream& out, const std::vector<BufferEntry>& entries) {
  for (const auto& e : entries) out << e.task << '\t' << e.id << '\t' << e.label << '\n';
}

BufferEntry read_entry(const std::string& line, const std::unordered_map<std::string, const Example*>& by_id) {
  std::istringstream fields(line);
  BufferEntry e;
  fields >> e.task >> e.id >> e.label;
  const auto it = by_id.find(e.id);
  if (!fields || it == by_id.end()) throw IngestionError("buffer snapshot entry '" + line + "' is not in the corpus");
  e.image = it->second->image;
  return e;
}

}  // namespace

std::vector<std::size_t> balanced_quotas(std::size_t groups, std::size_t batch, Rng& rng) {
  std::vector<std::size_t> order(groups);
  std::iota(order.begin(), order.end(), 0);
  shuffle_in_place(order, rng);
  std::vector<std::size_t> quota(groups, groups ? batch / groups : 0);
  for (std::size_t i = 0; groups && i < batch % groups; ++i) ++quota[order[i]];
  return quota;
}

void BalancedBuffer::update(const StreamTask& task) {
  if (per_task_.count(task.index)) {
    throw ContractViolation("task " + std::to_string(task.index) + " was already inserted into the buffer");
  }
  auto& entries = per_task_[task.index];
  entries.reserve(task.labeled.size());
  for (const auto& ex : task.labeled) {
    if (!ex.label) throw ContractViolation("buffer only stores labeled examples (" + ex.id + ")");
    entries.push_back(BufferEntry{ex.id, ex.image, *ex.label, task.index});
  }
}

std::vector<BufferEntry> BalancedBuffer::sample_balanced(std::size_t batch, Rng& rng,
                                                         std::optional<int> exclude) const {
  std::vector<const std::vector<BufferEntry>*> groups;
  for (const auto& [t, entries] : per_task_) {
    if (!entries.empty() && (!exclude || *exclude != t)) groups.push_back(&entries);
  }
  return balanced_over(groups, batch, rng);
}

std::vector<BufferEntry> BalancedBuffer::sample_uniform(std::size_t batch, Rng& rng,
                                                        std::optional<int> exclude) const {
  std::vector<const BufferEntry*> pool;
  for (const auto& [t, entries] : per_task_) {
    if (exclude && *exclude == t) continue;
    for (const auto& e : entries) pool.push_back(&e);
  }
  if (pool.empty()) throw SamplingError("buffer is empty");
  std::vector<BufferEntry> out;
  out.reserve(batch);
  for (std::size_t i = 0; i < batch; ++i) out.push_back(*pool[uniform_index(rng, pool.size())]);
  return out;
}

std::size_t BalancedBuffer::size() const {
  std::size_t n = 0;
  for (const auto& [t, entries] : per_task_) n += entries.size();
  return n;
}

std::size_t BalancedBuffer::nonempty_tasks(std::optional<int> exclude) const {
  std::size_t n = 0;
  for (const auto& [t, entries] : per_task_) {
    if (!entries.empty() && (!exclude || *exclude != t)) ++n;
  }
  return n;
}

void BalancedBuffer::save(const std::filesystem::path& file) const {
  std::ofstream out(file);
  if (!out) throw IngestionError("cannot write buffer snapshot " + file.string());
  out << "# task\tid\tlabel\n";
  for (const auto& [t, entries] : per_task_) {
    out << "#task\t" << t << '\n';
    write_entries(out, entries);
  }
}

BalancedBuffer BalancedBuffer::load(const std::filesystem::path& file, const Corpus& corpus) {
  std::ifstream in(file);
  if (!in) throw IngestionError("cannot read buffer snapshot " + file.string());
  const auto by_id = index_corpus(corpus);
  BalancedBuffer buf;
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("#task\t", 0) == 0) {
      buf.per_task_[std::stoi(line.substr(6))];
      continue;
    }
    if (line.empty() || line[0] == '#') continue;
    auto e = read_entry(line, by_id);
    buf.per_task_[e.task].push_back(std::move(e));
  }
  return buf;
}

ReservoirBuffer::ReservoirBuffer(std::size_t capacity, std::uint64_t seed) : capacity_(capacity), rng_(seed) {}

void ReservoirBuffer::offer(const Example& item, int task) {
  if (!item.label) throw ContractViolation("reservoir only accepts labeled examples (" + item.id + ")");
  BufferEntry entry{item.id, item.image, *item.label, task};
  ++seen_;
  if (capacity_ == 0 || slots_.size() < capacity_) {
    slots_.push_back(std::move(entry));
    return;
  }
  const std::size_t j = uniform_index(rng_, seen_);
  if (j < capacity_) slots_[j] = std::move(entry);
}

std::vector<BufferEntry> ReservoirBuffer::sample_uniform(std::size_t batch, Rng& rng) const {
  if (slots_.empty()) throw SamplingError("reservoir is empty");
  std::vector<BufferEntry> out;
  out.reserve(batch);
  for (std::size_t i = 0; i < batch; ++i) out.push_back(slots_[uniform_index(rng, slots_.size())]);
  return out;
}

std::vector<BufferEntry> ReservoirBuffer::sample_balanced(std::size_t batch, Rng& rng) const {
  std::map<int, std::vector<BufferEntry>> by_task;
  for (const auto& e : slots_) by_task[e.task].push_back(e);
  std::vector<const std::vector<BufferEntry>*> groups;
  for (const auto& [t, entries] : by_task) groups.push_back(&entries);
  return balanced_over(groups, batch, rng);
}

void ReservoirBuffer::save(const std::filesystem::path& file) const {
  std::ofstream out(file);
  if (!out) throw IngestionError("cannot write reservoir snapshot " + file.string());
  out << "#capacity\t" << capacity_ << "\n#seen\t" << seen_ << "\n#rng\t" << rng_ << '\n';
  write_entries(out, slots_);
}

ReservoirBuffer ReservoirBuffer::load(const std::filesystem::path& file, const Corpus& corpus) {
  std::ifstream in(file);
  if (!in) throw IngestionError("cannot read reservoir snapshot " + file.string());
  const auto by_id = index_corpus(corpus);
  ReservoirBuffer buf;
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("#capacity\t", 0) == 0) buf.capacity_ = std::stoul(line.substr(10));
    else if (line.rfind("#seen\t", 0) == 0) buf.seen_ = std::stoul(line.substr(6));
    else if (line.rfind("#rng\t", 0) == 0) {
      std::istringstream state(line.substr(5));
      state >> buf.rng_;
    } else if (!line.empty() && line[0] != '#') {
      buf.slots_.push_back(read_entry(line, by_id));
    }
  }
  return buf;
}

}  // namespace dietcl
