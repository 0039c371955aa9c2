#include "dietcl/optim.hpp"

#include <cmath>
#include <istream>
#include <ostream>

namespace dietcl {

namespace {

Matrix grown(const Matrix& old, Eigen::Index rows, Eigen::Index cols) {
  Matrix out = Matrix::Zero(rows, cols);
  const Eigen::Index r = std::min(rows, old.rows());
  const Eigen::Index c = std::min(cols, old.cols());
  out.topLeftCorner(r, c) = old.topLeftCorner(r, c);
  return out;
}

}  // namespace

void AdamW::step(const std::vector<Parameter*>& params, double lr) {
  const float b1 = static_cast<float>(cfg_.beta1);
  const float b2 = static_cast<float>(cfg_.beta2);
  for (Parameter* p : params) {
    if (!p->touched || p->value.size() == 0) continue;
    State& s = state_[p->name];
    if (s.m.rows() != p->value.rows() || s.m.cols() != p->value.cols()) {
      s.m = grown(s.m, p->value.rows(), p->value.cols());
      s.v = grown(s.v, p->value.rows(), p->value.cols());
    }
    ++s.steps;
    s.m = b1 * s.m + (1.0f - b1) * p->grad;
    s.v = b2 * s.v + (1.0f - b2) * p->grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.steps));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.steps));
    const float step_size = static_cast<float>(lr / c1);
    const float inv_c2 = static_cast<float>(1.0 / std::sqrt(c2));
    const float eps = static_cast<float>(cfg_.eps);
    if (p->decay && cfg_.weight_decay > 0.0) p->value *= static_cast<float>(1.0 - lr * cfg_.weight_decay);
    p->value.array() -= step_size * s.m.array() / (s.v.array().sqrt() * inv_c2 + eps);
  }
}

void AdamW::reset() { state_.clear(); }

void AdamW::save(std::ostream& out) const {
  const std::uint64_t n = state_.size();
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  for (const auto& [name, s] : state_) {
    const std::uint64_t len = name.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(name.data(), static_cast<std::streamsize>(len));
    out.write(reinterpret_cast<const char*>(&s.steps), sizeof(s.steps));
    write_matrix(out, s.m);
    write_matrix(out, s.v);
  }
}

void AdamW::load(std::istream& in) {
  state_.clear();
  std::uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof(n));
  for (std::uint64_t i = 0; in && i < n; ++i) {
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!in || len > 4096) throw InputError("corrupt optimizer state");
    std::string name(len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(len));
    State s;
    in.read(reinterpret_cast<char*>(&s.steps), sizeof(s.steps));
    s.m = read_matrix(in);
    s.v = read_matrix(in);
    state_.emplace(std::move(name), std::move(s));
  }
  if (!in) throw InputError("truncated optimizer state");
}

double CosineSchedule::at(std::int64_t step) const {
  if (length <= 1) return peak;
  constexpr double kPi = 3.14159265358979323846;
  const double progress = static_cast<double>(std::min(step, length)) / static_cast<double>(length);
  return 0.5 * peak * (1.0 + std::cos(kPi * progress));
}

double scaled_learning_rate(double base_lr, int effective_batch, int lr_reference_batch) {
  return base_lr * static_cast<double>(effective_batch) / static_cast<double>(lr_reference_batch);
}

}  // namespace dietcl
