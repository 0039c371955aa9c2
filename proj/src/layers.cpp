#include "dietcl/layers.hpp"

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>

namespace dietcl {

void Parameter::zero_grad() {
  grad.setZero(value.rows(), value.cols());
  touched = false;
}

void Parameter::accumulate(const Matrix& g) {
  if (grad.rows() != value.rows() || grad.cols() != value.cols()) grad.setZero(value.rows(), value.cols());
  grad += g;
  touched = true;
}

void write_matrix(std::ostream& out, const Matrix& m) {
  const std::int64_t dims[2] = {m.rows(), m.cols()};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
}

Matrix read_matrix(std::istream& in) {
  std::int64_t dims[2] = {0, 0};
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!in || dims[0] < 0 || dims[1] < 0) throw InputError("corrupt matrix record");
  Matrix m(dims[0], dims[1]);
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
  if (!in) throw InputError("truncated matrix record");
  return m;
}

Linear::Linear(std::string name, int in, int out, Rng& rng) {
  weight.name = name + ".weight";
  bias.name = name + ".bias";
  bias.decay = false;
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  weight.value.resize(in, out);
  for (Eigen::Index i = 0; i < weight.value.size(); ++i) {
    weight.value.data()[i] = static_cast<float>((2.0 * uniform01(rng) - 1.0) * bound);
  }
  bias.value = Matrix::Zero(1, out);
  weight.zero_grad();
  bias.zero_grad();
}

Matrix Linear::forward(const Matrix& x, LinearCache* cache) const {
  if (x.cols() != weight.value.rows()) {
    throw InputError(weight.name + ": input width " + std::to_string(x.cols()) + " != " +
                     std::to_string(weight.value.rows()));
  }
  if (cache) cache->input = x;
  Matrix y = x * weight.value;
  y.rowwise() += bias.value.row(0);
  return y;
}

Matrix Linear::backward(const Matrix& dy, const LinearCache& cache) {
  weight.accumulate(cache.input.transpose() * dy);
  bias.accumulate(dy.colwise().sum());
  return dy * weight.value.transpose();
}

LayerNorm::LayerNorm(std::string name, int dim) {
  gamma.name = name + ".gamma";
  beta.name = name + ".beta";
  gamma.decay = false;
  beta.decay = false;
  gamma.value = Matrix::Ones(1, dim);
  beta.value = Matrix::Zero(1, dim);
  gamma.zero_grad();
  beta.zero_grad();
}

Matrix LayerNorm::forward(const Matrix& x, LayerNormCache* cache) const {
  const auto n = x.cols();
  Eigen::VectorXf mean = x.rowwise().mean();
  Matrix centered = x.colwise() - mean;
  Eigen::VectorXf inv_std =
      ((centered.array().square().rowwise().sum() / static_cast<float>(n)) + eps).rsqrt().matrix();
  Matrix normalized = centered.array().colwise() * inv_std.array();
  Matrix y = normalized.array().rowwise() * gamma.value.row(0).array();
  y.rowwise() += beta.value.row(0);
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Matrix LayerNorm::backward(const Matrix& dy, const LayerNormCache& cache) {
  const auto& xhat = cache.normalized;
  gamma.accumulate((dy.array() * xhat.array()).colwise().sum().matrix());
  beta.accumulate(dy.colwise().sum());
  const float n = static_cast<float>(dy.cols());
  Matrix dxhat = dy.array().rowwise() * gamma.value.row(0).array();
  Eigen::VectorXf mean_d = dxhat.rowwise().sum() / n;
  Eigen::VectorXf mean_dx = (dxhat.array() * xhat.array()).rowwise().sum() / n;
  Matrix dx = dxhat.colwise() - mean_d;
  dx -= (xhat.array().colwise() * mean_dx.array()).matrix();
  return dx.array().colwise() * cache.inv_std.array();
}

namespace {
constexpr float kGeluC = 0.7978845608028654f;  // sqrt(2 / pi)
constexpr float kGeluA = 0.044715f;
}  // namespace

Matrix gelu(const Matrix& x) {
  return x.unaryExpr([](float v) {
    const float t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
    return 0.5f * v * (1.0f + t);
  });
}

Matrix gelu_backward(const Matrix& dy, const Matrix& x) {
  Matrix d = x.unaryExpr([](float v) {
    const float t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
    return 0.5f * (1.0f + t) + 0.5f * v * (1.0f - t * t) * kGeluC * (1.0f + 3.0f * kGeluA * v * v);
  });
  return dy.cwiseProduct(d);
}

Attention::Attention(const std::string& name, int dim, int heads_, Rng& rng)
    : heads(heads_), qkv(name + ".qkv", dim, 3 * dim, rng), proj(name + ".proj", dim, dim, rng) {
  if (heads < 1 || dim % heads != 0) throw ConfigError(name + ": embed dim must be divisible by heads");
}

Matrix Attention::forward(const Matrix& x, int seq_len, AttentionCache* cache) const {
  const Eigen::Index rows = x.rows();
  const Eigen::Index dim = x.cols();
  if (seq_len < 1 || rows % seq_len != 0) throw InputError("attention: rows not a multiple of seq_len");
  const Eigen::Index head_dim = dim / heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(head_dim));
  Matrix qkv_out = qkv.forward(x, cache ? &cache->qkv_in : nullptr);
  Matrix mixed(rows, dim);
  if (cache) cache->probs.clear();
  for (Eigen::Index b = 0; b < rows / seq_len; ++b) {
    const Eigen::Index r0 = b * seq_len;
    for (int h = 0; h < heads; ++h) {
      const auto q = qkv_out.block(r0, h * head_dim, seq_len, head_dim);
      const auto k = qkv_out.block(r0, dim + h * head_dim, seq_len, head_dim);
      const auto v = qkv_out.block(r0, 2 * dim + h * head_dim, seq_len, head_dim);
      Matrix scores = (q * k.transpose()) * scale;
      for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        auto row = scores.row(i);
        row = (row.array() - row.maxCoeff()).exp();
        row /= row.sum();
      }
      mixed.block(r0, h * head_dim, seq_len, head_dim).noalias() = scores * v;
      if (cache) cache->probs.push_back(std::move(scores));
    }
  }
  if (cache) cache->qkv = std::move(qkv_out);
  return proj.forward(mixed, cache ? &cache->proj_in : nullptr);
}

Matrix Attention::backward(const Matrix& dy, int seq_len, const AttentionCache& cache) {
  const Eigen::Index rows = dy.rows();
  const Eigen::Index dim = dy.cols();
  const Eigen::Index head_dim = dim / heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(head_dim));
  const Matrix d_mixed = proj.backward(dy, cache.proj_in);
  Matrix d_qkv = Matrix::Zero(rows, 3 * dim);
  std::size_t p = 0;
  for (Eigen::Index b = 0; b < rows / seq_len; ++b) {
    const Eigen::Index r0 = b * seq_len;
    for (int h = 0; h < heads; ++h, ++p) {
      const Matrix& probs = cache.probs[p];
      const auto q = cache.qkv.block(r0, h * head_dim, seq_len, head_dim);
      const auto k = cache.qkv.block(r0, dim + h * head_dim, seq_len, head_dim);
      const auto v = cache.qkv.block(r0, 2 * dim + h * head_dim, seq_len, head_dim);
      const auto d_out = d_mixed.block(r0, h * head_dim, seq_len, head_dim);
      d_qkv.block(r0, 2 * dim + h * head_dim, seq_len, head_dim).noalias() = probs.transpose() * d_out;
      Matrix d_probs = d_out * v.transpose();
      Eigen::VectorXf inner = (d_probs.array() * probs.array()).rowwise().sum();
      Matrix d_scores = (probs.array() * (d_probs.colwise() - inner).array()) * scale;
      d_qkv.block(r0, h * head_dim, seq_len, head_dim).noalias() = d_scores * k;
      d_qkv.block(r0, dim + h * head_dim, seq_len, head_dim).noalias() = d_scores.transpose() * q;
    }
  }
  return qkv.backward(d_qkv, cache.qkv_in);
}

Mlp::Mlp(const std::string& name, int dim, int hidden, Rng& rng)
    : fc1(name + ".fc1", dim, hidden, rng), fc2(name + ".fc2", hidden, dim, rng) {}

Matrix Mlp::forward(const Matrix& x, MlpCache* cache) const {
  Matrix pre = fc1.forward(x, cache ? &cache->fc1_in : nullptr);
  Matrix act = gelu(pre);
  if (cache) cache->pre_activation = std::move(pre);
  return fc2.forward(act, cache ? &cache->fc2_in : nullptr);
}

Matrix Mlp::backward(const Matrix& dy, const MlpCache& cache) {
  const Matrix d_act = fc2.backward(dy, cache.fc2_in);
  return fc1.backward(gelu_backward(d_act, cache.pre_activation), cache.fc1_in);
}

TransformerBlock::TransformerBlock(const std::string& name, int dim, int heads, int mlp_hidden, Rng& rng)
    : ln1(name + ".ln1", dim),
      attn(name + ".attn", dim, heads, rng),
      ln2(name + ".ln2", dim),
      mlp(name + ".mlp", dim, mlp_hidden, rng) {}

Matrix TransformerBlock::forward(const Matrix& x, int seq_len, BlockCache* cache) const {
  Matrix h = x + attn.forward(ln1.forward(x, cache ? &cache->ln1 : nullptr), seq_len,
                              cache ? &cache->attn : nullptr);
  return h + mlp.forward(ln2.forward(h, cache ? &cache->ln2 : nullptr), cache ? &cache->mlp : nullptr);
}

Matrix TransformerBlock::backward(const Matrix& dy, int seq_len, const BlockCache& cache) {
  Matrix dh = dy + ln2.backward(mlp.backward(dy, cache.mlp), cache.ln2);
  return dh + ln1.backward(attn.backward(dh, seq_len, cache.attn), cache.ln1);
}

void TransformerBlock::collect(std::vector<Parameter*>& out) {
  for (Parameter* p : {&ln1.gamma, &ln1.beta, &attn.qkv.weight, &attn.qkv.bias, &attn.proj.weight,
                       &attn.proj.bias, &ln2.gamma, &ln2.beta, &mlp.fc1.weight, &mlp.fc1.bias,
                       &mlp.fc2.weight, &mlp.fc2.bias}) {
    out.push_back(p);
  }
}

Matrix sincos_position_table(int grid_h, int grid_w, int dim) {
  if (dim % 4 != 0) throw ConfigError("position embedding dim must be divisible by 4");
  const int quarter = dim / 4;
  Matrix table(grid_h * grid_w, dim);
  for (int y = 0; y < grid_h; ++y) {
    for (int x = 0; x < grid_w; ++x) {
      const int row = y * grid_w + x;
      for (int i = 0; i < quarter; ++i) {
        const double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / quarter);
        table(row, i) = static_cast<float>(std::sin(y * omega));
        table(row, quarter + i) = static_cast<float>(std::cos(y * omega));
        table(row, 2 * quarter + i) = static_cast<float>(std::sin(x * omega));
        table(row, 3 * quarter + i) = static_cast<float>(std::cos(x * omega));
      }
    }
  }
  return table;
}

}  // namespace dietcl
