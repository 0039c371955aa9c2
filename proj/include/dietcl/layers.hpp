#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dietcl/core.hpp"

namespace dietcl {

using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A trainable tensor with its gradient accumulator. `touched` records whether
/// any backward pass wrote into `grad` since the last zero_grad(); optimizers
/// skip untouched parameters.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool decay = true;
  bool touched = false;

  void zero_grad();
  void accumulate(const Matrix& g);
};

void write_matrix(std::ostream& out, const Matrix& m);
Matrix read_matrix(std::istream& in);

// Every layer keeps its forward activations in a caller-owned cache so one
// layer can be run on several batches before a single backward sweep.

struct LinearCache {
  Matrix input;
};

/// y = x W + b with W stored (in x out).
class Linear {
 public:
  Linear() = default;
  Linear(std::string name, int in, int out, Rng& rng);

  Matrix forward(const Matrix& x, LinearCache* cache) const;
  Matrix backward(const Matrix& dy, const LinearCache& cache);

  Parameter weight;
  Parameter bias;
};

struct LayerNormCache {
  Matrix normalized;
  Eigen::VectorXf inv_std;
};

/// Row-wise layer normalisation with learned scale and shift.
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(std::string name, int dim);

  Matrix forward(const Matrix& x, LayerNormCache* cache) const;
  Matrix backward(const Matrix& dy, const LayerNormCache& cache);

  Parameter gamma;
  Parameter beta;
  float eps = 1e-6f;
};

Matrix gelu(const Matrix& x);
Matrix gelu_backward(const Matrix& dy, const Matrix& x);

struct AttentionCache {
  LinearCache qkv_in;
  Matrix qkv;
  std::vector<Matrix> probs;  // one (seq x seq) matrix per sequence and head
  LinearCache proj_in;
};

/// Multi-head self-attention over consecutive blocks of `seq_len` rows.
class Attention {
 public:
  Attention() = default;
  Attention(const std::string& name, int dim, int heads, Rng& rng);

  Matrix forward(const Matrix& x, int seq_len, AttentionCache* cache) const;
  Matrix backward(const Matrix& dy, int seq_len, const AttentionCache& cache);

  int heads = 1;
  Linear qkv;
  Linear proj;
};

struct MlpCache {
  LinearCache fc1_in;
  Matrix pre_activation;
  LinearCache fc2_in;
};

class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::string& name, int dim, int hidden, Rng& rng);

  Matrix forward(const Matrix& x, MlpCache* cache) const;
  Matrix backward(const Matrix& dy, const MlpCache& cache);

  Linear fc1;
  Linear fc2;
};

struct BlockCache {
  LayerNormCache ln1;
  AttentionCache attn;
  LayerNormCache ln2;
  MlpCache mlp;
};

/// Pre-norm transformer block: x + attn(ln1(x)), then + mlp(ln2(.)).
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(const std::string& name, int dim, int heads, int mlp_hidden, Rng& rng);

  Matrix forward(const Matrix& x, int seq_len, BlockCache* cache) const;
  Matrix backward(const Matrix& dy, int seq_len, const BlockCache& cache);

  void collect(std::vector<Parameter*>& out);

  LayerNorm ln1;
  Attention attn;
  LayerNorm ln2;
  Mlp mlp;
};

/// Fixed 2-D sine-cosine position table for a grid_h x grid_w patch grid.
Matrix sincos_position_table(int grid_h, int grid_w, int dim);

}  // namespace dietcl
