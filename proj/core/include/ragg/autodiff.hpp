#pragma once

// Minimal reverse-mode automatic differentiation over row-major float
// matrices. Sequences of tokens from several samples are stacked along the
// rows; ops that mix tokens (attention, modulation, temporal shifts) take the
// per-sample block size explicitly.

#include <Eigen/Dense>

#include <cstdint>
#include <deque>
#include <functional>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

namespace ragg::nn {

using Tensor = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor adam_m;
  Tensor adam_v;
  bool trainable = true;
};

// Owns parameters with stable addresses; iteration order is creation order,
// which is also the serialization order.
class ParamStore {
 public:
  Param& create(const std::string& name, Index rows, Index cols);
  Param& create_uniform(const std::string& name, Index rows, Index cols, float bound,
                        std::mt19937_64& rng);
  Param& create_constant(const std::string& name, Index rows, Index cols, float value);

  Param* find(const std::string& name);
  const Param* find(const std::string& name) const;

  std::deque<Param>& all() { return params_; }
  const std::deque<Param>& all() const { return params_; }

  void zero_grad();
  std::size_t scalar_count() const;

  // Flat float32 blob in creation order.
  std::vector<float> flatten() const;
  void unflatten(const std::vector<float>& blob);

 private:
  std::deque<Param> params_;
};

class Graph;

struct Node {
  Tensor value;
  Tensor grad;
  bool needs_grad = false;
  std::function<void()> backward;
};

class Var {
 public:
  Var() = default;
  Var(Graph* graph, Node* node) : graph_(graph), node_(node) {}

  const Tensor& value() const { return node_->value; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  bool needs_grad() const { return node_->needs_grad; }
  float item() const { return node_->value(0, 0); }

  Graph* graph() const { return graph_; }
  Node* node() const { return node_; }

 private:
  Graph* graph_ = nullptr;
  Node* node_ = nullptr;
};

class Graph {
 public:
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  Var input(Tensor value);
  Var param(Param& p);

  // Creates an op node. `backward` is only retained when some input needs a
  // gradient and the graph is recording.
  Var emit(Tensor value, std::initializer_list<Var> inputs, std::function<void()> backward);
  Var emit(Tensor value, const std::vector<Var>& inputs, std::function<void()> backward);

  // Seeds d(loss)/d(loss) = 1 and runs all recorded closures in reverse.
  void backward(Var loss);

 private:
  std::deque<Node> nodes_;
  bool record_;
};

// Adds `g` into the node's gradient if the node participates in backprop.
template <class Expr>
inline void accumulate(Node* n, const Expr& g) {
  if (!n->needs_grad) return;
  if (n->grad.size() == 0) {
    n->grad = g;
  } else {
    n->grad += g;
  }
}

// ---- Elementwise / linear algebra ----
Var matmul(Var a, Var b);
Var matmul_transposed(Var a, Var b);  // a * b^T
Var linear(Var x, Var weight, Var bias);  // x W + b, bias is 1 x out
Var linear(Var x, Var weight);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, float s);
Var add_constant(Var a, const Tensor& c);
Var mul_constant(Var a, const Tensor& c);
Var tanh(Var a);
Var exp(Var a);
Var sigmoid(Var a);
Var silu(Var a);
Var gelu(Var a);

// ---- Shape ----
Var reshape(Var a, Index rows, Index cols);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(Var a, Index start, Index count);
Var slice_rows(Var a, Index start, Index count);
// Row r of the result is row r - offset of the input within the same block
// of `block` rows; rows shifted in from outside the block are zero.
Var shift_rows_in_blocks(Var a, Index block, Index offset);
// Adds row b of `v` (B x D) to every row of block b of `x` (B*block x D).
Var add_block_rows(Var x, Var v, Index block);
// y = x * (1 + scale_b) + shift_b per block.
Var modulate(Var x, Var scale, Var shift, Index block);

// ---- Normalization / attention ----
Var layer_norm(Var x, Var gamma, Var beta, float eps = 1e-5f);
Var layer_norm(Var x, float eps = 1e-5f);
// Multi-head scaled dot-product attention. q has batch*tq rows, k and v have
// batch*tk rows, all with `heads` * head_dim columns.
Var attention(Var q, Var k, Var v, Index batch, Index heads, Index tq, Index tk);

// ---- Reductions / losses (all return 1 x 1) ----
Var sum(Var a);
Var mean(Var a);
Var mean_square(Var a);
Var mse(Var a, const Tensor& target);
Var bce_with_logits(Var logits, const Tensor& target);
// Mean over rows of 0.5 * sum_j (mu^2 + exp(logvar) - 1 - logvar).
Var kl_standard_normal(Var mu, Var logvar);

// ---- Modules ----
std::mt19937_64& init_rng();

class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, Index in, Index out, std::mt19937_64& rng,
         bool zero_init = false);
  Var operator()(Graph& g, Var x) const;
  Index in_features() const { return in_; }
  Index out_features() const { return out_; }

 private:
  Param* weight_ = nullptr;
  Param* bias_ = nullptr;
  Index in_ = 0;
  Index out_ = 0;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, Index dim);
  Var operator()(Graph& g, Var x) const;

 private:
  Param* gamma_ = nullptr;
  Param* beta_ = nullptr;
};

struct AdamConfig {
  float lr = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float clip_norm = 1.0f;  // <= 0 disables global-norm clipping
  float weight_decay = 0.0f;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}
  // Applies one update from accumulated gradients; returns the pre-clip norm.
  float step(ParamStore& store, float lr_scale = 1.0f);
  std::int64_t steps() const { return t_; }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
};

}  // namespace ragg::nn
