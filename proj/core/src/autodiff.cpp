#include "ragg/autodiff.hpp"

#include <cmath>
#include <memory>

#include "ragg/error.hpp"

namespace ragg::nn {

// ---------------------------------------------------------------------------
// ParamStore

Param& ParamStore::create(const std::string& name, Index rows, Index cols) {
  require(find(name) == nullptr, "duplicate parameter name: " + name);
  Param& p = params_.emplace_back();
  p.name = name;
  p.value = Tensor::Zero(rows, cols);
  p.grad = Tensor::Zero(rows, cols);
  p.adam_m = Tensor::Zero(rows, cols);
  p.adam_v = Tensor::Zero(rows, cols);
  return p;
}

Param& ParamStore::create_uniform(const std::string& name, Index rows, Index cols, float bound,
                                  std::mt19937_64& rng) {
  Param& p = create(name, rows, cols);
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = dist(rng);
  return p;
}

Param& ParamStore::create_constant(const std::string& name, Index rows, Index cols, float value) {
  Param& p = create(name, rows, cols);
  p.value.setConstant(value);
  return p;
}

Param* ParamStore::find(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

const Param* ParamStore::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.grad.setZero();
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

std::vector<float> ParamStore::flatten() const {
  std::vector<float> blob;
  blob.reserve(scalar_count());
  for (const auto& p : params_) blob.insert(blob.end(), p.value.data(), p.value.data() + p.value.size());
  return blob;
}

void ParamStore::unflatten(const std::vector<float>& blob) {
  require(blob.size() == scalar_count(), "parameter blob size mismatch");
  std::size_t off = 0;
  for (auto& p : params_) {
    std::copy(blob.begin() + static_cast<std::ptrdiff_t>(off),
              blob.begin() + static_cast<std::ptrdiff_t>(off + p.value.size()), p.value.data());
    off += static_cast<std::size_t>(p.value.size());
  }
}

// ---------------------------------------------------------------------------
// Graph

Var Graph::input(Tensor value) {
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  return Var(this, &n);
}

Var Graph::param(Param& p) {
  Node& n = nodes_.emplace_back();
  n.value = p.value;
  n.needs_grad = record_ && p.trainable;
  if (n.needs_grad) {
    Node* np = &n;
    Param* pp = &p;
    n.backward = [np, pp] {
      if (np->grad.size() != 0) pp->grad += np->grad;
    };
  }
  return Var(this, &n);
}

Var Graph::emit(Tensor value, std::initializer_list<Var> inputs, std::function<void()> backward) {
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  if (record_) {
    for (const Var& v : inputs) n.needs_grad = n.needs_grad || v.needs_grad();
    if (n.needs_grad) n.backward = std::move(backward);
  }
  return Var(this, &n);
}

Var Graph::emit(Tensor value, const std::vector<Var>& inputs, std::function<void()> backward) {
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  if (record_) {
    for (const Var& v : inputs) n.needs_grad = n.needs_grad || v.needs_grad();
    if (n.needs_grad) n.backward = std::move(backward);
  }
  return Var(this, &n);
}

void Graph::backward(Var loss) {
  require(record_, "backward on a non-recording graph");
  require(loss.rows() == 1 && loss.cols() == 1, "backward expects a scalar loss");
  if (!loss.needs_grad()) return;
  loss.node()->grad = Tensor::Ones(1, 1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->backward && it->grad.size() != 0) it->backward();
  }
}

// ---------------------------------------------------------------------------
// Ops

namespace {

Graph& graph_of(Var a) { return *a.graph(); }

}  // namespace

Var matmul(Var a, Var b) {
  require(a.cols() == b.rows(), "matmul shape mismatch");
  Tensor out = a.value() * b.value();
  Node* na = a.node();
  Node* nb = b.node();
  Var res = graph_of(a).emit(std::move(out), {a, b}, nullptr);
  Node* nr = res.node();
  if (nr->needs_grad) {
    nr->backward = [na, nb, nr] {
      if (na->needs_grad) accumulate(na, nr->grad * nb->value.transpose());
      if (nb->needs_grad) accumulate(nb, na->value.transpose() * nr->grad);
    };
  }
  return res;
}

Var matmul_transposed(Var a, Var b) {
  require(a.cols() == b.cols(), "matmul_transposed shape mismatch");
  Tensor out = a.value() * b.value().transpose();
  Node* na = a.node();
  Node* nb = b.node();
  Var res = graph_of(a).emit(std::move(out), {a, b}, nullptr);
  Node* nr = res.node();
  if (nr->needs_grad) {
    nr->backward = [na, nb, nr] {
      if (na->needs_grad) accumulate(na, nr->grad * nb->value);
      if (nb->needs_grad) accumulate(nb, nr->grad.transpose() * na->value);
    };
  }
  return res;
}

Var linear(Var x, Var weight, Var bias) {
  require(x.cols() == weight.rows(), "linear: input width mismatch");
  require(bias.rows() == 1 && bias.cols() == weight.cols(), "linear: bias shape mismatch");
  Tensor out(x.rows(), weight.cols());
  out.noalias() = x.value() * weight.value();
  out.rowwise() += bias.value().row(0);
  Node* nx = x.node();
  Node* nw = weight.node();
  Node* nb = bias.node();
  Var res = graph_of(x).emit(std::move(out), {x, weight, bias}, nullptr);
  Node* nr = res.node();
  if (nr->needs_grad) {
    nr->backward = [nx, nw, nb, nr] {
      if (nx->needs_grad) accumulate(nx, nr->grad * nw->value.transpose());
      if (nw->needs_grad) accumulate(nw, nx->value.transpose() * nr->grad);
      if (nb->needs_grad) accumulate(nb, nr->grad.colwise().sum());
    };
  }
  return res;
}

Var linear(Var x, Var weight) { return matmul(x, weight); }

Var add(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add shape mismatch");
  Node* na = a.node();
  Node* nb = b.node();
  Var res = graph_of(a).emit(a.value() + b.value(), {a, b}, nullptr);
  Node* nr = res.node();
  if (nr->needs_grad) {
    nr->backward = [na, nb, nr] {
      accumulate(na, nr->grad);
      accumulate(nb, nr->grad);
    };
  }
  return res;
}

Var sub(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub shape mismatch");
  Node* na = a.node();
  Node* nb = b.node();
  Var res = graph_of(a).emit(a.value() - b.value(), {a, b}, nullptr);
  Node* nr = res.node();
  if (nr->needs_grad) {
    nr->backward = [na, nb, nr] {
      accumulate(na, nr->grad);
      if (nb->needs_grad) accumulate(nb, -nr->grad);
    };
  }
  return res;
}

Var mul(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul shape mismatch");
  Node* na = a.node();
  Node* nb = b.node();
  Var res = graph_of(a).emit(a.value().cwiseProduct(b.value()), {a, b}, nullptr);
  Node* nr = res.node();
  if (nr->needs_grad) {
    nr->backward = [na, nb, nr] {
      if (na->needs_grad) accumulate(na, nr->grad.cwiseProduct(nb->value));
      if (nb->needs_grad) accumulate(nb, nr->grad.cwiseProduct(na->value));
    };
  }
  return res;
}

Var scale(Var a, float s) {
  Node* na = a.node();
  Var res = graph_of(a).emit(a.value() * s, {a}, nullptr);
  Node* nr = res.node();
  if (nr->needs_grad) {
    nr->backward = [na, nr, s] { accumulate(na, nr->grad * s); };
  }
  return res;
}

Var add_constant(Var a, const Tensor& c) {
  require(a.rows() == c.rows() && a.cols() == c.cols(), "add_constant shape mismatch");
  Node* na = a.node();
  Var res = graph_of(a).emit(a.value() + c, {a}, nullptr);
  Node* nr = res.node();
  if (nr->needs_grad) nr->backward = [na, nr] { accumulate(na, nr->grad); };
  return res;
}

Var mul_constant(Var a, const Tensor& c) {
  require(a.rows() == c.rows() && a.cols() == c.cols(), "mul_constant shape mismatch");
  Node* na = a.node();
  auto cc = std::make_shared<Tensor>(c);
  Var res = graph_of(a).emit(a.value().cwiseProduct(c), {a}, nullptr);
  Node* nr = res.node();
  if (nr->needs_grad) nr->backward = [na, nr, cc] { accumulate(na, nr->grad.cwiseProduct(*cc)); };
  return res;
}

Var tanh(Var a) {
  Node* na = a.node();
  Tensor out = a.value().array().tanh().matrix();
  Var res = graph_of(a).emit(std::move(out), {a}, nullptr);
  Node* nr = res.node();
  if (nr->needs_grad) {
    nr->backward = [na, nr] {
      accumulate(na, (nr->grad.array() * (1.0f - nr->value.array().square())).matrix());
    };
  }
  return res;
}

Var exp(Var a) {
  Node* na = a.node();
  Tensor out = a.value().array().exp().matrix();
  Var res = graph_of(a).emit(std::move(out), {a}, nullptr);
  Node* nr = res.node();
  if (nr->needs_grad) {
    nr->backward = [na, nr] { accumulate(na, nr->grad.cwiseProduct(nr->value)); };
  }
  return res;
}

Var sigmoid(Var a) {
  Node* na = a.node();
  Tensor out = (1.0f / (1.0f + (-a.value().array()).exp())).matrix();
  Var res = graph_of(a).emit(std::move(out), {a}, nullptr);
  Node* nr = res.node();
  if (nr->needs_grad) {
    nr->backward = [na, nr] {
      accumulate(na, (nr->grad.array() * nr->value.array() * (1.0f - nr->value.array())).matrix());
    };
  }
  return res;
}

Var silu(Var a) {
  Node* na = a.node();
  Tensor sig = (1.0f / (1.0f + (-a.value().array()).exp())).matrix();
  Tensor out = a.value().cwiseProduct(sig);
  auto sp = std::make_shared<Tensor>(std::move(sig));
  Var res = graph_of(a).emit(std::move(out), {a}, nullptr);
  Node* nr = res.node();
  if (nr->needs_grad) {
    nr->backward = [na, nr, sp] {
      const auto s = sp->array();
      accumulate(na, (nr->grad.array() * (s * (1.0f + na->value.array() * (1.0f - s)))).matrix());
    };
  }
  return res;
}

Var gelu(Var a) {
  static constexpr float kC = 0.7978845608028654f;  // sqrt(2/pi)
  Node* na = a.node();
  const auto x = a.value().array();
  Tensor th = (kC * (x + 0.044715f * x.cube())).tanh().matrix();
  Tensor out = (0.5f * x * (1.0f + th.array())).matrix();
  auto tp = std::make_shared<Tensor>(std::move(th));
  Var res = graph_of(a).emit(std::move(out), {a}, nullptr);
  Node* nr = res.node();
  if (nr->needs_grad) {
    nr->backward = [na, nr, tp] {
      const auto xx = na->value.array();
      const auto t = tp->array();
      auto d = 0.5f * (1.0f + t) + 0.5f * xx * (1.0f - t.square()) * kC * (1.0f + 3.0f * 0.044715f * xx.square());
      accumulate(na, (nr->grad.array() * d).matrix());
    };
  }
  return res;
}

Var reshape(Var a, Index rows, Index cols) {
  require(rows * cols == a.value().size(), "reshape size mismatch");
  Node* na = a.node();
  const Index r0 = a.rows();
  const Index c0 = a.cols();
  Tensor out = Eigen::Map<const Tensor>(a.value().data(), rows, cols);
  Var res = graph_of(a).emit(std::move(out), {a}, nullptr);
  Node* nr = res.node();
  if (nr->needs_grad) {
    nr->backward = [na, nr, r0, c0] {
      accumulate(na, Eigen::Map<const Tensor>(nr->grad.data(), r0, c0));
    };
  }
  return res;
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols of nothing");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const Var& p : parts) {
    require(p.rows() == rows, "concat_cols row mismatch");
    cols += p.cols();
  }
  Tensor out(rows, cols);
  Index c = 0;
  std::vector<Node*> nodes;
  std::vector<Index> offsets;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    nodes.push_back(p.node());
    offsets.push_back(c);
    c += p.cols();
  }
  Var res = graph_of(parts.front()).emit(std::move(out), parts, nullptr);
  Node* nr = res.node();
  if (nr->needs_grad) {
    nr->backward = [nodes, offsets, nr] {
      for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (nodes[i]->needs_grad) {
          accumulate(nodes[i], nr->grad.middleCols(offsets[i], nodes[i]->value.cols()));
        }
      }
    };
  }
  return res;
}

Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows of nothing");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const Var& p : parts) {
    require(p.cols() == cols, "concat_rows col mismatch");
    rows += p.rows();
  }
  Tensor out(rows, cols);
  Index r = 0;
  std::vector<Node*> nodes;
  std::vector<Index> offsets;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    nodes.push_back(p.node());
    offsets.push_back(r);
    r += p.rows();
  }
  Var res = graph_of(parts.front()).emit(std::move(out), parts, nullptr);
  Node* nr = res.node();
  if (nr->needs_grad) {
    nr->backward = [nodes, offsets, nr] {
      for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (nodes[i]->needs_grad) {
          accumulate(nodes[i], nr->grad.middleRows(offsets[i], nodes[i]->value.rows()));
        }
      }
    };
  }
  return res;
}

Var slice_cols(Var a, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols out of range");
  Node* na = a.node();
  Var res = graph_of(a).emit(a.value().middleCols(start, count), {a}, nullptr);
  Node* nr = res.node();
  if (nr->needs_grad) {
    nr->backward = [na, nr, start, count] {
      if (na->grad.size() == 0) na->grad = Tensor::Zero(na->value.rows(), na->value.cols());
      na->grad.middleCols(start, count) += nr->grad;
    };
  }
  return res;
}

Var slice_rows(Var a, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows out of range");
  Node* na = a.node();
  Var res = graph_of(a).emit(a.value().middleRows(start, count), {a}, nullptr);
  Node* nr = res.node();
  if (nr->needs_grad) {
    nr->backward = [na, nr, start, count] {
      if (na->grad.size() == 0) na->grad = Tensor::Zero(na->value.rows(), na->value.cols());
      na->grad.middleRows(start, count) += nr->grad;
    };
  }
  return res;
}

Var shift_rows_in_blocks(Var a, Index block, Index offset) {
  require(block > 0 && a.rows() % block == 0, "shift_rows_in_blocks: rows not divisible by block");
  const Index nblocks = a.rows() / block;
  Tensor out = Tensor::Zero(a.rows(), a.cols());
  for (Index b = 0; b < nblocks; ++b) {
    for (Index r = 0; r < block; ++r) {
      const Index src = r - offset;
      if (src >= 0 && src < block) out.row(b * block + r) = a.value().row(b * block + src);
    }
  }
  Node* na = a.node();
  Var res = graph_of(a).emit(std::move(out), {a}, nullptr);
  Node* nr = res.node();
  if (nr->needs_grad) {
    nr->backward = [na, nr, block, offset, nblocks] {
      if (na->grad.size() == 0) na->grad = Tensor::Zero(na->value.rows(), na->value.cols());
      for (Index b = 0; b < nblocks; ++b) {
        for (Index r = 0; r < block; ++r) {
          const Index src = r - offset;
          if (src >= 0 && src < block) na->grad.row(b * block + src) += nr->grad.row(b * block + r);
        }
      }
    };
  }
  return res;
}

Var add_block_rows(Var x, Var v, Index block) {
  require(block > 0 && x.rows() == v.rows() * block && x.cols() == v.cols(),
          "add_block_rows shape mismatch");
  Tensor out = x.value();
  const Index nb = v.rows();
  for (Index b = 0; b < nb; ++b) out.middleRows(b * block, block).rowwise() += v.value().row(b);
  Node* nx = x.node();
  Node* nv = v.node();
  Var res = graph_of(x).emit(std::move(out), {x, v}, nullptr);
  Node* nr = res.node();
  if (nr->needs_grad) {
    nr->backward = [nx, nv, nr, block, nb] {
      accumulate(nx, nr->grad);
      if (nv->needs_grad) {
        Tensor g(nb, nr->grad.cols());
        for (Index b = 0; b < nb; ++b) g.row(b) = nr->grad.middleRows(b * block, block).colwise().sum();
        accumulate(nv, g);
      }
    };
  }
  return res;
}

Var modulate(Var x, Var scale_v, Var shift_v, Index block) {
  require(block > 0 && x.rows() == scale_v.rows() * block && x.cols() == scale_v.cols() &&
              shift_v.rows() == scale_v.rows() && shift_v.cols() == scale_v.cols(),
          "modulate shape mismatch");
  const Index nb = scale_v.rows();
  Tensor out(x.rows(), x.cols());
  for (Index b = 0; b < nb; ++b) {
    const auto s = (scale_v.value().row(b).array() + 1.0f).matrix();
    for (Index r = 0; r < block; ++r) {
      const Index row = b * block + r;
      out.row(row) = (x.value().row(row).array() * s.array() + shift_v.value().row(b).array()).matrix();
    }
  }
  Node* nx = x.node();
  Node* ns = scale_v.node();
  Node* nh = shift_v.node();
  Var res = graph_of(x).emit(std::move(out), {x, scale_v, shift_v}, nullptr);
  Node* nr = res.node();
  if (nr->needs_grad) {
    nr->backward = [nx, ns, nh, nr, block, nb] {
      Tensor gx(nx->value.rows(), nx->value.cols());
      Tensor gs = Tensor::Zero(nb, nx->value.cols());
      Tensor gh = Tensor::Zero(nb, nx->value.cols());
      for (Index b = 0; b < nb; ++b) {
        const auto s = (ns->value.row(b).array() + 1.0f);
        for (Index r = 0; r < block; ++r) {
          const Index row = b * block + r;
          gx.row(row) = (nr->grad.row(row).array() * s).matrix();
          gs.row(b) += nr->grad.row(row).cwiseProduct(nx->value.row(row));
          gh.row(b) += nr->grad.row(row);
        }
      }
      accumulate(nx, gx);
      accumulate(ns, gs);
      accumulate(nh, gh);
    };
  }
  return res;
}

namespace {

struct NormCache {
  Tensor xhat;
  Eigen::VectorXf inv_std;
};

std::shared_ptr<NormCache> normalize_rows(const Tensor& x, float eps) {
  auto cache = std::make_shared<NormCache>();
  const Index d = x.cols();
  cache->xhat.resize(x.rows(), d);
  cache->inv_std.resize(x.rows());
  for (Index r = 0; r < x.rows(); ++r) {
    const float mu = x.row(r).mean();
    const auto centered = (x.row(r).array() - mu);
    const float var = centered.square().sum() / static_cast<float>(d);
    const float inv = 1.0f / std::sqrt(var + eps);
    cache->inv_std(r) = inv;
    cache->xhat.row(r) = (centered * inv).matrix();
  }
  return cache;
}

// Gradient of the pre-affine normalization.
Tensor norm_backward(const NormCache& c, const Tensor& dxhat) {
  const Index d = dxhat.cols();
  Tensor dx(dxhat.rows(), d);
  for (Index r = 0; r < dxhat.rows(); ++r) {
    const float m1 = dxhat.row(r).mean();
    const float m2 = dxhat.row(r).cwiseProduct(c.xhat.row(r)).sum() / static_cast<float>(d);
    dx.row(r) = ((dxhat.row(r).array() - m1 - c.xhat.row(r).array() * m2) * c.inv_std(r)).matrix();
  }
  return dx;
}

}  // namespace

Var layer_norm(Var x, Var gamma, Var beta, float eps) {
  require(gamma.rows() == 1 && gamma.cols() == x.cols() && beta.cols() == x.cols(),
          "layer_norm affine shape mismatch");
  auto cache = normalize_rows(x.value(), eps);
  Tensor out = cache->xhat;
  for (Index r = 0; r < out.rows(); ++r) {
    out.row(r) = (out.row(r).array() * gamma.value().row(0).array() + beta.value().row(0).array()).matrix();
  }
  Node* nx = x.node();
  Node* ng = gamma.node();
  Node* nb = beta.node();
  Var res = graph_of(x).emit(std::move(out), {x, gamma, beta}, nullptr);
  Node* nr = res.node();
  if (nr->needs_grad) {
    nr->backward = [nx, ng, nb, nr, cache] {
      if (ng->needs_grad) accumulate(ng, nr->grad.cwiseProduct(cache->xhat).colwise().sum());
      if (nb->needs_grad) accumulate(nb, nr->grad.colwise().sum());
      if (nx->needs_grad) {
        Tensor dxhat = nr->grad;
        for (Index r = 0; r < dxhat.rows(); ++r) dxhat.row(r) = dxhat.row(r).cwiseProduct(ng->value.row(0));
        accumulate(nx, norm_backward(*cache, dxhat));
      }
    };
  }
  return res;
}

Var layer_norm(Var x, float eps) {
  auto cache = normalize_rows(x.value(), eps);
  Node* nx = x.node();
  Var res = graph_of(x).emit(cache->xhat, {x}, nullptr);
  Node* nr = res.node();
  if (nr->needs_grad) {
    nr->backward = [nx, nr, cache] { accumulate(nx, norm_backward(*cache, nr->grad)); };
  }
  return res;
}

Var attention(Var q, Var k, Var v, Index batch, Index heads, Index tq, Index tk) {
  require(q.rows() == batch * tq && k.rows() == batch * tk && v.rows() == batch * tk,
          "attention row mismatch");
  require(q.cols() == k.cols() && k.cols() == v.cols() && q.cols() % heads == 0,
          "attention column mismatch");
  const Index dh = q.cols() / heads;
  const float scale_f = 1.0f / std::sqrt(static_cast<float>(dh));
  Tensor out(q.rows(), q.cols());
  const bool keep = graph_of(q).recording() && (q.needs_grad() || k.needs_grad() || v.needs_grad());
  auto probs = std::make_shared<std::vector<Tensor>>();
  if (keep) probs->reserve(static_cast<std::size_t>(batch * heads));
  Tensor scores(tq, tk);
  for (Index b = 0; b < batch; ++b) {
    for (Index h = 0; h < heads; ++h) {
      const auto qb = q.value().block(b * tq, h * dh, tq, dh);
      const auto kb = k.value().block(b * tk, h * dh, tk, dh);
      const auto vb = v.value().block(b * tk, h * dh, tk, dh);
      scores.noalias() = qb * kb.transpose();
      scores *= scale_f;
      for (Index r = 0; r < tq; ++r) {
        const float mx = scores.row(r).maxCoeff();
        scores.row(r) = (scores.row(r).array() - mx).exp().matrix();
        scores.row(r) /= scores.row(r).sum();
      }
      out.block(b * tq, h * dh, tq, dh).noalias() = scores * vb;
      if (keep) probs->push_back(scores);
    }
  }
  Node* nq = q.node();
  Node* nk = k.node();
  Node* nv = v.node();
  Var res = graph_of(q).emit(std::move(out), {q, k, v}, nullptr);
  Node* nr = res.node();
  if (nr->needs_grad) {
    nr->backward = [nq, nk, nv, nr, probs, batch, heads, tq, tk, dh, scale_f] {
      Tensor gq = Tensor::Zero(nq->value.rows(), nq->value.cols());
      Tensor gk = Tensor::Zero(nk->value.rows(), nk->value.cols());
      Tensor gv = Tensor::Zero(nv->value.rows(), nv->value.cols());
      Tensor dp(tq, tk);
      for (Index b = 0; b < batch; ++b) {
        for (Index h = 0; h < heads; ++h) {
          const Tensor& p = (*probs)[static_cast<std::size_t>(b * heads + h)];
          const auto go = nr->grad.block(b * tq, h * dh, tq, dh);
          const auto qb = nq->value.block(b * tq, h * dh, tq, dh);
          const auto kb = nk->value.block(b * tk, h * dh, tk, dh);
          const auto vb = nv->value.block(b * tk, h * dh, tk, dh);
          gv.block(b * tk, h * dh, tk, dh).noalias() += p.transpose() * go;
          dp.noalias() = go * vb.transpose();
          for (Index r = 0; r < tq; ++r) {
            const float dot = dp.row(r).dot(p.row(r));
            dp.row(r) = (p.row(r).array() * (dp.row(r).array() - dot)).matrix();
          }
          dp *= scale_f;
          gq.block(b * tq, h * dh, tq, dh).noalias() += dp * kb;
          gk.block(b * tk, h * dh, tk, dh).noalias() += dp.transpose() * qb;
        }
      }
      accumulate(nq, gq);
      accumulate(nk, gk);
      accumulate(nv, gv);
    };
  }
  return res;
}

Var sum(Var a) {
  Node* na = a.node();
  Tensor out(1, 1);
  out(0, 0) = a.value().sum();
  Var res = graph_of(a).emit(std::move(out), {a}, nullptr);
  Node* nr = res.node();
  if (nr->needs_grad) {
    nr->backward = [na, nr] {
      accumulate(na, Tensor::Constant(na->value.rows(), na->value.cols(), nr->grad(0, 0)));
    };
  }
  return res;
}

Var mean(Var a) { return scale(sum(a), 1.0f / static_cast<float>(a.value().size())); }

Var mean_square(Var a) {
  Node* na = a.node();
  const float n = static_cast<float>(a.value().size());
  Tensor out(1, 1);
  out(0, 0) = a.value().squaredNorm() / n;
  Var res = graph_of(a).emit(std::move(out), {a}, nullptr);
  Node* nr = res.node();
  if (nr->needs_grad) {
    nr->backward = [na, nr, n] { accumulate(na, na->value * (2.0f * nr->grad(0, 0) / n)); };
  }
  return res;
}

Var mse(Var a, const Tensor& target) {
  require(a.rows() == target.rows() && a.cols() == target.cols(), "mse shape mismatch");
  return mean_square(add_constant(a, -target));
}

Var bce_with_logits(Var logits, const Tensor& target) {
  require(logits.rows() == target.rows() && logits.cols() == target.cols(), "bce shape mismatch");
  const auto x = logits.value().array();
  const auto y = target.array();
  // max(x,0) - x*y + log(1 + exp(-|x|))
  const float n = static_cast<float>(logits.value().size());
  Tensor out(1, 1);
  out(0, 0) = (x.max(0.0f) - x * y + (1.0f + (-x.abs()).exp()).log()).sum() / n;
  auto tgt = std::make_shared<Tensor>(target);
  Node* nl = logits.node();
  Var res = graph_of(logits).emit(std::move(out), {logits}, nullptr);
  Node* nr = res.node();
  if (nr->needs_grad) {
    nr->backward = [nl, nr, tgt, n] {
      const auto s = 1.0f / (1.0f + (-nl->value.array()).exp());
      accumulate(nl, ((s - tgt->array()) * (nr->grad(0, 0) / n)).matrix());
    };
  }
  return res;
}

Var kl_standard_normal(Var mu, Var logvar) {
  require(mu.rows() == logvar.rows() && mu.cols() == logvar.cols(), "kl shape mismatch");
  const float rows = static_cast<float>(mu.rows());
  const auto m = mu.value().array();
  const auto lv = logvar.value().array();
  Tensor out(1, 1);
  out(0, 0) = 0.5f * (m.square() + lv.exp() - 1.0f - lv).sum() / rows;
  Node* nm = mu.node();
  Node* nl = logvar.node();
  Var res = graph_of(mu).emit(std::move(out), {mu, logvar}, nullptr);
  Node* nr = res.node();
  if (nr->needs_grad) {
    nr->backward = [nm, nl, nr, rows] {
      const float g = nr->grad(0, 0) / rows;
      if (nm->needs_grad) accumulate(nm, nm->value * g);
      if (nl->needs_grad) accumulate(nl, ((nl->value.array().exp() - 1.0f) * (0.5f * g)).matrix());
    };
  }
  return res;
}

// ---------------------------------------------------------------------------
// Modules

std::mt19937_64& init_rng() {
  thread_local std::mt19937_64 rng(0x5eed);
  return rng;
}

Linear::Linear(ParamStore& store, const std::string& name, Index in, Index out, std::mt19937_64& rng,
               bool zero_init)
    : in_(in), out_(out) {
  const float bound = std::sqrt(6.0f / static_cast<float>(in + out));
  weight_ = zero_init ? &store.create(name + ".w", in, out)
                      : &store.create_uniform(name + ".w", in, out, bound, rng);
  bias_ = &store.create(name + ".b", 1, out);
}

Var Linear::operator()(Graph& g, Var x) const { return linear(x, g.param(*weight_), g.param(*bias_)); }

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, Index dim) {
  gamma_ = &store.create_constant(name + ".gamma", 1, dim, 1.0f);
  beta_ = &store.create(name + ".beta", 1, dim);
}

Var LayerNorm::operator()(Graph& g, Var x) const {
  return layer_norm(x, g.param(*gamma_), g.param(*beta_));
}

float Adam::step(ParamStore& store, float lr_scale) {
  double sq = 0.0;
  for (const auto& p : store.all()) {
    if (p.trainable) sq += static_cast<double>(p.grad.squaredNorm());
  }
  const float norm = static_cast<float>(std::sqrt(sq));
  float clip = 1.0f;
  if (cfg_.clip_norm > 0.0f && norm > cfg_.clip_norm) clip = cfg_.clip_norm / norm;
  ++t_;
  const float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(t_));
  const float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(t_));
  const float lr = cfg_.lr * lr_scale;
  for (auto& p : store.all()) {
    if (!p.trainable) continue;
    auto g = (p.grad.array() * clip);
    p.adam_m.array() = cfg_.beta1 * p.adam_m.array() + (1.0f - cfg_.beta1) * g;
    p.adam_v.array() = cfg_.beta2 * p.adam_v.array() + (1.0f - cfg_.beta2) * g.square();
    p.value.array() -= lr * ((p.adam_m.array() / bc1) / ((p.adam_v.array() / bc2).sqrt() + cfg_.eps) +
                             cfg_.weight_decay * p.value.array());
  }
  return norm;
}

}  // namespace ragg::nn
