#include "ragg/part_vae.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>

#include "ragg/checkpoint.hpp"
#include "ragg/error.hpp"
#include "ragg/geometry_ops.hpp"

namespace ragg {

using nn::Graph;
using nn::Tensor;
using nn::Var;

// ---------------------------------------------------------------------------
// Latent layout

LatentGesture assemble(const PartLatent& upper, const PartLatent& hands, const PartLatent& face,
                       const PartLatent& lower, const RowMatrix& separators) {
  const std::array<const PartLatent*, 4> parts = {&upper, &hands, &face, &lower};
  const Eigen::Index c = upper.chunks.rows();
  const Eigen::Index dz = upper.chunks.cols();
  for (std::size_t i = 0; i < 4; ++i) {
    require(parts[i]->part == kAllParts[i], "assemble: parts out of order");
    require(parts[i]->chunks.rows() == c, "assemble: mismatched chunk count");
    require(parts[i]->chunks.cols() == dz, "assemble: mismatched latent dim");
  }
  require(c >= 1, "assemble: empty latent");
  require(separators.rows() == 3 && separators.cols() == dz, "assemble: separators must be 3 x d_z");
  LatentGesture z;
  z.layout.chunks = static_cast<int>(c);
  z.layout.dz = static_cast<int>(dz);
  z.data.resize(z.layout.rows(), dz);
  for (std::size_t i = 0; i < 4; ++i) z.part(kAllParts[i]) = parts[i]->chunks;
  const auto seps = z.layout.separator_rows();
  for (int s = 0; s < 3; ++s) z.data.row(seps[static_cast<std::size_t>(s)]) = separators.row(s);
  return z;
}

std::array<PartLatent, 4> disassemble(const LatentGesture& z) {
  require(z.data.rows() == z.layout.rows() && z.data.cols() == z.layout.dz, "disassemble: shape mismatch");
  std::array<PartLatent, 4> out;
  for (std::size_t i = 0; i < 4; ++i) {
    out[i].part = kAllParts[i];
    out[i].chunks = z.part(kAllParts[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Config structs

void VaeLossWeights::validate() const {
  for (double w : {geo, rot6d, axisangle, pos, vel, acc, contact, kl}) {
    require(std::isfinite(w) && w >= 0.0, "vae loss weights must be finite and >= 0");
  }
}

Json VaeLossWeights::to_json() const {
  return {{"geo", geo}, {"rot6d", rot6d}, {"axisangle", axisangle}, {"pos", pos},
          {"vel", vel}, {"acc", acc},     {"contact", contact},     {"kl", kl}};
}

VaeLossWeights VaeLossWeights::from_json(const Json& j) {
  VaeLossWeights w;
  w.geo = j.value("geo", w.geo);
  w.rot6d = j.value("rot6d", w.rot6d);
  w.axisangle = j.value("axisangle", w.axisangle);
  w.pos = j.value("pos", w.pos);
  w.vel = j.value("vel", w.vel);
  w.acc = j.value("acc", w.acc);
  w.contact = j.value("contact", w.contact);
  w.kl = j.value("kl", w.kl);
  w.validate();
  return w;
}

void VaeHyperParams::validate() const {
  require(chunk_len >= 1, "chunk_len must be >= 1");
  require(latent_dim >= 1 && hidden >= 1, "latent_dim and hidden must be >= 1");
  require(epochs >= 0 && batch >= 1, "epochs must be >= 0 and batch >= 1");
  require(lr > 0.0, "lr must be > 0");
}

Json VaeHyperParams::to_json() const {
  return {{"chunk_len", chunk_len}, {"latent_dim", latent_dim}, {"hidden", hidden}, {"epochs", epochs},
          {"batch", batch},         {"lr", lr},                 {"seed", seed}};
}

VaeHyperParams VaeHyperParams::from_json(const Json& j) {
  VaeHyperParams h;
  h.chunk_len = j.value("chunk_len", h.chunk_len);
  h.latent_dim = j.value("latent_dim", h.latent_dim);
  h.hidden = j.value("hidden", h.hidden);
  h.epochs = j.value("epochs", h.epochs);
  h.batch = j.value("batch", h.batch);
  h.lr = j.value("lr", h.lr);
  h.seed = j.value("seed", h.seed);
  h.validate();
  return h;
}

// ---------------------------------------------------------------------------
// Loss construction

namespace {

constexpr float kCm = 100.0f;

nn::KinematicChain part_chain(BodyPart part, const BodyLayout& layout) {
  nn::KinematicChain chain;
  const int first = layout.first_joint(part);
  const int n = layout.part_joints(part);
  for (int j = 0; j < n; ++j) {
    const int p = layout.parents[static_cast<std::size_t>(first + j)];
    chain.parents.push_back(p >= first && p < first + n ? p - first : -1);
    chain.offsets.push_back(layout.offsets[static_cast<std::size_t>(first + j)].cast<float>());
  }
  return chain;
}

// Zeroes the first `k` rows of every block of `block` rows.
Tensor block_mask(Eigen::Index rows, Eigen::Index cols, Eigen::Index block, int k) {
  Tensor m = Tensor::Ones(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (r % block < k) m.row(r).setZero();
  }
  return m;
}

Var temporal_diff(Var x, Eigen::Index block, int order) {
  Var d = x;
  for (int i = 0; i < order; ++i) d = nn::sub(d, nn::shift_rows_in_blocks(d, block, 1));
  return nn::mul_constant(d, block_mask(x.rows(), x.cols(), block, order));
}

Tensor constant_of(const std::function<Var(Graph&)>& fn) {
  Graph g(false);
  return fn(g).value();
}

struct LossTerms {
  Var total;
  VaeLossBreakdown parts;
};

// x_hat holds contact logits; target holds contact probabilities.
LossTerms build_loss(BodyPart part, const BodyLayout& layout, Var x_hat, const Tensor& target, Eigen::Index block,
                     Var mu, Var logvar, const VaeLossWeights& w) {
  Graph& g = *x_hat.graph();
  VaeLossBreakdown b;
  std::vector<std::pair<double, Var>> terms;
  auto push = [&](double weight, Var v, double& slot) {
    slot = v.item();
    terms.emplace_back(weight, v);
  };
  if (part == BodyPart::kFace) {
    push(w.rot6d, nn::mse(x_hat, target), b.rot6d);
    const Tensor tv = constant_of([&](Graph& cg) { return temporal_diff(cg.input(target), block, 1); });
    const Tensor ta = constant_of([&](Graph& cg) { return temporal_diff(cg.input(target), block, 2); });
    push(w.vel, nn::mse(temporal_diff(x_hat, block, 1), tv), b.vel);
    push(w.acc, nn::mse(temporal_diff(x_hat, block, 2), ta), b.acc);
  } else {
    const int j = layout.part_joints(part);
    const nn::KinematicChain chain = part_chain(part, layout);
    const bool lower = part == BodyPart::kLower;
    Var pred6 = nn::slice_cols(x_hat, 0, 6 * j);
    const Tensor t6 = target.leftCols(6 * j);
    Var rot = nn::rot6d_to_rotmat(pred6);
    const Tensor trot = constant_of([&](Graph& cg) { return nn::rot6d_to_rotmat(cg.input(t6)); });
    push(w.geo, nn::mean(nn::geodesic_angle(rot, trot)), b.geo);
    push(w.rot6d, nn::mse(pred6, t6), b.rot6d);
    push(w.axisangle, nn::mse(nn::rotmat_to_axis_angle(rot), nn::axis_angle_of(trot)), b.axisangle);

    Var pos;
    Tensor tpos;
    if (lower) {
      Var tr = nn::slice_cols(x_hat, 6 * j, kTranslationDims);
      pos = nn::forward_kinematics(rot, &tr, chain);
      const Tensor ttr = target.middleCols(6 * j, kTranslationDims);
      tpos = constant_of([&](Graph& cg) {
        Var t = cg.input(ttr);
        return nn::forward_kinematics(cg.input(trot), &t, chain);
      });
    } else {
      pos = nn::forward_kinematics(rot, nullptr, chain);
      tpos = constant_of([&](Graph& cg) { return nn::forward_kinematics(cg.input(trot), nullptr, chain); });
    }
    pos = nn::scale(pos, kCm);
    tpos *= kCm;
    push(w.pos, nn::mse(pos, tpos), b.pos);
    const Tensor tv = constant_of([&](Graph& cg) { return temporal_diff(cg.input(tpos), block, 1); });
    const Tensor ta = constant_of([&](Graph& cg) { return temporal_diff(cg.input(tpos), block, 2); });
    push(w.vel, nn::mse(temporal_diff(pos, block, 1), tv), b.vel);
    push(w.acc, nn::mse(temporal_diff(pos, block, 2), ta), b.acc);

    if (lower) {
      const Tensor tc = target.middleCols(6 * j + kTranslationDims, kContactDims);
      // Cross-entropy minus the target entropy, so a perfect prediction scores 0.
      const auto p = tc.array().max(1e-7f).min(1.0f - 1e-7f);
      const float entropy = static_cast<float>(
          (-(tc.array() * p.log() + (1.0f - tc.array()) * (1.0f - p).log())).sum() / static_cast<float>(tc.size()));
      Var bce = nn::bce_with_logits(nn::slice_cols(x_hat, 6 * j + kTranslationDims, kContactDims), tc);
      Tensor shift(1, 1);
      shift(0, 0) = -entropy;
      push(w.contact, nn::add_constant(bce, shift), b.contact);
    }
  }
  push(w.kl, nn::kl_standard_normal(mu, logvar), b.kl);

  Var total = nn::scale(terms[0].second, static_cast<float>(terms[0].first));
  for (std::size_t i = 1; i < terms.size(); ++i) {
    total = nn::add(total, nn::scale(terms[i].second, static_cast<float>(terms[i].first)));
  }
  b.total = total.item();
  (void)g;
  return {total, b};
}

Tensor to_float(const RowMatrix& m) { return m.cast<float>(); }
RowMatrix to_double(const Tensor& t) { return t.cast<double>(); }

Tensor logits_of(const Tensor& p) {
  const auto q = p.array().max(1e-6f).min(1.0f - 1e-6f);
  return (q / (1.0f - q)).log().matrix();
}

}  // namespace

VaeLossBreakdown vae_loss(BodyPart part, const BodyLayout& layout, const RowMatrix& x, const RowMatrix& x_rec,
                          const Posterior& posterior, const VaeLossWeights& weights) {
  weights.validate();
  require(x.rows() == x_rec.rows() && x.cols() == x_rec.cols(), "vae_loss: shape mismatch");
  require(x.cols() == layout.part_width(part), "vae_loss: width does not match the part");
  require(posterior.mu.rows() == posterior.logvar.rows() && posterior.mu.cols() == posterior.logvar.cols(),
          "vae_loss: posterior shape mismatch");
  Tensor pred = to_float(x_rec);
  if (part == BodyPart::kLower) {
    const int c0 = 6 * layout.lower_joints + kTranslationDims;
    pred.middleCols(c0, kContactDims) = logits_of(pred.middleCols(c0, kContactDims));
  }
  Graph g(false);
  LossTerms t = build_loss(part, layout, g.input(pred), to_float(x), x.rows(), g.input(to_float(posterior.mu)),
                           g.input(to_float(posterior.logvar)), weights);
  return t.parts;
}

// ---------------------------------------------------------------------------
// PartCodec

struct PartCodec::Impl {
  BodyPart part;
  BodyLayout layout;
  VaeHyperParams hp;
  int width = 0;
  bool fitted = false;
  Json trained_weights = Json::object();
  nn::ParamStore params;
  nn::Linear enc1, enc2, enc_out;
  nn::Linear dec1, dec2, dec_out;
  nn::Param* in_mean = nullptr;
  nn::Param* in_std = nullptr;
  nn::Param* lat_mean = nullptr;
  nn::Param* lat_std = nullptr;

  Impl(BodyPart p, const BodyLayout& l, const VaeHyperParams& h) : part(p), layout(l), hp(h) {
    layout.validate();
    hp.validate();
    width = layout.part_width(part);
    std::mt19937_64 rng(hp.seed * 1000003ULL + static_cast<std::uint64_t>(part));
    const Eigen::Index in = static_cast<Eigen::Index>(hp.chunk_len) * width;
    const Eigen::Index hdim = hp.hidden;
    const Eigen::Index dz = hp.latent_dim;
    enc1 = nn::Linear(params, "enc1", in, hdim, rng);
    enc2 = nn::Linear(params, "enc2", hdim, hdim, rng);
    enc_out = nn::Linear(params, "enc_out", hdim, 2 * dz, rng);
    dec1 = nn::Linear(params, "dec1", 3 * dz, hdim, rng);
    dec2 = nn::Linear(params, "dec2", 3 * hdim, hdim, rng);
    dec_out = nn::Linear(params, "dec_out", hdim, in, rng);
    in_mean = &params.create("norm.mean", 1, width);
    in_std = &params.create_constant("norm.std", 1, width, 1.0f);
    lat_mean = &params.create("latent.mean", 1, dz);
    lat_std = &params.create_constant("latent.std", 1, dz, 1.0f);
    for (nn::Param* q : {in_mean, in_std, lat_mean, lat_std}) q->trainable = false;
  }

  int contact_col() const { return part == BodyPart::kLower ? 6 * layout.lower_joints + kTranslationDims : -1; }

  // Pads to a whole number of chunks by repeating the last frame.
  RowMatrix pad(const RowMatrix& frames) const {
    require(frames.cols() == width, "codec: input width mismatch for part " + std::string(part_name(part)));
    require(frames.rows() >= 1, "codec: empty input");
    const Eigen::Index l = hp.chunk_len;
    const Eigen::Index n = ((frames.rows() + l - 1) / l) * l;
    if (n == frames.rows()) return frames;
    RowMatrix out(n, frames.cols());
    out.topRows(frames.rows()) = frames;
    for (Eigen::Index r = frames.rows(); r < n; ++r) out.row(r) = frames.row(frames.rows() - 1);
    return out;
  }

  // Frames (B*N x D) -> normalized chunk rows (B*C x L*D).
  Tensor chunk_input(const Tensor& frames) const {
    Tensor x = frames;
    x.rowwise() -= in_mean->value.row(0);
    x.array().rowwise() /= in_std->value.row(0).array();
    const Eigen::Index l = hp.chunk_len;
    return Eigen::Map<const Tensor>(x.data(), x.rows() / l, l * width);
  }

  std::pair<Var, Var> encode_graph(Graph& g, const Tensor& chunk_rows) const {
    Var h = nn::gelu(enc1(g, g.input(chunk_rows)));
    h = nn::gelu(enc2(g, h));
    Var out = enc_out(g, h);
    const Eigen::Index dz = hp.latent_dim;
    return {nn::slice_cols(out, 0, dz), nn::slice_cols(out, dz, dz)};
  }

  static Var neighbors(Var x, Eigen::Index block) {
    return nn::concat_cols({nn::shift_rows_in_blocks(x, block, 1), x, nn::shift_rows_in_blocks(x, block, -1)});
  }

  // z (B*C x d_z, unstandardized) -> frames (B*N x D) with contact logits.
  Var decode_graph(Graph& g, Var z, Eigen::Index chunks) const {
    Var h = nn::gelu(dec1(g, neighbors(z, chunks)));
    h = nn::gelu(dec2(g, neighbors(h, chunks)));
    Var out = dec_out(g, h);
    out = nn::reshape(out, out.rows() * hp.chunk_len, width);
    const Tensor sd = in_std->value.replicate(out.rows(), 1);
    const Tensor mn = in_mean->value.replicate(out.rows(), 1);
    return nn::add_constant(nn::mul_constant(out, sd), mn);
  }

  void fit_normalization(const std::vector<const RowMatrix*>& data) {
    Eigen::ArrayXd sum = Eigen::ArrayXd::Zero(width);
    Eigen::ArrayXd sq = Eigen::ArrayXd::Zero(width);
    double n = 0;
    for (const RowMatrix* m : data) {
      sum += m->colwise().sum().transpose().array();
      sq += m->array().square().colwise().sum().transpose();
      n += static_cast<double>(m->rows());
    }
    const Eigen::ArrayXd mean = sum / n;
    const Eigen::ArrayXd var = (sq / n - mean.square()).max(0.0);
    for (int c = 0; c < width; ++c) {
      const bool contact = contact_col() >= 0 && c >= contact_col();
      in_mean->value(0, c) = contact ? 0.0f : static_cast<float>(mean(c));
      in_std->value(0, c) = contact ? 1.0f : static_cast<float>(std::max(std::sqrt(var(c)), 1e-2));
    }
  }
};

PartCodec::PartCodec(BodyPart part, const BodyLayout& layout, const VaeHyperParams& hp)
    : impl_(std::make_unique<Impl>(part, layout, hp)) {}
PartCodec::~PartCodec() = default;
PartCodec::PartCodec(PartCodec&&) noexcept = default;
PartCodec& PartCodec::operator=(PartCodec&&) noexcept = default;

BodyPart PartCodec::part() const { return impl_->part; }
const BodyLayout& PartCodec::layout() const { return impl_->layout; }
const VaeHyperParams& PartCodec::hyper() const { return impl_->hp; }
int PartCodec::latent_dim() const { return impl_->hp.latent_dim; }
bool PartCodec::fitted() const { return impl_->fitted; }
const nn::ParamStore& PartCodec::params() const { return impl_->params; }

Posterior PartCodec::posterior(const RowMatrix& frames) const {
  if (!impl_->fitted) fail(ErrorKind::kMissingCheckpoint, "codec not fitted");
  const RowMatrix padded = impl_->pad(frames);
  Graph g(false);
  auto [mu, logvar] = impl_->encode_graph(g, impl_->chunk_input(to_float(padded)));
  return {to_double(mu.value()), to_double(logvar.value())};
}

std::vector<PartLatent> PartCodec::encode_batch(const std::vector<const RowMatrix*>& frames) const {
  if (!impl_->fitted) fail(ErrorKind::kMissingCheckpoint, "codec not fitted");
  std::vector<PartLatent> out;
  if (frames.empty()) return out;
  std::vector<RowMatrix> padded;
  padded.reserve(frames.size());
  Eigen::Index total = 0;
  for (const RowMatrix* f : frames) {
    padded.push_back(impl_->pad(*f));
    require(padded.back().rows() == padded.front().rows(), "encode_batch: unequal lengths");
    total += padded.back().rows();
  }
  Tensor stacked(total, impl_->width);
  Eigen::Index r = 0;
  for (const RowMatrix& p : padded) {
    stacked.middleRows(r, p.rows()) = to_float(p);
    r += p.rows();
  }
  Graph g(false);
  auto [mu, logvar] = impl_->encode_graph(g, impl_->chunk_input(stacked));
  (void)logvar;
  Tensor z = mu.value();
  z.rowwise() -= impl_->lat_mean->value.row(0);
  z.array().rowwise() /= impl_->lat_std->value.row(0).array();
  const Eigen::Index c = padded.front().rows() / impl_->hp.chunk_len;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    PartLatent pl;
    pl.part = impl_->part;
    pl.chunks = to_double(z.middleRows(static_cast<Eigen::Index>(i) * c, c));
    pl.source_frames = padded[i].rows() == frames[i]->rows() ? -1 : static_cast<int>(frames[i]->rows());
    out.push_back(std::move(pl));
  }
  return out;
}

PartLatent PartCodec::encode(const RowMatrix& frames) const { return encode_batch({&frames}).front(); }

std::vector<RowMatrix> PartCodec::decode_batch(const std::vector<const RowMatrix*>& latents) const {
  if (!impl_->fitted) fail(ErrorKind::kMissingCheckpoint, "codec not fitted");
  std::vector<RowMatrix> out;
  if (latents.empty()) return out;
  const Eigen::Index c = latents.front()->rows();
  require(c >= 1, "decode: empty latent");
  Tensor z(c * static_cast<Eigen::Index>(latents.size()), impl_->hp.latent_dim);
  for (std::size_t i = 0; i < latents.size(); ++i) {
    require(latents[i]->rows() == c, "decode_batch: unequal chunk counts");
    require(latents[i]->cols() == impl_->hp.latent_dim, "decode: latent dimension mismatch");
    z.middleRows(static_cast<Eigen::Index>(i) * c, c) = to_float(*latents[i]);
  }
  z.array().rowwise() *= impl_->lat_std->value.row(0).array();
  z.rowwise() += impl_->lat_mean->value.row(0);
  Graph g(false);
  Tensor x = impl_->decode_graph(g, g.input(z), c).value();
  if (impl_->contact_col() >= 0) {
    auto cc = x.middleCols(impl_->contact_col(), kContactDims);
    cc = (1.0f / (1.0f + (-cc.array()).exp())).matrix();
  }
  const Eigen::Index n = c * impl_->hp.chunk_len;
  for (std::size_t i = 0; i < latents.size(); ++i) out.push_back(to_double(x.middleRows(static_cast<Eigen::Index>(i) * n, n)));
  return out;
}

RowMatrix PartCodec::decode(const PartLatent& latent) const {
  require(latent.part == impl_->part, "decode: latent belongs to a different part");
  RowMatrix x = decode_batch({&latent.chunks}).front();
  if (latent.source_frames > 0 && latent.source_frames < x.rows()) x.conservativeResize(latent.source_frames, Eigen::NoChange);
  return x;
}

std::vector<double> PartCodec::train(const std::vector<const RowMatrix*>& data, const VaeLossWeights& weights,
                                     std::ostream* log) {
  require(!data.empty(), "train_vae: empty corpus");
  weights.validate();
  Impl& m = *impl_;
  std::vector<RowMatrix> padded;
  padded.reserve(data.size());
  for (const RowMatrix* d : data) {
    padded.push_back(m.pad(*d));
    require(padded.back().rows() == padded.front().rows(), "train_vae: all clips must have equal length");
  }
  std::vector<const RowMatrix*> ptrs;
  for (const auto& p : padded) ptrs.push_back(&p);
  m.fit_normalization(ptrs);

  const Eigen::Index n = padded.front().rows();
  const Eigen::Index c = n / m.hp.chunk_len;
  const Eigen::Index dz = m.hp.latent_dim;
  std::mt19937_64 rng(m.hp.seed * 7919ULL + 17ULL * static_cast<std::uint64_t>(m.part));
  std::normal_distribution<float> normal(0.0f, 1.0f);
  nn::AdamConfig acfg;
  acfg.lr = static_cast<float>(m.hp.lr);
  nn::Adam adam(acfg);
  std::vector<std::size_t> order(padded.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batches_per_epoch = (padded.size() + m.hp.batch - 1) / m.hp.batch;
  const double total_steps = static_cast<double>(batches_per_epoch) * std::max(1, m.hp.epochs);
  std::int64_t step = 0;
  std::vector<double> history;

  for (int epoch = 0; epoch < m.hp.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t count = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(m.hp.batch)) {
      const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(m.hp.batch));
      const Eigen::Index bs = static_cast<Eigen::Index>(b1 - b0);
      Tensor target(bs * n, m.width);
      for (std::size_t i = b0; i < b1; ++i) {
        target.middleRows(static_cast<Eigen::Index>(i - b0) * n, n) = to_float(padded[order[i]]);
      }
      Graph g(true);
      auto [mu, logvar] = m.encode_graph(g, m.chunk_input(target));
      Tensor eps(bs * c, dz);
      for (Eigen::Index k = 0; k < eps.size(); ++k) eps.data()[k] = normal(rng);
      Var z = nn::add(mu, nn::mul_constant(nn::exp(nn::scale(logvar, 0.5f)), eps));
      Var x_hat = m.decode_graph(g, z, c);
      LossTerms lt = build_loss(m.part, m.layout, x_hat, target, n, mu, logvar, weights);
      m.params.zero_grad();
      g.backward(lt.total);
      const double progress = static_cast<double>(step) / total_steps;
      const double lr_scale = 0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
      adam.step(m.params, static_cast<float>(lr_scale));
      ++step;
      loss_sum += lt.parts.total * static_cast<double>(bs);
      count += static_cast<std::size_t>(bs);
    }
    history.push_back(loss_sum / static_cast<double>(count));
    if (log != nullptr) {
      *log << "vae[" << part_name(m.part) << "] epoch " << epoch + 1 << "/" << m.hp.epochs << " loss "
           << history.back() << "\n";
    }
  }

  // Standardize the posterior means over the training set.
  m.lat_mean->value.setZero();
  m.lat_std->value.setOnes();
  m.fitted = true;
  Eigen::ArrayXd sum = Eigen::ArrayXd::Zero(dz);
  Eigen::ArrayXd sq = Eigen::ArrayXd::Zero(dz);
  double rows = 0;
  const std::size_t chunk = 64;
  for (std::size_t i = 0; i < ptrs.size(); i += chunk) {
    std::vector<const RowMatrix*> part(ptrs.begin() + static_cast<std::ptrdiff_t>(i),
                                       ptrs.begin() + static_cast<std::ptrdiff_t>(std::min(ptrs.size(), i + chunk)));
    for (const PartLatent& pl : encode_batch(part)) {
      sum += pl.chunks.colwise().sum().transpose().array();
      sq += pl.chunks.array().square().colwise().sum().transpose();
      rows += static_cast<double>(pl.chunks.rows());
    }
  }
  const Eigen::ArrayXd mean = sum / rows;
  const Eigen::ArrayXd sd = (sq / rows - mean.square()).max(0.0).sqrt().max(1e-3);
  for (Eigen::Index k = 0; k < dz; ++k) {
    m.lat_mean->value(0, k) = static_cast<float>(mean(k));
    m.lat_std->value(0, k) = static_cast<float>(sd(k));
  }
  m.trained_weights = weights.to_json();
  return history;
}

void PartCodec::save(const std::filesystem::path& path) const {
  if (!impl_->fitted) fail(ErrorKind::kMissingCheckpoint, "codec not fitted");
  Json h;
  h["part"] = std::string(part_name(impl_->part));
  h["layout"] = impl_->layout.to_json();
  h["hyper"] = impl_->hp.to_json();
  h["dims"] = {{"width", impl_->width}, {"latent_dim", impl_->hp.latent_dim}, {"chunk_len", impl_->hp.chunk_len}};
  h["weights"] = impl_->trained_weights;
  write_checkpoint(path, "part_vae", h, impl_->params);
}

PartCodec PartCodec::load(const std::filesystem::path& path) {
  const CheckpointData ck = read_checkpoint(path, "part_vae");
  PartCodec codec(parse_part(ck.header.at("part").get<std::string>()), BodyLayout::from_json(ck.header.at("layout")),
                  VaeHyperParams::from_json(ck.header.at("hyper")));
  load_params(ck, codec.impl_->params);
  codec.impl_->trained_weights = ck.header.value("weights", Json::object());
  codec.impl_->fitted = true;
  return codec;
}

// ---------------------------------------------------------------------------
// CodecSet

std::array<PartLatent, 4> CodecSet::encode(const GestureSequence& seq) const {
  std::array<PartLatent, 4> out;
  for (std::size_t i = 0; i < 4; ++i) out[i] = codecs_[i].encode(seq.part(kAllParts[i]));
  return out;
}

GestureSequence CodecSet::decode(const std::array<PartLatent, 4>& latents) const {
  GestureSequence seq;
  for (std::size_t i = 0; i < 4; ++i) seq.part(kAllParts[i]) = codecs_[i].decode(latents[i]);
  return seq;
}

void CodecSet::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < 4; ++i) {
    codecs_[i].save(dir / ("vae_" + std::string(part_name(kAllParts[i])) + ".ckpt"));
  }
}

CodecSet CodecSet::load(const std::filesystem::path& dir) {
  auto one = [&](BodyPart p) { return PartCodec::load(dir / ("vae_" + std::string(part_name(p)) + ".ckpt")); };
  return CodecSet({one(BodyPart::kUpper), one(BodyPart::kHands), one(BodyPart::kFace), one(BodyPart::kLower)});
}

CodecSet train_vae(const std::vector<GestureSequence>& corpus, const BodyLayout& layout,
                   const VaeLossWeights& weights, const VaeHyperParams& hp, VaeTrainingReport* report,
                   std::ostream* log) {
  require(!corpus.empty(), "train_vae: empty corpus");
  for (const auto& s : corpus) s.validate(layout);
  auto fit = [&](BodyPart p) {
    PartCodec codec(p, layout, hp);
    std::vector<const RowMatrix*> data;
    data.reserve(corpus.size());
    for (const auto& s : corpus) data.push_back(&s.part(p));
    auto hist = codec.train(data, weights, log);
    if (report != nullptr) report->epoch_loss[static_cast<std::size_t>(p)] = std::move(hist);
    return codec;
  };
  return CodecSet({fit(BodyPart::kUpper), fit(BodyPart::kHands), fit(BodyPart::kFace), fit(BodyPart::kLower)});
}

}  // namespace ragg
