#include "ragg/denoiser.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

#include "ragg/checkpoint.hpp"
#include "ragg/error.hpp"

namespace ragg {

using nn::Graph;
using nn::Index;
using nn::Tensor;
using nn::Var;

void DenoiserConfig::validate() const {
  require(layers >= 1 && heads >= 1 && model_dim >= 2 && ffn_dim >= 1, "denoiser: invalid layer sizes");
  require(model_dim % heads == 0, "denoiser: model_dim must be divisible by heads");
  require(model_dim % 2 == 0, "denoiser: model_dim must be even");
  require(latent_dim >= 1 && chunks >= 1 && chunk_len >= 1, "denoiser: invalid latent shape");
  require(audio_dim >= 1 && text_dim >= 1 && speaker_dim >= 1, "denoiser: invalid conditioning dims");
}

Json DenoiserConfig::to_json() const {
  return {{"layers", layers},         {"heads", heads},         {"model_dim", model_dim},
          {"ffn_dim", ffn_dim},       {"latent_dim", latent_dim}, {"chunks", chunks},
          {"chunk_len", chunk_len},   {"audio_dim", audio_dim}, {"text_dim", text_dim},
          {"speaker_dim", speaker_dim}, {"seed", seed}};
}

DenoiserConfig DenoiserConfig::from_json(const Json& j) {
  DenoiserConfig c;
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.model_dim = j.value("model_dim", c.model_dim);
  c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.chunks = j.value("chunks", c.chunks);
  c.chunk_len = j.value("chunk_len", c.chunk_len);
  c.audio_dim = j.value("audio_dim", c.audio_dim);
  c.text_dim = j.value("text_dim", c.text_dim);
  c.speaker_dim = j.value("speaker_dim", c.speaker_dim);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

void DiffusionTrainConfig::validate() const {
  require(epochs >= 0 && batch >= 1, "diffusion training: epochs >= 0 and batch >= 1 required");
  require(lr > 0.0 && warmup_steps >= 0, "diffusion training: invalid learning rate settings");
  require(cond_dropout >= 0.0 && cond_dropout <= 1.0, "diffusion training: cond_dropout must be in [0, 1]");
  require(max_seconds >= 0.0, "diffusion training: max_seconds must be >= 0");
}

Json DiffusionTrainConfig::to_json() const {
  return {{"epochs", epochs}, {"batch", batch},   {"lr", lr},  {"warmup_steps", warmup_steps},
          {"cond_dropout", cond_dropout}, {"max_seconds", max_seconds}, {"seed", seed}};
}

DiffusionTrainConfig DiffusionTrainConfig::from_json(const Json& j) {
  DiffusionTrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.cond_dropout = j.value("cond_dropout", c.cond_dropout);
  c.max_seconds = j.value("max_seconds", c.max_seconds);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

Eigen::VectorXf sinusoidal_embedding(double position, int dim, double max_period) {
  require(dim % 2 == 0, "sinusoidal embedding needs an even dimension");
  const int half = dim / 2;
  Eigen::VectorXf e(dim);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(max_period) * static_cast<double>(i) / static_cast<double>(half));
    e(i) = static_cast<float>(std::sin(position * freq));
    e(half + i) = static_cast<float>(std::cos(position * freq));
  }
  return e;
}

namespace {

struct Stylization {
  nn::Linear emb;  // D -> 2D
  nn::LayerNorm norm;
  nn::Linear out;  // D -> D, zero init

  Stylization() = default;
  Stylization(nn::ParamStore& s, const std::string& name, Index d, std::mt19937_64& rng)
      : emb(s, name + ".emb", d, 2 * d, rng), norm(s, name + ".norm", d), out(s, name + ".out", d, d, rng, true) {}

  Var operator()(Graph& g, Var h, Var emb_act, Index block) const {
    const Index d = h.cols();
    Var ss = emb(g, emb_act);
    Var y = nn::modulate(norm(g, h), nn::slice_cols(ss, 0, d), nn::slice_cols(ss, d, d), block);
    return out(g, nn::silu(y));
  }
};

struct Layer {
  nn::LayerNorm ln_sa, ln_ca, ln_ff;
  nn::Linear q, k, v;
  std::array<nn::Linear, 3> cq, ck, cv;
  nn::Linear combine;
  nn::Linear ff1, ff2;
  Stylization st_sa, st_ca, st_ff;
};

constexpr int kSeparatorPart = 4;

}  // namespace

struct TransformerDenoiser::Impl {
  DenoiserConfig cfg;
  bool trained = false;
  nn::ParamStore params;
  nn::Linear in_proj;
  nn::Linear t1, t2;
  nn::Linear audio_in, text_in, speaker_in;
  nn::LayerNorm audio_ln, text_ln, speaker_ln;
  std::vector<Layer> layers;
  nn::LayerNorm out_ln;
  nn::Linear out_proj;
  Tensor token_pe;     // M x D
  Tensor cond_pe;      // C x D
  std::vector<double> alpha_bars;

  Impl(const DenoiserConfig& c, const NoiseSchedule& s) : cfg(c), alpha_bars(s.alpha_bars) {
    cfg.validate();
    s.validate();
    std::mt19937_64 rng(cfg.seed * 2654435761ULL + 11ULL);
    const Index d = cfg.model_dim;
    const Index l = cfg.chunk_len;
    in_proj = nn::Linear(params, "in_proj", cfg.latent_dim, d, rng);
    t1 = nn::Linear(params, "time.l1", d, d, rng);
    t2 = nn::Linear(params, "time.l2", d, d, rng);
    audio_in = nn::Linear(params, "cond.audio", l * cfg.audio_dim, d, rng);
    text_in = nn::Linear(params, "cond.text", l * cfg.text_dim, d, rng);
    speaker_in = nn::Linear(params, "cond.speaker", cfg.speaker_dim, d, rng);
    audio_ln = nn::LayerNorm(params, "cond.audio_ln", d);
    text_ln = nn::LayerNorm(params, "cond.text_ln", d);
    speaker_ln = nn::LayerNorm(params, "cond.speaker_ln", d);
    for (int i = 0; i < cfg.layers; ++i) {
      const std::string p = "layer" + std::to_string(i);
      Layer ly;
      ly.ln_sa = nn::LayerNorm(params, p + ".ln_sa", d);
      ly.ln_ca = nn::LayerNorm(params, p + ".ln_ca", d);
      ly.ln_ff = nn::LayerNorm(params, p + ".ln_ff", d);
      ly.q = nn::Linear(params, p + ".sa.q", d, d, rng);
      ly.k = nn::Linear(params, p + ".sa.k", d, d, rng);
      ly.v = nn::Linear(params, p + ".sa.v", d, d, rng);
      const char* mods[3] = {"audio", "text", "speaker"};
      for (int m = 0; m < 3; ++m) {
        const std::string cp = p + ".ca." + mods[m];
        ly.cq[static_cast<std::size_t>(m)] = nn::Linear(params, cp + ".q", d, d, rng);
        ly.ck[static_cast<std::size_t>(m)] = nn::Linear(params, cp + ".k", d, d, rng);
        ly.cv[static_cast<std::size_t>(m)] = nn::Linear(params, cp + ".v", d, d, rng);
      }
      ly.combine = nn::Linear(params, p + ".ca.combine", 3 * d, d, rng);
      ly.ff1 = nn::Linear(params, p + ".ff1", d, cfg.ffn_dim, rng);
      ly.ff2 = nn::Linear(params, p + ".ff2", cfg.ffn_dim, d, rng);
      ly.st_sa = Stylization(params, p + ".st_sa", d, rng);
      ly.st_ca = Stylization(params, p + ".st_ca", d, rng);
      ly.st_ff = Stylization(params, p + ".st_ff", d, rng);
      layers.push_back(std::move(ly));
    }
    out_ln = nn::LayerNorm(params, "out_ln", d);
    out_proj = nn::Linear(params, "out_proj", d, cfg.latent_dim, rng);

    // Time position = chunk index (separators sit after the last chunk);
    // body-part position = part id (separators share one id).
    const int m_rows = cfg.latent_rows();
    token_pe.resize(m_rows, d);
    for (int r = 0; r < m_rows; ++r) {
      const int slot = r / (cfg.chunks + 1);
      const int within = r % (cfg.chunks + 1);
      const bool sep = within == cfg.chunks;
      const int part = sep ? kSeparatorPart : slot;
      token_pe.row(r) = (sinusoidal_embedding(within, static_cast<int>(d), 100.0) +
                         0.5f * sinusoidal_embedding(part, static_cast<int>(d), 16.0))
                            .transpose();
    }
    cond_pe.resize(cfg.chunks, d);
    for (int c2 = 0; c2 < cfg.chunks; ++c2) {
      cond_pe.row(c2) = sinusoidal_embedding(c2, static_cast<int>(d), 100.0).transpose();
    }
  }

  // Frame features (N x d) -> per-chunk rows (C x L*d), last-frame padding.
  Tensor pool_chunks(const RowMatrix& f, int dim) const {
    require(f.cols() == dim, "denoiser: conditioning width mismatch");
    const Index c = cfg.chunks;
    const Index l = cfg.chunk_len;
    require(f.rows() >= 1 && f.rows() <= c * l, "denoiser: conditioning frame count exceeds the latent span");
    Tensor out(c, l * dim);
    for (Index k = 0; k < c * l; ++k) {
      const Index src = std::min<Index>(k, f.rows() - 1);
      for (int j = 0; j < dim; ++j) out(k / l, (k % l) * dim + j) = static_cast<float>(f(src, j));
    }
    return out;
  }
};

TransformerDenoiser::TransformerDenoiser(const DenoiserConfig& cfg, const NoiseSchedule& schedule)
    : impl_(std::make_unique<Impl>(cfg, schedule)) {}
TransformerDenoiser::~TransformerDenoiser() = default;
TransformerDenoiser::TransformerDenoiser(TransformerDenoiser&&) noexcept = default;
TransformerDenoiser& TransformerDenoiser::operator=(TransformerDenoiser&&) noexcept = default;

const DenoiserConfig& TransformerDenoiser::config() const { return impl_->cfg; }
bool TransformerDenoiser::trained() const { return impl_->trained; }
void TransformerDenoiser::mark_trained() { impl_->trained = true; }
nn::ParamStore& TransformerDenoiser::params() { return impl_->params; }
const nn::ParamStore& TransformerDenoiser::params() const { return impl_->params; }

Var TransformerDenoiser::forward(Graph& g, const Tensor& z_t, const std::vector<int>& t,
                                 const std::vector<const ConditioningSet*>& cond,
                                 const std::vector<std::array<bool, 3>>* drop) const {
  const Impl& m = *impl_;
  const DenoiserConfig& c = m.cfg;
  const Index b = static_cast<Index>(t.size());
  const Index rows = c.latent_rows();
  const Index d = c.model_dim;
  require(b >= 1 && static_cast<Index>(cond.size()) == b, "denoiser: batch size mismatch");
  require(z_t.rows() == b * rows && z_t.cols() == c.latent_dim, "denoiser: latent shape mismatch");
  require(drop == nullptr || static_cast<Index>(drop->size()) == b, "denoiser: dropout mask size mismatch");

  Tensor audio(b * c.chunks, c.chunk_len * c.audio_dim);
  Tensor text(b * c.chunks, c.chunk_len * c.text_dim);
  Tensor speaker(b, c.speaker_dim);
  Tensor temb(b, d);
  Tensor c_skip(b * rows, c.latent_dim);
  Tensor c_out(b * rows, c.latent_dim);
  for (Index i = 0; i < b; ++i) {
    const ConditioningSet& cs = *cond[static_cast<std::size_t>(i)];
    const auto dr = drop != nullptr ? (*drop)[static_cast<std::size_t>(i)] : std::array<bool, 3>{false, false, false};
    audio.middleRows(i * c.chunks, c.chunks) = dr[0] ? Tensor::Zero(c.chunks, audio.cols()) : m.pool_chunks(cs.audio, c.audio_dim);
    text.middleRows(i * c.chunks, c.chunks) = dr[1] ? Tensor::Zero(c.chunks, text.cols()) : m.pool_chunks(cs.text, c.text_dim);
    require(cs.speaker.size() == c.speaker_dim, "denoiser: speaker embedding width mismatch");
    speaker.row(i) = dr[2] ? Eigen::RowVectorXf::Zero(c.speaker_dim) : Eigen::RowVectorXf(cs.speaker.cast<float>().transpose());
    const int ti = t[static_cast<std::size_t>(i)];
    require(ti >= 0 && ti < static_cast<int>(m.alpha_bars.size()), "denoiser: timestep outside the schedule");
    const double ab = m.alpha_bars[static_cast<std::size_t>(ti)];
    c_skip.middleRows(i * rows, rows).setConstant(static_cast<float>(std::sqrt(ab)));
    c_out.middleRows(i * rows, rows).setConstant(static_cast<float>(std::sqrt(1.0 - ab)));
    temb.row(i) = sinusoidal_embedding(ti, static_cast<int>(d)).transpose();
  }

  Var emb = m.t2(g, nn::silu(m.t1(g, g.input(temb))));
  Var emb_act = nn::silu(emb);

  Tensor cpe = m.cond_pe.replicate(b, 1);
  std::array<Var, 3> ctx = {
      m.audio_ln(g, nn::add_constant(nn::gelu(m.audio_in(g, g.input(audio))), cpe)),
      m.text_ln(g, nn::add_constant(nn::gelu(m.text_in(g, g.input(text))), cpe)),
      m.speaker_ln(g, nn::gelu(m.speaker_in(g, g.input(speaker))))};
  const std::array<Index, 3> ctx_len = {c.chunks, c.chunks, 1};

  Var x = nn::add_constant(m.in_proj(g, g.input(z_t)), m.token_pe.replicate(b, 1));
  for (const Layer& ly : m.layers) {
    Var h = ly.ln_sa(g, x);
    Var sa = nn::attention(ly.q(g, h), ly.k(g, h), ly.v(g, h), b, c.heads, rows, rows);
    x = nn::add(x, ly.st_sa(g, sa, emb_act, rows));

    h = ly.ln_ca(g, x);
    std::vector<Var> heads;
    for (std::size_t k = 0; k < 3; ++k) {
      heads.push_back(nn::attention(ly.cq[k](g, h), ly.ck[k](g, ctx[k]), ly.cv[k](g, ctx[k]), b, c.heads, rows,
                                    ctx_len[k]));
    }
    Var ca = ly.combine(g, nn::concat_cols(heads));
    x = nn::add(x, ly.st_ca(g, ca, emb_act, rows));

    h = ly.ln_ff(g, x);
    Var ff = ly.ff2(g, nn::gelu(ly.ff1(g, h)));
    x = nn::add(x, ly.st_ff(g, ff, emb_act, rows));
  }
  Var f = m.out_proj(g, m.out_ln(g, x));
  return nn::add_constant(nn::mul_constant(f, c_out), c_skip.cwiseProduct(z_t));
}

std::vector<RowMatrix> TransformerDenoiser::predict_x0_batch(const std::vector<const RowMatrix*>& z_t,
                                                             const std::vector<int>& t,
                                                             const std::vector<const ConditioningSet*>& cond) const {
  if (!impl_->trained) fail(ErrorKind::kMissingCheckpoint, "denoiser not trained");
  const Index rows = impl_->cfg.latent_rows();
  const Index b = static_cast<Index>(z_t.size());
  require(static_cast<Index>(t.size()) == b, "denoiser: batch size mismatch");
  Tensor z(b * rows, impl_->cfg.latent_dim);
  for (Index i = 0; i < b; ++i) {
    const RowMatrix& zi = *z_t[static_cast<std::size_t>(i)];
    require(zi.rows() == rows && zi.cols() == impl_->cfg.latent_dim, "denoiser: latent shape mismatch");
    z.middleRows(i * rows, rows) = zi.cast<float>();
  }
  Graph g(false);
  const Tensor out = forward(g, z, t, cond).value();
  std::vector<RowMatrix> res;
  for (Index i = 0; i < b; ++i) res.push_back(out.middleRows(i * rows, rows).cast<double>());
  return res;
}

RowMatrix TransformerDenoiser::predict_x0(const RowMatrix& z_t, int t, const ConditioningSet& cond) const {
  return predict_x0_batch({&z_t}, {t}, {&cond}).front();
}

void DiffusionModel::save(const std::filesystem::path& path) const {
  require(denoiser.trained(), "denoiser not trained");
  Json h;
  h["config"] = denoiser.config().to_json();
  h["schedule"] = schedule.to_json();
  write_checkpoint(path, "denoiser", h, denoiser.params());
}

DiffusionModel DiffusionModel::load(const std::filesystem::path& path) {
  const CheckpointData ck = read_checkpoint(path, "denoiser");
  NoiseSchedule schedule = NoiseSchedule::from_json(ck.header.at("schedule"));
  DiffusionModel m{TransformerDenoiser(DenoiserConfig::from_json(ck.header.at("config")), schedule), schedule};
  load_params(ck, m.denoiser.params());
  m.denoiser.mark_trained();
  return m;
}

std::vector<double> train_diffusion(TransformerDenoiser& model, const NoiseSchedule& schedule,
                                    const std::vector<RowMatrix>& latents, const std::vector<ConditioningSet>& conds,
                                    const DiffusionTrainConfig& cfg, std::ostream* log) {
  cfg.validate();
  schedule.validate();
  require(!latents.empty(), "train_diffusion: empty corpus");
  require(latents.size() == conds.size(), "train_diffusion: latents and conditioning differ in count");
  const DenoiserConfig& mc = model.config();
  const Index rows = mc.latent_rows();
  for (const auto& z : latents) {
    require(z.rows() == rows && z.cols() == mc.latent_dim, "train_diffusion: latent shape mismatch");
  }
  std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 3ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> tdist(1, schedule.train_steps);
  std::bernoulli_distribution dropd(cfg.cond_dropout);
  nn::AdamConfig acfg;
  acfg.lr = static_cast<float>(cfg.lr);
  nn::Adam adam(acfg);
  std::vector<std::size_t> order(latents.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> history;
  const auto start = std::chrono::steady_clock::now();
  std::int64_t step = 0;
  bool out_of_time = false;
  for (int epoch = 0; epoch < cfg.epochs && !out_of_time; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t count = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(cfg.batch));
      const Index bs = static_cast<Index>(b1 - b0);
      Tensor zt(bs * rows, mc.latent_dim);
      Tensor z0(bs * rows, mc.latent_dim);
      std::vector<int> ts;
      std::vector<const ConditioningSet*> cs;
      std::vector<std::array<bool, 3>> drop;
      for (std::size_t i = b0; i < b1; ++i) {
        const std::size_t idx = order[i];
        const int t = tdist(rng);
        RowMatrix eps(rows, mc.latent_dim);
        for (Index k = 0; k < eps.size(); ++k) eps.data()[k] = normal(rng);
        const Index r0 = static_cast<Index>(i - b0) * rows;
        zt.middleRows(r0, rows) = forward_noise(schedule, latents[idx], t, eps).cast<float>();
        z0.middleRows(r0, rows) = latents[idx].cast<float>();
        ts.push_back(t);
        cs.push_back(&conds[idx]);
        drop.push_back({dropd(rng), dropd(rng), dropd(rng)});
      }
      Graph g(true);
      Var pred = model.forward(g, zt, ts, cs, &drop);
      Var loss = nn::mse(pred, z0);
      model.params().zero_grad();
      g.backward(loss);
      const float warm = cfg.warmup_steps > 0
                             ? std::min(1.0f, static_cast<float>(step + 1) / static_cast<float>(cfg.warmup_steps))
                             : 1.0f;
      adam.step(model.params(), warm);
      ++step;
      loss_sum += static_cast<double>(loss.item()) * static_cast<double>(bs);
      count += static_cast<std::size_t>(bs);
      if (cfg.max_seconds > 0.0 &&
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() > cfg.max_seconds) {
        out_of_time = true;
        break;
      }
    }
    history.push_back(loss_sum / static_cast<double>(count));
    if (log != nullptr) {
      *log << "diffusion epoch " << epoch + 1 << "/" << cfg.epochs << " loss " << history.back()
           << (out_of_time ? " (time budget reached)" : "") << "\n";
    }
  }
  model.mark_trained();
  return history;
}

}  // namespace ragg
