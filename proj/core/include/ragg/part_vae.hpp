#pragma once

// Chunked per-part variational autoencoders and the concatenated latent the
// diffusion model operates on.

#include <array>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <vector>

#include "ragg/autodiff.hpp"
#include "ragg/motion.hpp"

namespace ragg {

struct PartLatent {
  BodyPart part = BodyPart::kUpper;
  RowMatrix chunks;        // C x d_z
  int source_frames = -1;  // frames before last-frame padding; -1 when unpadded

  int num_chunks() const { return static_cast<int>(chunks.rows()); }
};

// Row offsets inside the M x d_z latent:
// upper [0, C) | sep | hands | sep | face | sep | lower.
struct LatentLayout {
  int chunks = 10;
  int dz = 64;

  int rows() const { return 4 * chunks + 3; }
  int part_offset(BodyPart part) const { return static_cast<int>(part) * (chunks + 1); }
  int row(BodyPart part, int chunk) const { return part_offset(part) + chunk; }
  std::array<int, 3> separator_rows() const { return {chunks, 2 * chunks + 1, 3 * chunks + 2}; }
};

struct LatentGesture {
  LatentLayout layout;
  RowMatrix data;  // M x d_z

  auto part(BodyPart p) { return data.middleRows(layout.part_offset(p), layout.chunks); }
  auto part(BodyPart p) const { return data.middleRows(layout.part_offset(p), layout.chunks); }
};

// `separators` is 3 x d_z (one row per slot).
LatentGesture assemble(const PartLatent& upper, const PartLatent& hands, const PartLatent& face,
                       const PartLatent& lower, const RowMatrix& separators);
std::array<PartLatent, 4> disassemble(const LatentGesture& z);

struct VaeLossWeights {
  double geo = 1.0;
  double rot6d = 1.0;
  double axisangle = 0.5;
  double pos = 1.0;
  double vel = 0.5;
  double acc = 0.25;
  double contact = 0.5;
  double kl = 1e-4;

  void validate() const;
  Json to_json() const;
  static VaeLossWeights from_json(const Json& j);
};

// Unweighted components; total is the weighted sum. Positions are measured
// in centimeters. For the face, `rot6d` holds the plain feature MSE.
struct VaeLossBreakdown {
  double total = 0.0;
  double geo = 0.0;
  double rot6d = 0.0;
  double axisangle = 0.0;
  double pos = 0.0;
  double vel = 0.0;
  double acc = 0.0;
  double contact = 0.0;
  double kl = 0.0;
};

struct Posterior {
  RowMatrix mu;      // C x d_z
  RowMatrix logvar;  // C x d_z
};

// Loss between a target part trajectory x and a reconstruction x_rec (both
// N x part width, contacts as probabilities).
VaeLossBreakdown vae_loss(BodyPart part, const BodyLayout& layout, const RowMatrix& x, const RowMatrix& x_rec,
                          const Posterior& posterior, const VaeLossWeights& weights);

struct VaeHyperParams {
  int chunk_len = 15;
  int latent_dim = 64;
  int hidden = 256;
  int epochs = 45;
  int batch = 16;
  double lr = 1e-3;
  std::uint64_t seed = 1;

  void validate() const;
  Json to_json() const;
  static VaeHyperParams from_json(const Json& j);
};

class PartCodec {
 public:
  PartCodec(BodyPart part, const BodyLayout& layout, const VaeHyperParams& hp);
  ~PartCodec();
  PartCodec(PartCodec&&) noexcept;
  PartCodec& operator=(PartCodec&&) noexcept;

  BodyPart part() const;
  const BodyLayout& layout() const;
  const VaeHyperParams& hyper() const;
  int latent_dim() const;
  bool fitted() const;

  // Standardized posterior mean per chunk. Pads with the last frame when N is
  // not a multiple of the chunk length.
  PartLatent encode(const RowMatrix& frames) const;
  Posterior posterior(const RowMatrix& frames) const;
  // Returns C * chunk_len frames, cut to source_frames when set; contacts
  // are probabilities.
  RowMatrix decode(const PartLatent& latent) const;
  // Batched variants (one latent/part trajectory per element).
  std::vector<PartLatent> encode_batch(const std::vector<const RowMatrix*>& frames) const;
  std::vector<RowMatrix> decode_batch(const std::vector<const RowMatrix*>& latents) const;

  // Runs training on a list of equally long part trajectories. Returns the
  // mean training loss per epoch.
  std::vector<double> train(const std::vector<const RowMatrix*>& data, const VaeLossWeights& weights,
                            std::ostream* log = nullptr);

  void save(const std::filesystem::path& path) const;
  static PartCodec load(const std::filesystem::path& path);

  const nn::ParamStore& params() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

class CodecSet {
 public:
  explicit CodecSet(std::array<PartCodec, 4> codecs) : codecs_(std::move(codecs)) {}

  const PartCodec& operator[](BodyPart p) const { return codecs_[static_cast<std::size_t>(p)]; }
  PartCodec& operator[](BodyPart p) { return codecs_[static_cast<std::size_t>(p)]; }
  int latent_dim() const { return codecs_[0].latent_dim(); }
  int chunk_len() const { return codecs_[0].hyper().chunk_len; }

  std::array<PartLatent, 4> encode(const GestureSequence& seq) const;
  GestureSequence decode(const std::array<PartLatent, 4>& latents) const;

  // Directory with one checkpoint per part.
  void save(const std::filesystem::path& dir) const;
  static CodecSet load(const std::filesystem::path& dir);

 private:
  std::array<PartCodec, 4> codecs_;
};

struct VaeTrainingReport {
  std::array<std::vector<double>, 4> epoch_loss;
};

CodecSet train_vae(const std::vector<GestureSequence>& corpus, const BodyLayout& layout,
                   const VaeLossWeights& weights, const VaeHyperParams& hp, VaeTrainingReport* report = nullptr,
                   std::ostream* log = nullptr);

}  // namespace ragg
