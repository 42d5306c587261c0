#include <benchmark/benchmark.h>

#include <random>

#include "ragg/denoiser.hpp"
#include "ragg/metrics.hpp"
#include "ragg/rag_engine.hpp"
#include "ragg/retrieval.hpp"
#include "ragg/synthcorpus.hpp"
#include "ragg/text.hpp"

using namespace ragg;

namespace {

RowMatrix gaussian(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> n(0.0, 1.0);
  RowMatrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

ConditioningSet random_cond(std::mt19937_64& rng) {
  ConditioningSet c;
  c.audio = gaussian(rng, 150, 16);
  c.text = gaussian(rng, 150, 32);
  c.speaker = gaussian(rng, 8, 1).col(0).normalized();
  return c;
}

void BM_DenoiserForward(benchmark::State& state) {
  DenoiserConfig cfg;
  TransformerDenoiser d(cfg);
  d.mark_trained();
  std::mt19937_64 rng(1);
  const RowMatrix z = gaussian(rng, cfg.latent_rows(), cfg.latent_dim);
  const ConditioningSet c = random_cond(rng);
  for (auto _ : state) benchmark::DoNotOptimize(d.predict_x0(z, 500, c));
}
BENCHMARK(BM_DenoiserForward)->Unit(benchmark::kMillisecond);

void BM_GuidanceUpdate(benchmark::State& state) {
  const LatentLayout L;
  std::mt19937_64 rng(2);
  InversionTrajectory tr;
  tr.timesteps = {0, 1000};
  tr.latents = {gaussian(rng, L.rows(), L.dz), gaussian(rng, L.rows(), L.dz)};
  const std::vector<RetrievalInsertion> ins = {{"a", {2, 4}, {0, 2}, tr}, {"b", {6, 8}, {3, 5}, tr}};
  const std::vector<BodyPart> mask = {BodyPart::kUpper, BodyPart::kHands};
  RowMatrix z = gaussian(rng, L.rows(), L.dz);
  for (auto _ : state) {
    z = guidance_update(z, ins, 1000, 0.1, mask, L);
    benchmark::DoNotOptimize(z.data());
  }
}
BENCHMARK(BM_GuidanceUpdate);

void BM_RetrieveDiscourse(benchmark::State& state) {
  const auto lex = ConnectiveLexicon::default_lexicon();
  const std::vector<std::string> conns = {"because", "if", "however", "since", "unless", "but"};
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> pick(0, 5), spk(0, 5);
  std::vector<RetrievalExemplar> db;
  for (int i = 0; i < state.range(0); ++i) {
    RetrievalExemplar e;
    e.clip_id = "c" + std::to_string(i);
    e.connective = conns[static_cast<std::size_t>(pick(rng))];
    e.word = *e.connective;
    e.senses = lex.senses(*e.connective);
    e.speaker_id = spk(rng);
    e.gesture_window = {0, 24};
    db.push_back(e);
  }
  QuerySpec q;
  q.tokens = tokenize("it fell because it was heavy");
  q.marked_word = 2;
  q.connective = "because";
  q.senses = lex.senses("because");
  for (auto _ : state) benchmark::DoNotOptimize(retrieve_discourse(q, db, {5, 10}));
}
BENCHMARK(BM_RetrieveDiscourse)->Arg(200)->Arg(5000);

void BM_ClassifyMotif(benchmark::State& state) {
  const MotifBank bank = MotifBank::generate(7, BodyLayout::desk_default());
  std::mt19937_64 rng(4);
  const RowMatrix w = gaussian(rng, 45, bank.templates()[0].trajectory.cols());
  for (auto _ : state) benchmark::DoNotOptimize(classify_motif(w, bank));
}
BENCHMARK(BM_ClassifyMotif);

void BM_Fid(benchmark::State& state) {
  std::mt19937_64 rng(5);
  const RowMatrix a = gaussian(rng, 2000, 54), b = gaussian(rng, 2000, 54);
  for (auto _ : state) benchmark::DoNotOptimize(fid(a, b));
}
BENCHMARK(BM_Fid)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
