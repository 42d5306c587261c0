#include "ragg/rag_engine.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <ostream>
#include <sstream>

#include "ragg/error.hpp"

namespace ragg {

std::string_view mode_name(GenerationMode m) {
  switch (m) {
    case GenerationMode::kNoRag: return "no_rag";
    case GenerationMode::kLiOnly: return "li_only";
    case GenerationMode::kLiRg: return "li_rg";
    case GenerationMode::kInpaint: return "inpaint";
  }
  return "?";
}

GenerationMode parse_mode(std::string_view s) {
  for (auto m : {GenerationMode::kNoRag, GenerationMode::kLiOnly, GenerationMode::kLiRg, GenerationMode::kInpaint}) {
    if (mode_name(m) == s) return m;
  }
  fail(ErrorKind::kConfig, "unknown generation mode: " + std::string(s));
}

GuidanceSchedule GuidanceSchedule::constant(int n) {
  GuidanceSchedule s;
  s.kind = Kind::kConstant;
  s.n = n;
  s.validate();
  return s;
}

GuidanceSchedule GuidanceSchedule::front_loaded(int n_max, int cutoff_step) {
  GuidanceSchedule s;
  s.kind = Kind::kFrontLoaded;
  s.n = n_max;
  s.cutoff_step = cutoff_step;
  s.validate();
  return s;
}

GuidanceSchedule GuidanceSchedule::to_convergence(double tol, int max_iters) {
  GuidanceSchedule s;
  s.kind = Kind::kToConvergence;
  s.tol = tol;
  s.max_iters = max_iters;
  s.validate();
  return s;
}

void GuidanceSchedule::validate() const {
  require(n >= 0 && cutoff_step >= 0 && max_iters >= 0, "guidance schedule counts must be >= 0", ErrorKind::kConfig);
  require(tol >= 0.0 && std::isfinite(tol), "guidance schedule tolerance must be >= 0", ErrorKind::kConfig);
}

namespace {

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t next = s.find(sep, pos);
    out.push_back(s.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

int to_int(std::string_view s) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) fail(ErrorKind::kConfig, "bad integer in schedule: " + std::string(s));
  return v;
}

double to_double(std::string_view s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(std::string(s), &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  fail(ErrorKind::kConfig, "bad number in schedule: " + std::string(s));
}

}  // namespace

GuidanceSchedule GuidanceSchedule::parse(std::string_view s) {
  const auto f = split(s, ':');
  if (f[0] == "none" && f.size() == 1) return none();
  if (f[0] == "constant" && f.size() == 2) return constant(to_int(f[1]));
  if (f[0] == "front_loaded" && f.size() == 3) return front_loaded(to_int(f[1]), to_int(f[2]));
  if (f[0] == "to_convergence" && f.size() <= 3) {
    return to_convergence(f.size() > 1 ? to_double(f[1]) : 1e-4, f.size() > 2 ? to_int(f[2]) : 20);
  }
  fail(ErrorKind::kConfig, "unknown guidance schedule: " + std::string(s));
}

std::string GuidanceSchedule::to_string() const {
  switch (kind) {
    case Kind::kNone: return "none";
    case Kind::kConstant: return "constant:" + std::to_string(n);
    case Kind::kFrontLoaded: return "front_loaded:" + std::to_string(n) + ":" + std::to_string(cutoff_step);
    case Kind::kToConvergence: {
      std::ostringstream os;
      os << "to_convergence:" << tol << ":" << max_iters;
      return os.str();
    }
  }
  return "none";
}

int schedule_iterations(const GuidanceSchedule& s, int step, int total_steps) {
  require(total_steps >= 1 && step >= 1 && step <= total_steps, "schedule_iterations: step out of range");
  switch (s.kind) {
    case GuidanceSchedule::Kind::kNone: return 0;
    case GuidanceSchedule::Kind::kConstant: return s.n;
    case GuidanceSchedule::Kind::kToConvergence: return s.max_iters;
    case GuidanceSchedule::Kind::kFrontLoaded: {
      if (step <= s.cutoff_step) return 0;
      if (s.cutoff_step >= total_steps) return 0;
      const double frac = static_cast<double>(step - s.cutoff_step) / static_cast<double>(total_steps - s.cutoff_step);
      return static_cast<int>(std::lround(frac * s.n));
    }
  }
  return 0;
}

void GuidanceConfig::validate(const NoiseSchedule& s) const {
  require(std::isfinite(lambda) && lambda >= 0.0, "guidance lambda must be >= 0", ErrorKind::kConfig);
  schedule.validate();
  const int k = resolved_insertion_timestep(s);
  require(std::find(s.inference_steps.begin(), s.inference_steps.end(), k) != s.inference_steps.end(),
          "insertion timestep " + std::to_string(k) + " is not an inference step", ErrorKind::kConfig);
  require(!part_mask.empty(), "guidance part mask must not be empty", ErrorKind::kConfig);
}

int GuidanceConfig::resolved_insertion_timestep(const NoiseSchedule& s) const {
  return insertion_timestep < 0 ? s.inference_steps.back() : insertion_timestep;
}

Json GuidanceConfig::to_json() const {
  Json parts = Json::array();
  for (BodyPart p : part_mask) parts.push_back(std::string(part_name(p)));
  return {{"lambda", lambda}, {"schedule", schedule.to_string()}, {"K", insertion_timestep}, {"part_mask", parts}};
}

GuidanceConfig GuidanceConfig::from_json(const Json& j) {
  GuidanceConfig c;
  c.lambda = j.value("lambda", c.lambda);
  if (j.contains("schedule")) c.schedule = GuidanceSchedule::parse(j.at("schedule").get<std::string>());
  c.insertion_timestep = j.value("K", c.insertion_timestep);
  if (j.contains("part_mask")) {
    c.part_mask.clear();
    for (const auto& p : j.at("part_mask")) c.part_mask.push_back(parse_part(p.get<std::string>()));
  }
  return c;
}

std::pair<ChunkWindow, ChunkWindow> align_chunk_windows(const FrameWindow& query, const FrameWindow& retrieval,
                                                        int chunk_len, int chunks) {
  require(!query.empty() && !retrieval.empty(), "align_chunk_windows: empty window");
  ChunkWindow r = frames_to_chunks(retrieval, chunk_len);
  r.end = std::min(r.end, chunks);
  require(r.start < r.end, "align_chunk_windows: retrieval window outside the latent");
  const int len = std::min(r.length(), chunks);
  ChunkWindow q = frames_to_chunks(query, chunk_len);
  q.end = q.start + len;
  if (q.end > chunks) {
    q.start -= q.end - chunks;
    q.end = chunks;
  }
  require(q.start >= 0, "align_chunk_windows: query window outside the latent");
  return {q, r};
}

void validate_insertions(const std::vector<RetrievalInsertion>& ins, const LatentLayout& layout, int t) {
  for (std::size_t i = 0; i < ins.size(); ++i) {
    const auto& a = ins[i];
    require(a.query_chunks.length() == a.retrieval_chunks.length(), "insertion windows differ in length");
    require(!a.query_chunks.empty(), "insertion window is empty");
    require(a.query_chunks.start >= 0 && a.query_chunks.end <= layout.chunks && a.retrieval_chunks.start >= 0 &&
                a.retrieval_chunks.end <= layout.chunks,
            "insertion window outside the latent");
    if (!a.trajectory.has(t)) fail(ErrorKind::kInvalidArgument, "insertion trajectory missing timestep " + std::to_string(t));
    const RowMatrix& r = a.trajectory.at(t);
    require(r.rows() == layout.rows() && r.cols() == layout.dz, "insertion trajectory latent shape mismatch");
    for (std::size_t j = 0; j < i; ++j) {
      if (a.query_chunks.overlaps(ins[j].query_chunks)) fail(ErrorKind::kInvalidArgument, "overlapping insertions");
    }
  }
}

RowMatrix latent_splice(const RowMatrix& z, const std::vector<RetrievalInsertion>& ins, int t,
                        const std::vector<BodyPart>& part_mask, const LatentLayout& layout) {
  require(z.rows() == layout.rows() && z.cols() == layout.dz, "latent_splice: latent shape mismatch");
  validate_insertions(ins, layout, t);
  RowMatrix out = z;
  for (const auto& a : ins) {
    const RowMatrix& r = a.trajectory.at(t);
    for (BodyPart p : part_mask) {
      out.middleRows(layout.row(p, a.query_chunks.start), a.query_chunks.length()) =
          r.middleRows(layout.row(p, a.retrieval_chunks.start), a.retrieval_chunks.length());
    }
  }
  return out;
}

double guidance_objective(const RowMatrix& z_t, const std::vector<RetrievalInsertion>& ins, int t,
                          const std::vector<BodyPart>& part_mask, const LatentLayout& layout) {
  require(z_t.rows() == layout.rows() && z_t.cols() == layout.dz, "guidance: latent shape mismatch");
  validate_insertions(ins, layout, t);
  double g = 0.0;
  for (const auto& a : ins) {
    const RowMatrix& r = a.trajectory.at(t);
    for (BodyPart p : part_mask) {
      g += (z_t.middleRows(layout.row(p, a.query_chunks.start), a.query_chunks.length()) -
            r.middleRows(layout.row(p, a.retrieval_chunks.start), a.retrieval_chunks.length()))
               .squaredNorm();
    }
  }
  return g;
}

RowMatrix guidance_gradient(const RowMatrix& z_t, const std::vector<RetrievalInsertion>& ins, int t,
                            const std::vector<BodyPart>& part_mask, const LatentLayout& layout) {
  require(z_t.rows() == layout.rows() && z_t.cols() == layout.dz, "guidance: latent shape mismatch");
  validate_insertions(ins, layout, t);
  RowMatrix grad = RowMatrix::Zero(z_t.rows(), z_t.cols());
  for (const auto& a : ins) {
    const RowMatrix& r = a.trajectory.at(t);
    for (BodyPart p : part_mask) {
      const int q0 = layout.row(p, a.query_chunks.start);
      const int n = a.query_chunks.length();
      grad.middleRows(q0, n) =
          2.0 * (z_t.middleRows(q0, n) - r.middleRows(layout.row(p, a.retrieval_chunks.start), n));
    }
  }
  return grad;
}

RowMatrix guidance_update(const RowMatrix& z_t, const std::vector<RetrievalInsertion>& ins, int t, double lambda,
                          const std::vector<BodyPart>& part_mask, const LatentLayout& layout) {
  require(lambda >= 0.0, "guidance lambda must be >= 0");
  validate_insertions(ins, layout, t);
  RowMatrix out = z_t;
  for (const auto& a : ins) {
    const RowMatrix& r = a.trajectory.at(t);
    for (BodyPart p : part_mask) {
      const int q0 = layout.row(p, a.query_chunks.start);
      const int n = a.query_chunks.length();
      const auto rr = r.middleRows(layout.row(p, a.retrieval_chunks.start), n);
      out.middleRows(q0, n) = z_t.middleRows(q0, n) - lambda * (2.0 * (z_t.middleRows(q0, n) - rr));
    }
  }
  return out;
}

Json DiagnosticRecord::to_json() const {
  return {{"step", step}, {"t", timestep}, {"iteration", iteration}, {"G_value", g_value},
          {"mode", std::string(mode_name(mode))}};
}

void write_diagnostics_jsonl(std::ostream& os, const std::vector<DiagnosticRecord>& records) {
  for (const auto& r : records) os << r.to_json().dump() << "\n";
}

GenerationResult generate_latent(const Denoiser& f, const NoiseSchedule& s, const GenerationRequest& req) {
  require(req.cond != nullptr, "generate: missing conditioning");
  const LatentLayout& L = req.layout;
  require(req.separators.rows() == 3 && req.separators.cols() == L.dz, "generate: separators must be 3 x d_z");
  require(req.temperature >= 0.0, "generate: temperature must be >= 0");
  req.guidance.validate(s);
  if (req.mode == GenerationMode::kNoRag && !req.insertions.empty()) {
    fail(ErrorKind::kInvalidArgument, "no_rag mode does not take insertions");
  }
  const int k = req.guidance.resolved_insertion_timestep(s);
  const auto& mask = req.guidance.part_mask;
  const bool rag = req.mode != GenerationMode::kNoRag && !req.insertions.empty();
  if (rag) {
    validate_insertions(req.insertions, L, k);
    if (req.mode == GenerationMode::kInpaint) validate_insertions(req.insertions, L, 0);
  }

  std::mt19937_64 rng(req.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  RowMatrix z(L.rows(), L.dz);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = req.temperature * normal(rng);

  GenerationResult res;
  const int total = s.inference_count();
  for (int step = total; step >= 1; --step) {
    const int t = s.inference_steps[static_cast<std::size_t>(step - 1)];
    const int t_prev = step > 1 ? s.inference_steps[static_cast<std::size_t>(step - 2)] : 0;
    if (rag) {
      switch (req.mode) {
        case GenerationMode::kLiOnly:
        case GenerationMode::kLiRg: {
          if (t == k) z = latent_splice(z, req.insertions, t, mask, L);
          if (t <= k) {
            double g = guidance_objective(z, req.insertions, t, mask, L);
            res.diagnostics.push_back({step, t, 0, g, req.mode});
            if (req.mode == GenerationMode::kLiRg) {
              const auto& sch = req.guidance.schedule;
              const int iters = schedule_iterations(sch, step, total);
              for (int it = 1; it <= iters; ++it) {
                z = guidance_update(z, req.insertions, t, req.guidance.lambda, mask, L);
                const double g_new = guidance_objective(z, req.insertions, t, mask, L);
                res.diagnostics.push_back({step, t, it, g_new, req.mode});
                const bool converged = sch.kind == GuidanceSchedule::Kind::kToConvergence &&
                                       (g_new <= sch.tol || g - g_new <= sch.tol * g);
                g = g_new;
                if (converged) break;
              }
            }
          }
          break;
        }
        case GenerationMode::kInpaint: {
          for (const auto& a : req.insertions) {
            const RowMatrix& r0 = a.trajectory.at(0);
            for (BodyPart p : mask) {
              const int n = a.query_chunks.length();
              RowMatrix eps(n, L.dz);
              for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = normal(rng);
              z.middleRows(L.row(p, a.query_chunks.start), n) =
                  forward_noise(s, r0.middleRows(L.row(p, a.retrieval_chunks.start), n), t, eps);
            }
          }
          res.diagnostics.push_back({step, t, 0, guidance_objective(z, req.insertions, t, mask, L), req.mode});
          break;
        }
        case GenerationMode::kNoRag: break;
      }
    }
    z = ddim_sample_step(f, s, z, t, t_prev, *req.cond, 0.0);
  }
  if (rag && req.mode == GenerationMode::kInpaint) z = latent_splice(z, req.insertions, 0, mask, L);
  const auto seps = L.separator_rows();
  for (int i = 0; i < 3; ++i) z.row(seps[static_cast<std::size_t>(i)]) = req.separators.row(i);
  res.latent = std::move(z);
  return res;
}

}  // namespace ragg
