#include "ragg/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "ragg/error.hpp"

namespace ragg {

namespace {

using Mat = Eigen::MatrixXd;

Mat covariance(const RowMatrix& x, const Eigen::RowVectorXd& mean) {
  const Mat c = x.rowwise() - mean;
  return (c.transpose() * c) / static_cast<double>(x.rows() - 1);
}

}  // namespace

double fid(const RowMatrix& a, const RowMatrix& b) {
  if (a.rows() < 2 || b.rows() < 2) fail("fid needs at least 2 samples per set");
  require(a.cols() == b.cols(), "fid: feature dimensions differ");
  const Eigen::Index d = a.cols();
  const Eigen::RowVectorXd ma = a.colwise().mean();
  const Eigen::RowVectorXd mb = b.colwise().mean();
  const Mat eye = Mat::Identity(d, d) * 1e-6;
  const Mat sa = covariance(a, ma) + eye;
  const Mat sb = covariance(b, mb) + eye;
  Eigen::SelfAdjointEigenSolver<Mat> ea(sa);
  const Mat root_a = ea.eigenvectors() * ea.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                     ea.eigenvectors().transpose();
  Mat inner = root_a * sb * root_a;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> ei(inner, Eigen::EigenvaluesOnly);
  const double tr_sqrt = ei.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double v = (ma - mb).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
  return std::max(v, 0.0);
}

std::vector<double> motion_beats(const RowMatrix& positions, double fps) {
  require(fps > 0.0, "motion_beats: fps must be > 0");
  require(positions.cols() % 3 == 0, "motion_beats: positions must be N x 3J");
  const Eigen::Index n = positions.rows();
  std::vector<double> out;
  if (n < 3) return out;
  const Eigen::Index j = positions.cols() / 3;
  Eigen::VectorXd speed(n - 1);
  for (Eigen::Index f = 0; f + 1 < n; ++f) {
    double s = 0.0;
    for (Eigen::Index k = 0; k < j; ++k) s += (positions.row(f + 1).segment(3 * k, 3) - positions.row(f).segment(3 * k, 3)).norm();
    speed(f) = s / static_cast<double>(j) * fps;
  }
  const double thr = speed.mean();
  for (Eigen::Index f = 1; f + 1 < speed.size(); ++f) {
    if (speed(f) < speed(f - 1) && speed(f) <= speed(f + 1) && speed(f) < thr) {
      out.push_back(static_cast<double>(f) / fps);
    }
  }
  return out;
}

std::vector<double> audio_beats(const Eigen::VectorXd& onset, double fps) {
  require(fps > 0.0, "audio_beats: fps must be > 0");
  std::vector<double> out;
  if (onset.size() < 3) return out;
  const double thr = onset.mean();
  for (Eigen::Index f = 1; f + 1 < onset.size(); ++f) {
    if (onset(f) > onset(f - 1) && onset(f) >= onset(f + 1) && onset(f) > thr) out.push_back(static_cast<double>(f) / fps);
  }
  return out;
}

double beat_align(const std::vector<double>& motion, const std::vector<double>& audio, double sigma) {
  if (motion.empty() || audio.empty()) fail("no beats detected");
  require(sigma > 0.0, "beat_align: sigma must be > 0");
  double total = 0.0;
  for (double m : motion) {
    double best = std::numeric_limits<double>::infinity();
    for (double a : audio) best = std::min(best, std::abs(m - a));
    total += std::exp(-best * best / (2.0 * sigma * sigma));
  }
  return total / static_cast<double>(motion.size());
}

double l1_div(const RowMatrix& positions) {
  require(positions.rows() >= 1, "l1_div: empty sequence");
  // Mean taken relative to the first frame so a static sequence gives exactly 0.
  const RowMatrix centered = positions.rowwise() - positions.row(0);
  const Eigen::RowVectorXd mean = centered.colwise().mean();
  return (centered.rowwise() - mean).cwiseAbs().rowwise().sum().mean();
}

double diversity(const std::vector<RowMatrix>& sequences) {
  if (sequences.size() < 2) fail("diversity needs at least 2 sequences");
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    for (std::size_t k = i + 1; k < sequences.size(); ++k) {
      require(sequences[i].rows() == sequences[k].rows() && sequences[i].cols() == sequences[k].cols(),
              "diversity: sequences differ in shape");
      total += (sequences[i] - sequences[k]).norm();
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

double multimodality(const std::vector<std::vector<RowMatrix>>& samples_per_input) {
  require(!samples_per_input.empty(), "multimodality: no inputs");
  double total = 0.0;
  for (const auto& s : samples_per_input) {
    if (s.size() < 2) fail("multimodality needs at least 2 samples per input");
    total += diversity(s);
  }
  return total / static_cast<double>(samples_per_input.size());
}

double window_mpjpe(const GestureSequence& gen, const GestureSequence& ref, const FrameWindow& gen_window,
                    const FrameWindow& ref_window, const BodyLayout& layout) {
  if (gen_window.empty() || ref_window.empty()) fail("window_mpjpe: empty window");
  require(gen_window.length() == ref_window.length(), "window_mpjpe: windows differ in length");
  require(gen_window.valid_for(gen.frames()) && ref_window.valid_for(ref.frames()),
          "window_mpjpe: window outside the sequence");
  const RowMatrix pg = forward_kinematics(gen, layout);
  const RowMatrix pr = forward_kinematics(ref, layout);
  const auto joints = upper_hand_joint_indices(layout);
  double total = 0.0;
  for (int f = 0; f < gen_window.length(); ++f) {
    for (int j : joints) {
      total += (pg.row(gen_window.start + f).segment(3 * j, 3) - pr.row(ref_window.start + f).segment(3 * j, 3)).norm();
    }
  }
  return 1000.0 * total / static_cast<double>(gen_window.length() * static_cast<int>(joints.size()));
}

void MetricReport::validate() const {
  for (const auto& v : {fid, beat_align, l1_div, diversity, multimodality, window_mpjpe_mm}) {
    if (v) require(std::isfinite(*v) && *v >= 0.0, "metric report: values must be finite and >= 0");
  }
}

Json MetricReport::to_json() const {
  Json j;
  auto put = [&](const char* k, const std::optional<double>& v) { j[k] = v ? Json(*v) : Json(nullptr); };
  put("fid", fid);
  put("beat_align", beat_align);
  put("l1_div", l1_div);
  put("diversity", diversity);
  put("multimodality", multimodality);
  put("window_mpjpe_mm", window_mpjpe_mm);
  j["sequences"] = sequences;
  j["windows"] = windows;
  return j;
}

}  // namespace ragg
