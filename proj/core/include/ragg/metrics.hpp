#pragma once

// Evaluation metrics over generated motion.

#include <optional>
#include <vector>

#include "ragg/motion.hpp"

namespace ragg {

// Frechet distance between Gaussian fits of two feature sets (rows are
// samples). Covariances are regularized by 1e-6 I.
double fid(const RowMatrix& a, const RowMatrix& b);

// Times (seconds) of local minima of mean joint speed that fall below the
// clip's mean speed. `positions` is N x 3J.
std::vector<double> motion_beats(const RowMatrix& positions, double fps);
// Times (seconds) of local maxima of the onset envelope above its mean.
std::vector<double> audio_beats(const Eigen::VectorXd& onset, double fps);

// Mean over motion beats of exp(-d^2 / (2 sigma^2)), d the distance to the
// nearest audio beat.
double beat_align(const std::vector<double>& motion, const std::vector<double>& audio, double sigma = 0.1);

// Mean over frames of the L1 distance to the temporal mean pose.
double l1_div(const RowMatrix& positions);

// Mean pairwise Euclidean distance of flattened sequences.
double diversity(const std::vector<RowMatrix>& sequences);
// Mean over inputs of the diversity among that input's samples.
double multimodality(const std::vector<std::vector<RowMatrix>>& samples_per_input);

// Mean Euclidean joint error over upper-body and hand joints in the window,
// in millimeters. The two windows must have equal length.
double window_mpjpe(const GestureSequence& gen, const GestureSequence& ref, const FrameWindow& gen_window,
                    const FrameWindow& ref_window, const BodyLayout& layout);
inline double window_mpjpe(const GestureSequence& gen, const GestureSequence& ref, const FrameWindow& window,
                           const BodyLayout& layout) {
  return window_mpjpe(gen, ref, window, window, layout);
}

struct MetricReport {
  std::optional<double> fid;
  std::optional<double> beat_align;
  std::optional<double> l1_div;
  std::optional<double> diversity;
  std::optional<double> multimodality;
  std::optional<double> window_mpjpe_mm;
  std::size_t sequences = 0;
  std::size_t windows = 0;

  void validate() const;
  Json to_json() const;
};

}  // namespace ragg
