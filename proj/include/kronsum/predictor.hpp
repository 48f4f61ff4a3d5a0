#pragma once

#include <optional>
#include <vector>

#include "kronsum/cov_est.hpp"
#include "kronsum/dims.hpp"

namespace kronsum {

// Observed (x) and target (y) variable indices, 0-based, disjoint.
struct PredictionTask {
  std::vector<Index> x_idx;
  std::vector<Index> y_idx;
  StDims dims;

  void validate() const;
};

// x = frames [0, history), y = all features of the last frame.
PredictionTask build_task_forward(const StDims& dims, Index ahead, Index history);

// Two-group partial observation. Features in `group1` are observed on frames
// [0, p - t1) and the remaining features on frames [0, p - t2); the target is
// group1 at `target_frame` (default: last frame) minus anything observed.
// A lag of 0 means the group is observed through the last frame.
PredictionTask build_task_partial(const StDims& dims, const std::vector<Index>& group1, Index t1,
                                  Index t2, std::optional<Index> target_frame = std::nullopt);

struct LinearPredictor {
  Mat coeffs;  // |y| x |x|
  Vec mu_x;
  Vec mu_y;
  Mat cond_cov;  // Cov[y | x]
  std::vector<Index> x_idx;
  std::vector<Index> y_idx;
};

// Conditional-mean predictor A = Sigma_yx Sigma_x^{-1} from a Cholesky
// factorization of Sigma_x + jitter * tr(Sigma_x) / |x| * I.
LinearPredictor fit_predictor(const Mat& sigma, const Vec& mu, const PredictionTask& task,
                              double jitter = 1e-10);

Vec predict(const LinearPredictor& pred, const Vec& x);
// One observation per row.
Mat predict_rows(const LinearPredictor& pred, const Mat& x_rows);

// f_{t-K} + K (f_{t-K} - f_{t-K-1}), for frame t (0-based, t >= K + 1).
Vec zeroth_order_forecast(const FrameSeries& series, Index ahead, Index t);

// r_t = f_t - zeroth_order_forecast(t) for t = K+1 .. L-1; K+1 frames shorter.
FrameSeries zeroth_order_residuals(const FrameSeries& series, Index ahead);

Vec reconstruct_from_residual(const FrameSeries& series, Index ahead, const Vec& predicted_residual,
                              Index t);

}  // namespace kronsum
