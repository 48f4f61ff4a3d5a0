#include "kronsum/predictor.hpp"

#include <algorithm>
#include <set>
#include <string>

#include "kronsum/errors.hpp"

namespace kronsum {

void PredictionTask::validate() const {
  if (x_idx.empty() || y_idx.empty())
    throw ArgumentError("prediction task needs non-empty x and y index sets");
  const Index d = dims.dim();
  std::set<Index> seen;
  for (Index i : x_idx) {
    if (i < 0 || i >= d) throw ArgumentError("x index " + std::to_string(i) + " out of range");
    if (!seen.insert(i).second) throw ArgumentError("duplicate x index " + std::to_string(i));
  }
  std::set<Index> ys;
  for (Index i : y_idx) {
    if (i < 0 || i >= d) throw ArgumentError("y index " + std::to_string(i) + " out of range");
    if (seen.count(i)) throw ArgumentError("index " + std::to_string(i) + " is in both x and y");
    if (!ys.insert(i).second) throw ArgumentError("duplicate y index " + std::to_string(i));
  }
}

PredictionTask build_task_forward(const StDims& dims, Index ahead, Index history) {
  if (history < 1 || ahead < 1 || history + ahead != dims.p)
    throw ArgumentError("build_task_forward: need history >= 1, ahead >= 1 and history + ahead = p (" +
                        std::to_string(history) + " + " + std::to_string(ahead) +
                        " vs p=" + std::to_string(dims.p) + ")");
  PredictionTask task;
  task.dims = dims;
  for (Index v = 0; v < history * dims.q; ++v) task.x_idx.push_back(v);
  for (Index k = 0; k < dims.q; ++k) task.y_idx.push_back(dims.index(dims.p - 1, k));
  return task;
}

PredictionTask build_task_partial(const StDims& dims, const std::vector<Index>& group1, Index t1,
                                  Index t2, std::optional<Index> target_frame) {
  if (group1.empty()) throw ArgumentError("build_task_partial: group1 is empty");
  if (t1 == t2) throw ArgumentError("build_task_partial: lags t1 and t2 must differ");
  if (t1 < 0 || t1 > dims.p || t2 < 0 || t2 > dims.p)
    throw ArgumentError("build_task_partial: lags must lie in [0, p]");
  std::vector<bool> in_group1(static_cast<size_t>(dims.q), false);
  for (Index k : group1) {
    if (k < 0 || k >= dims.q)
      throw ArgumentError("build_task_partial: feature " + std::to_string(k) + " out of range");
    in_group1[static_cast<size_t>(k)] = true;
  }
  const Index target = target_frame.value_or(dims.p - 1);
  if (target < 0 || target >= dims.p)
    throw ArgumentError("build_task_partial: target frame out of range");

  PredictionTask task;
  task.dims = dims;
  std::vector<bool> observed(static_cast<size_t>(dims.dim()), false);
  for (Index f = 0; f < dims.p; ++f)
    for (Index k = 0; k < dims.q; ++k) {
      const Index lag = in_group1[static_cast<size_t>(k)] ? t1 : t2;
      if (f < dims.p - lag) observed[static_cast<size_t>(dims.index(f, k))] = true;
    }
  for (Index v = 0; v < dims.dim(); ++v)
    if (observed[static_cast<size_t>(v)]) task.x_idx.push_back(v);
  for (Index k = 0; k < dims.q; ++k) {
    const Index v = dims.index(target, k);
    if (in_group1[static_cast<size_t>(k)] && !observed[static_cast<size_t>(v)]) task.y_idx.push_back(v);
  }
  if (task.x_idx.empty()) throw ArgumentError("build_task_partial: no observed variables");
  if (task.y_idx.empty()) throw ArgumentError("build_task_partial: no target variables left");
  return task;
}

LinearPredictor fit_predictor(const Mat& sigma, const Vec& mu, const PredictionTask& task,
                              double jitter) {
  task.validate();
  const Index d = task.dims.dim();
  if (sigma.rows() != d || sigma.cols() != d)
    throw ShapeError("fit_predictor: covariance is " + std::to_string(sigma.rows()) + "x" +
                     std::to_string(sigma.cols()) + ", task expects " + std::to_string(d));
  if (mu.size() != d)
    throw ShapeError("fit_predictor: mean length " + std::to_string(mu.size()) + " != " +
                     std::to_string(d));
  if (!sigma.allFinite() || !mu.allFinite()) throw DataError("fit_predictor: non-finite input");
  if (jitter < 0.0) throw ArgumentError("fit_predictor: jitter must be >= 0");

  Mat sx = sigma(task.x_idx, task.x_idx);
  sx = (sx + sx.transpose()) / 2.0;
  sx.diagonal().array() += jitter * sx.trace() / static_cast<double>(sx.rows());
  const Mat sxy = sigma(task.x_idx, task.y_idx);
  const Mat sy = sigma(task.y_idx, task.y_idx);

  Eigen::LLT<Mat> llt(sx);
  if (llt.info() != Eigen::Success)
    throw ConditioningError("fit_predictor: Sigma_x is not positive definite",
                            Eigen::SelfAdjointEigenSolver<Mat>(sx, Eigen::EigenvaluesOnly)
                                .eigenvalues()
                                .minCoeff());

  LinearPredictor pred;
  pred.x_idx = task.x_idx;
  pred.y_idx = task.y_idx;
  pred.coeffs = llt.solve(sxy).transpose();
  if (!pred.coeffs.allFinite())
    throw ConditioningError("fit_predictor: non-finite coefficients", 0.0);
  pred.mu_x = mu(task.x_idx);
  pred.mu_y = mu(task.y_idx);
  const Mat cond = sy - pred.coeffs * sxy;
  pred.cond_cov = (cond + cond.transpose()) / 2.0;
  return pred;
}

Vec predict(const LinearPredictor& pred, const Vec& x) {
  if (x.size() != pred.mu_x.size())
    throw ShapeError("predict: x has length " + std::to_string(x.size()) + ", expected " +
                     std::to_string(pred.mu_x.size()));
  return pred.coeffs * (x - pred.mu_x) + pred.mu_y;
}

Mat predict_rows(const LinearPredictor& pred, const Mat& x_rows) {
  if (x_rows.cols() != pred.mu_x.size())
    throw ShapeError("predict_rows: x has " + std::to_string(x_rows.cols()) + " columns, expected " +
                     std::to_string(pred.mu_x.size()));
  Mat centered = x_rows.rowwise() - pred.mu_x.transpose();
  Mat out = centered * pred.coeffs.transpose();
  out.rowwise() += pred.mu_y.transpose();
  return out;
}

Vec zeroth_order_forecast(const FrameSeries& series, Index ahead, Index t) {
  if (ahead < 1) throw ArgumentError("zeroth-order predictor: ahead must be >= 1");
  if (t - ahead - 1 < 0 || t - ahead >= series.length())
    throw DataError("zeroth-order predictor: history for frame " + std::to_string(t) +
                    " is not available");
  const Vec base = series.frames.row(t - ahead).transpose();
  const Vec prev = series.frames.row(t - ahead - 1).transpose();
  return base + static_cast<double>(ahead) * (base - prev);
}

FrameSeries zeroth_order_residuals(const FrameSeries& series, Index ahead) {
  if (ahead < 1) throw ArgumentError("zeroth_order_residuals: ahead must be >= 1");
  if (series.length() < ahead + 2)
    throw DataError("zeroth_order_residuals: series of " + std::to_string(series.length()) +
                    " frames is shorter than K + 2 = " + std::to_string(ahead + 2));
  FrameSeries out;
  out.frame_rate = series.frame_rate;
  const Index n = series.length() - ahead - 1;
  out.frames.resize(n, series.width());
  for (Index i = 0; i < n; ++i) {
    const Index t = i + ahead + 1;
    out.frames.row(i) = series.frames.row(t) - zeroth_order_forecast(series, ahead, t).transpose();
  }
  return out;
}

Vec reconstruct_from_residual(const FrameSeries& series, Index ahead, const Vec& predicted_residual,
                              Index t) {
  if (predicted_residual.size() != series.width())
    throw ShapeError("reconstruct_from_residual: residual length " +
                     std::to_string(predicted_residual.size()) + " != " +
                     std::to_string(series.width()));
  return zeroth_order_forecast(series, ahead, t) + predicted_residual;
}

}  // namespace kronsum
