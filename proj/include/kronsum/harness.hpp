#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kronsum/cov_est.hpp"
#include "kronsum/crb.hpp"
#include "kronsum/predictor.hpp"
#include "kronsum/sampling.hpp"

namespace kronsum {

enum class EstimatorKind { scm, scm_ridge, kron_ls, kron_dl, zeroth_order };

struct EstimatorSpec {
  EstimatorKind kind = EstimatorKind::scm;
  double lambda = 0.0;  // scm_ridge default 0.1, kron_dl default 0
  Index rank = 1;
  bool use_correlation = true;

  std::string label() const;
};

// "scm", "kron_ls", ... or {"name": ..., "rank": r, "lambda": l, "use_correlation": b}.
EstimatorSpec parse_estimator(const nlohmann::json& j);

struct Truth {
  Mat sigma;
  Vec mean;
  StDims dims;
  std::optional<CrbInput> kron;  // set when the truth is a single Kronecker product
};

// kinds: matrix {"matrix" | "path"}, kronecker {"temporal", "spatial"},
// synthetic (seeded generator), series {"path", "p", "q", ...}.
Truth resolve_truth(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

enum class ExperimentMode { prediction, rank, partial, series };
enum class TrainingMode { iid, sliding_window };

struct ExperimentConfig {
  ExperimentMode mode = ExperimentMode::prediction;
  std::optional<Truth> truth;
  StDims dims;
  std::vector<EstimatorSpec> estimators;
  PredictionTask task;
  std::vector<Index> n_grid;
  Index trials = 100;
  Index eval_samples = 100;
  std::uint64_t seed = 0;
  bool psd_fix = true;
  TrainingMode training = TrainingMode::iid;
  double jitter = 1e-10;
  std::vector<Index> r_list;  // rank mode
  double dl_lambda = 0.0;     // rank mode kron_dl load
  bool crb_overlay = false;
  // series mode
  std::optional<FrameSeries> series;
  Index ahead = 0;
  Index eval_frames = 100;

  void validate() const;
};

ExperimentConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

struct CurvePoint {
  Index n = 0;
  double mean_rmse = 0.0;
  double std_error = 0.0;
  double failure_rate = 0.0;
};

struct Curve {
  std::string label;
  std::optional<Index> rank;
  std::vector<CurvePoint> points;

  const CurvePoint& at(Index n) const;
};

struct ExperimentResult {
  std::vector<Curve> curves;
  std::optional<Curve> omniscient;
  std::vector<Curve> crb_curves;
  std::uint64_t seed = 0;
  Index trials = 0;

  const Curve& curve(const std::string& label) const;
};

ExperimentResult run_prediction_sweep(const ExperimentConfig& config, int workers = 1);
ExperimentResult run_rank_sweep(const ExperimentConfig& config, const std::vector<Index>& r_list,
                                int workers = 1);
ExperimentResult run_partial_sweep(const ExperimentConfig& config, int workers = 1);
ExperimentResult series_pipeline(const FrameSeries& series, const ExperimentConfig& config,
                                 int workers = 1);
// Dispatches on config.mode.
ExperimentResult run_experiment(const ExperimentConfig& config, int workers = 1);

// Stationary series whose every p-frame window is ~N(mean, sigma) when sigma
// is block Toeplitz; each new frame is drawn conditionally on the previous p-1.
FrameSeries simulate_series(const Mat& sigma, const Vec& mean, const StDims& dims, Index length,
                            Rng& rng);

nlohmann::json result_to_json(const ExperimentResult& result);
std::string curve_to_csv(const Curve& curve);
// Filesystem-safe name, e.g. "kron_dl_r2".
std::string curve_file_stem(const Curve& curve);

}  // namespace kronsum
