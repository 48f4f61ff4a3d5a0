#include "kronsum/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <set>
#include <thread>

#include "kronsum/errors.hpp"
#include "kronsum/io.hpp"
#include "kronsum/sampling.hpp"

namespace kronsum {

using nlohmann::json;

namespace {

constexpr double kDefaultRidge = 0.1;

CrbInput make_crb_input(const Mat& t, const Mat& s) {
  CrbInput in;
  in.temporal = t;
  in.spatial = s;
  return in;
}

template <class Fn>
void parallel_for(Index count, int workers, Fn&& fn) {
  const Index w = std::clamp<Index>(workers, 1, std::max<Index>(count, 1));
  if (w == 1) {
    for (Index i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<Index> next{0};
  std::vector<std::exception_ptr> errors(static_cast<size_t>(w));
  std::vector<std::thread> pool;
  for (Index k = 0; k < w; ++k) {
    pool.emplace_back([&, k] {
      try {
        for (Index i = next++; i < count; i = next++) fn(i);
      } catch (...) {
        errors[static_cast<size_t>(k)] = std::current_exception();
        next = count;
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

Mat rows_at(const Mat& samples, const std::vector<Index>& idx) { return samples(Eigen::all, idx); }

// Mean over rows of ||y - yhat||^2 / |y|.
double mean_sq_error(const Mat& y, const Mat& yhat) {
  return (y - yhat).rowwise().squaredNorm().mean() / static_cast<double>(y.cols());
}

Mat estimate_sigma(const EstimatorSpec& spec, const SampleCovariance& sc, bool psd_fix) {
  switch (spec.kind) {
    case EstimatorKind::scm:
      return sc.matrix;
    case EstimatorKind::scm_ridge:
      return regularized_scm(sc, spec.lambda);
    case EstimatorKind::kron_ls: {
      const Mat m = estimate_kron_ls(sc, spec.rank).assemble();
      return psd_fix ? psd_project(m) : m;
    }
    case EstimatorKind::kron_dl: {
      DlOptions opts;
      opts.use_correlation = spec.use_correlation;
      opts.extra_diag = spec.lambda;
      const Mat m = estimate_kron_dl(sc, spec.rank, opts).assemble();
      return psd_fix ? psd_project(m) : m;
    }
    case EstimatorKind::zeroth_order:
      break;
  }
  throw ArgumentError("estimate_sigma: zeroth_order has no covariance");
}

// Squared-error score of one estimator on the evaluation rows; nullopt on failure.
std::optional<double> score(const EstimatorSpec& spec, const SampleCovariance& sc, const PredictionTask& task,
                            const Mat& x_eval, const Mat& y_eval, bool psd_fix, double jitter) {
  if (spec.kind == EstimatorKind::zeroth_order) return mean_sq_error(y_eval, Mat::Zero(y_eval.rows(), y_eval.cols()));
  try {
    const Mat sigma = estimate_sigma(spec, sc, psd_fix);
    const LinearPredictor pred = fit_predictor(sigma, sc.mean, task, jitter);
    const double mse = mean_sq_error(y_eval, predict_rows(pred, x_eval));
    if (!std::isfinite(mse)) return std::nullopt;
    return mse;
  } catch (const Error&) {
    return std::nullopt;
  }
}

CurvePoint aggregate(Index n, const std::vector<double>& values, Index failures) {
  CurvePoint pt;
  pt.n = n;
  const double count = static_cast<double>(values.size());
  for (double v : values) pt.mean_rmse += v;
  pt.mean_rmse /= count;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - pt.mean_rmse) * (v - pt.mean_rmse);
    pt.std_error = std::sqrt(ss / (count - 1.0) / count);
  }
  pt.failure_rate = static_cast<double>(failures) / count;
  return pt;
}

Mat ar1_matrix(Index p, double rho) {
  Mat t(p, p);
  for (Index i = 0; i < p; ++i)
    for (Index j = 0; j < p; ++j) t(i, j) = std::pow(rho, static_cast<double>(std::abs(i - j)));
  return t;
}

// Random orthogonal eigenbasis with eigenvalues log-spaced over [1/cond, 1], trace q.
Mat conditioned_spd(Index q, double cond, Rng& rng) {
  const Mat g = standard_normal(q, q, rng);
  Eigen::HouseholderQR<Mat> qr(g);
  const Mat basis = qr.householderQ();
  Vec ev(q);
  for (Index i = 0; i < q; ++i)
    ev(i) = q == 1 ? 1.0 : std::pow(cond, -static_cast<double>(i) / static_cast<double>(q - 1));
  ev *= static_cast<double>(q) / ev.sum();
  Mat s = basis * ev.asDiagonal() * basis.transpose();
  return (s + s.transpose()) / 2.0;
}

StDims dims_from(const json& j) {
  if (j.contains("dims")) return io::dims_from_json(j.at("dims"));
  return StDims(j.at("p").get<Index>(), j.at("q").get<Index>());
}

std::filesystem::path resolve_path(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

Truth synthetic_truth(const json& j) {
  const StDims dims = dims_from(j);
  Rng rng(j.value("seed", std::uint64_t{0}));
  const Index d = dims.dim();
  Mat kron = Mat::Zero(d, d);
  std::vector<KronFactorPair<double>> pairs;
  const json factors = j.value("factors", json::array({json::object()}));
  if (!factors.is_array() || factors.empty()) throw ArgumentError("synthetic truth needs at least one factor");
  for (const auto& f : factors) {
    const double rho = f.value("temporal_ar", 0.9);
    const double cond = f.value("spatial_condition", 10.0);
    const double weight = f.value("weight", 1.0);
    if (std::abs(rho) >= 1.0) throw ArgumentError("temporal_ar must lie in (-1, 1)");
    if (cond < 1.0) throw ArgumentError("spatial_condition must be >= 1");
    if (weight <= 0.0) throw ArgumentError("factor weight must be positive");
    KronFactorPair<double> pair{weight * ar1_matrix(dims.p, rho), conditioned_spd(dims.q, cond, rng)};
    kron += kroneckerProduct(pair.temporal, pair.spatial).eval();
    pairs.push_back(std::move(pair));
  }
  Mat sigma = kron;
  const double frac = j.value("non_kron_fraction", 0.0);
  if (frac < 0.0) throw ArgumentError("non_kron_fraction must be >= 0");
  if (frac > 0.0) {
    const Mat h = standard_normal(d, d, rng);
    const Mat e = h * h.transpose();
    sigma += (frac * kron.norm() / e.norm()) * e;
  }
  bool noisy = false;
  if (j.contains("diag_noise")) {
    const auto range = j.at("diag_noise").get<std::vector<double>>();
    if (range.size() != 2 || range[0] < 0.0 || range[1] < range[0])
      throw ArgumentError("diag_noise must be [lo, hi] with 0 <= lo <= hi");
    std::uniform_real_distribution<double> unif(range[0], range[1]);
    Vec u(dims.q);
    for (Index k = 0; k < dims.q; ++k) u(k) = unif(rng);
    sigma += replicated_diag_load(u, dims.p).asDiagonal();
    noisy = true;
  }
  Truth truth{(sigma + sigma.transpose()) / 2.0, Vec::Zero(d), dims, std::nullopt};
  if (pairs.size() == 1 && frac == 0.0 && !noisy) truth.kron = make_crb_input(pairs[0].temporal, pairs[0].spatial);
  return truth;
}

FrameSeries load_series(const json& j, const std::filesystem::path& base_dir) {
  io::SeriesCsvOptions opts;
  const std::string delim = j.value("delimiter", std::string(","));
  if (delim.size() != 1) throw ArgumentError("delimiter must be a single character");
  opts.delimiter = delim[0];
  opts.stride = j.value("stride", Index{1});
  return io::load_frame_series(resolve_path(base_dir, j.at("path").get<std::string>()), opts);
}

EstimatorKind kind_from_name(const std::string& name) {
  if (name == "scm") return EstimatorKind::scm;
  if (name == "scm_ridge") return EstimatorKind::scm_ridge;
  if (name == "kron_ls") return EstimatorKind::kron_ls;
  if (name == "kron_dl") return EstimatorKind::kron_dl;
  if (name == "zeroth_order") return EstimatorKind::zeroth_order;
  throw ArgumentError("unknown estimator '" + name +
                      "'; valid options: scm, scm_ridge, kron_ls, kron_dl, zeroth_order");
}

// Per-trial squared errors, laid out [n index][estimator].
struct TrialRecord {
  std::vector<double> mse;
  std::vector<char> failed;
  double omniscient = 0.0;
  double zeroth = 0.0;
};

ExperimentResult run_sweep(const ExperimentConfig& config, const std::vector<EstimatorSpec>& estimators,
                           const std::vector<std::optional<Index>>& ranks, bool psd_fix, int workers) {
  config.validate();
  if (!config.truth) throw ArgumentError("Monte Carlo sweeps need a truth covariance");
  const Truth& truth = *config.truth;
  const PredictionTask& task = config.task;
  const Mat factor = gaussian_factor(truth.sigma);
  const LinearPredictor oracle = fit_predictor(truth.sigma, truth.mean, task, config.jitter);
  const Index n_max = config.n_grid.back();
  const Index n_grid = static_cast<Index>(config.n_grid.size());
  const Index n_est = static_cast<Index>(estimators.size());

  std::vector<TrialRecord> records(static_cast<size_t>(config.trials));
  parallel_for(config.trials, workers, [&](Index t) {
    Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(t)));
    const Mat eval = gaussian_sample(factor, truth.mean, config.eval_samples, rng);
    const Mat x_eval = rows_at(eval, task.x_idx);
    const Mat y_eval = rows_at(eval, task.y_idx);
    Mat train;
    if (config.training == TrainingMode::iid) {
      train = gaussian_sample(factor, truth.mean, n_max, rng);
    } else {
      const FrameSeries s = simulate_series(truth.sigma, truth.mean, truth.dims, n_max + truth.dims.p - 1, rng);
      train = sliding_window_samples(s, truth.dims);
    }
    TrialRecord& rec = records[static_cast<size_t>(t)];
    rec.zeroth = mean_sq_error(y_eval, Mat::Zero(y_eval.rows(), y_eval.cols()));
    rec.omniscient = mean_sq_error(y_eval, predict_rows(oracle, x_eval));
    rec.mse.assign(static_cast<size_t>(n_grid * n_est), 0.0);
    rec.failed.assign(static_cast<size_t>(n_grid * n_est), 0);
    for (Index g = 0; g < n_grid; ++g) {
      const SampleCovariance sc = sample_covariance(train.topRows(config.n_grid[static_cast<size_t>(g)]), truth.dims);
      for (Index e = 0; e < n_est; ++e) {
        const auto mse = score(estimators[static_cast<size_t>(e)], sc, task, x_eval, y_eval, psd_fix, config.jitter);
        const size_t slot = static_cast<size_t>(g * n_est + e);
        rec.mse[slot] = mse.value_or(rec.zeroth);
        rec.failed[slot] = !mse.has_value();
      }
    }
  });

  ExperimentResult result;
  result.seed = config.seed;
  result.trials = config.trials;
  for (Index e = 0; e < n_est; ++e) {
    Curve curve{estimators[static_cast<size_t>(e)].label(), ranks[static_cast<size_t>(e)], {}};
    for (Index g = 0; g < n_grid; ++g) {
      std::vector<double> rmse;
      Index failures = 0;
      for (const auto& rec : records) {
        const size_t slot = static_cast<size_t>(g * n_est + e);
        rmse.push_back(std::sqrt(rec.mse[slot]));
        failures += rec.failed[slot];
      }
      curve.points.push_back(aggregate(config.n_grid[static_cast<size_t>(g)], rmse, failures));
    }
    result.curves.push_back(std::move(curve));
  }
  Curve omni{"omniscient", std::nullopt, {}};
  std::vector<double> omni_rmse;
  for (const auto& rec : records) omni_rmse.push_back(std::sqrt(rec.omniscient));
  for (Index n : config.n_grid) omni.points.push_back(aggregate(n, omni_rmse, 0));
  result.omniscient = std::move(omni);

  if (config.crb_overlay) {
    std::vector<double> grid(config.n_grid.begin(), config.n_grid.end());
    auto overlay = [&](const std::string& label, const std::optional<CrbInput>& kron) {
      const CrbReport rep = crb_report(truth.sigma, kron, task, grid, CrbConvention::real_gaussian,
                                       RmseNormalization::per_variable);
      Curve c{label, std::nullopt, {}};
      for (const auto& pt : rep.rmse_curve)
        c.points.push_back({static_cast<Index>(std::llround(pt.n)), pt.rmse, 0.0, 0.0});
      result.crb_curves.push_back(std::move(c));
    };
    if (truth.kron) overlay("crb_kron", truth.kron);
    overlay("crb_unstructured", std::nullopt);
  }
  return result;
}

}  // namespace

std::string EstimatorSpec::label() const {
  switch (kind) {
    case EstimatorKind::scm:
      return "scm";
    case EstimatorKind::scm_ridge:
      return lambda == kDefaultRidge ? "scm_ridge" : "scm_ridge_lambda" + io::format_double(lambda);
    case EstimatorKind::kron_ls:
      return "kron_ls_r" + std::to_string(rank);
    case EstimatorKind::kron_dl: {
      std::string s = "kron_dl_r" + std::to_string(rank);
      if (!use_correlation) s += "_cov";
      if (lambda != 0.0) s += "_lambda" + io::format_double(lambda);
      return s;
    }
    case EstimatorKind::zeroth_order:
      return "zeroth_order";
  }
  return "unknown";
}

EstimatorSpec parse_estimator(const json& j) {
  EstimatorSpec spec;
  if (j.is_string()) {
    spec.kind = kind_from_name(j.get<std::string>());
  } else if (j.is_object()) {
    spec.kind = kind_from_name(j.at("name").get<std::string>());
    for (const auto& [key, value] : j.items())
      if (key != "name" && key != "rank" && key != "lambda" && key != "use_correlation")
        throw ArgumentError("unknown estimator option '" + key + "'");
    spec.rank = j.value("rank", Index{1});
    spec.use_correlation = j.value("use_correlation", true);
  } else {
    throw ArgumentError("estimator must be a name or an object with \"name\"");
  }
  spec.lambda = spec.kind == EstimatorKind::scm_ridge ? kDefaultRidge : 0.0;
  if (j.is_object() && j.contains("lambda")) spec.lambda = j.at("lambda").get<double>();
  if (spec.rank < 1) throw ArgumentError("estimator rank must be >= 1");
  if (spec.lambda < 0.0) throw ArgumentError("estimator lambda must be >= 0");
  return spec;
}

Truth resolve_truth(const json& j, const std::filesystem::path& base_dir) {
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "synthetic") return synthetic_truth(j);
    if (kind == "kronecker") {
      const Mat t = io::matrix_from_json(j.at("temporal"));
      const Mat s = io::matrix_from_json(j.at("spatial"));
      if (t.rows() != t.cols() || s.rows() != s.cols()) throw ShapeError("Kronecker factors must be square");
      const StDims dims(t.rows(), s.rows());
      const Mat sigma = kroneckerProduct(t, s).eval();
      return Truth{sigma, Vec::Zero(dims.dim()), dims, make_crb_input(t, s)};
    }
    if (kind == "matrix") {
      io::CovarianceFile cov;
      if (j.contains("path"))
        cov = io::covariance_from_json(io::read_json_file(resolve_path(base_dir, j.at("path").get<std::string>())));
      else
        cov = io::covariance_from_json(j.at("matrix"));
      std::optional<StDims> dims = cov.dims;
      if (j.contains("dims") || j.contains("p")) dims = dims_from(j);
      if (!dims) throw ArgumentError("matrix truth needs dims (p, q)");
      if (dims->dim() != cov.matrix.rows())
        throw ShapeError("truth dims give pq = " + std::to_string(dims->dim()) + " but the matrix is " +
                         std::to_string(cov.matrix.rows()) + "x" + std::to_string(cov.matrix.cols()));
      Vec mean = j.contains("mean") ? io::vector_from_json(j.at("mean")) : cov.mean.value_or(Vec::Zero(dims->dim()));
      if (mean.size() != dims->dim()) throw ShapeError("truth mean has the wrong length");
      return Truth{cov.matrix, mean, *dims, std::nullopt};
    }
    if (kind == "series") {
      const StDims dims = dims_from(j);
      FrameSeries series = load_series(j, base_dir);
      if (j.contains("ahead")) series = zeroth_order_residuals(series, j.at("ahead").get<Index>());
      if (series.width() != dims.q)
        throw ShapeError("series has " + std::to_string(series.width()) + " features, dims expect q = " +
                         std::to_string(dims.q));
      const SampleCovariance sc = sample_covariance(sliding_window_samples(series, dims), dims);
      const double ridge = j.value("ridge", 0.0);
      return Truth{ridge > 0.0 ? regularized_scm(sc, ridge) : sc.matrix, Vec::Zero(dims.dim()), dims, std::nullopt};
    }
    throw ArgumentError("unknown truth kind '" + kind + "' (expected matrix, kronecker, synthetic or series)");
  } catch (const json::exception& e) {
    throw ArgumentError(std::string("truth spec: ") + e.what());
  }
}

void ExperimentConfig::validate() const {
  if (n_grid.empty()) throw ArgumentError("n_grid must not be empty");
  for (size_t i = 0; i < n_grid.size(); ++i) {
    if (n_grid[i] < 1) throw ArgumentError("n_grid entries must be >= 1");
    if (i > 0 && n_grid[i] <= n_grid[i - 1]) throw ArgumentError("n_grid must be strictly increasing");
  }
  if (trials < 1) throw ArgumentError("trials must be >= 1");
  if (eval_samples < 1) throw ArgumentError("eval_samples must be >= 1");
  if (mode != ExperimentMode::rank && estimators.empty()) throw ArgumentError("no estimators configured");
  std::set<std::string> labels;
  for (const auto& e : estimators) {
    if ((e.kind == EstimatorKind::kron_ls || e.kind == EstimatorKind::kron_dl) && e.rank > dims.max_rank())
      throw ArgumentError("estimator rank " + std::to_string(e.rank) + " exceeds min(p^2, q^2) = " +
                          std::to_string(dims.max_rank()));
    if (!labels.insert(e.label()).second) throw ArgumentError("duplicate estimator " + e.label());
  }
  for (Index r : r_list)
    if (r < 1 || r > dims.max_rank())
      throw ArgumentError("r_list entry " + std::to_string(r) + " outside [1, " + std::to_string(dims.max_rank()) + "]");
  if (mode == ExperimentMode::rank && r_list.empty()) throw ArgumentError("rank mode needs r_list");
  if (truth && !(truth->dims == dims)) throw ShapeError("truth dims do not match config dims");
  if (!(task.dims == dims)) throw ShapeError("task dims do not match config dims");
  task.validate();
  if (mode == ExperimentMode::series) {
    if (eval_frames < 1) throw ArgumentError("eval_frames must be >= 1");
  }
}

ExperimentConfig parse_config(const json& j, const std::filesystem::path& base_dir) {
  static const std::set<std::string> known = {
      "mode", "truth", "dims", "estimators", "task", "n_grid", "trials", "eval_samples", "seed", "psd_fix",
      "training", "jitter", "r_list", "dl_lambda", "crb_overlay", "series", "ahead", "eval_frames", "description"};
  if (!j.is_object()) throw ArgumentError("config must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ArgumentError("unknown config key '" + key + "'");
  try {
    ExperimentConfig c;
    const std::string mode = j.value("mode", std::string("prediction"));
    if (mode == "prediction") c.mode = ExperimentMode::prediction;
    else if (mode == "rank") c.mode = ExperimentMode::rank;
    else if (mode == "partial") c.mode = ExperimentMode::partial;
    else if (mode == "series") c.mode = ExperimentMode::series;
    else throw ArgumentError("unknown mode '" + mode + "' (expected prediction, rank, partial or series)");

    if (j.contains("truth")) c.truth = resolve_truth(j.at("truth"), base_dir);
    if (j.contains("dims")) c.dims = io::dims_from_json(j.at("dims"));
    else if (c.truth) c.dims = c.truth->dims;
    else throw ArgumentError("config needs dims or a truth");
    if (j.contains("estimators"))
      for (const auto& e : j.at("estimators")) c.estimators.push_back(parse_estimator(e));
    if (!j.contains("task")) throw ArgumentError("config needs a task");
    c.task = io::task_from_json(j.at("task"), c.dims);
    if (!j.contains("n_grid")) throw ArgumentError("config needs n_grid");
    c.n_grid = j.at("n_grid").get<std::vector<Index>>();
    c.trials = j.value("trials", c.trials);
    c.eval_samples = j.value("eval_samples", c.eval_samples);
    c.seed = j.value("seed", c.seed);
    c.psd_fix = j.value("psd_fix", c.psd_fix);
    const std::string training = j.value("training", std::string("iid"));
    if (training == "iid") c.training = TrainingMode::iid;
    else if (training == "sliding_window") c.training = TrainingMode::sliding_window;
    else throw ArgumentError("training must be iid or sliding_window");
    c.jitter = j.value("jitter", c.jitter);
    if (j.contains("r_list")) c.r_list = j.at("r_list").get<std::vector<Index>>();
    c.dl_lambda = j.value("dl_lambda", c.dl_lambda);
    c.crb_overlay = j.value("crb_overlay", c.crb_overlay);
    if (j.contains("series")) c.series = load_series(j.at("series"), base_dir);
    c.ahead = j.value("ahead", c.ahead);
    c.eval_frames = j.value("eval_frames", c.eval_frames);
    if (c.mode == ExperimentMode::series && !c.series) throw ArgumentError("series mode needs a \"series\" entry");
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ArgumentError(std::string("config: ") + e.what());
  }
}

const CurvePoint& Curve::at(Index n) const {
  for (const auto& pt : points)
    if (pt.n == n) return pt;
  throw ArgumentError("curve " + label + " has no point at n = " + std::to_string(n));
}

const Curve& ExperimentResult::curve(const std::string& label) const {
  for (const auto& c : curves)
    if (c.label == label) return c;
  for (const auto& c : crb_curves)
    if (c.label == label) return c;
  if (omniscient && omniscient->label == label) return *omniscient;
  throw ArgumentError("no curve labelled " + label);
}

ExperimentResult run_prediction_sweep(const ExperimentConfig& config, int workers) {
  return run_sweep(config, config.estimators,
                   std::vector<std::optional<Index>>(config.estimators.size(), std::nullopt), config.psd_fix, workers);
}

ExperimentResult run_partial_sweep(const ExperimentConfig& config, int workers) {
  std::vector<EstimatorSpec> est = config.estimators;
  const bool has_zeroth = std::any_of(est.begin(), est.end(),
                                      [](const auto& e) { return e.kind == EstimatorKind::zeroth_order; });
  if (!has_zeroth) est.push_back(EstimatorSpec{EstimatorKind::zeroth_order});
  return run_sweep(config, est, std::vector<std::optional<Index>>(est.size(), std::nullopt), config.psd_fix,
                   workers);
}

ExperimentResult run_rank_sweep(const ExperimentConfig& config, const std::vector<Index>& r_list, int workers) {
  if (r_list.empty()) throw ArgumentError("r_list must not be empty");
  std::vector<EstimatorSpec> est;
  std::vector<std::optional<Index>> ranks;
  for (Index r : r_list) {
    if (r < 1 || r > config.dims.max_rank())
      throw ArgumentError("rank " + std::to_string(r) + " outside [1, " + std::to_string(config.dims.max_rank()) + "]");
    est.push_back({EstimatorKind::kron_ls, 0.0, r, true});
    ranks.push_back(r);
    est.push_back({EstimatorKind::kron_dl, config.dl_lambda, r, true});
    ranks.push_back(r);
  }
  est.push_back({EstimatorKind::scm});
  ranks.push_back(std::nullopt);
  for (const auto& e : config.estimators) {
    if (e.kind == EstimatorKind::kron_ls || e.kind == EstimatorKind::kron_dl || e.kind == EstimatorKind::scm) continue;
    est.push_back(e);
    ranks.push_back(std::nullopt);
  }
  return run_sweep(config, est, ranks, true, workers);
}

ExperimentResult series_pipeline(const FrameSeries& series, const ExperimentConfig& config, int workers) {
  config.validate();
  const StDims& dims = config.dims;
  const PredictionTask& task = config.task;
  if (series.width() != dims.q)
    throw ShapeError("series has " + std::to_string(series.width()) + " features, dims expect q = " +
                     std::to_string(dims.q));
  const FrameSeries residuals = zeroth_order_residuals(series, config.ahead);
  if (residuals.length() < dims.p) throw DataError("series too short for a single window");
  const Mat windows = sliding_window_samples(residuals, dims);
  const Index n_windows = windows.rows();
  Index last_x_frame = 0;
  for (Index i : task.x_idx) last_x_frame = std::max(last_x_frame, dims.frame_of(i));
  // Training windows for evaluation window m end at most at frame m + last_x_frame.
  const Index shift = dims.p - 1 - last_x_frame;
  const Index n_max = config.n_grid.back();
  const Index first_eval = n_windows - config.eval_frames;
  if (first_eval - shift - n_max + 1 < 0)
    throw DataError("series too short: " + std::to_string(series.length()) + " frames give " +
                    std::to_string(n_windows) + " windows, need " +
                    std::to_string(config.eval_frames + shift + n_max - 1) + " for " +
                    std::to_string(config.eval_frames) + " evaluation frames and n = " + std::to_string(n_max));

  const auto& est = config.estimators;
  const Index n_grid = static_cast<Index>(config.n_grid.size());
  const Index n_est = static_cast<Index>(est.size());
  std::optional<LinearPredictor> oracle;
  if (config.truth) oracle = fit_predictor(config.truth->sigma, config.truth->mean, task, config.jitter);

  std::vector<TrialRecord> records(static_cast<size_t>(config.eval_frames));
  parallel_for(config.eval_frames, workers, [&](Index k) {
    const Index m = first_eval + k;
    const Mat row = windows.row(m);
    const Mat x_eval = row(Eigen::all, task.x_idx);
    const Mat y_eval = row(Eigen::all, task.y_idx);
    TrialRecord& rec = records[static_cast<size_t>(k)];
    rec.zeroth = mean_sq_error(y_eval, Mat::Zero(1, y_eval.cols()));
    if (oracle) rec.omniscient = mean_sq_error(y_eval, predict_rows(*oracle, x_eval));
    rec.mse.assign(static_cast<size_t>(n_grid * n_est), 0.0);
    rec.failed.assign(static_cast<size_t>(n_grid * n_est), 0);
    for (Index g = 0; g < n_grid; ++g) {
      const Index n = config.n_grid[static_cast<size_t>(g)];
      const SampleCovariance sc = sample_covariance(windows.middleRows(m - shift - n + 1, n), dims);
      for (Index e = 0; e < n_est; ++e) {
        const auto mse = score(est[static_cast<size_t>(e)], sc, task, x_eval, y_eval, config.psd_fix, config.jitter);
        const size_t slot = static_cast<size_t>(g * n_est + e);
        rec.mse[slot] = mse.value_or(rec.zeroth);
        rec.failed[slot] = !mse.has_value();
      }
    }
  });

  // RMSE over frames; standard error by the delta method on the mean squared error.
  auto frame_point = [&](Index n, const std::vector<double>& mse, Index failures) {
    CurvePoint mean_pt = aggregate(n, mse, failures);
    CurvePoint pt = mean_pt;
    pt.mean_rmse = std::sqrt(mean_pt.mean_rmse);
    pt.std_error = pt.mean_rmse > 0.0 ? mean_pt.std_error / (2.0 * pt.mean_rmse) : 0.0;
    return pt;
  };
  ExperimentResult result;
  result.seed = config.seed;
  result.trials = 1;
  for (Index e = 0; e < n_est; ++e) {
    Curve curve{est[static_cast<size_t>(e)].label(), std::nullopt, {}};
    for (Index g = 0; g < n_grid; ++g) {
      std::vector<double> mse;
      Index failures = 0;
      for (const auto& rec : records) {
        mse.push_back(rec.mse[static_cast<size_t>(g * n_est + e)]);
        failures += rec.failed[static_cast<size_t>(g * n_est + e)];
      }
      curve.points.push_back(frame_point(config.n_grid[static_cast<size_t>(g)], mse, failures));
    }
    result.curves.push_back(std::move(curve));
  }
  if (oracle) {
    Curve omni{"omniscient", std::nullopt, {}};
    std::vector<double> mse;
    for (const auto& rec : records) mse.push_back(rec.omniscient);
    for (Index n : config.n_grid) omni.points.push_back(frame_point(n, mse, 0));
    result.omniscient = std::move(omni);
  }
  return result;
}

ExperimentResult run_experiment(const ExperimentConfig& config, int workers) {
  switch (config.mode) {
    case ExperimentMode::prediction:
      return run_prediction_sweep(config, workers);
    case ExperimentMode::rank:
      return run_rank_sweep(config, config.r_list, workers);
    case ExperimentMode::partial:
      return run_partial_sweep(config, workers);
    case ExperimentMode::series:
      if (!config.series) throw ArgumentError("series mode needs a series");
      return series_pipeline(*config.series, config, workers);
  }
  throw ArgumentError("unknown experiment mode");
}

FrameSeries simulate_series(const Mat& sigma, const Vec& mean, const StDims& dims, Index length, Rng& rng) {
  if (sigma.rows() != dims.dim() || sigma.cols() != dims.dim() || mean.size() != dims.dim())
    throw ShapeError("simulate_series: sigma/mean do not match dims");
  if (length < dims.p) throw ArgumentError("simulate_series: length must be >= p");
  FrameSeries out;
  out.frames.resize(length, dims.q);
  const Mat first = gaussian_sample(gaussian_factor(sigma), mean, 1, rng);
  for (Index f = 0; f < dims.p; ++f) out.frames.row(f) = first.block(0, f * dims.q, 1, dims.q);
  if (length == dims.p) return out;
  if (dims.p == 1) {
    const Mat rest = gaussian_sample(gaussian_factor(sigma), mean, length - 1, rng);
    out.frames.bottomRows(length - 1) = rest;
    return out;
  }
  const PredictionTask next = build_task_forward(dims, 1, dims.p - 1);
  const LinearPredictor pred = fit_predictor(sigma, mean, next);
  const Mat innov = gaussian_factor(pred.cond_cov);
  const Index hist = (dims.p - 1) * dims.q;
  for (Index f = dims.p; f < length; ++f) {
    Vec x(hist);
    for (Index k = 0; k < dims.p - 1; ++k) x.segment(k * dims.q, dims.q) = out.frames.row(f - dims.p + 1 + k).transpose();
    const Mat z = standard_normal(1, dims.q, rng);
    out.frames.row(f) = (predict(pred, x) + innov * z.transpose()).transpose();
  }
  return out;
}

json result_to_json(const ExperimentResult& result) {
  auto curve_json = [](const Curve& c) {
    json pts = json::array();
    for (const auto& p : c.points)
      pts.push_back({{"n", p.n}, {"mean_rmse", p.mean_rmse}, {"stderr", p.std_error}, {"failure_rate", p.failure_rate}});
    json j{{"label", c.label}, {"points", std::move(pts)}};
    if (c.rank) j["rank"] = *c.rank;
    return j;
  };
  json curves = json::array(), crb = json::array();
  for (const auto& c : result.curves) curves.push_back(curve_json(c));
  for (const auto& c : result.crb_curves) crb.push_back(curve_json(c));
  return json{{"seed", result.seed},
              {"trials", result.trials},
              {"curves", std::move(curves)},
              {"omniscient", result.omniscient ? curve_json(*result.omniscient) : json(nullptr)},
              {"crb_curves", std::move(crb)}};
}

std::string curve_to_csv(const Curve& curve) {
  std::string out = "n,mean_rmse,stderr,failure_rate\n";
  for (const auto& p : curve.points)
    out += std::to_string(p.n) + ',' + io::format_double(p.mean_rmse) + ',' + io::format_double(p.std_error) + ',' +
           io::format_double(p.failure_rate) + '\n';
  return out;
}

std::string curve_file_stem(const Curve& curve) {
  std::string s = curve.label;
  for (char& ch : s)
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '_' && ch != '-' && ch != '.') ch = '_';
  return s;
}

}  // namespace kronsum
