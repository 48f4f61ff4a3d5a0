#include "kronsum/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <optional>

#include "kronsum/crb.hpp"
#include "kronsum/errors.hpp"
#include "kronsum/harness.hpp"
#include "kronsum/io.hpp"
#include "kronsum/manifest.hpp"
#include "kronsum/sampling.hpp"

namespace kronsum::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::string out = "out";
  bool quiet = false;
};

// Collects every file of one run directory and writes the manifest last.
class RunWriter {
 public:
  RunWriter(fs::path dir, std::string command, std::uint64_t seed) : dir_(std::move(dir)) {
    manifest_.command = std::move(command);
    manifest_.seed = seed;
  }
  void input(const std::string& path) { manifest_.inputs.push_back(path); }
  void set_hash(std::string hash) { manifest_.config_hash = std::move(hash); }
  void write(const std::string& name, std::string_view text) {
    io::write_text_file(dir_ / name, text);
    manifest_.outputs.push_back(name);
  }
  void write_json(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }
  void finish() {
    manifest_.outputs.push_back("manifest.json");
    io::write_text_file(dir_ / "manifest.json", manifest_.to_json().dump(2) + "\n");
  }
  const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
  RunManifest manifest_;
};

bool is_json(const std::string& path) { return fs::path(path).extension() == ".json"; }

char delimiter_of(const std::string& d) {
  if (d == "tab" || d == "\\t") return '\t';
  if (d.size() != 1) throw ArgumentError("--delimiter must be a single character");
  return d[0];
}

std::optional<StDims> dims_opt(const std::vector<Index>& v) {
  if (v.empty()) return std::nullopt;
  return StDims(v[0], v[1]);
}

// Covariance plus optional mean from either a covariance file or a truth spec.
struct CovSource {
  Mat sigma;
  Vec mean;
  StDims dims;
  std::optional<CrbInput> kron;
  std::optional<KronSumModel> model;
  Index n_samples = 0;
};

CovSource load_cov_source(const std::string& path, std::optional<StDims> dims) {
  const json j = io::read_json_file(path);
  CovSource src;
  if (j.contains("kind")) {
    Truth t = resolve_truth(j, fs::path(path).parent_path());
    src.sigma = t.sigma;
    src.mean = t.mean;
    src.dims = t.dims;
    src.kron = t.kron;
  } else if (j.contains("factors")) {
    KronSumModel m = io::model_from_json(j);
    src.sigma = m.assemble();
    src.dims = m.dims;
    src.mean = Vec::Zero(m.dims.dim());
    src.model = std::move(m);
  } else {
    io::CovarianceFile cov = io::covariance_from_json(j);
    const std::optional<StDims> d = dims ? dims : cov.dims;
    if (!d) throw ArgumentError(path + ": covariance file has no dims; pass --dims p q");
    if (d->dim() != cov.matrix.rows())
      throw ShapeError(path + ": --dims give pq = " + std::to_string(d->dim()) + " but the matrix is " +
                       std::to_string(cov.matrix.rows()) + "x" + std::to_string(cov.matrix.cols()));
    src.sigma = cov.matrix;
    src.dims = *d;
    src.mean = cov.mean.value_or(Vec::Zero(d->dim()));
    src.n_samples = cov.n_samples.value_or(0);
  }
  if (dims && !(src.dims == *dims))
    throw ShapeError(path + ": dims (p=" + std::to_string(src.dims.p) + ", q=" + std::to_string(src.dims.q) +
                     ") do not match --dims (p=" + std::to_string(dims->p) + ", q=" + std::to_string(dims->q) + ")");
  return src;
}

struct DecomposeArgs {
  std::string input;
  std::vector<Index> dims;
  Index rank = 1;
  bool diag_load = false;
  bool correlation = false;
  double lambda = 0.0;
  Index spectrum = 10;
  std::string delimiter = ",";
  Index stride = 1;
  std::optional<Index> ahead;
};

void cmd_decompose(const DecomposeArgs& a, const Globals& g, std::ostream& out) {
  SampleCovariance sc;
  if (is_json(a.input)) {
    const CovSource src = load_cov_source(a.input, dims_opt(a.dims));
    sc = SampleCovariance{src.sigma, src.mean, src.n_samples, src.dims};
  } else {
    const auto dims = dims_opt(a.dims);
    if (!dims) throw ArgumentError("--dims p q is required for series input");
    FrameSeries series = io::load_frame_series(a.input, {delimiter_of(a.delimiter), a.stride});
    if (series.width() != dims->q)
      throw ShapeError(a.input + ": expected " + std::to_string(dims->q) + " columns (q), found " +
                       std::to_string(series.width()));
    if (a.ahead) series = zeroth_order_residuals(series, *a.ahead);
    sc = sample_covariance(sliding_window_samples(series, *dims), *dims);
  }
  KronSumModel model;
  if (a.diag_load) {
    DlOptions opts;
    opts.use_correlation = a.correlation;
    opts.extra_diag = a.lambda;
    model = estimate_kron_dl(sc, a.rank, opts);
  } else if (a.correlation) {
    const Correlation c = to_correlation(sc);
    model = estimate_kron_ls(SampleCovariance{c.matrix, Vec::Zero(sc.dims.dim()), sc.n_samples, sc.dims}, a.rank);
    model.fit_domain = FitDomain::correlation;
    model.scale = c.scale;
  } else {
    model = estimate_kron_ls(sc, a.rank);
  }
  const KronSpectrum spec = kron_spectrum(sc, std::min(a.spectrum, sc.dims.max_rank()));

  RunWriter w(g.out, "decompose", g.seed);
  w.input(a.input);
  json cfg{{"command", "decompose"}, {"input", a.input},  {"dims", io::dims_to_json(sc.dims)},
           {"rank", a.rank},         {"diag_load", a.diag_load}, {"correlation", a.correlation},
           {"lambda", a.lambda},     {"spectrum", a.spectrum},   {"stride", a.stride},
           {"ahead", a.ahead ? json(*a.ahead) : json(nullptr)}};
  w.set_hash(config_hash(cfg));
  w.write_json("model.json", io::model_to_json(model));
  std::string csv = "index,energy\n";
  for (size_t i = 0; i < spec.rms_energies.size(); ++i)
    csv += std::to_string(i + 1) + "," + io::format_double(spec.rms_energies[i]) + "\n";
  w.write("spectrum.csv", csv);
  w.write_json("report.json", json{{"pct_rmse_first", spec.pct_rmse_first},
                                   {"rank", a.rank},
                                   {"dims", io::dims_to_json(sc.dims)},
                                   {"n_samples", sc.n_samples},
                                   {"warnings", model.warnings}});
  w.finish();
  if (!g.quiet)
    out << "decompose: rank " << a.rank << ", pct_rmse_first " << io::format_double(spec.pct_rmse_first)
        << ", wrote " << w.dir().string() << "\n";
}

struct PredictArgs {
  std::string model;
  std::string task;
  std::string series;
  Index ahead = 0;
  double jitter = 1e-10;
  std::string delimiter = ",";
  Index stride = 1;
};

void cmd_predict(const PredictArgs& a, const Globals& g, std::ostream& out) {
  const CovSource src = load_cov_source(a.model, std::nullopt);
  const PredictionTask task = io::task_from_json(io::read_json_file(a.task));
  if (!(task.dims == src.dims))
    throw ShapeError("task dims (p=" + std::to_string(task.dims.p) + ", q=" + std::to_string(task.dims.q) +
                     ") do not match model dims (p=" + std::to_string(src.dims.p) + ", q=" +
                     std::to_string(src.dims.q) + ")");
  const FrameSeries series = io::load_frame_series(a.series, {delimiter_of(a.delimiter), a.stride});
  if (series.width() != src.dims.q)
    throw ShapeError(a.series + ": series has " + std::to_string(series.width()) + " features, model expects q = " +
                     std::to_string(src.dims.q));
  const StDims& dims = src.dims;
  const FrameSeries residuals = zeroth_order_residuals(series, a.ahead);
  const Mat windows = sliding_window_samples(residuals, dims);
  const LinearPredictor pred = fit_predictor(src.sigma, src.mean, task, a.jitter);
  const Index offset = a.ahead + 1;  // residual frame t is series frame t + K + 1

  std::string csv = "frame,feature,predicted,actual\n";
  json per_frame = json::array();
  double total = 0.0, total_zeroth = 0.0;
  const double ny = static_cast<double>(task.y_idx.size());
  for (Index m = 0; m < windows.rows(); ++m) {
    Vec x(static_cast<Index>(task.x_idx.size()));
    for (Index i = 0; i < x.size(); ++i) x(i) = windows(m, task.x_idx[static_cast<size_t>(i)]);
    const Vec r = predict(pred, x);
    double se = 0.0, se_zeroth = 0.0;
    Index target_frame = 0;
    for (Index i = 0; i < r.size(); ++i) {
      const Index var = task.y_idx[static_cast<size_t>(i)];
      const Index t = m + dims.frame_of(var) + offset;
      const Index f = dims.feature_of(var);
      const double base = zeroth_order_forecast(series, a.ahead, t)(f);
      const double predicted = base + r(i), actual = series.frames(t, f);
      se += (predicted - actual) * (predicted - actual);
      se_zeroth += (base - actual) * (base - actual);
      target_frame = std::max(target_frame, t);
      csv += std::to_string(t + 1) + "," + std::to_string(f + 1) + "," + io::format_double(predicted) + "," +
             io::format_double(actual) + "\n";
    }
    total += se / ny;
    total_zeroth += se_zeroth / ny;
    per_frame.push_back({{"window", m + 1}, {"target_frame", target_frame + 1}, {"rmse", std::sqrt(se / ny)}});
  }
  const double count = static_cast<double>(windows.rows());
  const double rmse = std::sqrt(total / count);
  RunWriter w(g.out, "predict", g.seed);
  w.input(a.model);
  w.input(a.task);
  w.input(a.series);
  w.set_hash(config_hash(json{{"command", "predict"}, {"model", a.model}, {"task", a.task}, {"series", a.series},
                              {"ahead", a.ahead}, {"jitter", a.jitter}, {"stride", a.stride}}));
  w.write("predictions.csv", csv);
  w.write_json("summary.json", json{{"rmse", rmse},
                                    {"zeroth_order_rmse", std::sqrt(total_zeroth / count)},
                                    {"n_windows", windows.rows()},
                                    {"ahead", a.ahead},
                                    {"per_frame", std::move(per_frame)}});
  w.finish();
  if (!g.quiet) out << "predict: " << windows.rows() << " windows, rmse " << io::format_double(rmse) << "\n";
}

struct CrbArgs {
  std::string truth;
  std::string task;
  std::vector<Index> dims;
  std::vector<double> n_grid{10, 20, 50, 100, 200, 500, 1000, 10000};
  std::string convention = "real_gaussian";
  std::string structure = "auto";
  std::string normalization = "total";
  bool sigma_only = false;
  bool allow_large = false;
  Index max_dim = 64;
};

void cmd_crb(const CrbArgs& a, const Globals& g, std::ostream& out) {
  const CovSource src = load_cov_source(a.truth, dims_opt(a.dims));
  const CrbConvention conv = a.convention == "as_printed" ? CrbConvention::as_printed : CrbConvention::real_gaussian;
  CrbOptions opts;
  opts.max_dim = a.max_dim;
  opts.allow_large = a.allow_large;
  std::optional<CrbInput> kron;
  if (a.structure == "kron" || (a.structure == "auto" && (src.kron || (src.model && src.model->rank() == 1 &&
                                                                      !src.model->diag_load && !src.model->scale)))) {
    if (src.kron) kron = src.kron;
    else if (src.model && src.model->rank() == 1 && !src.model->diag_load && !src.model->scale) {
      kron = CrbInput{};
      kron->temporal = src.model->factors[0].temporal;
      kron->spatial = src.model->factors[0].spatial;
    } else {
      throw ArgumentError("--structure kron needs a single-Kronecker truth (kind kronecker or a rank-1 model)");
    }
    kron->convention = conv;
  }

  RunWriter w(g.out, "crb", g.seed);
  w.input(a.truth);
  json cfg{{"command", "crb"}, {"truth", a.truth}, {"convention", a.convention}, {"structure", kron ? "kron" : "unstructured"},
           {"normalization", a.normalization}, {"n_grid", a.n_grid}, {"sigma_only", a.sigma_only}};
  const std::string structure = kron ? "kron" : "unstructured";
  if (a.sigma_only) {
    w.set_hash(config_hash(cfg));
    const Mat f_sigma = kron ? fisher_crb_sigma(*kron, opts) : crb_unstructured(src.sigma, conv, opts);
    w.write("f_sigma.csv", io::matrix_to_csv(f_sigma));
    w.write_json("crb_report.json", json{{"convention", a.convention}, {"structure", structure},
                                         {"f_sigma", io::matrix_to_json(f_sigma)}});
    w.finish();
    if (!g.quiet) out << "crb: wrote f_sigma (" << f_sigma.rows() << "x" << f_sigma.cols() << ")\n";
    return;
  }
  if (a.task.empty()) throw ArgumentError("--task is required unless --sigma-only is given");
  w.input(a.task);
  cfg["task"] = a.task;
  w.set_hash(config_hash(cfg));
  const PredictionTask task = io::task_from_json(io::read_json_file(a.task), src.dims);
  const RmseNormalization norm =
      a.normalization == "per_variable" ? RmseNormalization::per_variable : RmseNormalization::total;
  const CrbReport rep = crb_report(src.sigma, kron, task, a.n_grid, conv, norm, std::nullopt, opts);
  w.write("f_sigma.csv", io::matrix_to_csv(rep.f_sigma));
  json curve = json::array();
  std::string csv = "n,rmse\n";
  for (const auto& pt : rep.rmse_curve) {
    curve.push_back({{"n", pt.n}, {"rmse", pt.rmse}});
    csv += io::format_double(pt.n) + "," + io::format_double(pt.rmse) + "\n";
  }
  w.write_json("crb_report.json", json{{"convention", a.convention},
                                       {"structure", structure},
                                       {"normalization", a.normalization},
                                       {"task", io::task_to_json(task)},
                                       {"f_sigma", io::matrix_to_json(rep.f_sigma)},
                                       {"f_a", io::matrix_to_json(rep.f_a)},
                                       {"err_cov", io::matrix_to_json(rep.err_cov)},
                                       {"cond_cov", io::matrix_to_json(rep.cond_cov)},
                                       {"rmse_curve", std::move(curve)}});
  w.write("rmse_curve.csv", csv);
  w.finish();
  if (!g.quiet) out << "crb: " << structure << " bound, " << rep.rmse_curve.size() << " curve points\n";
}

struct ExperimentArgs {
  std::string config;
  int workers = 1;
};

void cmd_experiment(const ExperimentArgs& a, const Globals& g, bool seed_given, std::ostream& out) {
  json j = io::read_json_file(a.config);
  if (seed_given) j["seed"] = g.seed;
  const ExperimentConfig config = parse_config(j, fs::path(a.config).parent_path());
  if (a.workers < 1) throw ArgumentError("--workers must be >= 1");
  const std::string hash = config_hash(j);
  const ExperimentResult result = run_experiment(config, a.workers);

  RunWriter w(fs::path(g.out) / hash, "experiment", config.seed);
  w.input(a.config);
  w.set_hash(hash);
  json res = result_to_json(result);
  res["config_hash"] = hash;
  res["config"] = j;
  w.write_json("results.json", res);
  for (const auto& c : result.curves) w.write(curve_file_stem(c) + ".csv", curve_to_csv(c));
  if (result.omniscient) w.write("omniscient.csv", curve_to_csv(*result.omniscient));
  for (const auto& c : result.crb_curves) w.write(curve_file_stem(c) + ".csv", curve_to_csv(c));
  w.finish();
  if (!g.quiet) {
    out << "experiment " << hash.substr(0, 12) << ": " << result.curves.size() << " curves, " << result.trials
        << " trials -> " << w.dir().string() << "\n";
    for (const auto& c : result.curves) {
      double worst = 0.0;
      for (const auto& p : c.points) worst = std::max(worst, p.failure_rate);
      out << "  " << c.label << ": rmse " << io::format_double(c.points.front().mean_rmse) << " (n="
          << c.points.front().n << ") .. " << io::format_double(c.points.back().mean_rmse) << " (n="
          << c.points.back().n << "), max failure rate " << io::format_double(worst) << "\n";
    }
  }
}

struct SampleArgs {
  std::string truth;
  std::vector<Index> dims;
  Index n = 100;
  std::optional<Index> frames;
};

void cmd_sample(const SampleArgs& a, const Globals& g, std::ostream& out) {
  const CovSource src = load_cov_source(a.truth, dims_opt(a.dims));
  RunWriter w(g.out, "sample", g.seed);
  w.input(a.truth);
  json cfg{{"command", "sample"}, {"truth", a.truth}, {"n", a.n}, {"seed", g.seed}};
  if (a.frames) {
    cfg["frames"] = *a.frames;
    w.set_hash(config_hash(cfg));
    Rng rng(g.seed);
    const FrameSeries s = simulate_series(src.sigma, src.mean, src.dims, *a.frames, rng);
    w.write("series.csv", io::matrix_to_csv(s.frames));
    if (!g.quiet) out << "sample: " << *a.frames << " frames of " << src.dims.q << " features\n";
  } else {
    w.set_hash(config_hash(cfg));
    const Mat x = gaussian_sample(src.sigma, src.mean, a.n, g.seed);
    w.write("samples.csv", io::matrix_to_csv(x));
    if (!g.quiet) out << "sample: " << a.n << " draws of dimension " << src.dims.dim() << "\n";
  }
  w.finish();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Kronecker-sum covariance estimation and linear prediction"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  auto* seed_opt = app.add_option("--seed", g.seed, "Base RNG seed");
  app.add_option("--out", g.out, "Output directory");
  app.add_flag("--quiet", g.quiet, "Suppress the summary on stdout");

  DecomposeArgs dec;
  auto* sub_dec = app.add_subcommand("decompose", "Fit a Kronecker-sum model to a series CSV or covariance JSON");
  sub_dec->add_option("input", dec.input, "series.csv or cov.json")->required()->check(CLI::ExistingFile);
  sub_dec->add_option("--dims", dec.dims, "Frames per window p and features q")->expected(2);
  sub_dec->add_option("--rank", dec.rank, "Separation rank r");
  sub_dec->add_flag("--diag-load", dec.diag_load, "Treat the diagonal as don't-care and fit a diagonal load");
  sub_dec->add_flag("--correlation", dec.correlation, "Fit in the correlation domain");
  sub_dec->add_option("--lambda", dec.lambda, "Extra diagonal load (with --diag-load)");
  sub_dec->add_option("--spectrum", dec.spectrum, "Number of spectrum entries");
  sub_dec->add_option("--delimiter", dec.delimiter, "CSV delimiter");
  sub_dec->add_option("--stride", dec.stride, "Keep every k-th frame");
  sub_dec->add_option("--ahead", dec.ahead, "Fit zeroth-order residuals for K-ahead prediction");

  PredictArgs pr;
  auto* sub_pr = app.add_subcommand("predict", "Predict a series with a model or covariance");
  sub_pr->add_option("--model", pr.model, "model.json, cov.json or truth spec")->required()->check(CLI::ExistingFile);
  sub_pr->add_option("--task", pr.task, "task.json")->required()->check(CLI::ExistingFile);
  sub_pr->add_option("--series", pr.series, "series.csv")->required()->check(CLI::ExistingFile);
  sub_pr->add_option("--ahead", pr.ahead, "Zeroth-order prediction distance K");
  sub_pr->add_option("--jitter", pr.jitter, "Relative diagonal jitter for the solve");
  sub_pr->add_option("--delimiter", pr.delimiter, "CSV delimiter");
  sub_pr->add_option("--stride", pr.stride, "Keep every k-th frame");

  CrbArgs crb;
  auto* sub_crb = app.add_subcommand("crb", "Cramer-Rao bounds for the covariance and predictor");
  sub_crb->add_option("truth", crb.truth, "Truth spec, model or covariance JSON")->required()->check(CLI::ExistingFile);
  sub_crb->add_option("--task", crb.task, "task.json")->check(CLI::ExistingFile);
  sub_crb->add_option("--dims", crb.dims, "p q for a bare covariance file")->expected(2);
  sub_crb->add_option("--n-grid", crb.n_grid, "Sample sizes for the RMSE curve");
  sub_crb->add_option("--convention", crb.convention)->check(CLI::IsMember({"as_printed", "real_gaussian"}));
  sub_crb->add_option("--structure", crb.structure)->check(CLI::IsMember({"auto", "kron", "unstructured"}));
  sub_crb->add_option("--normalization", crb.normalization)->check(CLI::IsMember({"total", "per_variable"}));
  sub_crb->add_flag("--sigma-only", crb.sigma_only, "Only compute the covariance bound");
  sub_crb->add_flag("--allow-large", crb.allow_large, "Lift the size gate");
  sub_crb->add_option("--max-dim", crb.max_dim, "Size gate on pq");

  ExperimentArgs ex;
  auto* sub_ex = app.add_subcommand("experiment", "Run a Monte Carlo experiment config");
  sub_ex->add_option("config", ex.config, "config.json")->required()->check(CLI::ExistingFile);
  sub_ex->add_option("--workers", ex.workers, "Worker threads");

  SampleArgs sa;
  auto* sub_sa = app.add_subcommand("sample", "Draw Gaussian samples from a covariance");
  sub_sa->add_option("truth", sa.truth, "Truth spec or covariance JSON")->required()->check(CLI::ExistingFile);
  sub_sa->add_option("--dims", sa.dims, "p q for a bare covariance file")->expected(2);
  sub_sa->add_option("--n", sa.n, "Number of draws");
  sub_sa->add_option("--frames", sa.frames, "Simulate a frame series of this length instead");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (sub_dec->parsed()) cmd_decompose(dec, g, out);
    else if (sub_pr->parsed()) cmd_predict(pr, g, out);
    else if (sub_crb->parsed()) cmd_crb(crb, g, out);
    else if (sub_ex->parsed()) cmd_experiment(ex, g, seed_opt->count() > 0, out);
    else if (sub_sa->parsed()) cmd_sample(sa, g, out);
    return kOk;
  } catch (const ArgumentError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConditioningError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const Error& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  }
}

}  // namespace kronsum::cli
