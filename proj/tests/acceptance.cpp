// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include "kronsum/cli.hpp"
#include "kronsum/crb.hpp"
#include "kronsum/harness.hpp"
#include "kronsum/io.hpp"
#include "kronsum/manifest.hpp"
#include "kronsum/masked_fit.hpp"
#include "kronsum/sampling.hpp"
#include "test_main.hpp"

using namespace kronsum;
using namespace testutil;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigs = fs::path(KRONSUM_SOURCE_DIR) / "configs";

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

double combined_se(const CurvePoint& a, const CurvePoint& b) {
  return std::sqrt(a.std_error * a.std_error + b.std_error * b.std_error);
}

ExperimentResult run_shipped(const std::string& name) {
  const fs::path path = kConfigs / name;
  const ExperimentConfig c = parse_config(io::read_json_file(path), path.parent_path());
  return run_experiment(c, 1);
}

const Curve& curve_with_prefix(const ExperimentResult& r, const std::string& prefix) {
  for (const auto& c : r.curves)
    if (c.label.rfind(prefix, 0) == 0) return c;
  throw ArgumentError("no curve starting with " + prefix);
}

Mat sym_oracle_ik(const Mat& sigma) {
  // (I + K)(Sigma (x) Sigma), entry by entry
  const Index d = sigma.rows();
  Mat out(d * d, d * d);
  for (Index j = 0; j < d; ++j)
    for (Index i = 0; i < d; ++i)
      for (Index l = 0; l < d; ++l)
        for (Index k = 0; k < d; ++k)
          out(i + j * d, k + l * d) = sigma(i, k) * sigma(j, l) + sigma(i, l) * sigma(j, k);
  return out;
}

Outcome criterion1() {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<Index> pd(2, 4), qd(2, 5);
  double worst = 0.0;
  const auto start = std::chrono::steady_clock::now();
  for (int k = 0; k < 50; ++k) {
    const StDims dims(pd(rng), qd(rng));
    const Mat sigma = brute_kron(random_spd(dims.p, rng), random_spd(dims.q, rng));
    const SampleCovariance sc{sigma, Vec::Zero(dims.dim()), 0, dims};
    worst = std::max(worst, rel_err(estimate_kron_ls(sc, 1).assemble(), sigma));
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {worst < 1e-10 && secs < 10.0, "max rel err " + fmt(worst) + " over 50 instances, " + fmt(secs) + " s"};
}

Outcome criterion2() {
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> unif(0.1, 1.0);
  const StDims dims(3, 4);
  double worst_sigma = 0.0, worst_load = 0.0;
  for (int k = 0; k < 20; ++k) {
    Vec u(4);
    for (Index i = 0; i < 4; ++i) u(i) = unif(rng);
    const Vec load = replicated_diag_load(u, 3);
    Mat sigma = brute_kron(random_spd(3, rng), random_spd(4, rng));
    sigma.diagonal() += load;
    DlOptions opts;
    opts.use_correlation = false;
    const KronSumModel model = estimate_kron_dl(SampleCovariance{sigma, Vec::Zero(12), 0, dims}, 1, opts);
    worst_sigma = std::max(worst_sigma, rel_err(model.assemble(), sigma));
    worst_load = std::max(worst_load, rel_err(*model.diag_load, load));
  }
  return {worst_sigma < 1e-6 && worst_load < 1e-6,
          "max rel err assembled " + fmt(worst_sigma) + ", diagonal load " + fmt(worst_load) + " over 20 instances"};
}

Outcome criterion3() {
  std::mt19937_64 rng(303);
  std::uniform_int_distribution<Index> pd(2, 4), qd(2, 4), rd(1, 3);
  int monotone = 0, below_init = 0;
  double worst_rise = 0.0;
  for (int k = 0; k < 100; ++k) {
    const StDims dims(pd(rng), qd(rng));
    const Mat sigma = k % 2 ? random_spd(dims.dim(), rng, 0.1) : random_symmetric(dims.dim(), rng);
    const auto b = rearrange(sigma, dims);
    const Index r = std::min(rd(rng), dims.max_rank());
    const auto fit = masked_rank_r_fit(b, dontcare_mask(dims), r);
    const auto& tr = fit.objective_trace;
    bool ok = true;
    for (size_t i = 1; i < tr.size(); ++i) {
      const double rise = (tr[i] - tr[i - 1]) / std::max(tr[0], 1e-300);
      worst_rise = std::max(worst_rise, rise);
      if (rise > 1e-12) ok = false;
    }
    monotone += ok;
    below_init += tr.back() <= tr.front();
  }
  return {monotone == 100 && below_init == 100,
          std::to_string(monotone) + "/100 non-increasing traces (largest relative step up " + fmt(worst_rise) +
              "), " + std::to_string(below_init) + "/100 final <= SVD init"};
}

// vec(Sigma_yx Sigma_x^{-1}) with a general solve, for finite differences.
Vec coefficients(const Mat& sigma, const PredictionTask& task) {
  const Mat a = sigma(task.y_idx, task.x_idx) * sigma(task.x_idx, task.x_idx).inverse();
  return vec(a);
}

Outcome criterion4() {
  std::mt19937_64 rng(404);
  const StDims shapes[] = {StDims(2, 2), StDims(2, 3), StDims(3, 2), StDims(2, 4), StDims(4, 2),
                           StDims(3, 3), StDims(2, 5), StDims(2, 6), StDims(3, 4), StDims(4, 3)};
  const double h = 1e-6;
  double worst = 0.0;
  for (int k = 0; k < 20; ++k) {
    const StDims dims = shapes[k % 10];
    const Mat sigma = random_spd(dims.dim(), rng);
    const PredictionTask task = k < 10 ? build_task_forward(dims, 1, dims.p - 1)
                                       : build_task_partial(dims, {0}, 1, 0);
    const Mat jac = predictor_jacobian(sigma, task);
    const Index d = dims.dim();
    for (Index c = 0; c < d; ++c)
      for (Index r = 0; r < d; ++r) {
        Mat plus = sigma, minus = sigma;
        plus(r, c) += h;
        minus(r, c) -= h;
        const Vec fd = (coefficients(plus, task) - coefficients(minus, task)) / (2 * h);
        worst = std::max(worst, (jac.col(r + c * d) - fd).cwiseAbs().maxCoeff());
      }
  }
  return {worst < 1e-6, "max abs error vs central differences " + fmt(worst) + " over 20 covariances (pq <= 12)"};
}

Outcome criterion5() {
  std::mt19937_64 rng(505);
  std::ostringstream msg;
  bool ok = true;

  const double s2 = 2.5;
  const Mat scalar = Mat::Constant(1, 1, s2);
  CrbInput in1;
  in1.temporal = Mat::Ones(1, 1);
  in1.spatial = scalar;
  in1.convention = CrbConvention::as_printed;
  const double ap = fisher_crb_sigma(in1)(0, 0);
  in1.convention = CrbConvention::real_gaussian;
  const double rg = fisher_crb_sigma(in1)(0, 0);
  const double ap_u = crb_unstructured(scalar, CrbConvention::as_printed)(0, 0);
  const double rg_u = crb_unstructured(scalar, CrbConvention::real_gaussian)(0, 0);
  const double s4 = s2 * s2;
  const double scalar_err = std::max({std::abs(ap - s4), std::abs(rg - 2 * s4), std::abs(ap_u - s4),
                                      std::abs(rg_u - 2 * s4)}) / s4;
  ok &= scalar_err < 1e-12;
  msg << "scalar rel err " << fmt(scalar_err);

  double unst = 0.0;
  for (Index d : {2, 3, 5}) {
    const Mat sigma = random_spd(d, rng);
    unst = std::max(unst, rel_err(crb_unstructured(sigma, CrbConvention::as_printed),
                                  brute_kron(sigma.transpose(), sigma)));
  }
  ok &= unst < 1e-12;
  msg << "; unstructured rel err " << fmt(unst);

  double inv = 0.0;
  bool rank_ok = true;
  for (const auto& [p, q] : {std::pair<Index, Index>{2, 3}, {3, 2}, {3, 4}}) {
    CrbInput in;
    in.temporal = random_spd(p, rng);
    in.spatial = random_spd(q, rng);
    in.convention = CrbConvention::as_printed;
    const Mat base = fisher_crb_sigma(in);
    for (double c : {0.1, 10.0}) {
      CrbInput scaled = in;
      scaled.temporal *= c;
      scaled.spatial /= c;
      inv = std::max(inv, rel_err(fisher_crb_sigma(scaled), base));
    }
    const Mat mid = kron_fim_middle(in);
    const Vec sv = Eigen::JacobiSVD<Mat>(mid).singularValues();
    Index rank = 0;
    for (Index i = 0; i < sv.size(); ++i) rank += sv(i) > 1e-9 * sv(0);
    rank_ok &= rank == p * p + q * q - 1;
    msg << "; rank(" << p << "," << q << ") = " << rank << " (expect " << p * p + q * q - 1 << ")";
  }
  ok &= inv < 1e-10 && rank_ok;
  msg << "; scale invariance rel err " << fmt(inv);
  return {ok, msg.str()};
}

Outcome criterion6() {
  const auto start = std::chrono::steady_clock::now();
  const ExperimentResult r = run_shipped("fig4_shape.json");
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const Curve& kron = r.curve("kron_ls_r1");
  const Curve& scm = r.curve("scm");
  const Curve& crb_k = r.curve("crb_kron");
  const Curve& crb_u = r.curve("crb_unstructured");
  const double emp = kron.at(10000).mean_rmse, pred = crb_k.at(10000).mean_rmse;
  const double gap = std::abs(emp - pred) / pred;
  bool below = true;
  std::ostringstream msg;
  for (Index n : {20, 50, 100, 10000}) {
    below &= crb_k.at(n).mean_rmse < crb_u.at(n).mean_rmse;
    below &= kron.at(n).mean_rmse < scm.at(n).mean_rmse;
  }
  msg << r.trials << " trials; n=1e4 empirical " << fmt(emp) << " vs CRB " << fmt(pred) << " (rel gap " << fmt(gap)
      << "); kron below unstructured at n in {20,50,100,1e4}: " << (below ? "yes" : "no") << "; " << fmt(secs)
      << " s";
  return {r.trials >= 500 && gap < 0.10 && below && secs < 300.0, msg.str()};
}

Outcome criterion7() {
  const ExperimentResult r = run_shipped("fig5_shape.json");
  const Curve& kron = r.curve("kron_ls_r1");
  const Curve& ridge = curve_with_prefix(r, "scm_ridge");
  const auto& k0 = kron.points.front();
  const auto& r0 = ridge.points.front();
  const auto& k1 = kron.points.back();
  const auto& r1 = ridge.points.back();
  const double small = (r0.mean_rmse - k0.mean_rmse) / combined_se(k0, r0);
  const double large = (k1.mean_rmse - r1.mean_rmse) / combined_se(k1, r1);
  return {small > 2.0 && large > 2.0, "n=" + std::to_string(k0.n) + ": kron " + fmt(k0.mean_rmse) + " vs " +
                                          ridge.label + " " + fmt(r0.mean_rmse) + " (" + fmt(small) +
                                          " SE); n=" + std::to_string(k1.n) + ": kron " + fmt(k1.mean_rmse) +
                                          " vs ridge " + fmt(r1.mean_rmse) + " (" + fmt(large) + " SE)"};
}

Outcome criterion8() {
  const ExperimentResult r = run_shipped("fig6_shape.json");
  const auto& dl1 = r.curve("kron_dl_r1").at(15);
  const auto& dl2 = r.curve("kron_dl_r2").at(15);
  const auto& ls1 = r.curve("kron_ls_r1").at(15);
  const auto& ls2 = r.curve("kron_ls_r2").at(15);
  const bool ok = r.trials >= 200 && dl2.mean_rmse <= dl1.mean_rmse + dl1.std_error && ls2.mean_rmse > ls1.mean_rmse;
  return {ok, std::to_string(r.trials) + " trials, n=15: kron_dl r1 " + fmt(dl1.mean_rmse) + " -> r2 " +
                  fmt(dl2.mean_rmse) + "; kron_ls r1 " + fmt(ls1.mean_rmse) + " -> r2 " + fmt(ls2.mean_rmse)};
}

Outcome criterion9() {
  const ExperimentResult r = run_shipped("fig7_shape.json");
  const auto& dl = curve_with_prefix(r, "kron_dl").points.front();
  const auto& ridge = curve_with_prefix(r, "scm_ridge").points.front();
  const double margin = (ridge.mean_rmse - dl.mean_rmse) / combined_se(dl, ridge);
  const Curve& zeroth = r.curve("zeroth_order");
  bool flat = true;
  for (const auto& p : zeroth.points) flat &= p.mean_rmse == zeroth.points.front().mean_rmse;
  return {margin > 2.0 && flat, "n=" + std::to_string(dl.n) + ": kron_dl " + fmt(dl.mean_rmse) + " vs scm_ridge " +
                                    fmt(ridge.mean_rmse) + " (" + fmt(margin) + " SE); zeroth-order flat: " +
                                    (flat ? "yes" : "no")};
}

Outcome criterion10() {
  const Mat sigma = (Mat(3, 3) << 2.0, 0.5, 0.2, 0.5, 1.0, -0.3, 0.2, -0.3, 1.5).finished();
  const Index n = 50, trials = 10000;
  Rng rng(1010);
  const Mat factor = gaussian_factor(sigma);
  Mat vecs(trials, 9);
  for (Index k = 0; k < trials; ++k) {
    const SampleCovariance sc = sample_covariance(gaussian_sample(factor, Vec::Zero(3), n, rng));
    vecs.row(k) = vec(sc.matrix).transpose();
  }
  const Mat centered = vecs.rowwise() - vecs.colwise().mean();
  const Mat emp = static_cast<double>(n) * centered.transpose() * centered / static_cast<double>(trials - 1);
  const Mat oracle = sym_oracle_ik(sigma);
  const double err = rel_err(emp, oracle);
  const double wiring = rel_err(crb_unstructured(sigma, CrbConvention::real_gaussian), oracle);
  return {err < 0.10 && wiring < 1e-12,
          "rel Frobenius error vs (I+K)(S(x)S) " + fmt(err) + "; real_gaussian bound vs oracle " + fmt(wiring)};
}

Outcome criterion11() {
  const fs::path dir = fs::temp_directory_path() / "kronsum_acceptance_determinism";
  fs::remove_all(dir);
  const std::string cfg = (kConfigs / "fig5_shape.json").string();
  std::ostringstream out, err;
  const int a = cli::run({"experiment", cfg, "--workers", "1", "--seed", "5", "--out", (dir / "w1").string(), "--quiet"},
                         out, err);
  const int b = cli::run({"experiment", cfg, "--workers", "8", "--seed", "5", "--out", (dir / "w8").string(), "--quiet"},
                         out, err);
  if (a != 0 || b != 0) return {false, "experiment exited with " + std::to_string(a) + "/" + std::to_string(b)};
  int files = 0, same = 0;
  for (const auto& run : fs::directory_iterator(dir / "w1"))
    for (const auto& f : fs::directory_iterator(run.path())) {
      if (f.path().extension() != ".csv") continue;
      ++files;
      const fs::path other = dir / "w8" / run.path().filename() / f.path().filename();
      same += fs::exists(other) && io::read_text_file(f.path()) == io::read_text_file(other);
    }
  return {files > 0 && same == files, std::to_string(same) + "/" + std::to_string(files) + " CSV files byte-identical"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"exact Kronecker recovery", criterion1},
      {"diagonally loaded recovery", criterion2},
      {"masked ALS monotonicity", criterion3},
      {"predictor Jacobian vs finite differences", criterion4},
      {"CRB closed forms", criterion5},
      {"Kronecker CRB vs empirical curves", criterion6},
      {"Kronecker/ridge-SCM crossover", criterion7},
      {"rank behavior of corrected vs standard Kronecker", criterion8},
      {"partial-data ordering", criterion9},
      {"SCM asymptotic covariance", criterion10},
      {"determinism across worker counts", criterion11},
  };
  int failures = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " (" << criteria[i].first
              << "): " << o.detail << std::endl;
  }
  std::cout << (failures ? "FAILED " : "ALL PASSED ") << criteria.size() - failures << "/" << criteria.size()
            << std::endl;
  return failures ? 1 : 0;
}
