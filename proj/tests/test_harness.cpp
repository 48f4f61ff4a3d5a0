#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "kronsum/harness.hpp"
#include "kronsum/io.hpp"
#include "test_main.hpp"

using namespace kronsum;
using namespace testutil;
using nlohmann::json;

namespace {

Mat ar1(Index p, double rho) {
  Mat t(p, p);
  for (Index i = 0; i < p; ++i)
    for (Index j = 0; j < p; ++j) t(i, j) = std::pow(rho, std::abs(static_cast<double>(i - j)));
  return t;
}

json kron_truth_json(const Mat& t, const Mat& s) {
  return json{{"kind", "kronecker"}, {"temporal", io::matrix_to_json(t)}, {"spatial", io::matrix_to_json(s)}};
}

json base_config() {
  std::mt19937_64 rng(5);
  return json{{"mode", "prediction"},
              {"truth", kron_truth_json(ar1(3, 0.8), random_spd(2, rng))},
              {"task", {{"type", "forward"}, {"history", 2}, {"ahead", 1}}},
              {"estimators", {"scm", "scm_ridge", "kron_ls", "kron_dl"}},
              {"n_grid", {10, 40, 400}},
              {"trials", 40},
              {"eval_samples", 100},
              {"seed", 9}};
}

std::string all_csv(const ExperimentResult& r) {
  std::string s;
  for (const auto& c : r.curves) s += c.label + "\n" + curve_to_csv(c);
  if (r.omniscient) s += curve_to_csv(*r.omniscient);
  return s;
}

}  // namespace

TEST_CASE("config parsing and validation") {
  const ExperimentConfig c = parse_config(base_config());
  CHECK(c.dims == StDims(3, 2));
  CHECK(c.estimators.size() == 4);
  CHECK(c.estimators[1].lambda == doctest::Approx(0.1));
  CHECK(c.estimators[3].lambda == 0.0);
  CHECK(c.truth->kron.has_value());

  auto with = [](const char* key, json value) {
    json j = base_config();
    j[key] = std::move(value);
    return j;
  };
  CHECK_THROWS_AS(parse_config(with("n_grid", json::array())), ArgumentError);
  CHECK_THROWS_AS(parse_config(with("n_grid", {10, 10})), ArgumentError);
  CHECK_THROWS_AS(parse_config(with("trials", 0)), ArgumentError);
  CHECK_THROWS_AS(parse_config(with("estimators", {{{"name", "kron_ls"}, {"rank", 5}}})), ArgumentError);
  CHECK_THROWS_AS(parse_config(with("workers", 3)), ArgumentError);
  try {
    parse_config(with("estimators", {"scm", "shrinkage"}));
    FAIL("expected ArgumentError");
  } catch (const ArgumentError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("shrinkage") != std::string::npos);
    CHECK(msg.find("kron_dl") != std::string::npos);
  }
}

TEST_CASE("synthetic truth generator") {
  const json spec{{"kind", "synthetic"}, {"p", 3}, {"q", 4}, {"seed", 1},
                  {"factors", {{{"temporal_ar", 0.5}, {"spatial_condition", 50}}}}};
  const Truth a = resolve_truth(spec);
  const Truth b = resolve_truth(spec);
  CHECK(a.sigma == b.sigma);
  REQUIRE(a.kron.has_value());
  CHECK(rel_err(a.sigma, brute_kron(a.kron->temporal, a.kron->spatial)) < 1e-14);
  CHECK(rel_err(a.kron->temporal, ar1(3, 0.5)) < 1e-15);
  Eigen::SelfAdjointEigenSolver<Mat> eig(a.kron->spatial);
  CHECK(eig.eigenvalues().maxCoeff() / eig.eigenvalues().minCoeff() == doctest::Approx(50.0).epsilon(1e-9));

  json noisy = spec;
  noisy["diag_noise"] = {0.1, 1.0};
  const Truth c = resolve_truth(noisy);
  CHECK_FALSE(c.kron.has_value());
  const Vec extra = (c.sigma - a.sigma).diagonal();
  CHECK((c.sigma - a.sigma - Mat(extra.asDiagonal())).norm() < 1e-12);
  for (Index f = 1; f < 3; ++f) CHECK((extra.segment(4 * f, 4) - extra.head(4)).norm() == 0.0);
  CHECK(extra.minCoeff() >= 0.1);
  CHECK(extra.maxCoeff() <= 1.0);

  json pert = spec;
  pert["non_kron_fraction"] = 0.1;
  const Truth d = resolve_truth(pert);
  CHECK((d.sigma - a.sigma).norm() / a.sigma.norm() == doctest::Approx(0.1).epsilon(1e-9));

  CHECK_THROWS_AS(resolve_truth(json{{"kind", "mystery"}}), ArgumentError);
}

TEST_CASE("prediction sweep is deterministic for any worker count") {
  const ExperimentConfig c = parse_config(base_config());
  const ExperimentResult a = run_prediction_sweep(c, 1);
  const ExperimentResult b = run_prediction_sweep(c, 1);
  const ExperimentResult d = run_prediction_sweep(c, 4);
  CHECK(result_to_json(a).dump() == result_to_json(b).dump());
  CHECK(all_csv(a) == all_csv(d));

  json one = base_config();
  one["trials"] = 1;
  const ExperimentConfig c1 = parse_config(one);
  CHECK(result_to_json(run_prediction_sweep(c1)).dump() == result_to_json(run_prediction_sweep(c1, 3)).dump());

  json other = base_config();
  other["seed"] = 10;
  CHECK(all_csv(run_prediction_sweep(parse_config(other))) != all_csv(a));
}

TEST_CASE("omniscient floor and consistency") {
  json j = base_config();
  j["n_grid"] = {10, 50, 5000};
  j["trials"] = 60;
  const ExperimentResult r = run_prediction_sweep(parse_config(j));
  REQUIRE(r.omniscient.has_value());
  const double floor = r.omniscient->points.front().mean_rmse;
  for (const auto& p : r.omniscient->points) CHECK(p.mean_rmse == floor);
  for (const auto& c : r.curves) {
    for (const auto& p : c.points) {
      CHECK(floor <= p.mean_rmse + 3.0 * p.std_error);
      CHECK(p.failure_rate == 0.0);
    }
    // every estimator's model class contains a Kronecker truth
    CHECK(c.points.back().mean_rmse <= 1.05 * floor);
  }
  CHECK(r.curve("kron_ls_r1").at(10).mean_rmse < r.curve("scm").at(10).mean_rmse);
}

TEST_CASE("failed fits are scored at the zeroth-order RMSE") {
  json j = base_config();
  j["estimators"] = {"scm", "zeroth_order"};
  j["n_grid"] = {1, 100};
  const ExperimentResult r = run_prediction_sweep(parse_config(j));
  const CurvePoint& bad = r.curve("scm").at(1);
  CHECK(bad.failure_rate == 1.0);
  CHECK(bad.mean_rmse == r.curve("zeroth_order").at(1).mean_rmse);
  CHECK(r.curve("scm").at(100).failure_rate == 0.0);
}

TEST_CASE("partial sweep") {
  json j = base_config();
  j["mode"] = "partial";
  j["task"] = {{"type", "partial"}, {"group1", {1}}, {"t1", 1}, {"t2", 0}};
  j["estimators"] = {"scm_ridge", "kron_dl"};
  const ExperimentConfig c = parse_config(j);
  const ExperimentResult r = run_partial_sweep(c);
  const Curve& zeroth = r.curve("zeroth_order");
  for (const auto& p : zeroth.points) CHECK(p.mean_rmse == zeroth.points.front().mean_rmse);

  SUBCASE("all features in group1 reduces to the forward task") {
    json part = base_config();
    part["task"] = {{"type", "partial"}, {"group1", {1, 2}}, {"t1", 1}, {"t2", 0}};
    json fwd = base_config();
    const ExperimentConfig cp = parse_config(part), cf = parse_config(fwd);
    CHECK(cp.task.x_idx == cf.task.x_idx);
    CHECK(cp.task.y_idx == cf.task.y_idx);
    const ExperimentResult rp = run_partial_sweep(cp);
    const ExperimentResult rf = run_prediction_sweep(cf);
    for (const auto& c2 : rf.curves) CHECK(curve_to_csv(rp.curve(c2.label)) == curve_to_csv(c2));
  }
}

TEST_CASE("rank sweep is keyed by rank") {
  std::mt19937_64 rng(8);
  json j = base_config();
  j["mode"] = "rank";
  j["truth"] = kron_truth_json(random_spd(2, rng), random_spd(2, rng));
  j["task"] = {{"type", "forward"}, {"history", 1}, {"ahead", 1}};
  j["r_list"] = {1, 4};
  j["n_grid"] = {5000};
  j["estimators"] = json::array();
  const ExperimentConfig c = parse_config(j);
  const ExperimentResult r = run_rank_sweep(c, c.r_list);
  CHECK(r.curve("kron_ls_r4").rank == 4);
  CHECK(r.curve("kron_dl_r1").rank == 1);
  CHECK_FALSE(r.curve("scm").rank.has_value());
  const double floor = r.omniscient->points.front().mean_rmse;
  CHECK(r.curve("kron_ls_r4").points.front().mean_rmse <= 1.05 * floor);
  CHECK(r.curve("kron_dl_r4").points.front().mean_rmse <= 1.05 * floor);
  CHECK_THROWS_AS(run_rank_sweep(c, {5}), ArgumentError);
}

TEST_CASE("CRB overlay curves") {
  json j = base_config();
  j["crb_overlay"] = true;
  const ExperimentResult r = run_prediction_sweep(parse_config(j));
  const Curve& kron = r.curve("crb_kron");
  const Curve& unst = r.curve("crb_unstructured");
  for (size_t i = 0; i < kron.points.size(); ++i) CHECK(kron.points[i].mean_rmse <= unst.points[i].mean_rmse);
  // both approach the omniscient floor sqrt(tr Cov[y|x] / |y|)
  const Truth t = resolve_truth(base_config()["truth"]);
  const LinearPredictor oracle = fit_predictor(t.sigma, t.mean, parse_config(j).task);
  const double floor = std::sqrt(oracle.cond_cov.trace() / 2.0);
  CHECK(kron.points.front().mean_rmse > floor);
  CHECK(unst.points.back().mean_rmse < floor * 1.01);
}

TEST_CASE("simulated series has the window covariance") {
  std::mt19937_64 rng(4);
  const StDims dims(3, 2);
  const Mat sigma = brute_kron(ar1(3, 0.7), random_spd(2, rng));
  Rng gen(12);
  const FrameSeries s = simulate_series(sigma, Vec::Zero(6), dims, 200000, gen);
  const SampleCovariance sc = sample_covariance(sliding_window_samples(s, dims), dims);
  CHECK(rel_err(sc.matrix, sigma) < 0.03);
}

TEST_CASE("sliding-window training mode") {
  json j = base_config();
  j["training"] = "sliding_window";
  const ExperimentConfig c = parse_config(j);
  const ExperimentResult a = run_prediction_sweep(c, 1);
  CHECK(all_csv(a) == all_csv(run_prediction_sweep(c, 2)));
  CHECK(all_csv(a) != all_csv(run_prediction_sweep(parse_config(base_config()))));
}

TEST_CASE("series pipeline") {
  const StDims dims(3, 2);
  json j = base_config();
  j.erase("truth");
  j["dims"] = {{"p", 3}, {"q", 2}};
  j["n_grid"] = {10, 50};
  j["estimators"] = {"scm", "kron_ls", "zeroth_order"};

  SUBCASE("constant velocity gives zero error") {
    FrameSeries s;
    s.frames.resize(200, 2);
    for (Index t = 0; t < 200; ++t) s.frames.row(t) << 1.0 + 0.5 * t, -2.0 + 0.25 * t;
    ExperimentConfig c = parse_config(j);
    c.series = s;
    c.ahead = 2;
    c.eval_frames = 20;
    const ExperimentResult r = series_pipeline(s, c);
    for (const auto& curve : r.curves)
      for (const auto& p : curve.points) CHECK(p.mean_rmse == doctest::Approx(0.0).scale(1.0));
  }

  SUBCASE("single evaluation frame matches a direct fit") {
    std::mt19937_64 rng(3);
    FrameSeries s;
    s.frames = random_matrix(120, 2, rng);
    ExperimentConfig c = parse_config(j);
    c.ahead = 1;
    c.eval_frames = 1;
    c.n_grid = {30};
    c.estimators = {parse_estimator("scm")};
    const ExperimentResult r = series_pipeline(s, c);

    const Mat w = sliding_window_samples(zeroth_order_residuals(s, 1), dims);
    const Index m = w.rows() - 1;
    // x = frames 0..1 of window m; the last fully observed window is m - 1
    const SampleCovariance sc = sample_covariance(w.middleRows(m - 30, 30), dims);
    const LinearPredictor pred = fit_predictor(sc.matrix, sc.mean, c.task);
    const Vec x = w.row(m).head(4).transpose();
    const Vec y = w.row(m).tail(2).transpose();
    const double expected = (y - predict(pred, x)).norm() / std::sqrt(2.0);
    CHECK(r.curve("scm").points.front().mean_rmse == doctest::Approx(expected).epsilon(1e-12));
  }

  SUBCASE("insufficient data") {
    std::mt19937_64 rng(3);
    FrameSeries s;
    s.frames = random_matrix(40, 2, rng);
    ExperimentConfig c = parse_config(j);
    c.ahead = 1;
    c.eval_frames = 10;
    CHECK_THROWS_AS(series_pipeline(s, c), DataError);
  }

  SUBCASE("ordering agrees with the Monte Carlo sweep") {
    const Truth truth = resolve_truth(base_config()["truth"]);
    Rng gen(77);
    const Index length = 3000;
    const FrameSeries resid = simulate_series(truth.sigma, truth.mean, dims, length, gen);
    // invert the K = 1 residual transform: f_t = r_t + 2 f_{t-1} - f_{t-2}
    FrameSeries s;
    s.frames = Mat::Zero(length + 2, 2);
    for (Index t = 2; t < length + 2; ++t)
      s.frames.row(t) = resid.frames.row(t - 2) + 2.0 * s.frames.row(t - 1) - s.frames.row(t - 2);
    CHECK((zeroth_order_residuals(s, 1).frames - resid.frames).cwiseAbs().maxCoeff() < 1e-6);
    ExperimentConfig c = parse_config(j);
    c.ahead = 1;
    c.eval_frames = 1500;
    c.n_grid = {10};
    const ExperimentResult walk = series_pipeline(s, c);
    const ExperimentResult mc = run_prediction_sweep(parse_config(base_config()));
    CHECK(walk.curve("kron_ls_r1").points.front().mean_rmse < walk.curve("scm").points.front().mean_rmse);
    CHECK(mc.curve("kron_ls_r1").at(10).mean_rmse < mc.curve("scm").at(10).mean_rmse);
  }
}
