#pragma once

#include <optional>
#include <span>
#include <vector>

#include "kronsum/dims.hpp"
#include "kronsum/predictor.hpp"

namespace kronsum {

// as_printed: the bound exactly as the complex-data formula is written.
// real_gaussian: real-valued data; twice the bound, with the covariance
// derivative restricted to symmetric perturbations.
enum class CrbConvention { as_printed, real_gaussian };

struct CrbInput {
  Mat temporal;  // p x p, PD
  Mat spatial;   // q x q, PD
  // Optional linear structure vec(T) = P_T theta_T, vec(S) = P_S theta_S.
  std::optional<Mat> struct_T;
  std::optional<Mat> struct_S;
  CrbConvention convention = CrbConvention::real_gaussian;
};

struct CrbOptions {
  // Dense bounds are ((pq)^2)^2; larger problems must opt in.
  Index max_dim = 64;
  bool allow_large = false;
};

struct RmsePoint {
  double n = 0.0;
  double rmse = 0.0;
};

enum class RmseNormalization { total, per_variable };

struct CrbReport {
  Mat f_sigma;  // bound on n Cov[vec(Sigma_hat)]
  Mat f_a;      // bound on n Cov[vec(A_hat)]
  Mat err_cov;  // Cov[e] for the supplied sample count (n = 1 when none)
  Mat cond_cov;
  std::vector<RmsePoint> rmse_curve;
};

// Fisher information of the Kronecker parameters [theta_T; theta_S] (the
// matrix that gets pseudo-inverted), in the as_printed convention.
Mat kron_fim_middle(const CrbInput& input);

// Per-sample CRB on vec(T (x) S).
Mat fisher_crb_sigma(const CrbInput& input, const CrbOptions& opts = {});

// Unstructured covariance: Sigma (x) Sigma (as_printed) or
// (I + K)(Sigma (x) Sigma) (real_gaussian), by closed form.
Mat crb_unstructured(const Mat& sigma, CrbConvention convention, const CrbOptions& opts = {});

// d vec(A) / d vec(Sigma), rows ordered as vec(A) (column-major over
// |y| x |x|), columns over the full pq x pq vec(Sigma) without symmetry
// coupling.
Mat predictor_jacobian(const Mat& sigma, const PredictionTask& task);

// J F_sigma J^T
Mat crb_predictor_coeffs(const Mat& f_sigma, const Mat& jacobian);

// Cov[e]_ij = sum_{k,l} (f_a / n)[(i,k), (j,l)] Sigma_x[k,l]
Mat asymptotic_error_cov(const Mat& f_a, const Mat& sigma_x, double n);

// sqrt(tr Cov[e](n) + tr cond_cov), divided by |y| under the square root
// for per_variable normalization.
std::vector<RmsePoint> predicted_rmse_curve(const Mat& f_a, const Mat& sigma_x, const Mat& cond_cov,
                                            std::span<const double> n_grid,
                                            RmseNormalization norm = RmseNormalization::total);

// Full pipeline for a truth covariance and task. `kron` selects the
// Kronecker bound (from its factors) over the unstructured one.
CrbReport crb_report(const Mat& sigma, const std::optional<CrbInput>& kron, const PredictionTask& task,
                     std::span<const double> n_grid, CrbConvention convention,
                     RmseNormalization norm = RmseNormalization::total,
                     std::optional<double> n_samples = std::nullopt, const CrbOptions& opts = {});

}  // namespace kronsum
