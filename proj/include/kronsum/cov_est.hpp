#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kronsum/dims.hpp"
#include "kronsum/kron_core.hpp"
#include "kronsum/masked_fit.hpp"

namespace kronsum {

// Ordered frames, one row of q features per frame.
struct FrameSeries {
  Mat frames;  // L x q
  std::optional<double> frame_rate;

  Index length() const { return frames.rows(); }
  Index width() const { return frames.cols(); }
};

struct SampleCovariance {
  Mat matrix;  // pq x pq, exactly symmetric
  Vec mean;
  Index n_samples = 0;
  StDims dims;
};

enum class FitDomain { covariance, correlation };

struct KronSumModel {
  std::vector<KronFactorPair<double>> factors;
  std::optional<Vec> diag_load;  // length pq
  StDims dims;
  FitDomain fit_domain = FitDomain::covariance;
  std::optional<Vec> scale;  // standard deviations, present iff correlation domain
  std::vector<std::string> warnings;
  std::vector<double> objective_trace;  // masked fits only

  Index rank() const { return static_cast<Index>(factors.size()); }
  // sum_i T_i (x) S_i, in the fit domain, without the diagonal load.
  Mat kron_part() const;
  // Dense covariance: kron part plus load, rescaled by `scale` when present.
  Mat assemble() const;
};

// n = L - p + 1 overlapping windows, row m = [frame_m; ...; frame_{m+p-1}].
Mat sliding_window_samples(const FrameSeries& series, const StDims& dims);

// Biased (1/n) covariance about the column mean.
SampleCovariance sample_covariance(const Mat& samples, const StDims& dims);
SampleCovariance sample_covariance(const Mat& samples);

struct Correlation {
  Mat matrix;
  Vec scale;  // sqrt(diag)
};

Correlation to_correlation(const Mat& matrix);
Correlation to_correlation(const SampleCovariance& sc);

// Frobenius-optimal rank-r Kronecker sum via the SVD of the rearrangement.
KronSumModel estimate_kron_ls(const SampleCovariance& sc, Index r);

struct DlOptions {
  bool use_correlation = true;
  double extra_diag = 0.0;  // added to every diagonal load entry
  AlsOptions als;
};

// Kronecker sum fitted with the covariance diagonal treated as don't-care,
// plus a nonnegative diagonal load absorbing the remaining variance.
KronSumModel estimate_kron_dl(const SampleCovariance& sc, Index r, const DlOptions& opts = {});

// matrix + lambda * tr(matrix) / (pq) * I
Mat regularized_scm(const SampleCovariance& sc, double lambda);

struct KronSpectrum {
  std::vector<double> rms_energies;  // sigma_i / sigma_1
  double pct_rmse_first = 0.0;       // 100 ||R - T1 (x) S1||_F / ||R||_F
};

KronSpectrum kron_spectrum(const SampleCovariance& sc, Index k);

}  // namespace kronsum
