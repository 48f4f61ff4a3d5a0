#pragma once

#include <cstdint>
#include <random>

#include "kronsum/dims.hpp"

namespace kronsum {

using Rng = std::mt19937_64;

// Per-trial seed derivation used by every Monte Carlo loop.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t trial) { return base ^ trial; }

// rows x cols i.i.d. N(0, 1), filled row by row.
Mat standard_normal(Index rows, Index cols, Rng& rng);

// Returns F with F F^T = sigma. Cholesky when sigma is positive definite,
// eigenvalue factorization for semidefinite input. Throws DataError when
// sigma is indefinite beyond rounding.
Mat gaussian_factor(const Mat& sigma);

// n x d matrix of i.i.d. draws from N(mean, sigma); deterministic in seed.
Mat gaussian_sample(const Mat& sigma, const Vec& mean, Index n, std::uint64_t seed);

// Same, drawing from an existing generator with a precomputed factor.
Mat gaussian_sample(const Mat& factor, const Vec& mean, Index n, Rng& rng);

}  // namespace kronsum
