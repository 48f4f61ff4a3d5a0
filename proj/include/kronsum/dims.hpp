#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <string>

#include "kronsum/errors.hpp"

namespace kronsum {

using Index = Eigen::Index;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Space/time shape of a multiframe vector: p frames of q features each.
// Variables are stacked time-major, so variable (frame, feature) sits at
// frame * q + feature and block (i, j) of a covariance is the q x q
// cross-covariance of frames i and j.
struct StDims {
  Index p = 1;  // frames per window
  Index q = 1;  // features per frame

  StDims() = default;
  StDims(Index frames, Index features) : p(frames), q(features) {
    if (p < 1 || q < 1)
      throw ArgumentError("StDims requires p >= 1 and q >= 1, got p=" + std::to_string(p) +
                          " q=" + std::to_string(q));
  }

  Index dim() const { return p * q; }
  Index index(Index frame, Index feature) const { return frame * q + feature; }
  Index frame_of(Index var) const { return var / q; }
  Index feature_of(Index var) const { return var % q; }
  // Upper bound on the separation rank of a rearranged p^2 x q^2 matrix.
  Index max_rank() const { return std::min(p * p, q * q); }

  friend bool operator==(const StDims&, const StDims&) = default;
};

}  // namespace kronsum
