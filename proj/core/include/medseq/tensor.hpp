// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

namespace medseq {

/// Dense row-major matrix used for every tensor in the library. Rows are
/// tokens (or samples); columns are features.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const Matrix>;
using Logits = Eigen::RowVector3d;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace medseq
