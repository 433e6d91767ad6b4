/*
 * tessellate - temporal semantic transfer for video clip sequences
 *
 * Licensed under the terms of the Apache 2.0 License.
 * See LICENSE file in the project root for terms.
 */
#pragma once

#include <Eigen/Dense>
#include <cstdint>

namespace tess {

// Rows are items (clips, samples), columns are feature dimensions.
// Row-major so that per-clip feature rows are contiguous for scans and I/O.
using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

using RefId = std::int64_t;

}  // namespace tess
