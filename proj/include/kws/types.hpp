#pragma once

#include <Eigen/Dense>

namespace kws {

/// Row-major dense matrix; rows are time frames throughout the library.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

inline constexpr int kSampleRate = 16000;

}  // namespace kws
