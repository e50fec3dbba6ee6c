#pragma once

#include <Eigen/Dense>

namespace owr::pca {

/// Principal axes of a sample matrix (one row per sample).
struct PcaModel {
  Eigen::RowVectorXd mean;
  Eigen::MatrixXd components;      // d x m, columns ordered by decreasing variance
  Eigen::VectorXd eigenvalues;     // all d population-covariance eigenvalues, descending
  Eigen::VectorXd explained_ratio; // eigenvalues / sum, descending

  Eigen::MatrixXd transform(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd reconstruct(const Eigen::MatrixXd& scores) const;
};

/// Each retained axis is oriented so that its largest-magnitude loading is positive.
PcaModel fit(const Eigen::MatrixXd& x, Eigen::Index m);

}  // namespace owr::pca
