#include "owr/pca.hpp"

#include <algorithm>

#include "owr/error.hpp"

namespace owr::pca {

Eigen::MatrixXd PcaModel::transform(const Eigen::MatrixXd& x) const {
  return (x.rowwise() - mean) * components;
}

Eigen::MatrixXd PcaModel::reconstruct(const Eigen::MatrixXd& scores) const {
  return (scores * components.transpose()).rowwise() + mean;
}

PcaModel fit(const Eigen::MatrixXd& x, Eigen::Index m) {
  require(x.rows() >= 2, ErrorKind::kInvalidInput, "PCA needs at least 2 samples");
  require(m >= 1 && m <= x.cols(), ErrorKind::kInvalidInput, "PCA target dimension out of range");
  PcaModel model;
  model.mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - model.mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(x.rows());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  require(eig.info() == Eigen::Success, ErrorKind::kNumerical, "PCA eigendecomposition failed");

  const auto d = x.cols();
  // Eigen returns ascending order.
  model.eigenvalues = eig.eigenvalues().reverse().cwiseMax(0.0);
  model.components.resize(d, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - j);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    model.components.col(j) = v;
  }
  const double total = model.eigenvalues.sum();
  model.explained_ratio = total > 0.0 ? Eigen::VectorXd(model.eigenvalues / total)
                                      : Eigen::VectorXd::Zero(d);
  return model;
}

}  // namespace owr::pca
