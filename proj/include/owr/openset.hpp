#pragma once

#include <map>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "owr/types.hpp"

namespace owr::openset {

inline constexpr double kDefaultShrinkage = 0.1;
/// Covariance assigned to a class whose samples are all identical.
inline constexpr double kDegenerateCovariance = 1e-6;
/// Threshold assigned to such a class, and the lower bound on any threshold.
inline constexpr double kThresholdFloor = 1e-3;

/// Gaussian model of one class in embedding space plus its acceptance radius.
struct ClassStatistics {
  ClassId class_id{};
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;
  Eigen::MatrixXd sigma_inv;
  Eigen::MatrixXd chol_lower;  // sigma = L L^T
  double tau = 0.0;
  std::size_t n_samples = 0;
  bool degenerate = false;
};

/// Factorizes `sigma` and caches the precision. Throws kNumerical if sigma is not SPD.
ClassStatistics make_statistics(ClassId id, Eigen::VectorXd mu, Eigen::MatrixXd sigma, double tau,
                                std::size_t n_samples, bool degenerate = false);

/// Per-class embedding batches, one column per sample.
using ClassBatches = std::map<ClassId, Eigen::MatrixXd>;

/// mu = sample mean; sigma = (1-lambda) S + lambda (tr S / D) I with S the
/// population covariance; tau from the three-sigma rule over the class's own
/// distances. Output is sorted by class id. Classes with < 2 samples throw.
std::vector<ClassStatistics> fit_class_stats(const ClassBatches& batches,
                                             double shrinkage = kDefaultShrinkage);

ClassStatistics fit_single_class(ClassId id, const Eigen::MatrixXd& samples, double shrinkage);

/// sqrt((z-mu)^T Sigma^-1 (z-mu)) via the cached Cholesky factor.
double mahalanobis(const Embedding& z, const ClassStatistics& stats);

/// tau = mean + 3 * population std. Needs at least two distances.
double calibrate_threshold(std::span<const double> within_class_distances);

struct OpenSetDecision {
  ClassId predicted = kUnknownClass;
  ClassId nearest = kUnknownClass;
  std::vector<std::pair<ClassId, double>> distances;
  bool accepted = false;
};

/// Nearest class by Mahalanobis distance (ties to the lowest id); accepted iff
/// that distance is strictly below the class's tau.
OpenSetDecision decide(const Embedding& z, std::span<const ClassStatistics> all_stats);

}  // namespace owr::openset
