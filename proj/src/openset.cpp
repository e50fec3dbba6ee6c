#include "owr/openset.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "owr/error.hpp"

namespace owr::openset {

ClassStatistics make_statistics(ClassId id, Eigen::VectorXd mu, Eigen::MatrixXd sigma, double tau,
                                std::size_t n_samples, bool degenerate) {
  require(mu.size() == sigma.rows() && sigma.rows() == sigma.cols(), ErrorKind::kInvalidInput,
          "class " + to_string(id) + ": mean/covariance shape mismatch");
  sigma = 0.5 * (sigma + sigma.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) {
    fail(ErrorKind::kNumerical, "class " + to_string(id) + ": covariance is not positive definite");
  }
  ClassStatistics st;
  st.class_id = id;
  st.chol_lower = llt.matrixL();
  const auto d = sigma.rows();
  st.sigma_inv = llt.solve(Eigen::MatrixXd::Identity(d, d));
  st.sigma_inv = 0.5 * (st.sigma_inv + st.sigma_inv.transpose());
  if (!st.sigma_inv.allFinite()) {
    fail(ErrorKind::kNumerical, "class " + to_string(id) + ": non-finite precision matrix");
  }
  st.mu = std::move(mu);
  st.sigma = std::move(sigma);
  st.tau = tau;
  st.n_samples = n_samples;
  st.degenerate = degenerate;
  return st;
}

double mahalanobis(const Embedding& z, const ClassStatistics& stats) {
  require(z.size() == stats.mu.size(), ErrorKind::kInvalidInput,
          "embedding dimension " + std::to_string(z.size()) + " does not match class " +
              to_string(stats.class_id) + " dimension " + std::to_string(stats.mu.size()));
  const Eigen::VectorXd diff = z - stats.mu;
  const Eigen::VectorXd y = stats.chol_lower.triangularView<Eigen::Lower>().solve(diff);
  return y.norm();
}

double calibrate_threshold(std::span<const double> d) {
  require(d.size() >= 2, ErrorKind::kInvalidInput,
          "threshold calibration needs at least 2 distances");
  const double n = static_cast<double>(d.size());
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
  double var = 0.0;
  for (double x : d) var += (x - mean) * (x - mean);
  var /= n;
  return mean + 3.0 * std::sqrt(var);
}

ClassStatistics fit_single_class(ClassId id, const Eigen::MatrixXd& samples, double shrinkage) {
  require(shrinkage >= 0.0 && shrinkage <= 1.0, ErrorKind::kConfig,
          "shrinkage must lie in [0,1]");
  const auto n = samples.cols();
  require(n >= 2, ErrorKind::kInvalidInput,
          "class " + to_string(id) + " is under-sampled: " + std::to_string(n) +
              " sample(s), need at least 2");
  require(samples.allFinite(), ErrorKind::kNumerical,
          "class " + to_string(id) + ": non-finite embeddings");
  const auto d = samples.rows();
  Eigen::VectorXd mu = samples.rowwise().mean();
  const Eigen::MatrixXd centered = samples.colwise() - mu;
  const Eigen::MatrixXd cov = centered * centered.transpose() / static_cast<double>(n);
  const double trace = cov.trace();

  if (!(trace > std::numeric_limits<double>::min())) {
    return make_statistics(id, std::move(mu),
                           kDegenerateCovariance * Eigen::MatrixXd::Identity(d, d),
                           kThresholdFloor, static_cast<std::size_t>(n), true);
  }

  Eigen::MatrixXd sigma = (1.0 - shrinkage) * cov;
  sigma.diagonal().array() += shrinkage * trace / static_cast<double>(d);
  auto st = make_statistics(id, std::move(mu), std::move(sigma), 0.0, static_cast<std::size_t>(n));

  std::vector<double> dist(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) dist[static_cast<std::size_t>(i)] = mahalanobis(samples.col(i), st);
  st.tau = std::max(calibrate_threshold(dist), kThresholdFloor);
  return st;
}

std::vector<ClassStatistics> fit_class_stats(const ClassBatches& batches, double shrinkage) {
  std::vector<ClassStatistics> out;
  out.reserve(batches.size());
  for (const auto& [id, samples] : batches) out.push_back(fit_single_class(id, samples, shrinkage));
  return out;
}

OpenSetDecision decide(const Embedding& z, std::span<const ClassStatistics> all_stats) {
  require(!all_stats.empty(), ErrorKind::kInvalidInput, "decide: no fitted classes");
  OpenSetDecision out;
  out.distances.reserve(all_stats.size());
  double best = std::numeric_limits<double>::infinity();
  const ClassStatistics* winner = nullptr;
  for (const auto& st : all_stats) {
    const double d = mahalanobis(z, st);
    out.distances.emplace_back(st.class_id, d);
    if (d < best || (d == best && winner && to_int(st.class_id) < to_int(winner->class_id))) {
      best = d;
      winner = &st;
    }
  }
  if (!winner) fail(ErrorKind::kNumerical, "decide: all distances are NaN");
  out.nearest = winner->class_id;
  out.accepted = best < winner->tau;
  out.predicted = out.accepted ? winner->class_id : kUnknownClass;
  return out;
}

}  // namespace owr::openset
