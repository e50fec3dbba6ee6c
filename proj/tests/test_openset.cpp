#include <doctest.h>

#include <cmath>

#include "owr/error.hpp"
#include "owr/openset.hpp"
#include "scenarios.hpp"
#include "test_util.hpp"

using namespace owr;
using namespace owr::openset;

TEST_CASE("moment oracle on the unit square") {
  Eigen::MatrixXd x(2, 4);
  x << 0, 2, 0, 2, 0, 0, 2, 2;
  const auto st = fit_single_class(class_id(0), x, 0.0);
  CHECK(st.mu.isApprox(Eigen::Vector2d(1, 1)));
  CHECK((st.sigma - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(st.n_samples == 4);
  CHECK(st.tau > 0);
}

TEST_CASE("full shrinkage is isotropic") {
  const Eigen::MatrixXd x = testutil::gaussian(4, 30, 3);
  const auto st = fit_single_class(class_id(0), x, 1.0);
  const double t = st.sigma.trace() / 4.0;
  CHECK((st.sigma - t * Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("degenerate class uses the guard covariance and floor threshold") {
  const Eigen::MatrixXd x = Eigen::MatrixXd::Constant(3, 5, 0.7);
  const auto st = fit_single_class(class_id(2), x, kDefaultShrinkage);
  CHECK(st.degenerate);
  CHECK(st.sigma.isApprox(kDegenerateCovariance * Eigen::MatrixXd::Identity(3, 3)));
  CHECK(st.tau == kThresholdFloor);
  const auto d = decide(Eigen::VectorXd::Constant(3, 0.7), std::vector<ClassStatistics>{st});
  CHECK(d.accepted);
}

TEST_CASE("under-sampled class names the class") {
  ClassBatches b;
  b[class_id(0)] = testutil::gaussian(3, 5, 1);
  b[class_id(4)] = testutil::gaussian(3, 1, 2);
  try {
    fit_class_stats(b);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("4") != std::string::npos);
  }
}

TEST_CASE("mahalanobis closed forms and dense-inverse oracle") {
  auto identity = make_statistics(class_id(0), Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3), 1.0, 10);
  CHECK(mahalanobis(Eigen::Vector3d(1, 0, 0), identity) == doctest::Approx(1.0));
  CHECK(mahalanobis(Eigen::Vector3d(0, 0, 0), identity) == 0.0);
  Eigen::Matrix2d diag;
  diag << 4, 0, 0, 1;
  auto st2 = make_statistics(class_id(0), Eigen::Vector2d(1, 1), diag, 1.0, 10);
  CHECK(mahalanobis(Eigen::Vector2d(3, 1), st2) == doctest::Approx(1.0));
  CHECK_THROWS_AS(mahalanobis(Eigen::Vector3d(1, 1, 1), st2), Error);

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Eigen::MatrixXd a = testutil::gaussian(6, 6, seed);
    const Eigen::MatrixXd sigma = a * a.transpose() + 0.5 * Eigen::MatrixXd::Identity(6, 6);
    const Eigen::VectorXd mu = testutil::gaussian(6, 1, seed + 100);
    const Eigen::VectorXd z = testutil::gaussian(6, 1, seed + 200);
    const auto st = make_statistics(class_id(0), mu, sigma, 1.0, 10);
    const double oracle = (z - mu).dot(sigma.inverse() * (z - mu));
    const double d = mahalanobis(z, st);
    CHECK(std::abs(d * d - oracle) <= 1e-8 * oracle);
    CHECK((st.sigma_inv * st.sigma - Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff() < 1e-8);
  }
  Eigen::Matrix2d bad;
  bad << 1, 2, 2, 1;
  CHECK_THROWS_AS(make_statistics(class_id(0), Eigen::Vector2d::Zero(), bad, 1.0, 2), Error);
}

TEST_CASE("precision times covariance is identity after shrinkage") {
  const Eigen::MatrixXd x = testutil::gaussian(16, 20, 9);  // n close to d: ill-conditioned raw S
  const auto st = fit_single_class(class_id(0), x, kDefaultShrinkage);
  CHECK((st.sigma_inv * st.sigma - Eigen::MatrixXd::Identity(16, 16)).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((st.sigma - st.sigma.transpose()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("three-sigma threshold arithmetic") {
  CHECK(calibrate_threshold(std::vector<double>{1, 1, 1, 1}) == 1.0);
  CHECK(calibrate_threshold(std::vector<double>{0, 2}) == doctest::Approx(4.0).epsilon(1e-15));
  CHECK(std::abs(calibrate_threshold(std::vector<double>{1, 2, 3, 4, 5}) - (3 + 3 * std::sqrt(2.0))) < 1e-12);
  CHECK_THROWS_AS(calibrate_threshold(std::vector<double>{1}), Error);
}

TEST_CASE("decide: center hit, rejection branch, ties to the lowest id") {
  auto a = make_statistics(class_id(0), Eigen::Vector2d(0, 0), Eigen::Matrix2d::Identity(), 2.0, 10);
  auto b = make_statistics(class_id(1), Eigen::Vector2d(4, 0), Eigen::Matrix2d::Identity(), 2.0, 10);
  const std::vector<ClassStatistics> both{a, b};
  CHECK(decide(Eigen::Vector2d(4, 0), both).predicted == class_id(1));
  const auto far = decide(Eigen::Vector2d(2, 50), both);
  CHECK_FALSE(far.accepted);
  CHECK(far.predicted == kUnknownClass);
  const auto tie = decide(Eigen::Vector2d(2, 0), both);
  CHECK(tie.nearest == class_id(0));
  CHECK_FALSE(tie.accepted);  // d = 2 is not strictly below tau = 2
  CHECK_THROWS_AS(decide(Eigen::Vector2d(0, 0), std::vector<ClassStatistics>{}), Error);
}

TEST_CASE("gate properties on Gaussian data") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    CHECK(scenarios::self_rejection_rate(seed) <= 0.02);
    CHECK(scenarios::self_rejection_rate(seed, 0.0) <= 0.02);
    CHECK(scenarios::far_class_rejection_rate(seed) >= 0.95);
    CHECK(scenarios::linear_invariance_error(seed) <= 1e-6);
  }
}
