#include <doctest.h>

#include <cmath>
#include <random>

#include "owr/discovery.hpp"
#include "owr/error.hpp"
#include "scenarios.hpp"
#include "test_util.hpp"

using namespace owr;
using namespace owr::discovery;

namespace {

std::vector<scenarios::Instance> corpus() {
  return scenarios::load_instances(std::string(OWR_TEST_DATA_DIR) + "/small_2d_instances.txt");
}

Eigen::MatrixXd blobs(int per, const std::vector<Eigen::Vector2d>& centers, double sd, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sd);
  Eigen::MatrixXd x(per * static_cast<int>(centers.size()), 2);
  for (std::size_t c = 0; c < centers.size(); ++c)
    for (int i = 0; i < per; ++i) {
      const auto r = static_cast<Eigen::Index>(c) * per + i;
      x(r, 0) = centers[c](0) + n(rng);
      x(r, 1) = centers[c](1) + n(rng);
    }
  return x;
}

}  // namespace

TEST_CASE("preprocess z-scores and zeroes constant columns") {
  Eigen::MatrixXd z(4, 3);
  z << 1, 5, 2, 2, 5, 4, 3, 5, 6, 4, 5, 8;
  const auto p = preprocess(z);
  CHECK_FALSE(p.pca_applied);
  CHECK(p.data.col(1).cwiseAbs().maxCoeff() == 0.0);
  for (int c : {0, 2}) {
    CHECK(std::abs(p.data.col(c).mean()) < 1e-12);
    CHECK(std::abs(p.data.col(c).squaredNorm() / 4.0 - 1.0) < 1e-12);
  }
  DiscoveryConfig cfg;
  cfg.pca_threshold_dim = 2;
  cfg.pca_target_dim = 2;
  const auto q = preprocess(z, cfg);
  CHECK(q.pca_applied);
  CHECK(q.data.cols() == 2);
}

TEST_CASE("kmeans closed cases") {
  Eigen::MatrixXd x(6, 2);
  x << 0, 0, 0, 0, 0, 0, 10, 10, 10, 10, 10, 10;
  const auto r = kmeans_fit(x, 2, 4, 1);
  CHECK(r.inertia == 0.0);
  CHECK(r.labels[0] != r.labels[3]);
  CHECK(r.centroids.row(r.labels[0]).isApprox(Eigen::RowVector2d(0, 0)));
  CHECK(r.centroids.row(r.labels[3]).isApprox(Eigen::RowVector2d(10, 10)));

  const Eigen::MatrixXd y = testutil::gaussian(30, 3, 4);
  const auto one = kmeans_fit(y, 1, 1, 0);
  CHECK(one.centroids.row(0).isApprox(y.colwise().mean()));
  const double total = (y.rowwise() - y.colwise().mean()).squaredNorm();
  CHECK(std::abs(one.inertia - total) < 1e-9 * total);

  CHECK_THROWS_AS(kmeans_fit(y, 31, 1, 0), Error);
  CHECK_THROWS_AS(kmeans_fit(Eigen::MatrixXd(0, 2), 1, 1, 0), Error);
}

TEST_CASE("kmeans inertia history and restarts") {
  const Eigen::MatrixXd x = blobs(40, {{0, 0}, {3, 0}, {0, 3}, {3, 3}}, 0.9, 5);
  const auto r = kmeans_fit(x, 4, 6, 9);
  for (std::size_t i = 1; i < r.inertia_history.size(); ++i) CHECK(r.inertia_history[i] <= r.inertia_history[i - 1]);
  for (double v : r.restart_inertia) CHECK(r.inertia <= v);
  CHECK(std::abs(within_ss(x, r.labels, r.centroids) - r.inertia) < 1e-9 * r.inertia);
}

TEST_CASE("kmeans reaches the exhaustive optimum on the small-instance corpus") {
  const auto instances = corpus();
  REQUIRE(instances.size() >= 60);
  const auto s = scenarios::kmeans_vs_brute_force(instances);
  CHECK(s.mismatches == 0);
  CHECK(s.worst_relative_gap <= 1e-9);
}

TEST_CASE("gmm single component is the sample moments") {
  const Eigen::MatrixXd x = testutil::gaussian(50, 2, 6);
  const auto g = gmm_fit(x, 1, 50, 1e-10, 0);
  const Eigen::RowVectorXd mu = x.colwise().mean();
  CHECK(g.means.row(0).isApprox(mu, 1e-12));
  const Eigen::MatrixXd c = x.rowwise() - mu;
  const Eigen::MatrixXd cov = c.transpose() * c / 50.0 + g.ridge * Eigen::MatrixXd::Identity(2, 2);
  CHECK((g.covariances[0] - cov).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(gmm_fit(x, 51, 10, 1e-6, 0), Error);
}

TEST_CASE("gmm recovers separated blob means") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Eigen::MatrixXd x = blobs(2000, {{0, 0}, {8, 8}}, 1.0, seed);
    const auto g = gmm_fit(x, 2, 200, 1e-10, seed);
    const int a = g.means(0, 0) < g.means(1, 0) ? 0 : 1;
    CHECK((g.means.row(a) - Eigen::RowVector2d(0, 0)).norm() < 0.1);
    CHECK((g.means.row(1 - a) - Eigen::RowVector2d(8, 8)).norm() < 0.1);
    for (const auto& c : g.covariances) CHECK(Eigen::LLT<Eigen::MatrixXd>(c).info() == Eigen::Success);
  }
}

TEST_CASE("EM objective never decreases") {
  const auto s = scenarios::em_monotonicity(corpus(), 10);
  CHECK(s.runs > 40);
  CHECK(s.worst_drop <= 1e-9);
}

TEST_CASE("composite score arithmetic") {
  CHECK(std::abs(composite_score(0.444, 1399.6, 0.947, 0.698) - 0.770) <= 0.001);
  CHECK(std::abs(composite_score(0.388, 1222.7, 1.234, 0.702) - 0.682) <= 0.001);
  CHECK(composite_score(0, 0, 0, 0) == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("validity scores recompose and reject a single cluster") {
  const Eigen::MatrixXd x = blobs(30, {{0, 0}, {5, 0}, {0, 5}}, 0.7, 2);
  const auto r = kmeans_fit(x, 3, 3, 1);
  const auto v = validity_scores(x, r.labels, r.centroids, r.inertia);
  CHECK(v.k == 3);
  CHECK(std::abs(v.composite - composite_score(v.silhouette, v.calinski_harabasz, v.davies_bouldin,
                                               v.explained_variance)) < 1e-9);
  CHECK(v.silhouette > 0.5);
  CHECK(v.explained_variance > 0.8);
  std::vector<int> one(static_cast<std::size_t>(x.rows()), 0);
  CHECK_THROWS_AS(validity_scores(x, one, label_means(x, one, 1), 1.0), Error);
}

TEST_CASE("silhouette matches the hand oracle") {
  const auto [mean, oracle] = scenarios::collinear_silhouette();
  CHECK(std::abs(mean - oracle) <= 1e-6);
  CHECK(mean == doctest::Approx(0.990).epsilon(0.001));
}

TEST_CASE("elbow oracle cases") {
  const std::vector<int> k6{1, 2, 3, 4, 5, 6};
  const std::vector<double> a{100, 50, 25, 24, 23, 22};
  CHECK(detect_elbow(k6, a).k == 3);
  CHECK_FALSE(detect_elbow(k6, a).warning);
  const std::vector<int> k4{1, 2, 3, 4};
  const std::vector<double> b{90, 30, 28, 27};
  CHECK(detect_elbow(k4, b).k == 2);
  const std::vector<double> lin{60, 50, 40, 30, 20, 10};
  const auto l = detect_elbow(k6, lin);
  CHECK(l.k == 1);
  CHECK(l.warning);
  const std::vector<double> flat(6, 5.0);
  CHECK(detect_elbow(k6, flat).k == 1);
  CHECK(detect_elbow(k6, flat).warning);
  CHECK(detect_elbow(k6, a).k == detect_elbow(k6, a).k);
  CHECK_THROWS_AS(detect_elbow(std::vector<int>{1, 2}, std::vector<double>{2, 1}), Error);
}

TEST_CASE("selection rule branches") {
  auto s = select_k_rule(3, 0.72, 5, 0.77);
  CHECK(s.k_star == 3);
  CHECK(s.rule == SelectionRule::kElbow);
  s = select_k_rule(3, 0.60, 5, 0.77);
  CHECK(s.k_star == 5);
  CHECK(s.rule == SelectionRule::kScore);
  s = select_k_rule(4, 0.10, 4, 0.90);
  CHECK(s.k_star == 4);
  CHECK(s.k_elbow == 4);
  CHECK(s.k_score == 4);
  s = select_k_rule(2, 0.9 * 0.5, 3, 0.5);  // exactly at the ratio
  CHECK(s.k_star == 2);
}

TEST_CASE("select_k over a score table") {
  std::vector<ValidityScores> per_k;
  const double inertia[] = {100, 50, 25, 24, 23, 22};
  const double q[] = {0.2, 0.5, 0.72, 0.77, 0.6, 0.5};
  for (int i = 0; i < 6; ++i) {
    ValidityScores v;
    v.k = i + 1;
    v.inertia = inertia[i];
    v.composite = q[i];
    per_k.push_back(v);
  }
  auto s = select_k(per_k);
  CHECK(s.k_elbow == 3);
  CHECK(s.k_score == 4);
  CHECK(s.k_star == 3);
  per_k[2].composite = 0.60;
  s = select_k(per_k);
  CHECK(s.k_star == 4);
  CHECK(s.rule == SelectionRule::kScore);
}

TEST_CASE("cluster filter") {
  DiscoveryConfig cfg;
  cfg.tau_p = 0.7;
  cfg.s_min = 1;
  const std::vector<int> labels{0, 0, 0};
  const std::vector<std::string> truth{"A", "A", "B"};
  const std::vector<double> conf(3, 1.0);
  auto f = filter_clusters(labels, std::span<const std::string>(truth), conf, cfg);
  CHECK(f.accepted.empty());
  REQUIRE(f.rejected.size() == 1);
  CHECK(f.rejected[0].purity == doctest::Approx(2.0 / 3.0));

  cfg.s_min = 5;
  const std::vector<std::string> pure(3, "A");
  f = filter_clusters(labels, std::span<const std::string>(pure), conf, cfg);
  CHECK(f.accepted.empty());

  cfg.s_min = 2;
  cfg.tau_p = 0.9;
  const std::vector<int> two{0, 0, 0, 1, 1};
  const std::vector<double> resp{0.995, 0.99, 1.0, 0.5, 0.6};
  f = filter_clusters(two, std::nullopt, resp, cfg);
  CHECK(f.proxy);
  REQUIRE(f.accepted.size() == 1);
  CHECK(f.accepted[0].cluster == 0);
  CHECK(f.accepted[0].purity >= 0.99);
  CHECK(f.accepted[0].members == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("discover finds the planted clusters and is deterministic") {
  const Eigen::MatrixXd x = blobs(60, {{0, 0}, {10, 0}, {0, 10}}, 0.8, 11);
  std::vector<std::string> truth;
  for (const char* t : {"a", "b", "c"})
    for (int i = 0; i < 60; ++i) truth.emplace_back(t);
  DiscoveryConfig cfg;
  cfg.k_max = 6;
  cfg.seed = 42;
  const auto r1 = discover(x, std::span<const std::string>(truth), cfg);
  const auto r2 = discover(x, std::span<const std::string>(truth), cfg);
  CHECK(r1.k_star == 3);
  CHECK((r1.k_star == r1.k_elbow || r1.k_star == r1.k_score));
  CHECK(r1.accepted_clusters.size() == 3);
  CHECK(r1.to_json().dump() == r2.to_json().dump());
  CHECK(r1.score_table_csv() == r2.score_table_csv());
  for (const auto& c : r1.accepted_clusters) {
    CHECK(c.members.size() >= cfg.s_min);
    CHECK(c.purity == 1.0);
  }
  for (const auto& row : r1.per_k) {
    const auto& v = row.kmeans;
    CHECK(std::abs(v.composite - composite_score(v.silhouette, v.calinski_harabasz, v.davies_bouldin,
                                                 v.explained_variance)) < 1e-9);
  }

  const auto few = discover(x.topRows(10), std::nullopt, cfg);
  CHECK(few.k_star == 0);
  CHECK_FALSE(few.note.empty());
}
