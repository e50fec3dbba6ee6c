#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace owr::discovery {

struct DiscoveryConfig {
  int k_max = 12;
  Eigen::Index pca_threshold_dim = 64;
  Eigen::Index pca_target_dim = 64;
  double elbow_tolerance = 0.9;
  double tau_p = 0.7;
  std::size_t s_min = 10;
  std::size_t s_max = 100000;
  std::uint64_t seed = 0;
  int em_max_iters = 200;
  double em_tol = 1e-8;
  int kmeans_restarts = 8;
  /// Fewer samples than this yields k* = 0 (no novel classes).
  std::size_t min_samples = 20;
  /// Every candidate below this composite score also yields k* = 0.
  double q_min = 0.05;

  void validate() const;
  bool operator==(const DiscoveryConfig&) const = default;
};

// Rows are samples throughout this module.

struct Preprocessed {
  Eigen::MatrixXd data;
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd scale;           // population std, 0 for constant columns
  bool pca_applied = false;
  Eigen::VectorXd explained_ratio;    // PCA spectrum when applied
};

/// Z-scores every column (constant columns become 0), then projects onto the
/// leading pca_target_dim axes when the width exceeds pca_threshold_dim.
Preprocessed preprocess(const Eigen::MatrixXd& z, const DiscoveryConfig& cfg = {});

struct KMeansResult {
  std::vector<int> labels;
  Eigen::MatrixXd centroids;  // k x d
  double inertia = 0.0;
  std::vector<double> inertia_history;  // best restart, one entry per Lloyd pass
  std::vector<double> restart_inertia;
};

/// Lloyd's algorithm from farthest-point seeding, refined with single-point
/// transfers once Lloyd settles; best of `restarts` by inertia.
/// Restart r starts from the r-th point of a seeded permutation.
KMeansResult kmeans_fit(const Eigen::MatrixXd& x, int k, int restarts, std::uint64_t seed,
                        int max_iters = 300);

struct GmmResult {
  Eigen::MatrixXd responsibilities;  // N x k
  Eigen::MatrixXd means;             // k x d
  std::vector<Eigen::MatrixXd> covariances;
  Eigen::VectorXd weights;
  std::vector<int> labels;           // argmax responsibility
  double log_likelihood = 0.0;       // plain data log-likelihood at the final parameters
  /// EM objective per iteration. Covariances carry a fixed ridge rho*I, which is
  /// the exact M-step for the penalised likelihood
  ///   sum_i log sum_k pi_k N(x_i | mu_k, S_k) exp(-rho/2 tr S_k^-1),
  /// so this sequence is non-decreasing.
  std::vector<double> objective_history;
  double ridge = 0.0;
  int iterations = 0;
};

/// Full-covariance EM initialised from a single K-Means run.
GmmResult gmm_fit(const Eigen::MatrixXd& x, int k, int max_iters, double tol, std::uint64_t seed);

struct ValidityScores {
  int k = 0;
  double silhouette = 0.0;
  double calinski_harabasz = 0.0;
  double davies_bouldin = 0.0;
  double explained_variance = 0.0;
  double composite = 0.0;
  double inertia = 0.0;
};

/// Q = 0.4 S + 0.3 CH/1000 + 0.2/(1+DB) + 0.1 V
double composite_score(double silhouette, double calinski_harabasz, double davies_bouldin,
                       double explained_variance);

/// Per-sample silhouette; members of singleton clusters score 0.
std::vector<double> silhouette_samples(const Eigen::MatrixXd& x, std::span<const int> labels);

/// Indices over the non-empty clusters. Throws kInvalidInput when fewer than
/// two clusters are non-empty. V = 1 - inertia / total sum of squares.
ValidityScores validity_scores(const Eigen::MatrixXd& x, std::span<const int> labels,
                               const Eigen::MatrixXd& centroids, double inertia);

/// Within-cluster sum of squares of `labels` around `centroids`.
double within_ss(const Eigen::MatrixXd& x, std::span<const int> labels,
                 const Eigen::MatrixXd& centroids);

/// Means of the members of each label in [0, k). Empty clusters get a zero row.
Eigen::MatrixXd label_means(const Eigen::MatrixXd& x, std::span<const int> labels, int k);

struct ElbowResult {
  int k = 0;
  bool warning = false;  // curve flat or linear; smallest k returned
};

/// Point of maximum distance to the chord between the end points, both axes
/// min-max normalised. Needs at least three consecutive k values.
ElbowResult detect_elbow(std::span<const int> ks, std::span<const double> inertia);

enum class SelectionRule { kElbow, kScore };
std::string rule_name(SelectionRule r);

struct Selection {
  int k_elbow = 0;
  int k_score = 0;
  int k_star = 0;
  SelectionRule rule = SelectionRule::kElbow;
  bool elbow_warning = false;
};

/// k_star = k_elbow if Q(k_elbow) >= tolerance * Q(k_score), else k_score.
Selection select_k_rule(int k_elbow, double q_elbow, int k_score, double q_score,
                        double tolerance = 0.9);

/// Elbow over the inertia column and argmax (ties to the smaller k) over the
/// composite column, combined with select_k_rule. With fewer than three
/// candidates the elbow falls back to the best-scoring k.
Selection select_k(std::span<const ValidityScores> per_k, double tolerance = 0.9);

struct AcceptedCluster {
  int cluster = 0;
  std::vector<std::size_t> members;
  double purity = 0.0;
  std::optional<std::string> majority_truth;
};

struct FilterOutcome {
  std::vector<AcceptedCluster> accepted;
  std::vector<AcceptedCluster> rejected;
  bool proxy = false;
};

/// With truth: purity is the majority-label fraction. Without: purity is the
/// mean of `member_confidence` over the cluster. Clusters outside
/// [s_min, s_max] or below tau_p are dropped.
FilterOutcome filter_clusters(std::span<const int> labels,
                              std::optional<std::span<const std::string>> truth,
                              std::span<const double> member_confidence,
                              const DiscoveryConfig& cfg);

enum class ModelKind { kNone, kKMeans, kGmm };
std::string model_name(ModelKind m);

struct KCandidate {
  ValidityScores kmeans;
  std::optional<ValidityScores> gmm;  // absent when EM failed or left < 2 clusters
  std::string gmm_error;

  /// The composite-selector score: the better of the two models.
  double best_composite() const;
};

struct ClusterReport {
  std::size_t n_samples = 0;
  std::size_t input_dim = 0;
  bool pca_applied = false;
  std::vector<KCandidate> per_k;
  int k_elbow = 0;
  int k_score = 0;
  int k_star = 0;
  SelectionRule rule = SelectionRule::kElbow;
  bool elbow_warning = false;
  ModelKind chosen_model = ModelKind::kNone;
  std::vector<int> labels;
  std::vector<AcceptedCluster> accepted_clusters;
  std::vector<AcceptedCluster> rejected_clusters;
  bool proxy_purity = false;
  std::string note;  // why k* = 0, when it is

  nlohmann::ordered_json to_json() const;
  std::string score_table_csv() const;
};

/// Full clustering pass over rejected-unknown embeddings (rows = samples).
ClusterReport discover(const Eigen::MatrixXd& z, std::optional<std::span<const std::string>> truth,
                       const DiscoveryConfig& cfg);

}  // namespace owr::discovery
