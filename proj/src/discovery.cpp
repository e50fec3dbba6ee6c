#include "owr/discovery.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "owr/error.hpp"
#include "owr/pca.hpp"
#include "owr/seed.hpp"

namespace owr::discovery {

void DiscoveryConfig::validate() const {
  require(k_max >= 2, ErrorKind::kConfig, "discovery.k_max must be >= 2");
  require(tau_p > 0.0 && tau_p <= 1.0, ErrorKind::kConfig, "discovery.tau_p must lie in (0,1]");
  require(s_min > 0 && s_min <= s_max, ErrorKind::kConfig,
          "discovery cluster-size bounds need 0 < s_min <= s_max");
  require(elbow_tolerance > 0.0 && elbow_tolerance <= 1.0, ErrorKind::kConfig,
          "discovery.elbow_tolerance must lie in (0,1]");
  require(pca_threshold_dim >= 1 && pca_target_dim >= 1, ErrorKind::kConfig,
          "discovery PCA dims must be positive");
  require(em_max_iters >= 1 && em_tol >= 0.0, ErrorKind::kConfig, "bad EM controls");
  require(kmeans_restarts >= 1, ErrorKind::kConfig, "discovery.kmeans_restarts must be >= 1");
}

// Preprocessing ----------------------------------------------------------------

Preprocessed preprocess(const Eigen::MatrixXd& z, const DiscoveryConfig& cfg) {
  require(z.rows() >= 2, ErrorKind::kInvalidInput, "preprocess needs at least 2 samples");
  require(z.allFinite(), ErrorKind::kInvalidInput, "preprocess: non-finite embeddings");
  Preprocessed out;
  out.mean = z.colwise().mean();
  Eigen::MatrixXd centered = z.rowwise() - out.mean;
  out.scale = (centered.array().square().colwise().sum() / static_cast<double>(z.rows())).sqrt();
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    if (out.scale(j) > 0.0) {
      centered.col(j) /= out.scale(j);
    } else {
      out.scale(j) = 0.0;
      centered.col(j).setZero();
    }
  }
  if (z.cols() > cfg.pca_threshold_dim) {
    const auto m = std::min<Eigen::Index>(cfg.pca_target_dim, z.cols());
    const auto model = pca::fit(centered, m);
    out.data = model.transform(centered);
    out.explained_ratio = model.explained_ratio;
    out.pca_applied = true;
  } else {
    out.data = std::move(centered);
  }
  return out;
}

// K-Means ------------------------------------------------------------------------

namespace {

struct LloydRun {
  std::vector<int> labels;
  Eigen::MatrixXd centroids;
  double inertia = 0.0;
  std::vector<double> history;
};

// Nearest centroid per row; ties go to the lowest centroid index.
double assign(const Eigen::MatrixXd& x, const Eigen::MatrixXd& c, std::vector<int>& labels,
              Eigen::VectorXd& dist) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (Eigen::Index j = 0; j < c.rows(); ++j) {
      const double d = (x.row(i) - c.row(j)).squaredNorm();
      if (d < best) {
        best = d;
        arg = static_cast<int>(j);
      }
    }
    labels[static_cast<std::size_t>(i)] = arg;
    dist(i) = best;
    total += best;
  }
  return total;
}

// Single-point transfers (Hartigan): move a point whenever that lowers the
// inertia, with centroids updated incrementally. Returns true if anything moved.
bool transfer_pass(const Eigen::MatrixXd& x, LloydRun& run) {
  const auto k = run.centroids.rows();
  std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
  for (int l : run.labels) counts[static_cast<std::size_t>(l)] += 1.0;
  bool moved = false;
  for (bool again = true; again;) {
    again = false;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const int a = run.labels[static_cast<std::size_t>(i)];
      const double na = counts[static_cast<std::size_t>(a)];
      if (na <= 1.0) continue;
      const double leave = na / (na - 1.0) * (x.row(i) - run.centroids.row(a)).squaredNorm();
      int target = -1;
      double join = leave;
      for (Eigen::Index b = 0; b < k; ++b) {
        if (b == a) continue;
        const double nb = counts[static_cast<std::size_t>(b)];
        const double c = nb / (nb + 1.0) * (x.row(i) - run.centroids.row(b)).squaredNorm();
        if (c < join) {
          join = c;
          target = static_cast<int>(b);
        }
      }
      if (target < 0 || join >= leave * (1.0 - 1e-12)) continue;
      const double nb = counts[static_cast<std::size_t>(target)];
      run.centroids.row(a) = (na * run.centroids.row(a) - x.row(i)) / (na - 1.0);
      run.centroids.row(target) = (nb * run.centroids.row(target) + x.row(i)) / (nb + 1.0);
      counts[static_cast<std::size_t>(a)] -= 1.0;
      counts[static_cast<std::size_t>(target)] += 1.0;
      run.labels[static_cast<std::size_t>(i)] = target;
      moved = again = true;
    }
  }
  return moved;
}

LloydRun lloyd(const Eigen::MatrixXd& x, int k, Eigen::Index start, int max_iters) {
  const auto n = x.rows();
  LloydRun run;
  run.centroids.resize(k, x.cols());
  run.centroids.row(0) = x.row(start);
  Eigen::VectorXd mind = (x.rowwise() - x.row(start)).rowwise().squaredNorm();
  for (int j = 1; j < k; ++j) {
    Eigen::Index far = 0;
    mind.maxCoeff(&far);
    run.centroids.row(j) = x.row(far);
    mind = mind.cwiseMin((x.rowwise() - x.row(far)).rowwise().squaredNorm());
  }

  run.labels.assign(static_cast<std::size_t>(n), -1);
  std::vector<int> previous;
  Eigen::VectorXd dist(n);
  for (int it = 0; it < max_iters; ++it) {
    previous = run.labels;
    run.inertia = assign(x, run.centroids, run.labels, dist);
    run.history.push_back(run.inertia);
    if (run.labels == previous) {
      if (!transfer_pass(x, run)) break;
      continue;
    }

    std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, x.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto l = run.labels[static_cast<std::size_t>(i)];
      sums.row(l) += x.row(i);
      ++counts[static_cast<std::size_t>(l)];
    }
    for (int j = 0; j < k; ++j) {
      if (counts[static_cast<std::size_t>(j)] > 0) {
        run.centroids.row(j) = sums.row(j) / static_cast<double>(counts[static_cast<std::size_t>(j)]);
      } else {
        // Empty cluster: move it onto the worst-fit point.
        Eigen::Index far = 0;
        dist.maxCoeff(&far);
        run.centroids.row(j) = x.row(far);
        dist(far) = 0.0;
      }
    }
  }
  return run;
}

}  // namespace

KMeansResult kmeans_fit(const Eigen::MatrixXd& x, int k, int restarts, std::uint64_t seed,
                        int max_iters) {
  require(x.rows() > 0, ErrorKind::kInvalidInput, "kmeans_fit: empty input");
  require(k >= 1, ErrorKind::kInvalidInput, "kmeans_fit: k must be >= 1");
  require(k <= x.rows(), ErrorKind::kInvalidInput,
          "kmeans_fit: k=" + std::to_string(k) + " exceeds N=" + std::to_string(x.rows()));
  require(restarts >= 1, ErrorKind::kInvalidInput, "kmeans_fit: restarts must be >= 1");

  std::vector<Eigen::Index> perm(static_cast<std::size_t>(x.rows()));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);

  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < restarts; ++r) {
    auto run = lloyd(x, k, perm[static_cast<std::size_t>(r) % perm.size()], max_iters);
    best.restart_inertia.push_back(run.inertia);
    if (run.inertia < best.inertia) {
      best.labels = std::move(run.labels);
      best.centroids = std::move(run.centroids);
      best.inertia = run.inertia;
      best.inertia_history = std::move(run.history);
    }
  }
  return best;
}

// Gaussian mixture ---------------------------------------------------------------

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

struct ComponentCache {
  Eigen::MatrixXd chol;  // lower
  double log_det = 0.0;
  double trace_inv = 0.0;
};

ComponentCache factor(const Eigen::MatrixXd& cov, int component) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) {
    fail(ErrorKind::kNumerical,
         "GMM collapse: covariance of component " + std::to_string(component) + " is not SPD");
  }
  ComponentCache c;
  c.chol = llt.matrixL();
  c.log_det = 2.0 * c.chol.diagonal().array().log().sum();
  const Eigen::MatrixXd linv =
      c.chol.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(cov.rows(), cov.cols()));
  c.trace_inv = linv.squaredNorm();
  return c;
}

// log N(x_i | mu, Sigma) for every row.
Eigen::VectorXd log_density(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& mu,
                            const ComponentCache& c) {
  const Eigen::MatrixXd diff = (x.rowwise() - mu).transpose();
  const Eigen::MatrixXd y = c.chol.triangularView<Eigen::Lower>().solve(diff);
  const double d = static_cast<double>(x.cols());
  return (-0.5 * (d * kLog2Pi + c.log_det + y.colwise().squaredNorm().array())).matrix().transpose();
}

double logsumexp_rows(const Eigen::MatrixXd& logp, Eigen::MatrixXd* resp) {
  double total = 0.0;
  if (resp) resp->resize(logp.rows(), logp.cols());
  for (Eigen::Index i = 0; i < logp.rows(); ++i) {
    const double mx = logp.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logp.row(i).array() - mx).exp().matrix();
    const double s = e.sum();
    total += mx + std::log(s);
    if (resp) resp->row(i) = e / s;
  }
  return total;
}

}  // namespace

GmmResult gmm_fit(const Eigen::MatrixXd& x, int k, int max_iters, double tol, std::uint64_t seed) {
  require(x.rows() > 0, ErrorKind::kInvalidInput, "gmm_fit: empty input");
  require(k >= 1 && k <= x.rows(), ErrorKind::kInvalidInput,
          "gmm_fit: k=" + std::to_string(k) + " must lie in [1, N=" + std::to_string(x.rows()) + "]");
  const auto n = x.rows();
  const auto d = x.cols();
  const double nd = static_cast<double>(n);

  const Eigen::RowVectorXd global_mean = x.colwise().mean();
  const Eigen::MatrixXd gc = x.rowwise() - global_mean;
  const double global_trace = gc.squaredNorm() / nd;
  GmmResult res;
  res.ridge = global_trace > 0.0 ? 1e-6 * global_trace / static_cast<double>(d) : 1e-6;

  const auto init = kmeans_fit(x, k, 1, seed);
  Eigen::MatrixXd resp = Eigen::MatrixXd::Zero(n, k);
  for (Eigen::Index i = 0; i < n; ++i) resp(i, init.labels[static_cast<std::size_t>(i)]) = 1.0;

  res.means.resize(k, d);
  res.covariances.assign(static_cast<std::size_t>(k), Eigen::MatrixXd());
  res.weights.resize(k);

  auto m_step = [&](const Eigen::MatrixXd& r) {
    for (int j = 0; j < k; ++j) {
      const double nk = r.col(j).sum();
      if (!(nk > 1e-10 * nd)) {
        fail(ErrorKind::kNumerical, "GMM collapse: component " + std::to_string(j) + " is empty");
      }
      res.means.row(j) = (r.col(j).transpose() * x) / nk;
      const Eigen::MatrixXd diff = x.rowwise() - res.means.row(j);
      Eigen::MatrixXd cov = (diff.array().colwise() * r.col(j).array()).matrix().transpose() * diff / nk;
      cov = 0.5 * (cov + cov.transpose());
      cov.diagonal().array() += res.ridge;
      res.covariances[static_cast<std::size_t>(j)] = std::move(cov);
      res.weights(j) = nk / nd;
    }
  };

  m_step(resp);
  std::vector<ComponentCache> caches(static_cast<std::size_t>(k));
  Eigen::MatrixXd logp(n, k);
  auto e_step = [&](bool penalised) {
    for (int j = 0; j < k; ++j) {
      caches[static_cast<std::size_t>(j)] = factor(res.covariances[static_cast<std::size_t>(j)], j);
      const auto& c = caches[static_cast<std::size_t>(j)];
      logp.col(j) = log_density(x, res.means.row(j), c).array() + std::log(res.weights(j));
      if (penalised) logp.col(j).array() -= 0.5 * res.ridge * c.trace_inv;
    }
    return logsumexp_rows(logp, &resp);
  };

  for (int it = 0;; ++it) {
    const double objective = e_step(true);
    res.objective_history.push_back(objective);
    res.iterations = it;
    if (it > 0) {
      const double prev = res.objective_history[res.objective_history.size() - 2];
      if (objective - prev <= tol * std::max(1.0, std::abs(prev))) break;
    }
    if (it >= max_iters) break;
    m_step(resp);
  }
  res.responsibilities = resp;

  Eigen::MatrixXd plain(n, k);
  for (int j = 0; j < k; ++j) {
    plain.col(j) = log_density(x, res.means.row(j), caches[static_cast<std::size_t>(j)]).array() +
                   std::log(res.weights(j));
  }
  res.log_likelihood = logsumexp_rows(plain, nullptr);

  res.labels.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index arg = 0;
    resp.row(i).maxCoeff(&arg);
    res.labels[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return res;
}

// Validity indices -----------------------------------------------------------------

double composite_score(double s, double ch, double db, double v) {
  return 0.4 * s + 0.3 * ch / 1000.0 + 0.2 / (1.0 + db) + 0.1 * v;
}

Eigen::MatrixXd label_means(const Eigen::MatrixXd& x, std::span<const int> labels, int k) {
  Eigen::MatrixXd means = Eigen::MatrixXd::Zero(k, x.cols());
  std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const int l = labels[static_cast<std::size_t>(i)];
    means.row(l) += x.row(i);
    counts[static_cast<std::size_t>(l)] += 1.0;
  }
  for (int j = 0; j < k; ++j) {
    if (counts[static_cast<std::size_t>(j)] > 0.0) means.row(j) /= counts[static_cast<std::size_t>(j)];
  }
  return means;
}

double within_ss(const Eigen::MatrixXd& x, std::span<const int> labels,
                 const Eigen::MatrixXd& centroids) {
  double w = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    w += (x.row(i) - centroids.row(labels[static_cast<std::size_t>(i)])).squaredNorm();
  }
  return w;
}

std::vector<double> silhouette_samples(const Eigen::MatrixXd& x, std::span<const int> labels) {
  const auto n = x.rows();
  require(static_cast<std::size_t>(n) == labels.size(), ErrorKind::kInvalidInput,
          "silhouette: label count mismatch");
  std::map<int, std::size_t> sizes;
  for (int l : labels) ++sizes[l];

  std::vector<double> s(static_cast<std::size_t>(n), 0.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int own = labels[static_cast<std::size_t>(i)];
    if (sizes[own] <= 1) continue;
    std::map<int, double> sum;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      sum[labels[static_cast<std::size_t>(j)]] += (x.row(i) - x.row(j)).norm();
    }
    const double a = sum[own] / static_cast<double>(sizes[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [l, total] : sum) {
      if (l != own) b = std::min(b, total / static_cast<double>(sizes[l]));
    }
    if (!std::isfinite(b)) continue;
    const double denom = std::max(a, b);
    s[static_cast<std::size_t>(i)] = denom > 0.0 ? (b - a) / denom : 0.0;
  }
  return s;
}

ValidityScores validity_scores(const Eigen::MatrixXd& x, std::span<const int> labels,
                               const Eigen::MatrixXd& centroids, double inertia) {
  const auto n = x.rows();
  require(static_cast<std::size_t>(n) == labels.size(), ErrorKind::kInvalidInput,
          "validity_scores: label count mismatch");
  std::map<int, std::vector<Eigen::Index>> members;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int l = labels[static_cast<std::size_t>(i)];
    require(l >= 0 && l < centroids.rows(), ErrorKind::kInvalidInput,
            "validity_scores: label without a centroid");
    members[l].push_back(i);
  }
  const auto k_eff = static_cast<Eigen::Index>(members.size());
  require(k_eff >= 2, ErrorKind::kInvalidInput,
          "validity indices need at least two non-empty clusters");

  ValidityScores out;
  out.k = static_cast<int>(centroids.rows());
  out.inertia = inertia;

  const auto sil = silhouette_samples(x, labels);
  out.silhouette = std::accumulate(sil.begin(), sil.end(), 0.0) / static_cast<double>(n);

  const Eigen::RowVectorXd mean = x.colwise().mean();
  double between = 0.0;
  double within = 0.0;
  std::vector<int> ids;
  std::vector<double> spread;
  for (const auto& [l, idx] : members) {
    ids.push_back(l);
    between += static_cast<double>(idx.size()) * (centroids.row(l) - mean).squaredNorm();
    double s = 0.0;
    for (auto i : idx) {
      const double d2 = (x.row(i) - centroids.row(l)).squaredNorm();
      within += d2;
      s += std::sqrt(d2);
    }
    spread.push_back(s / static_cast<double>(idx.size()));
  }
  out.calinski_harabasz =
      within == 0.0 ? 1.0
                    : (between / static_cast<double>(k_eff - 1)) /
                          (within / static_cast<double>(n - k_eff));

  double db = 0.0;
  for (std::size_t a = 0; a < ids.size(); ++a) {
    double worst = 0.0;
    for (std::size_t b = 0; b < ids.size(); ++b) {
      if (a == b) continue;
      const double sep = (centroids.row(ids[a]) - centroids.row(ids[b])).norm();
      const double num = spread[a] + spread[b];
      const double r = sep > 0.0 ? num / sep : (num > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
      worst = std::max(worst, r);
    }
    db += worst;
  }
  out.davies_bouldin = db / static_cast<double>(ids.size());

  const double total_ss = (x.rowwise() - mean).squaredNorm();
  out.explained_variance = total_ss > 0.0 ? std::clamp(1.0 - inertia / total_ss, 0.0, 1.0) : 0.0;
  out.composite =
      composite_score(out.silhouette, out.calinski_harabasz, out.davies_bouldin, out.explained_variance);
  return out;
}

// Model-order selection --------------------------------------------------------------

ElbowResult detect_elbow(std::span<const int> ks, std::span<const double> inertia) {
  require(ks.size() == inertia.size(), ErrorKind::kInvalidInput, "detect_elbow: size mismatch");
  require(ks.size() >= 3, ErrorKind::kInvalidInput, "detect_elbow needs at least 3 points");
  for (std::size_t i = 1; i < ks.size(); ++i) {
    require(ks[i] == ks[i - 1] + 1, ErrorKind::kInvalidInput, "detect_elbow: k values must be consecutive");
  }
  const double lo = *std::min_element(inertia.begin(), inertia.end());
  const double hi = *std::max_element(inertia.begin(), inertia.end());
  if (!(hi > lo)) return {ks.front(), true};

  const double kspan = static_cast<double>(ks.back() - ks.front());
  const double y0 = (inertia.front() - lo) / (hi - lo);
  const double y1 = (inertia.back() - lo) / (hi - lo);
  const double dy = y1 - y0;
  const double norm = std::hypot(1.0, dy);
  double best = -1.0;
  int arg = ks.front();
  for (std::size_t i = 0; i < ks.size(); ++i) {
    const double xn = static_cast<double>(ks[i] - ks.front()) / kspan;
    const double yn = (inertia[i] - lo) / (hi - lo);
    const double dist = std::abs(dy * xn - (yn - y0)) / norm;
    if (dist > best) {
      best = dist;
      arg = ks[i];
    }
  }
  if (best < 1e-12) return {ks.front(), true};
  return {arg, false};
}

std::string rule_name(SelectionRule r) { return r == SelectionRule::kElbow ? "elbow" : "score"; }

Selection select_k_rule(int k_elbow, double q_elbow, int k_score, double q_score, double tolerance) {
  Selection s;
  s.k_elbow = k_elbow;
  s.k_score = k_score;
  if (k_elbow == k_score || q_elbow >= tolerance * q_score) {
    s.k_star = k_elbow;
    s.rule = SelectionRule::kElbow;
  } else {
    s.k_star = k_score;
    s.rule = SelectionRule::kScore;
  }
  return s;
}

Selection select_k(std::span<const ValidityScores> per_k, double tolerance) {
  require(!per_k.empty(), ErrorKind::kInvalidInput, "select_k: no candidates");
  std::size_t best = 0;
  for (std::size_t i = 1; i < per_k.size(); ++i) {
    if (per_k[i].composite > per_k[best].composite) best = i;
  }
  std::size_t elbow_idx = best;
  bool warning = true;
  if (per_k.size() >= 3) {
    std::vector<int> ks;
    std::vector<double> inertia;
    for (const auto& v : per_k) {
      ks.push_back(v.k);
      inertia.push_back(v.inertia);
    }
    const auto e = detect_elbow(ks, inertia);
    warning = e.warning;
    for (std::size_t i = 0; i < per_k.size(); ++i) {
      if (per_k[i].k == e.k) elbow_idx = i;
    }
  }
  auto s = select_k_rule(per_k[elbow_idx].k, per_k[elbow_idx].composite, per_k[best].k,
                         per_k[best].composite, tolerance);
  s.elbow_warning = warning;
  return s;
}

// Cluster filtering -------------------------------------------------------------

FilterOutcome filter_clusters(std::span<const int> labels,
                              std::optional<std::span<const std::string>> truth,
                              std::span<const double> member_confidence,
                              const DiscoveryConfig& cfg) {
  require(!labels.empty(), ErrorKind::kInvalidInput, "filter_clusters: no labels");
  if (truth) {
    require(truth->size() == labels.size(), ErrorKind::kInvalidInput,
            "filter_clusters: truth/label size mismatch");
  } else {
    require(member_confidence.size() == labels.size(), ErrorKind::kInvalidInput,
            "filter_clusters: proxy purity needs one confidence per sample");
  }
  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(i);

  FilterOutcome out;
  out.proxy = !truth.has_value();
  for (auto& [cluster, idx] : members) {
    AcceptedCluster c;
    c.cluster = cluster;
    c.members = idx;
    if (truth) {
      std::map<std::string, std::size_t> votes;
      for (auto i : idx) ++votes[(*truth)[i]];
      std::size_t top = 0;
      std::size_t ties = 0;
      for (const auto& [label, count] : votes) {
        if (count > top) {
          top = count;
          ties = 1;
          c.majority_truth = label;
        } else if (count == top) {
          ++ties;
        }
      }
      if (ties > 1) c.majority_truth.reset();
      c.purity = static_cast<double>(top) / static_cast<double>(idx.size());
    } else {
      double s = 0.0;
      for (auto i : idx) s += member_confidence[i];
      c.purity = s / static_cast<double>(idx.size());
    }
    const bool size_ok = idx.size() >= cfg.s_min && idx.size() <= cfg.s_max;
    (size_ok && c.purity >= cfg.tau_p ? out.accepted : out.rejected).push_back(std::move(c));
  }
  return out;
}

// Full pass ------------------------------------------------------------------

std::string model_name(ModelKind m) {
  switch (m) {
    case ModelKind::kKMeans: return "kmeans";
    case ModelKind::kGmm: return "gmm";
    case ModelKind::kNone: break;
  }
  return "none";
}

double KCandidate::best_composite() const {
  return gmm ? std::max(kmeans.composite, gmm->composite) : kmeans.composite;
}

ClusterReport discover(const Eigen::MatrixXd& z, std::optional<std::span<const std::string>> truth,
                       const DiscoveryConfig& cfg) {
  cfg.validate();
  ClusterReport rep;
  rep.n_samples = static_cast<std::size_t>(z.rows());
  rep.input_dim = static_cast<std::size_t>(z.cols());
  rep.proxy_purity = !truth.has_value();
  if (truth) {
    require(truth->size() == rep.n_samples, ErrorKind::kInvalidInput,
            "discover: truth/sample count mismatch");
  }
  if (rep.n_samples < std::max<std::size_t>(cfg.min_samples, 3)) {
    rep.note = "too few samples for discovery";
    return rep;
  }

  const auto pre = preprocess(z, cfg);
  const Eigen::MatrixXd& x = pre.data;
  rep.pca_applied = pre.pca_applied;

  const int k_hi = std::min<int>(cfg.k_max, static_cast<int>(x.rows()) - 1);
  std::vector<KMeansResult> km_fits;
  std::vector<std::optional<GmmResult>> gmm_fits;
  std::vector<ValidityScores> selector;
  for (int k = 2; k <= k_hi; ++k) {
    KCandidate cand;
    auto km = kmeans_fit(x, k, cfg.kmeans_restarts,
                         derive_seed(cfg.seed, "kmeans/" + std::to_string(k)));
    try {
      cand.kmeans = validity_scores(x, km.labels, label_means(x, km.labels, k), km.inertia);
    } catch (const Error&) {
      // Duplicate points can leave a single non-empty cluster; skip this k.
      continue;
    }
    cand.kmeans.k = k;

    std::optional<GmmResult> gm;
    try {
      gm = gmm_fit(x, k, cfg.em_max_iters, cfg.em_tol,
                   derive_seed(cfg.seed, "gmm/" + std::to_string(k)));
      const auto means = label_means(x, gm->labels, k);
      auto scores = validity_scores(x, gm->labels, means, within_ss(x, gm->labels, means));
      scores.k = k;
      cand.gmm = scores;
    } catch (const Error& e) {
      cand.gmm_error = e.what();
      gm.reset();
    }

    ValidityScores sel = cand.kmeans;
    sel.composite = cand.best_composite();
    selector.push_back(sel);
    rep.per_k.push_back(std::move(cand));
    km_fits.push_back(std::move(km));
    gmm_fits.push_back(std::move(gm));
  }

  if (rep.per_k.empty()) {
    rep.note = "no valid cluster count in range";
    return rep;
  }
  const bool any_above = std::any_of(selector.begin(), selector.end(),
                                     [&](const ValidityScores& v) { return v.composite >= cfg.q_min; });
  if (!any_above) {
    rep.note = "every candidate scored below q_min";
    return rep;
  }

  const auto sel = select_k(selector, cfg.elbow_tolerance);
  rep.k_elbow = sel.k_elbow;
  rep.k_score = sel.k_score;
  rep.k_star = sel.k_star;
  rep.rule = sel.rule;
  rep.elbow_warning = sel.elbow_warning;

  std::size_t idx = 0;
  while (rep.per_k[idx].kmeans.k != rep.k_star) ++idx;
  const auto& cand = rep.per_k[idx];
  std::vector<double> confidence;
  if (cand.gmm && cand.gmm->composite > cand.kmeans.composite) {
    rep.chosen_model = ModelKind::kGmm;
    rep.labels = gmm_fits[idx]->labels;
    const auto& r = gmm_fits[idx]->responsibilities;
    for (Eigen::Index i = 0; i < r.rows(); ++i) confidence.push_back(r.row(i).maxCoeff());
  } else {
    rep.chosen_model = ModelKind::kKMeans;
    rep.labels = km_fits[idx].labels;
    for (double s : silhouette_samples(x, rep.labels)) confidence.push_back((s + 1.0) / 2.0);
  }

  auto filtered = filter_clusters(rep.labels, truth, confidence, cfg);
  rep.accepted_clusters = std::move(filtered.accepted);
  rep.rejected_clusters = std::move(filtered.rejected);
  return rep;
}

// Serialisation ----------------------------------------------------------------

namespace {

nlohmann::ordered_json number(double v) {
  return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json();
}

nlohmann::ordered_json scores_json(const ValidityScores& s) {
  nlohmann::ordered_json j;
  j["k"] = s.k;
  j["silhouette"] = number(s.silhouette);
  j["calinski_harabasz"] = number(s.calinski_harabasz);
  j["davies_bouldin"] = number(s.davies_bouldin);
  j["explained_variance"] = number(s.explained_variance);
  j["composite"] = number(s.composite);
  j["inertia"] = number(s.inertia);
  return j;
}

nlohmann::ordered_json clusters_json(const std::vector<AcceptedCluster>& cs) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& c : cs) {
    nlohmann::ordered_json j;
    j["cluster"] = c.cluster;
    j["size"] = c.members.size();
    j["purity"] = number(c.purity);
    j["majority_truth"] = c.majority_truth ? nlohmann::ordered_json(*c.majority_truth)
                                           : nlohmann::ordered_json();
    j["members"] = c.members;
    arr.push_back(std::move(j));
  }
  return arr;
}

}  // namespace

nlohmann::ordered_json ClusterReport::to_json() const {
  nlohmann::ordered_json j;
  j["n_samples"] = n_samples;
  j["input_dim"] = input_dim;
  j["pca_applied"] = pca_applied;
  j["k_elbow"] = k_elbow;
  j["k_score"] = k_score;
  j["k_star"] = k_star;
  j["rule"] = rule_name(rule);
  j["elbow_warning"] = elbow_warning;
  j["chosen_model"] = model_name(chosen_model);
  j["purity_mode"] = proxy_purity ? "proxy" : "truth";
  j["note"] = note;
  auto table = nlohmann::ordered_json::array();
  for (const auto& c : per_k) {
    nlohmann::ordered_json row;
    row["k"] = c.kmeans.k;
    row["kmeans"] = scores_json(c.kmeans);
    row["gmm"] = c.gmm ? scores_json(*c.gmm) : nlohmann::ordered_json();
    if (!c.gmm_error.empty()) row["gmm_error"] = c.gmm_error;
    row["composite"] = number(c.best_composite());
    table.push_back(std::move(row));
  }
  j["per_k"] = std::move(table);
  j["labels"] = labels;
  j["accepted_clusters"] = clusters_json(accepted_clusters);
  j["rejected_clusters"] = clusters_json(rejected_clusters);
  return j;
}

std::string ClusterReport::score_table_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "k,model,silhouette,calinski_harabasz,davies_bouldin,explained_variance,composite,inertia\n";
  auto row = [&](const ValidityScores& s, const char* model) {
    out << s.k << ',' << model << ',' << s.silhouette << ',' << s.calinski_harabasz << ','
        << s.davies_bouldin << ',' << s.explained_variance << ',' << s.composite << ',' << s.inertia
        << '\n';
  };
  for (const auto& c : per_k) {
    row(c.kmeans, "kmeans");
    if (c.gmm) row(*c.gmm, "gmm");
  }
  return out.str();
}

}  // namespace owr::discovery
