#pragma once

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "owr/pca.hpp"
#include "owr/types.hpp"

namespace owr::evaluation {

/// How predicted class ids translate to ground-truth labels.
struct LabelMap {
  /// Original classes map to their own label; discovered classes to the
  /// majority truth of their cluster, or nullopt when that majority was tied.
  std::map<ClassId, std::optional<std::string>> to_truth;
  /// Truth labels of the classes known before any discovery.
  std::set<std::string> original_known;
};

inline const std::string kUnknownColumn = "UNKNOWN";
inline const std::string kUnmatchedColumn = "UNMATCHED";

struct EvalReport {
  double acc_old = 0.0;  // percent; NaN when no old-class samples
  double acc_new = 0.0;  // percent; NaN when no novel-class samples
  double overall_accuracy = 0.0;
  double rejection_rate_unknown = 0.0;
  double rejection_rate_known = 0.0;
  std::size_t n_old = 0;
  std::size_t n_new = 0;
  std::vector<std::string> row_labels;     // truth labels
  std::vector<std::string> column_labels;  // truth labels, UNKNOWN, UNMATCHED
  Eigen::MatrixXi confusion;
  std::optional<nlohmann::ordered_json> clustering;
  /// Not serialised with the report, so reports stay byte-reproducible.
  double wall_time = 0.0;

  nlohmann::ordered_json to_json() const;
  std::string confusion_csv() const;
};

/// Acc_old over samples whose truth is an original class, Acc_new over the
/// rest. A prediction is correct iff it maps to the sample's truth label.
EvalReport score_session(std::span<const ClassId> predicted, std::span<const std::string> truth,
                         const LabelMap& labels);

struct Projection {
  Eigen::MatrixXd coords;  // N x 2
  Eigen::Vector2d explained_ratio;
  pca::PcaModel model;
};

/// Top-2 principal coordinates. Each axis is signed so that its largest-magnitude
/// coordinate is positive, which makes the output invariant to negating the input.
Projection project_2d(const Eigen::MatrixXd& z);

std::string projection_csv(const Projection& p, std::span<const std::string> truth,
                           std::span<const std::string> prediction);

/// Rounds a percentage to one decimal for reporting.
double round_percent(double v);

}  // namespace owr::evaluation
