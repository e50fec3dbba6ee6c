#include "owr/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "owr/error.hpp"

namespace owr::evaluation {

double round_percent(double v) { return std::round(v * 10.0) / 10.0; }

EvalReport score_session(std::span<const ClassId> predicted, std::span<const std::string> truth,
                         const LabelMap& labels) {
  require(predicted.size() == truth.size(), ErrorKind::kInvalidInput,
          "score_session: " + std::to_string(predicted.size()) + " decisions vs " +
              std::to_string(truth.size()) + " truth labels");
  EvalReport rep;
  std::set<std::string> rows(truth.begin(), truth.end());
  rows.insert(labels.original_known.begin(), labels.original_known.end());
  rep.row_labels.assign(rows.begin(), rows.end());
  rep.column_labels = rep.row_labels;
  rep.column_labels.push_back(kUnknownColumn);
  rep.column_labels.push_back(kUnmatchedColumn);
  const auto n_rows = static_cast<Eigen::Index>(rep.row_labels.size());
  rep.confusion = Eigen::MatrixXi::Zero(n_rows, n_rows + 2);

  auto row_of = [&](const std::string& label) {
    return static_cast<Eigen::Index>(
        std::lower_bound(rep.row_labels.begin(), rep.row_labels.end(), label) - rep.row_labels.begin());
  };

  std::size_t old_ok = 0, new_ok = 0, old_rej = 0, new_rej = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool is_old = labels.original_known.contains(truth[i]);
    Eigen::Index col = n_rows + 1;
    if (predicted[i] == kUnknownClass) {
      col = n_rows;
    } else if (auto it = labels.to_truth.find(predicted[i]); it != labels.to_truth.end() && it->second) {
      col = row_of(*it->second);
    }
    ++rep.confusion(row_of(truth[i]), col);
    const bool correct = col < n_rows && rep.row_labels[static_cast<std::size_t>(col)] == truth[i];
    const bool rejected = col == n_rows;
    if (is_old) {
      ++rep.n_old;
      old_ok += correct;
      old_rej += rejected;
    } else {
      ++rep.n_new;
      new_ok += correct;
      new_rej += rejected;
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  auto pct = [&](std::size_t a, std::size_t b) {
    return b > 0 ? 100.0 * static_cast<double>(a) / static_cast<double>(b) : nan;
  };
  rep.acc_old = pct(old_ok, rep.n_old);
  rep.acc_new = pct(new_ok, rep.n_new);
  rep.overall_accuracy = pct(old_ok + new_ok, rep.n_old + rep.n_new);
  rep.rejection_rate_known = pct(old_rej, rep.n_old);
  rep.rejection_rate_unknown = pct(new_rej, rep.n_new);
  return rep;
}

nlohmann::ordered_json EvalReport::to_json() const {
  auto pct = [](double v) {
    return std::isfinite(v) ? nlohmann::ordered_json(round_percent(v)) : nlohmann::ordered_json();
  };
  nlohmann::ordered_json j;
  j["acc_old"] = pct(acc_old);
  j["acc_new"] = pct(acc_new);
  j["overall_accuracy"] = pct(overall_accuracy);
  j["rejection_rate_unknown"] = pct(rejection_rate_unknown);
  j["rejection_rate_known"] = pct(rejection_rate_known);
  j["n_old"] = n_old;
  j["n_new"] = n_new;
  j["rows"] = row_labels;
  j["columns"] = column_labels;
  auto m = nlohmann::ordered_json::array();
  for (Eigen::Index r = 0; r < confusion.rows(); ++r) {
    std::vector<int> row;
    for (Eigen::Index c = 0; c < confusion.cols(); ++c) row.push_back(confusion(r, c));
    m.push_back(row);
  }
  j["confusion"] = std::move(m);
  if (clustering) j["clustering"] = *clustering;
  return j;
}

std::string EvalReport::confusion_csv() const {
  std::ostringstream out;
  out << "truth";
  for (const auto& c : column_labels) out << ',' << c;
  out << '\n';
  for (Eigen::Index r = 0; r < confusion.rows(); ++r) {
    out << row_labels[static_cast<std::size_t>(r)];
    for (Eigen::Index c = 0; c < confusion.cols(); ++c) out << ',' << confusion(r, c);
    out << '\n';
  }
  return out.str();
}

Projection project_2d(const Eigen::MatrixXd& z) {
  require(z.rows() >= 3, ErrorKind::kInvalidInput, "project_2d needs at least 3 samples");
  require(z.cols() >= 2, ErrorKind::kInvalidInput, "project_2d needs at least 2 dimensions");
  Projection p;
  p.model = pca::fit(z, 2);
  require(p.model.eigenvalues(0) > 0.0, ErrorKind::kInvalidInput,
          "project_2d: data has rank 0 (all samples identical)");
  p.coords = p.model.transform(z);
  for (Eigen::Index j = 0; j < 2; ++j) {
    auto col = p.coords.col(j);
    const double peak = col.cwiseAbs().maxCoeff();
    if (peak == 0.0) continue;
    // First coordinate within rounding of the peak decides the sign.
    for (Eigen::Index i = 0; i < col.size(); ++i) {
      if (std::abs(col(i)) >= peak * (1.0 - 1e-9)) {
        if (col(i) < 0.0) {
          col = -col;
          p.model.components.col(j) = -p.model.components.col(j);
        }
        break;
      }
    }
  }
  p.explained_ratio = p.model.explained_ratio.head<2>();
  return p;
}

std::string projection_csv(const Projection& p, std::span<const std::string> truth,
                           std::span<const std::string> prediction) {
  require(truth.size() == static_cast<std::size_t>(p.coords.rows()) &&
              prediction.size() == truth.size(),
          ErrorKind::kInvalidInput, "projection_csv: label count mismatch");
  std::ostringstream out;
  out.precision(17);
  out << "x,y,truth,prediction\n";
  for (Eigen::Index i = 0; i < p.coords.rows(); ++i) {
    out << p.coords(i, 0) << ',' << p.coords(i, 1) << ',' << truth[static_cast<std::size_t>(i)] << ','
        << prediction[static_cast<std::size_t>(i)] << '\n';
  }
  return out.str();
}

}  // namespace owr::evaluation
