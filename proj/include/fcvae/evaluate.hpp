#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fcvae/effects.hpp"

namespace fcvae {

// Root-mean-square error between per-row estimated and true effects.
inline double pehe(std::span<const double> estimated, std::span<const double> truth) {
  require(estimated.size() == truth.size(), "pehe: length mismatch");
  require(!estimated.empty(), "pehe: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < estimated.size(); ++i) {
    double d = estimated[i] - truth[i];
    acc += d * d;
  }
  return std::sqrt(acc / estimated.size());
}

// Argmax over the two predicted outcome means, ties broken toward t = 0.
inline std::vector<int> policy_from_predictions(const std::vector<double>& mu_t0,
                                                const std::vector<double>& mu_t1) {
  require(mu_t0.size() == mu_t1.size(), "policy: length mismatch");
  std::vector<int> pi(mu_t0.size());
  for (std::size_t i = 0; i < pi.size(); ++i) pi[i] = mu_t1[i] > mu_t0[i] ? 1 : 0;
  return pi;
}

inline std::vector<int> policy_from_model(const ModelParams& m, const DatasetBundle& b,
                                          const EffectOptions& o) {
  auto [mu0, mu1] = predict_mu_y_both_t(m, b, o);
  return policy_from_predictions(mu0, mu1);
}

inline std::vector<int> optimal_policy(const DatasetBundle& b) {
  std::vector<int> pi(b.n());
  for (int i = 0; i < b.n(); ++i)
    pi[i] = b.y_at(i, 1, b.a[i]) > b.y_at(i, 0, b.a[i]) ? 1 : 0;
  return pi;
}

// Mean achieved outcome under the policy, read off the counterfactual table
// at the factual a.
inline double policy_value(const std::vector<int>& policy, const DatasetBundle& b) {
  require(static_cast<int>(policy.size()) == b.n(), "policy_value: length mismatch");
  double acc = 0.0;
  for (int i = 0; i < b.n(); ++i) acc += b.y_at(i, policy[i], b.a[i]);
  return acc / b.n();
}

inline double regret(const std::vector<int>& policy, const DatasetBundle& b) {
  return policy_value(optimal_policy(b), b) - policy_value(policy, b);
}

// |Acc_1 - Acc_0| where Acc_a is the fraction of the A = a subgroup whose
// assigned treatment is truly best.
inline double accuracy_gap(const std::vector<int>& policy, const DatasetBundle& b) {
  require(static_cast<int>(policy.size()) == b.n(), "accuracy_gap: length mismatch");
  auto pistar = optimal_policy(b);
  double correct[2] = {0.0, 0.0};
  int count[2] = {0, 0};
  for (int i = 0; i < b.n(); ++i) {
    count[b.a[i]] += 1;
    if (policy[i] == pistar[i]) correct[b.a[i]] += 1.0;
  }
  if (count[0] == 0 || count[1] == 0)
    throw std::runtime_error("accuracy_gap: empty subgroup (counts: a0=" +
                             std::to_string(count[0]) + ", a1=" + std::to_string(count[1]) +
                             ")");
  return std::abs(correct[1] / count[1] - correct[0] / count[0]);
}

// Mean KL from the encoder posterior to the standard-normal prior.
inline double encoder_kl_metric(const ModelParams& m, const DatasetBundle& b) {
  Matrix mean, log_std;
  if (const auto* p = std::get_if<FcvaeParams>(&m)) {
    std::tie(mean, log_std) = infer_posterior_batch(*p, b.x, b.a);
  } else if (const auto* p = std::get_if<CvaeAParams>(&m)) {
    std::tie(mean, log_std) = infer_posterior_batch(*p, b.x, b.a);
  } else {
    throw std::runtime_error("encoder_kl_metric: model has no encoder (MLP baseline)");
  }
  double acc = 0.0;
  std::vector<double> mrow(mean.cols()), srow(mean.cols());
  for (Index i = 0; i < mean.rows(); ++i) {
    for (Index j = 0; j < mean.cols(); ++j) {
      mrow[j] = mean(i, j);
      srow[j] = log_std(i, j);
    }
    acc += gaussian_kl_to_standard(mrow, srow);
  }
  return acc / static_cast<double>(mean.rows());
}

struct MetricsRow {
  long long seed = 0;
  std::string model;
  int features_removed = 0;
  double pehe_at = 0.0, pehe_ty = 0.0, pehe_ay = 0.0;
  double regret = 0.0;
  double acc_gap = 0.0;
  std::optional<double> encoder_kl;
};

inline MetricsRow evaluate_model(const ModelParams& m, const DatasetBundle& b,
                                 const EffectOptions& o, long long seed, int features_removed) {
  MetricsRow row;
  row.seed = seed;
  row.model = to_string(kind_of(m));
  row.features_removed = features_removed;
  auto e = compute_effects(m, b, o);
  row.pehe_at = pehe(e.ie_at_hat, e.ie_at_true);
  row.pehe_ty = pehe(e.ie_ty_hat, e.ie_ty_true);
  row.pehe_ay = pehe(e.ie_ay_hat, e.ie_ay_true);
  auto pi = policy_from_model(m, b, o);
  row.regret = regret(pi, b);
  row.acc_gap = accuracy_gap(pi, b);
  if (std::holds_alternative<FcvaeParams>(m) || std::holds_alternative<CvaeAParams>(m))
    row.encoder_kl = encoder_kl_metric(m, b);
  return row;
}

inline const std::string& metrics_csv_header() {
  static const std::string h =
      "seed,model,removed,pehe_at,pehe_ty,pehe_ay,regret,acc_gap,encoder_kl";
  return h;
}

inline void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << metrics_csv_header() << "\n";
  for (const auto& r : rows) {
    out << r.seed << ',' << r.model << ',' << r.features_removed << ','
        << format_g17(r.pehe_at) << ',' << format_g17(r.pehe_ty) << ','
        << format_g17(r.pehe_ay) << ',' << format_g17(r.regret) << ','
        << format_g17(r.acc_gap) << ',' << (r.encoder_kl ? format_g17(*r.encoder_kl) : "")
        << "\n";
  }
}

inline std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  auto lines = read_all_lines(path);
  require(!lines.empty() && lines[0] == metrics_csv_header(),
          "metrics csv: unexpected header in " + path);
  std::vector<MetricsRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto cells = split_csv_line(lines[i]);
    require(cells.size() == 9, "metrics csv: wrong cell count at row " + std::to_string(i));
    MetricsRow r;
    r.seed = std::stoll(cells[0]);
    r.model = cells[1];
    r.features_removed = std::stoi(cells[2]);
    auto num = [&](const std::string& c) {
      double v;
      require(parse_double_strict(c, v), "metrics csv: non-numeric cell at row " +
                                             std::to_string(i));
      return v;
    };
    r.pehe_at = num(cells[3]);
    r.pehe_ty = num(cells[4]);
    r.pehe_ay = num(cells[5]);
    r.regret = num(cells[6]);
    r.acc_gap = num(cells[7]);
    if (!cells[8].empty()) r.encoder_kl = num(cells[8]);
    rows.push_back(std::move(r));
  }
  return rows;
}

// Row subset of a bundle, for test-split evaluation.
inline DatasetBundle bundle_subset(const DatasetBundle& b, const std::vector<int>& rows) {
  DatasetBundle s;
  s.x.resize(static_cast<Index>(rows.size()), b.x.cols());
  s.y_cf.resize(static_cast<Index>(rows.size()), 4);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    int r = rows[i];
    s.x.row(static_cast<Index>(i)) = b.x.row(r);
    s.y_cf.row(static_cast<Index>(i)) = b.y_cf.row(r);
    s.a.push_back(b.a[r]);
    s.z_hidden.push_back(b.z_hidden[r]);
    s.t_factual.push_back(b.t_factual[r]);
    s.y_factual.push_back(b.y_factual[r]);
    s.t_a0.push_back(b.t_a0[r]);
    s.t_a1.push_back(b.t_a1[r]);
  }
  s.removed_columns = b.removed_columns;
  s.beta = b.beta;
  return s;
}

}  // namespace fcvae
