#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "fcvae/csv.hpp"
#include "fcvae/matrix.hpp"
#include "fcvae/rng.hpp"

namespace fcvae {

inline double clip(double x, double m, double M) {
  require(m <= M, "clip: lower bound exceeds upper bound");
  return std::min(std::max(x, m), M);
}

struct CovariateTable {
  enum class Source { Loaded, Synthetic };
  int n = 0;
  std::vector<std::string> names;
  Matrix values;  // n x d
  std::vector<bool> is_binary;
  Source source = Source::Synthetic;

  int d() const { return static_cast<int>(names.size()); }
  int column_index(const std::string& name) const {
    for (std::size_t j = 0; j < names.size(); ++j)
      if (names[j] == name) return static_cast<int>(j);
    return -1;
  }
};

// Data-generation constants plus the column designations. Values default to
// the semi-synthetic benchmark's: beta_a 6, omega -11, alphas 0.7/0.4,
// zeta 0.1, offset 0.5.
struct GenConfig {
  double beta_a = 6.0;
  double omega = -11.0;
  double alpha0 = 0.7;
  double alpha1 = 0.4;
  double zeta = 0.1;
  double w_fill = 0.5;

  std::vector<double> beta_values_continuous{0.0, 0.1, 0.2, 0.3, 0.4};
  std::vector<double> beta_probs_continuous{0.5, 0.125, 0.125, 0.125, 0.125};
  std::vector<double> beta_values_binary{0.0, 0.1, 0.2, 0.3, 0.4};
  std::vector<double> beta_probs_binary{0.6, 0.1, 0.1, 0.1, 0.1};
  std::vector<double> beta_values_z{0.4, 0.6};
  std::vector<double> beta_probs_z{0.5, 0.5};

  int features_to_remove = 0;  // 0, 1 or 2
  bool apply_step1_filter = false;
  std::string sensitive_column = "sensitive";
  std::string confounder_column = "confounder";
  std::string original_treatment_column;  // needed only when filtering

  std::uint64_t seed = 0;
};

inline void validate(const GenConfig& c) {
  auto sums_to_one = [](const std::vector<double>& p) {
    double s = std::accumulate(p.begin(), p.end(), 0.0);
    return std::abs(s - 1.0) < 1e-12;
  };
  require(sums_to_one(c.beta_probs_continuous) && sums_to_one(c.beta_probs_binary) &&
              sums_to_one(c.beta_probs_z),
          "GenConfig: categorical probabilities must sum to 1");
  require(c.beta_probs_continuous.size() == c.beta_values_continuous.size() &&
              c.beta_probs_binary.size() == c.beta_values_binary.size() &&
              c.beta_probs_z.size() == c.beta_values_z.size(),
          "GenConfig: categorical values/probabilities length mismatch");
  require(c.alpha0 >= 0.0 && c.alpha0 <= 1.0 && c.alpha1 >= 0.0 && c.alpha1 <= 1.0,
          "GenConfig: alpha0 and alpha1 must lie in [0, 1]");
  require(c.features_to_remove >= 0 && c.features_to_remove <= 2,
          "GenConfig: features_to_remove must be 0, 1 or 2");
}

// Everything the benchmark knows about one generated dataset: observed
// covariates, the hidden confounder, and all four outcome surfaces plus both
// counterfactual treatments per row.
struct DatasetBundle {
  Matrix x;                      // n x d_obs, post-removal, normalized
  std::vector<int> a;            // sensitive bits
  std::vector<double> z_hidden;  // normalized confounder
  std::vector<int> t_factual;
  std::vector<double> y_factual;
  Matrix y_cf;  // n x 4, column index 2a + t
  std::vector<int> t_a0, t_a1;
  std::vector<std::string> removed_columns;
  std::vector<double> beta;  // one entry per pre-removal feature column, plus Z last

  int n() const { return static_cast<int>(a.size()); }
  double y_at(int i, int t, int a_) const { return y_cf(i, 2 * a_ + t); }
  int t_at(int i, int a_) const { return a_ ? t_a1[i] : t_a0[i]; }
};

inline CovariateTable load_covariates_csv(const std::string& path) {
  auto lines = read_all_lines(path);
  require(!lines.empty(), "covariate csv: empty file");
  CovariateTable table;
  table.source = CovariateTable::Source::Loaded;
  table.names = split_csv_line(lines[0]);
  int d = table.d();
  require(d > 0, "covariate csv: empty header");
  std::vector<std::vector<double>> rows;
  for (std::size_t r = 1; r < lines.size(); ++r) {
    if (lines[r].empty()) continue;
    auto cells = split_csv_line(lines[r]);
    if (static_cast<int>(cells.size()) != d)
      throw std::runtime_error("covariate csv: row " + std::to_string(r) + " has " +
                               std::to_string(cells.size()) + " cells, expected " +
                               std::to_string(d));
    std::vector<double> row(d);
    for (int j = 0; j < d; ++j) {
      if (!parse_double_strict(cells[j], row[j]))
        throw std::runtime_error("covariate csv: row " + std::to_string(r) +
                                 ": cell in column '" + table.names[j] + "' is not numeric");
    }
    rows.push_back(std::move(row));
  }
  require(!rows.empty(), "covariate csv: no data rows");
  table.n = static_cast<int>(rows.size());
  table.values = from_rows(rows);
  table.is_binary.resize(d);
  for (int j = 0; j < d; ++j) {
    bool bin = true;
    for (int i = 0; i < table.n; ++i) {
      double v = table.values(i, j);
      if (v != 0.0 && v != 1.0) {
        bin = false;
        break;
      }
    }
    table.is_binary[j] = bin;
  }
  return table;
}

struct ConfounderProfile {
  double confounder_noise_sd = 0.3;  // confounder = factor + sd * noise
  double proxy1_loading = 0.80;      // proxy = rho * factor + sqrt(1-rho^2) * noise
  double proxy2_loading = 0.55;
  // Remaining continuous columns load a pool of background factors that are
  // independent of the confounder factor, mimicking the correlation structure
  // of real tabular covariates. 0 background factors makes them iid.
  int n_background_factors = 4;
  double background_loading = 0.65;
};

// Stand-in covariates when the real file is unavailable: one latent factor,
// a confounder column tracking it closely, two proxies with descending
// correlation with it, the remaining columns uncorrelated with the
// confounder. Binary columns are thresholded Gaussians; the first one is the
// designated sensitive attribute.
inline CovariateTable synth_covariates(int n, int d_continuous, int d_binary,
                                       const ConfounderProfile& profile, NoiseStream& noise) {
  require(n >= 10, "synth_covariates: need n >= 10");
  require(d_continuous >= 3, "synth_covariates: need confounder plus two proxies");
  require(d_binary >= 0, "synth_covariates: d_binary must be nonnegative");
  require(profile.n_background_factors >= 0, "synth_covariates: bad factor count");
  CovariateTable t;
  t.source = CovariateTable::Source::Synthetic;
  t.n = n;
  t.names.push_back("confounder");
  t.names.push_back("proxy_a");
  t.names.push_back("proxy_b");
  for (int j = 3; j < d_continuous; ++j) t.names.push_back("cont_" + std::to_string(j));
  if (d_binary > 0) t.names.push_back("sensitive");
  for (int j = 1; j < d_binary; ++j) t.names.push_back("bin_" + std::to_string(j));
  int d = t.d();
  t.values.resize(n, d);
  double r1 = profile.proxy1_loading, r2 = profile.proxy2_loading;
  double rb = profile.background_loading;
  int nf = profile.n_background_factors;
  std::vector<double> bg(std::max(1, nf));
  // Background columns (continuous and binary alike) share the factor pool
  // with alternating loading signs: the columns stay strongly low-rank but
  // beta-weighted sums keep the scale of iid draws. The sensitive column
  // stays independent of everything.
  auto background = [&](int slot) {
    if (nf == 0) return noise.normal();
    double sign = (slot / nf) % 2 == 0 ? 1.0 : -1.0;
    return sign * rb * bg[slot % nf] + std::sqrt(1.0 - rb * rb) * noise.normal();
  };
  for (int i = 0; i < n; ++i) {
    double f = noise.normal();
    for (int k = 0; k < nf; ++k) bg[k] = noise.normal();
    t.values(i, 0) = f + profile.confounder_noise_sd * noise.normal();
    t.values(i, 1) = r1 * f + std::sqrt(1.0 - r1 * r1) * noise.normal();
    t.values(i, 2) = r2 * f + std::sqrt(1.0 - r2 * r2) * noise.normal();
    int slot = 0;
    for (int j = 3; j < d_continuous; ++j) t.values(i, j) = background(slot++);
    for (int j = d_continuous; j < d; ++j) {
      bool is_sensitive = d_binary > 0 && j == d_continuous;
      double g = is_sensitive ? noise.normal() : background(slot++);
      t.values(i, j) = g > 0.0 ? 1.0 : 0.0;
    }
  }
  t.is_binary.assign(d, false);
  for (int j = d_continuous; j < d; ++j) t.is_binary[j] = true;
  return t;
}

// Column-wise standardization, population (divide-by-n) convention.
inline CovariateTable normalize(const CovariateTable& in) {
  CovariateTable out = in;
  for (int j = 0; j < in.d(); ++j) {
    double mean = in.values.col(j).mean();
    double var = (in.values.col(j).array() - mean).square().sum() / in.n;
    double sd = std::sqrt(var);
    if (sd == 0.0)
      throw std::runtime_error("normalize: column '" + in.names[j] +
                               "' is constant, cannot standardize");
    out.values.col(j) = (in.values.col(j).array() - mean) / sd;
  }
  return out;
}

inline double draw_categorical(const std::vector<double>& values,
                               const std::vector<double>& probs, NoiseStream& noise) {
  double u = noise.uniform();
  double acc = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    acc += probs[k];
    if (u < acc) return values[k];
  }
  return values.back();
}

// One coefficient per feature column (kind-matched categorical), plus the Z
// coefficient appended last.
inline std::vector<double> sample_beta(const std::vector<bool>& feature_is_binary,
                                       const GenConfig& cfg, NoiseStream& noise) {
  validate(cfg);
  std::vector<double> beta;
  beta.reserve(feature_is_binary.size() + 1);
  for (bool bin : feature_is_binary)
    beta.push_back(bin ? draw_categorical(cfg.beta_values_binary, cfg.beta_probs_binary, noise)
                       : draw_categorical(cfg.beta_values_continuous,
                                          cfg.beta_probs_continuous, noise));
  beta.push_back(draw_categorical(cfg.beta_values_z, cfg.beta_probs_z, noise));
  return beta;
}

// Response surfaces, style of Hill's Response B:
//   y_{T=0,A=0} ~ N(exp(([X,Z]+W) beta^T), 1)
//   y_{T=1,A=0} ~ N([X,Z] beta^T - omega, 1)
// and the A=1 surfaces add beta_a to the respective means. Column index in
// the returned matrix is 2a + t.
inline Matrix generate_outcomes(const Matrix& x, const std::vector<double>& z,
                                const std::vector<double>& beta, const GenConfig& cfg,
                                NoiseStream& noise) {
  int n = static_cast<int>(x.rows());
  require(static_cast<int>(z.size()) == n, "generate_outcomes: z length mismatch");
  require(static_cast<int>(beta.size()) == x.cols() + 1,
          "generate_outcomes: beta length must cover [X, Z] columns");
  Matrix y(n, 4);
  double bz = beta.back();
  for (int i = 0; i < n; ++i) {
    double lin = 0.0, lin_off = 0.0;
    for (Index j = 0; j < x.cols(); ++j) {
      lin += x(i, j) * beta[j];
      lin_off += (x(i, j) + cfg.w_fill) * beta[j];
    }
    lin += z[i] * bz;
    lin_off += (z[i] + cfg.w_fill) * bz;
    double mean00 = std::exp(lin_off);
    double mean10 = lin - cfg.omega;
    if (!std::isfinite(mean00) || std::abs(mean00) > 1e12)
      throw std::runtime_error("generate_outcomes: exp surface overflow at row " +
                               std::to_string(i));
    y(i, 0) = mean00 + noise.normal();
    y(i, 1) = mean10 + noise.normal();
    y(i, 2) = mean00 + cfg.beta_a + noise.normal();
    y(i, 3) = mean10 + cfg.beta_a + noise.normal();
  }
  return y;
}

struct TreatmentPair {
  std::vector<int> t_a0, t_a1;
};

// t_{A=a} ~ Bern(Clip(alpha_a + zeta * Z, 0, 1)), independently per row and
// per arm.
inline TreatmentPair generate_treatments(const std::vector<double>& z, const GenConfig& cfg,
                                         NoiseStream& noise) {
  TreatmentPair t;
  t.t_a0.reserve(z.size());
  t.t_a1.reserve(z.size());
  for (double zi : z) {
    double p0 = clip(cfg.alpha0 + cfg.zeta * zi, 0.0, 1.0);
    double p1 = clip(cfg.alpha1 + cfg.zeta * zi, 0.0, 1.0);
    t.t_a0.push_back(noise.uniform() < p0 ? 1 : 0);
    t.t_a1.push_back(noise.uniform() < p1 ? 1 : 0);
  }
  return t;
}

namespace detail {

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = std::accumulate(a.begin(), a.end(), 0.0) / a.size();
  double mb = std::accumulate(b.begin(), b.end(), 0.0) / b.size();
  double num = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  double denom = std::sqrt(va * vb);
  return denom == 0.0 ? 0.0 : num / denom;
}

}  // namespace detail

// Full pipeline. The outcome and treatment surfaces are generated from the
// complete feature set; feature removal only shrinks the observed X, so the
// same seed yields identical ground truth across removal settings.
inline DatasetBundle generate_ihdp(const CovariateTable& table_in, const GenConfig& cfg,
                                   NoiseStream& noise) {
  validate(cfg);
  int sens = table_in.column_index(cfg.sensitive_column);
  int conf = table_in.column_index(cfg.confounder_column);
  require(sens >= 0, "generate_ihdp: sensitive column '" + cfg.sensitive_column +
                         "' not found");
  require(conf >= 0, "generate_ihdp: confounder column '" + cfg.confounder_column +
                         "' not found");
  require(table_in.is_binary[sens], "generate_ihdp: sensitive column must be binary");
  int orig = -1;
  if (!cfg.original_treatment_column.empty()) {
    orig = table_in.column_index(cfg.original_treatment_column);
    require(orig >= 0 || !cfg.apply_step1_filter,
            "generate_ihdp: original treatment column '" + cfg.original_treatment_column +
                "' not found");
  } else {
    require(!cfg.apply_step1_filter,
            "generate_ihdp: step-1 filter needs an original treatment column");
  }

  // Step 1: drop rows with sensitive = 0 that received the original treatment.
  std::vector<int> keep;
  for (int i = 0; i < table_in.n; ++i) {
    bool drop = cfg.apply_step1_filter && table_in.values(i, sens) == 0.0 &&
                table_in.values(i, orig) == 1.0;
    if (!drop) keep.push_back(i);
  }
  int n = static_cast<int>(keep.size());
  require(n >= 2, "generate_ihdp: fewer than two rows remain after filtering");

  // Working feature set: everything except the sensitive attribute and the
  // original treatment. The confounder stays in for now.
  std::vector<int> feat_cols;
  for (int j = 0; j < table_in.d(); ++j)
    if (j != sens && j != orig) feat_cols.push_back(j);

  CovariateTable work;
  work.source = table_in.source;
  work.n = n;
  for (int j : feat_cols) {
    work.names.push_back(table_in.names[j]);
    work.is_binary.push_back(table_in.is_binary[j]);
  }
  work.values.resize(n, static_cast<Index>(feat_cols.size()));
  for (int i = 0; i < n; ++i)
    for (std::size_t j = 0; j < feat_cols.size(); ++j)
      work.values(i, static_cast<Index>(j)) = table_in.values(keep[i], feat_cols[j]);

  DatasetBundle bundle;
  bundle.a.resize(n);
  for (int i = 0; i < n; ++i) {
    double v = table_in.values(keep[i], sens);
    bundle.a[i] = v == 1.0 ? 1 : 0;
  }

  // Correlation ranking for removal is computed on pre-normalization values.
  int conf_work = work.column_index(cfg.confounder_column);
  std::vector<double> conf_raw(n);
  for (int i = 0; i < n; ++i) conf_raw[i] = work.values(i, conf_work);
  std::vector<std::pair<double, int>> ranked;  // (|corr|, column)
  for (int j = 0; j < work.d(); ++j) {
    if (j == conf_work) continue;
    std::vector<double> col(n);
    for (int i = 0; i < n; ++i) col[i] = work.values(i, j);
    ranked.emplace_back(std::abs(detail::pearson(col, conf_raw)), j);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });

  CovariateTable normed = normalize(work);

  bundle.z_hidden.resize(n);
  for (int i = 0; i < n; ++i) bundle.z_hidden[i] = normed.values(i, conf_work);

  // Full observed-candidate X, confounder excluded, original column order.
  std::vector<int> x_cols;
  std::vector<bool> x_is_binary;
  for (int j = 0; j < work.d(); ++j)
    if (j != conf_work) {
      x_cols.push_back(j);
      x_is_binary.push_back(work.is_binary[j]);
    }

  bundle.beta = sample_beta(x_is_binary, cfg, noise);

  Matrix x_full(n, static_cast<Index>(x_cols.size()));
  for (int i = 0; i < n; ++i)
    for (std::size_t j = 0; j < x_cols.size(); ++j)
      x_full(i, static_cast<Index>(j)) = normed.values(i, x_cols[j]);

  bundle.y_cf = generate_outcomes(x_full, bundle.z_hidden, bundle.beta, cfg, noise);
  TreatmentPair t = generate_treatments(bundle.z_hidden, cfg, noise);
  bundle.t_a0 = std::move(t.t_a0);
  bundle.t_a1 = std::move(t.t_a1);

  // Remove the k observed features most correlated with the confounder.
  std::vector<int> removed;
  for (int k = 0; k < cfg.features_to_remove && k < static_cast<int>(ranked.size()); ++k)
    removed.push_back(ranked[k].second);
  for (int j : removed) bundle.removed_columns.push_back(work.names[j]);

  std::vector<int> kept_x;
  for (int j : x_cols)
    if (std::find(removed.begin(), removed.end(), j) == removed.end()) kept_x.push_back(j);
  bundle.x.resize(n, static_cast<Index>(kept_x.size()));
  for (int i = 0; i < n; ++i)
    for (std::size_t j = 0; j < kept_x.size(); ++j)
      bundle.x(i, static_cast<Index>(j)) = normed.values(i, kept_x[j]);

  bundle.t_factual.resize(n);
  bundle.y_factual.resize(n);
  for (int i = 0; i < n; ++i) {
    bundle.t_factual[i] = bundle.t_at(i, bundle.a[i]);
    bundle.y_factual[i] = bundle.y_at(i, bundle.t_factual[i], bundle.a[i]);
  }
  return bundle;
}

inline const std::vector<std::string>& bundle_fixed_columns() {
  static const std::vector<std::string> cols{"a",       "t_factual", "y_factual", "y_t0_a0",
                                             "y_t1_a0", "y_t0_a1",   "y_t1_a1",   "t_a0",
                                             "t_a1",    "z_hidden"};
  return cols;
}

inline void write_bundle_csv(const DatasetBundle& b, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << "# fcvae bundle v1\n";
  {
    std::vector<std::string> parts;
    for (double v : b.beta) parts.push_back(format_g17(v));
    out << "# beta = " << join(parts, " ") << "\n";
  }
  out << "# removed = " << join(b.removed_columns, ",") << "\n";
  std::vector<std::string> header;
  for (Index j = 0; j < b.x.cols(); ++j) header.push_back("x_" + std::to_string(j));
  for (const auto& c : bundle_fixed_columns()) header.push_back(c);
  out << join(header, ",") << "\n";
  for (int i = 0; i < b.n(); ++i) {
    std::vector<std::string> cells;
    for (Index j = 0; j < b.x.cols(); ++j) cells.push_back(format_g17(b.x(i, j)));
    cells.push_back(std::to_string(b.a[i]));
    cells.push_back(std::to_string(b.t_factual[i]));
    cells.push_back(format_g17(b.y_factual[i]));
    for (int c = 0; c < 4; ++c) cells.push_back(format_g17(b.y_cf(i, c)));
    cells.push_back(std::to_string(b.t_a0[i]));
    cells.push_back(std::to_string(b.t_a1[i]));
    cells.push_back(format_g17(b.z_hidden[i]));
    out << join(cells, ",") << "\n";
  }
}

inline DatasetBundle read_bundle_csv(const std::string& path) {
  auto lines = read_all_lines(path);
  DatasetBundle b;
  std::size_t r = 0;
  for (; r < lines.size() && !lines[r].empty() && lines[r][0] == '#'; ++r) {
    const std::string& l = lines[r];
    auto eat = [&](const std::string& prefix) -> std::optional<std::string> {
      if (l.rfind(prefix, 0) == 0) return l.substr(prefix.size());
      return std::nullopt;
    };
    if (auto v = eat("# beta = ")) {
      std::istringstream is(*v);
      double x;
      while (is >> x) b.beta.push_back(x);
    } else if (auto v = eat("# removed = ")) {
      if (!v->empty())
        for (auto& name : split_csv_line(*v)) b.removed_columns.push_back(name);
    }
  }
  require(r < lines.size(), "bundle csv: missing header row");
  auto header = split_csv_line(lines[r]);
  int d = 0;
  while (d < static_cast<int>(header.size()) && header[d] == "x_" + std::to_string(d)) ++d;
  const auto& fixed = bundle_fixed_columns();
  for (const auto& name : fixed)
    if (std::find(header.begin(), header.end(), name) == header.end())
      throw std::runtime_error("bundle csv: missing column '" + name + "'");
  if (static_cast<std::size_t>(d) + fixed.size() != header.size())
    throw std::runtime_error("bundle csv: unexpected number of columns");
  for (std::size_t k = 0; k < fixed.size(); ++k)
    if (header[d + k] != fixed[k])
      throw std::runtime_error("bundle csv: misplaced column '" + fixed[k] + "'");

  std::vector<std::vector<double>> xrows;
  std::vector<std::array<double, 4>> yrows;
  for (std::size_t i = r + 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto cells = split_csv_line(lines[i]);
    if (cells.size() != header.size())
      throw std::runtime_error("bundle csv: row " + std::to_string(i - r) +
                               " has wrong cell count");
    std::vector<double> vals(cells.size());
    for (std::size_t j = 0; j < cells.size(); ++j)
      if (!parse_double_strict(cells[j], vals[j]))
        throw std::runtime_error("bundle csv: row " + std::to_string(i - r) +
                                 ": non-numeric cell");
    xrows.emplace_back(vals.begin(), vals.begin() + d);
    int o = d;
    b.a.push_back(static_cast<int>(vals[o + 0]));
    b.t_factual.push_back(static_cast<int>(vals[o + 1]));
    b.y_factual.push_back(vals[o + 2]);
    yrows.push_back({vals[o + 3], vals[o + 4], vals[o + 5], vals[o + 6]});
    b.t_a0.push_back(static_cast<int>(vals[o + 7]));
    b.t_a1.push_back(static_cast<int>(vals[o + 8]));
    b.z_hidden.push_back(vals[o + 9]);
  }
  b.x.resize(static_cast<Index>(xrows.size()), d);
  b.y_cf.resize(static_cast<Index>(yrows.size()), 4);
  for (std::size_t i = 0; i < xrows.size(); ++i) {
    for (int j = 0; j < d; ++j) b.x(static_cast<Index>(i), j) = xrows[i][j];
    for (int c = 0; c < 4; ++c) b.y_cf(static_cast<Index>(i), c) = yrows[i][c];
  }
  return b;
}

}  // namespace fcvae
