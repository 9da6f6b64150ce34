#pragma once

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fcvae/csv.hpp"
#include "fcvae/datagen.hpp"
#include "fcvae/models.hpp"

namespace fcvae {

// Flat key=value configuration, keys namespaced data.* / model.* / train.* /
// eval.* / experiment.*. Unknown keys are errors.
struct ExperimentConfig {
  // data.*
  std::string data_source = "synthetic";  // synthetic | csv
  std::string data_csv_path;
  int data_n = 747;
  // composition mirrors the real covariate file: mostly binary columns
  int data_d_continuous = 6;
  int data_d_binary = 19;
  ConfounderProfile profile;
  GenConfig gen;

  // model.*
  std::vector<ModelKind> model_set{ModelKind::Cfmlp, ModelKind::Cf4mlp, ModelKind::CvaeA,
                                   ModelKind::Fcvae1, ModelKind::Fcvae2};
  bool model_heteroscedastic_y = false;  // fixed sigma_y = 1 unless switched on
  double model_sigma_x = 1.0;
  int model_baseline_hidden = 100;

  // train.*
  double train_lr = 0.001;
  int train_patience = 10;
  int train_max_epochs = 1000;
  int train_batch_size = 16;  // 0 means full batch
  int train_n_elbo_samples = 10;
  double train_validation_fraction = 0.3;

  // eval.*
  int eval_n_posterior_samples = 10;
  bool eval_abduct_flipped_a = false;
  bool eval_plug_in_treatment = false;
  bool eval_test_split_only = false;

  // experiment.*
  int exp_n_seeds = 50;
  long long exp_base_seed = 1;
  std::vector<int> exp_features_removed_set{0, 1, 2};
};

namespace config_detail {

inline bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw std::runtime_error("config: expected boolean, got '" + v + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : v) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

}  // namespace config_detail

inline void apply_config_entry(ExperimentConfig& c, const std::string& key,
                               const std::string& value) {
  using namespace config_detail;
  auto as_int = [&] { return std::stoi(value); };
  auto as_ll = [&] { return std::stoll(value); };
  auto as_double = [&] {
    double v;
    if (!parse_double_strict(value, v))
      throw std::runtime_error("config: key '" + key + "' expects a number, got '" + value +
                               "'");
    return v;
  };

  if (key == "data.source") {
    if (value != "synthetic" && value != "csv")
      throw std::runtime_error("config: data.source must be 'synthetic' or 'csv'");
    c.data_source = value;
  } else if (key == "data.csv_path") {
    c.data_csv_path = value;
  } else if (key == "data.n") {
    c.data_n = as_int();
  } else if (key == "data.d_continuous") {
    c.data_d_continuous = as_int();
  } else if (key == "data.d_binary") {
    c.data_d_binary = as_int();
  } else if (key == "data.confounder_noise_sd") {
    c.profile.confounder_noise_sd = as_double();
  } else if (key == "data.proxy1_loading") {
    c.profile.proxy1_loading = as_double();
  } else if (key == "data.proxy2_loading") {
    c.profile.proxy2_loading = as_double();
  } else if (key == "data.sensitive_column") {
    c.gen.sensitive_column = value;
  } else if (key == "data.confounder_column") {
    c.gen.confounder_column = value;
  } else if (key == "data.original_treatment_column") {
    c.gen.original_treatment_column = value;
  } else if (key == "data.apply_step1_filter") {
    c.gen.apply_step1_filter = parse_bool(value);
  } else if (key == "data.features_to_remove") {
    c.gen.features_to_remove = as_int();
  } else if (key == "data.beta_a") {
    c.gen.beta_a = as_double();
  } else if (key == "data.omega") {
    c.gen.omega = as_double();
  } else if (key == "data.alpha0") {
    c.gen.alpha0 = as_double();
  } else if (key == "data.alpha1") {
    c.gen.alpha1 = as_double();
  } else if (key == "data.zeta") {
    c.gen.zeta = as_double();
  } else if (key == "data.w_fill") {
    c.gen.w_fill = as_double();
  } else if (key == "model.set") {
    c.model_set.clear();
    for (const auto& name : split_list(value)) c.model_set.push_back(parse_model_kind(name));
    require(!c.model_set.empty(), "config: model.set must not be empty");
  } else if (key == "model.heteroscedastic_y") {
    c.model_heteroscedastic_y = parse_bool(value);
  } else if (key == "model.sigma_x") {
    c.model_sigma_x = as_double();
  } else if (key == "model.baseline_hidden") {
    c.model_baseline_hidden = as_int();
  } else if (key == "train.lr") {
    c.train_lr = as_double();
  } else if (key == "train.patience") {
    c.train_patience = as_int();
  } else if (key == "train.max_epochs") {
    c.train_max_epochs = as_int();
  } else if (key == "train.batch_size") {
    c.train_batch_size = as_int();
  } else if (key == "train.n_elbo_samples") {
    c.train_n_elbo_samples = as_int();
  } else if (key == "train.validation_fraction") {
    c.train_validation_fraction = as_double();
  } else if (key == "eval.n_posterior_samples") {
    c.eval_n_posterior_samples = as_int();
  } else if (key == "eval.abduct_flipped_a") {
    c.eval_abduct_flipped_a = parse_bool(value);
  } else if (key == "eval.plug_in_treatment") {
    c.eval_plug_in_treatment = parse_bool(value);
  } else if (key == "eval.test_split_only") {
    c.eval_test_split_only = parse_bool(value);
  } else if (key == "experiment.n_seeds") {
    c.exp_n_seeds = as_int();
  } else if (key == "experiment.base_seed") {
    c.exp_base_seed = as_ll();
  } else if (key == "experiment.features_removed_set") {
    c.exp_features_removed_set.clear();
    for (const auto& v : split_list(value)) c.exp_features_removed_set.push_back(std::stoi(v));
    require(!c.exp_features_removed_set.empty(),
            "config: experiment.features_removed_set must not be empty");
  } else {
    throw std::runtime_error("config: unknown key '" + key + "'");
  }
}

inline void validate(const ExperimentConfig& c) {
  require(c.exp_n_seeds >= 1, "config: experiment.n_seeds must be >= 1");
  require(c.train_validation_fraction > 0.0 && c.train_validation_fraction < 1.0,
          "config: train.validation_fraction must lie in (0, 1)");
  require(c.train_patience >= 1, "config: train.patience must be >= 1");
  require(c.train_max_epochs >= 1, "config: train.max_epochs must be >= 1");
  require(c.train_n_elbo_samples >= 1, "config: train.n_elbo_samples must be >= 1");
  require(c.eval_n_posterior_samples >= 1, "config: eval.n_posterior_samples must be >= 1");
  require(c.train_batch_size >= 0, "config: train.batch_size must be >= 0");
  for (int k : c.exp_features_removed_set)
    require(k >= 0 && k <= 2, "config: features_removed must be 0, 1 or 2");
  validate(c.gen);
  if (c.data_source == "csv")
    require(!c.data_csv_path.empty(), "config: data.source=csv needs data.csv_path");
}

inline ExperimentConfig parse_config_file(const std::string& path) {
  ExperimentConfig c;
  auto lines = read_all_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string line = config_detail::trim(lines[i]);
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: line " + std::to_string(i + 1) +
                               " is not key=value: '" + line + "'");
    std::string key = config_detail::trim(line.substr(0, eq));
    std::string value = config_detail::trim(line.substr(eq + 1));
    apply_config_entry(c, key, value);
  }
  validate(c);
  return c;
}

// Canonical serialization; also the basis of the config hash in run records.
inline std::string canonical_config_text(const ExperimentConfig& c) {
  std::ostringstream out;
  out << "data.source=" << c.data_source << "\n";
  out << "data.csv_path=" << c.data_csv_path << "\n";
  out << "data.n=" << c.data_n << "\n";
  out << "data.d_continuous=" << c.data_d_continuous << "\n";
  out << "data.d_binary=" << c.data_d_binary << "\n";
  out << "data.confounder_noise_sd=" << format_g17(c.profile.confounder_noise_sd) << "\n";
  out << "data.proxy1_loading=" << format_g17(c.profile.proxy1_loading) << "\n";
  out << "data.proxy2_loading=" << format_g17(c.profile.proxy2_loading) << "\n";
  out << "data.sensitive_column=" << c.gen.sensitive_column << "\n";
  out << "data.confounder_column=" << c.gen.confounder_column << "\n";
  out << "data.original_treatment_column=" << c.gen.original_treatment_column << "\n";
  out << "data.apply_step1_filter=" << (c.gen.apply_step1_filter ? 1 : 0) << "\n";
  out << "data.features_to_remove=" << c.gen.features_to_remove << "\n";
  out << "data.beta_a=" << format_g17(c.gen.beta_a) << "\n";
  out << "data.omega=" << format_g17(c.gen.omega) << "\n";
  out << "data.alpha0=" << format_g17(c.gen.alpha0) << "\n";
  out << "data.alpha1=" << format_g17(c.gen.alpha1) << "\n";
  out << "data.zeta=" << format_g17(c.gen.zeta) << "\n";
  out << "data.w_fill=" << format_g17(c.gen.w_fill) << "\n";
  out << "model.set=";
  for (std::size_t i = 0; i < c.model_set.size(); ++i)
    out << (i ? "," : "") << to_string(c.model_set[i]);
  out << "\n";
  out << "model.heteroscedastic_y=" << (c.model_heteroscedastic_y ? 1 : 0) << "\n";
  out << "model.sigma_x=" << format_g17(c.model_sigma_x) << "\n";
  out << "model.baseline_hidden=" << c.model_baseline_hidden << "\n";
  out << "train.lr=" << format_g17(c.train_lr) << "\n";
  out << "train.patience=" << c.train_patience << "\n";
  out << "train.max_epochs=" << c.train_max_epochs << "\n";
  out << "train.batch_size=" << c.train_batch_size << "\n";
  out << "train.n_elbo_samples=" << c.train_n_elbo_samples << "\n";
  out << "train.validation_fraction=" << format_g17(c.train_validation_fraction) << "\n";
  out << "eval.n_posterior_samples=" << c.eval_n_posterior_samples << "\n";
  out << "eval.abduct_flipped_a=" << (c.eval_abduct_flipped_a ? 1 : 0) << "\n";
  out << "eval.plug_in_treatment=" << (c.eval_plug_in_treatment ? 1 : 0) << "\n";
  out << "eval.test_split_only=" << (c.eval_test_split_only ? 1 : 0) << "\n";
  out << "experiment.n_seeds=" << c.exp_n_seeds << "\n";
  out << "experiment.base_seed=" << c.exp_base_seed << "\n";
  out << "experiment.features_removed_set=";
  for (std::size_t i = 0; i < c.exp_features_removed_set.size(); ++i)
    out << (i ? "," : "") << c.exp_features_removed_set[i];
  out << "\n";
  return out.str();
}

inline std::uint64_t config_hash(const ExperimentConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : canonical_config_text(c)) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace fcvae
