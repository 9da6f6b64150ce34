#pragma once

#include <chrono>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>

#include "fcvae/adam.hpp"
#include "fcvae/checkpoint.hpp"
#include "fcvae/config.hpp"
#include "fcvae/evaluate.hpp"

namespace fcvae {

struct RunRecord {
  std::uint64_t config_hash = 0;
  long long seed = 0;
  std::string model;
  int features_removed = 0;
  std::vector<double> train_trace;  // per-epoch objective, higher is better
  std::vector<double> val_trace;
  double val_at_init = 0.0;  // validation objective before any update
  int stopping_epoch = 0;    // number of epochs actually run
  int best_epoch = 0;        // 1-based epoch whose parameters are returned
  bool failed = false;
  std::string failure_reason;
  double wall_seconds = 0.0;
};

// Patience rule: stop once `patience` consecutive epochs fail to strictly
// improve on the best validation objective seen so far.
struct EarlyStopper {
  int patience;
  double best = -std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int since_best = 0;

  explicit EarlyStopper(int patience_) : patience(patience_) {}

  // Returns true when training should stop after this epoch. `improved()`
  // right after a call tells whether this epoch became the new best.
  bool update(int epoch, double val) {
    if (val > best) {
      best = val;
      best_epoch = epoch;
      since_best = 0;
      return false;
    }
    ++since_best;
    return since_best >= patience;
  }
  bool improved() const { return since_best == 0; }
};

struct TrainResult {
  ModelParams params;
  RunRecord record;
  std::vector<int> train_rows, validation_rows;
};

namespace harness_detail {

inline std::vector<int> shuffled_indices(int n, NoiseStream& stream) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = n - 1; i > 0; --i) {
    int j = static_cast<int>(stream.below(static_cast<std::uint64_t>(i) + 1));
    std::swap(idx[i], idx[j]);
  }
  return idx;
}

inline ModelParams init_model(ModelKind kind, const DatasetBundle& b,
                              const ExperimentConfig& cfg, NoiseStream& init) {
  double pi_a = 0.0;
  for (int a : b.a) pi_a += a;
  pi_a /= b.n();
  FcvaeDims dims;
  dims.d_x = static_cast<int>(b.x.cols());
  YKind yk = YKind::Continuous;
  switch (kind) {
    case ModelKind::Fcvae1:
      return make_fcvae(dims, FcvaeVariant::V1, yk, cfg.model_heteroscedastic_y,
                        cfg.model_sigma_x, pi_a, init);
    case ModelKind::Fcvae2:
      return make_fcvae(dims, FcvaeVariant::V2, yk, cfg.model_heteroscedastic_y,
                        cfg.model_sigma_x, pi_a, init);
    case ModelKind::CvaeA:
      return make_cvae_a(dims, yk, cfg.model_heteroscedastic_y, cfg.model_sigma_x, pi_a, init);
    case ModelKind::Cfmlp:
      return make_cfmlp(dims.d_x, cfg.model_baseline_hidden, init);
    case ModelKind::Cf4mlp:
      return make_cf4mlp(dims.d_x, cfg.model_baseline_hidden, init);
  }
  throw std::logic_error("init_model: unreachable");
}

// One optimizer step on a minibatch; returns the objective total.
template <class P>
double train_step(P& params, const Batch& batch, int n_samples, NoiseStream& noise,
                  std::vector<double>& flat, AdamState& adam) {
  Tape t;
  auto [objective, nets] = build_objective(t, params, batch, n_samples, noise);
  Var loss = t.scale(objective, -1.0);
  t.backward(loss);
  std::vector<double> grads(flat.size());
  double* dst = grads.data();
  for (auto& net : nets) {
    read_grads(t, net, dst);
    std::size_t n = 0;
    for (std::size_t l = 0; l < net.weights.size(); ++l)
      n += static_cast<std::size_t>(t.value(net.weights[l]).size() +
                                    t.value(net.biases[l]).size());
    dst += n;
  }
  adam_step(flat, grads, adam);
  unpack_params(params, flat);
  return t.value(objective)(0, 0);
}

// Objective without gradients; per-example mean so train and validation are
// on the same scale.
template <class P>
double objective_mean(const P& params, const Batch& batch, int n_samples, NoiseStream noise) {
  Tape t;
  auto [objective, nets] = build_objective(t, params, batch, n_samples, noise);
  (void)nets;
  return t.value(objective)(0, 0) / batch.n();
}

template <class P>
TrainResult train_impl(P params, const DatasetBundle& bundle, const ExperimentConfig& cfg,
                       NoiseStream& noise) {
  auto t_start = std::chrono::steady_clock::now();
  TrainResult out;
  RunRecord& rec = out.record;
  rec.config_hash = config_hash(cfg);

  const int n = bundle.n();
  NoiseStream shuffle = noise.substream("shuffling");
  NoiseStream elbo_noise = noise.substream("elbo-noise");

  std::vector<int> order = shuffled_indices(n, shuffle);
  int n_val = std::max(1, std::min(n - 1, static_cast<int>(std::lround(
                                              n * cfg.train_validation_fraction))));
  out.validation_rows.assign(order.end() - n_val, order.end());
  out.train_rows.assign(order.begin(), order.end() - n_val);
  Batch val_batch = batch_from_bundle(bundle, out.validation_rows);

  std::vector<double> flat = pack_params(params);
  AdamState adam(flat.size(), cfg.train_lr);

  P best = params;
  EarlyStopper stopper(cfg.train_patience);

  const int S = is_variational<P>::value ? cfg.train_n_elbo_samples : 1;
  rec.val_at_init = objective_mean(params, val_batch, S, noise.substream("validation"));
  for (int epoch = 1; epoch <= cfg.train_max_epochs; ++epoch) {
    std::vector<int> epoch_order = out.train_rows;
    // reshuffle minibatches each epoch
    for (int i = static_cast<int>(epoch_order.size()) - 1; i > 0; --i) {
      int j = static_cast<int>(shuffle.below(static_cast<std::uint64_t>(i) + 1));
      std::swap(epoch_order[i], epoch_order[j]);
    }
    int bsz = cfg.train_batch_size == 0 ? static_cast<int>(epoch_order.size())
                                        : cfg.train_batch_size;
    double train_total = 0.0;
    for (std::size_t start = 0; start < epoch_order.size(); start += bsz) {
      std::size_t stop = std::min(epoch_order.size(), start + bsz);
      std::vector<int> rows(epoch_order.begin() + start, epoch_order.begin() + stop);
      Batch batch = batch_from_bundle(bundle, rows);
      train_total += train_step(params, batch, S, elbo_noise, flat, adam);
    }
    rec.train_trace.push_back(train_total / static_cast<double>(out.train_rows.size()));

    // frozen validation noise: identical draws every epoch, so unchanged
    // parameters yield an unchanged objective and patience counts cleanly
    double val = objective_mean(params, val_batch, S, noise.substream("validation"));
    rec.val_trace.push_back(val);
    rec.stopping_epoch = epoch;

    if (!std::isfinite(val) || !std::isfinite(rec.train_trace.back())) {
      rec.failed = true;
      rec.failure_reason = "non-finite objective at epoch " + std::to_string(epoch);
      break;
    }
    bool stop = stopper.update(epoch, val);
    if (stopper.improved()) {
      best = params;
      rec.best_epoch = epoch;
    }
    if (stop) break;
  }

  out.params = std::move(best);
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return out;
}

}  // namespace harness_detail

inline TrainResult train(ModelKind kind, const DatasetBundle& bundle,
                         const ExperimentConfig& cfg, NoiseStream& noise) {
  NoiseStream init = noise.substream("init");
  ModelParams init_params = harness_detail::init_model(kind, bundle, cfg, init);
  TrainResult r = std::visit(
      [&](auto& p) { return harness_detail::train_impl(p, bundle, cfg, noise); },
      init_params);
  r.record.model = to_string(kind);
  return r;
}

// ---- per-seed runs and the sweep ---------------------------------------------

inline DatasetBundle make_bundle(const ExperimentConfig& cfg, long long seed,
                                 int features_removed) {
  GenConfig gen = cfg.gen;
  gen.features_to_remove = features_removed;
  gen.seed = static_cast<std::uint64_t>(seed);
  NoiseStream master(static_cast<std::uint64_t>(seed), "master");
  NoiseStream data = master.substream("datagen");
  if (cfg.data_source == "csv") {
    CovariateTable table = load_covariates_csv(cfg.data_csv_path);
    return generate_ihdp(table, gen, data);
  }
  CovariateTable table =
      synth_covariates(cfg.data_n, cfg.data_d_continuous, cfg.data_d_binary, cfg.profile, data);
  return generate_ihdp(table, gen, data);
}

struct SeedOutcome {
  std::vector<MetricsRow> rows;
  std::vector<RunRecord> records;
  std::vector<std::string> failures;  // one line per failed run
};

inline SeedOutcome run_single_seed(const ExperimentConfig& cfg, long long seed) {
  SeedOutcome out;
  for (int removed : cfg.exp_features_removed_set) {
    DatasetBundle bundle;
    try {
      bundle = make_bundle(cfg, seed, removed);
    } catch (const std::exception& e) {
      out.failures.push_back("seed=" + std::to_string(seed) +
                             " removed=" + std::to_string(removed) + " stage=datagen reason=" +
                             e.what());
      continue;
    }
    NoiseStream master(static_cast<std::uint64_t>(seed), "master");
    for (ModelKind kind : cfg.model_set) {
      NoiseStream model_stream = master.substream("model-" + to_string(kind));
      TrainResult r;
      try {
        r = train(kind, bundle, cfg, model_stream);
      } catch (const std::exception& e) {
        out.failures.push_back("seed=" + std::to_string(seed) + " removed=" +
                               std::to_string(removed) + " model=" + to_string(kind) +
                               " stage=train reason=" + e.what());
        continue;
      }
      r.record.seed = seed;
      r.record.features_removed = removed;
      if (r.record.failed) {
        out.records.push_back(r.record);
        out.failures.push_back("seed=" + std::to_string(seed) + " removed=" +
                               std::to_string(removed) + " model=" + to_string(kind) +
                               " stage=train reason=" + r.record.failure_reason);
        continue;
      }
      EffectOptions eff;
      eff.n_posterior_samples = cfg.eval_n_posterior_samples;
      eff.seed = static_cast<std::uint64_t>(seed);
      eff.abduct_flipped_a = cfg.eval_abduct_flipped_a;
      eff.plug_in_treatment = cfg.eval_plug_in_treatment;
      try {
        const DatasetBundle* eval_bundle = &bundle;
        DatasetBundle split;
        if (cfg.eval_test_split_only) {
          split = bundle_subset(bundle, r.validation_rows);
          eval_bundle = &split;
        }
        MetricsRow row = evaluate_model(r.params, *eval_bundle, eff, seed, removed);
        out.rows.push_back(row);
        out.records.push_back(r.record);
      } catch (const std::exception& e) {
        out.failures.push_back("seed=" + std::to_string(seed) + " removed=" +
                               std::to_string(removed) + " model=" + to_string(kind) +
                               " stage=evaluate reason=" + e.what());
      }
    }
  }
  return out;
}

// ---- aggregation ---------------------------------------------------------------

struct AggregateCell {
  double mean = 0.0;
  double se = 0.0;
  bool se_defined = false;
  int n = 0;
};

struct AggregateReport {
  // metric -> (model, removed) -> cell
  std::vector<std::string> metrics{"pehe_at", "pehe_ty", "pehe_ay",
                                   "regret",  "acc_gap", "encoder_kl"};
  std::vector<std::string> models;  // canonical order, present models only
  std::vector<int> removed;         // sorted
  std::map<std::string, std::map<std::pair<std::string, int>, AggregateCell>> cells;
};

inline AggregateCell aggregate_values(const std::vector<double>& v) {
  AggregateCell c;
  c.n = static_cast<int>(v.size());
  if (v.empty()) return c;
  double sum = 0.0;
  for (double x : v) sum += x;
  c.mean = sum / c.n;
  if (c.n >= 2) {
    double ss = 0.0;
    for (double x : v) ss += (x - c.mean) * (x - c.mean);
    c.se = std::sqrt(ss / (c.n - 1)) / std::sqrt(static_cast<double>(c.n));
    c.se_defined = true;
  }
  return c;
}

inline AggregateReport aggregate(const std::vector<MetricsRow>& rows) {
  AggregateReport rep;
  const std::vector<std::string> canonical{"cfmlp", "cf4mlp", "cvae_a", "fcvae_1", "fcvae_2"};
  std::set<std::string> present_models;
  std::set<int> present_removed;
  for (const auto& r : rows) {
    present_models.insert(r.model);
    present_removed.insert(r.features_removed);
  }
  for (const auto& m : canonical)
    if (present_models.count(m)) rep.models.push_back(m);
  for (const auto& m : present_models)
    if (std::find(canonical.begin(), canonical.end(), m) == canonical.end())
      rep.models.push_back(m);
  rep.removed.assign(present_removed.begin(), present_removed.end());

  for (const auto& metric : rep.metrics) {
    for (const auto& model : rep.models) {
      for (int rem : rep.removed) {
        std::vector<double> vals;
        for (const auto& r : rows) {
          if (r.model != model || r.features_removed != rem) continue;
          if (metric == "pehe_at") vals.push_back(r.pehe_at);
          else if (metric == "pehe_ty") vals.push_back(r.pehe_ty);
          else if (metric == "pehe_ay") vals.push_back(r.pehe_ay);
          else if (metric == "regret") vals.push_back(r.regret);
          else if (metric == "acc_gap") vals.push_back(r.acc_gap);
          else if (metric == "encoder_kl" && r.encoder_kl) vals.push_back(*r.encoder_kl);
        }
        if (!vals.empty()) rep.cells[metric][{model, rem}] = aggregate_values(vals);
      }
    }
  }
  return rep;
}

// ---- report emission ------------------------------------------------------------

// Fixed-point with k significant digits (keeps trailing zeros, unlike %g).
inline std::string fmt_sig(double x, int k) {
  if (x == 0.0 || !std::isfinite(x)) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.*f", k - 1, x);
    return buf;
  }
  int mag = static_cast<int>(std::floor(std::log10(std::abs(x))));
  int decimals = std::max(0, k - 1 - mag);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, x);
  return buf;
}

inline std::string format_cell_markdown(const AggregateCell& c) {
  std::string s = fmt_sig(c.mean, 3) + " ± ";
  s += c.se_defined ? fmt_sig(c.se, 2) : "n/a";
  return s;
}

inline void emit_report_markdown(const AggregateReport& rep, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report: " + path);
  out << "# Experiment report\n";
  for (const auto& metric : rep.metrics) {
    out << "\n## " << metric << "\n\n";
    out << "| model |";
    for (int rem : rep.removed) out << " " << rem << " removed |";
    out << "\n|---|";
    for (std::size_t i = 0; i < rep.removed.size(); ++i) out << "---|";
    out << "\n";
    auto metric_it = rep.cells.find(metric);
    for (const auto& model : rep.models) {
      out << "| " << model << " |";
      for (int rem : rep.removed) {
        std::string cell;
        if (metric_it != rep.cells.end()) {
          auto it = metric_it->second.find({model, rem});
          if (it != metric_it->second.end()) cell = format_cell_markdown(it->second);
        }
        out << " " << cell << " |";
      }
      out << "\n";
    }
  }
}

inline void emit_report_csv(const AggregateReport& rep, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report: " + path);
  out << "metric,model,removed,mean,se,n_seeds\n";
  for (const auto& metric : rep.metrics) {
    auto metric_it = rep.cells.find(metric);
    if (metric_it == rep.cells.end()) continue;
    for (const auto& model : rep.models) {
      for (int rem : rep.removed) {
        auto it = metric_it->second.find({model, rem});
        if (it == metric_it->second.end()) continue;
        const AggregateCell& c = it->second;
        out << metric << ',' << model << ',' << rem << ',' << format_g17(c.mean) << ','
            << (c.se_defined ? format_g17(c.se) : "") << ',' << c.n << "\n";
      }
    }
  }
}

struct ReportCsvRow {
  std::string metric, model;
  int removed = 0;
  double mean = 0.0;
  double se = 0.0;
  bool se_defined = false;
  int n = 0;
};

inline std::vector<ReportCsvRow> read_report_csv(const std::string& path) {
  auto lines = read_all_lines(path);
  require(!lines.empty() && lines[0] == "metric,model,removed,mean,se,n_seeds",
          "report csv: unexpected header");
  std::vector<ReportCsvRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto cells = split_csv_line(lines[i]);
    require(cells.size() == 6, "report csv: wrong cell count");
    ReportCsvRow r;
    r.metric = cells[0];
    r.model = cells[1];
    r.removed = std::stoi(cells[2]);
    require(parse_double_strict(cells[3], r.mean), "report csv: bad mean");
    if (!cells[4].empty()) {
      require(parse_double_strict(cells[4], r.se), "report csv: bad se");
      r.se_defined = true;
    }
    r.n = std::stoi(cells[5]);
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---- full sweep ------------------------------------------------------------------

struct SweepOutputs {
  std::vector<MetricsRow> rows;
  std::vector<RunRecord> records;
  std::vector<std::string> failures;
};

// Sequential fold in seed order; results would merge identically under any
// per-seed parallel schedule because every run owns its streams.
inline SweepOutputs run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr) {
  validate(cfg);
  SweepOutputs out;
  for (int k = 0; k < cfg.exp_n_seeds; ++k) {
    long long seed = cfg.exp_base_seed + k;
    SeedOutcome one = run_single_seed(cfg, seed);
    out.rows.insert(out.rows.end(), one.rows.begin(), one.rows.end());
    out.records.insert(out.records.end(), one.records.begin(), one.records.end());
    out.failures.insert(out.failures.end(), one.failures.begin(), one.failures.end());
    if (log) {
      double secs = 0.0;
      for (const auto& r : one.records) secs += r.wall_seconds;
      (*log) << "seed " << seed << ": " << one.rows.size() << " rows, "
             << one.failures.size() << " failures, " << fmt_sig(secs, 3) << "s\n";
    }
  }
  return out;
}

inline void write_sweep_outputs(const SweepOutputs& sweep, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::vector<MetricsRow> rows = sweep.rows;
  std::sort(rows.begin(), rows.end(), [](const MetricsRow& a, const MetricsRow& b) {
    if (a.features_removed != b.features_removed) return a.features_removed < b.features_removed;
    if (a.model != b.model) return a.model < b.model;
    return a.seed < b.seed;
  });
  write_metrics_csv(rows, out_dir + "/rows.csv");
  AggregateReport rep = aggregate(rows);
  emit_report_markdown(rep, out_dir + "/report.md");
  emit_report_csv(rep, out_dir + "/report.csv");
  if (!sweep.failures.empty()) {
    std::ofstream fail(out_dir + "/failures.txt");
    for (const auto& f : sweep.failures) fail << f << "\n";
  }
}

}  // namespace fcvae
