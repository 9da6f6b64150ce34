#pragma once

#include <fstream>
#include <vector>

#include "fcvae/csv.hpp"
#include "fcvae/dist.hpp"
#include "fcvae/models.hpp"

namespace fcvae {

struct EffectOptions {
  int n_posterior_samples = 10;
  std::uint64_t seed = 0;
  // Re-encode with the intervened a instead of the factual one (FCVAE-1 only;
  // the default is the abduction reading: condition the posterior on what was
  // actually observed).
  bool abduct_flipped_a = false;
  // Plug the expected treatment into the outcome input instead of mixing over
  // T. Only distinguishable for CFMLP, whose outcome net consumes t as a
  // coordinate; gated models interpolate heads by p either way.
  bool plug_in_treatment = false;
};

struct EffectEstimates {
  std::vector<double> ie_at_hat, ie_ay_hat, ie_ty_hat;
  std::vector<double> ie_at_true, ie_ay_true, ie_ty_true;
  int n_posterior_samples = 10;
};

// ---- ground truth from the bundle -------------------------------------------

inline std::vector<double> true_ie_ty(const DatasetBundle& b) {
  std::vector<double> v(b.n());
  for (int i = 0; i < b.n(); ++i) v[i] = b.y_at(i, 1, b.a[i]) - b.y_at(i, 0, b.a[i]);
  return v;
}

// Sampled counterfactual treatment bits, so values lie in {-1, 0, 1}.
inline std::vector<double> true_ie_at(const DatasetBundle& b) {
  std::vector<double> v(b.n());
  for (int i = 0; i < b.n(); ++i) v[i] = b.t_a1[i] - b.t_a0[i];
  return v;
}

inline std::vector<double> true_ie_ay(const DatasetBundle& b) {
  std::vector<double> v(b.n());
  for (int i = 0; i < b.n(); ++i) v[i] = b.y_at(i, b.t_a1[i], 1) - b.y_at(i, b.t_a0[i], 0);
  return v;
}

// ---- posterior sampling with per-row substreams ------------------------------

// (S*n) x d_z unit normals, stacked sample-major; row s*n + i belongs to
// example i. Each example owns a substream, so row order and row count of
// other examples never change its draws.
inline Matrix draw_noise_stacked(int n, int d_z, int S, const NoiseStream& base) {
  Matrix u(static_cast<Index>(S) * n, d_z);
  for (int i = 0; i < n; ++i) {
    NoiseStream sub = base.substream(static_cast<std::uint64_t>(i));
    for (int s = 0; s < S; ++s)
      for (int j = 0; j < d_z; ++j) u(static_cast<Index>(s) * n + i, j) = sub.normal();
  }
  return u;
}

inline Matrix reparam_stacked(const Matrix& mean, const Matrix& log_std, const Matrix& u,
                              int S) {
  int n = static_cast<int>(mean.rows());
  Matrix z(u.rows(), u.cols());
  for (int s = 0; s < S; ++s)
    for (int i = 0; i < n; ++i)
      for (Index j = 0; j < u.cols(); ++j) {
        Index r = static_cast<Index>(s) * n + i;
        z(r, j) = mean(i, j) + std::exp(log_std(i, j)) * u(r, j);
      }
  return z;
}

inline std::vector<double> average_samples(const std::vector<double>& stacked, int n, int S) {
  std::vector<double> out(n, 0.0);
  for (int s = 0; s < S; ++s)
    for (int i = 0; i < n; ++i) out[i] += stacked[static_cast<std::size_t>(s) * n + i];
  for (auto& v : out) v /= S;
  return out;
}

namespace detail_eff {

template <class P>
void check_finite(const P& p) {
  if (!params_finite(p))
    throw std::runtime_error("effects: model parameters are not finite (untrained or diverged)");
}

// Cached per-bundle state for the variational models: stacked posterior
// samples and TARNet trunk outputs. All arms share the same unit noise
// (common random numbers), so estimators with identical heads difference to
// exactly zero.
struct FcvaeState {
  int n = 0, S = 0;
  std::vector<int> a_stacked;
  Matrix z;      // factual-posterior samples
  Matrix t_rep;  // t trunk on z
  Matrix y_rep;  // y trunk on z
  // abduct_flipped_a only: per-arm samples and trunks
  bool flipped = false;
  Matrix z_arm[2], t_rep_arm[2], y_rep_arm[2];
};

inline FcvaeState make_state(const FcvaeParams& p, const DatasetBundle& b,
                             const EffectOptions& o) {
  check_finite(p);
  FcvaeState st;
  st.n = b.n();
  st.S = o.n_posterior_samples;
  st.a_stacked.resize(static_cast<std::size_t>(st.S) * st.n);
  for (int s = 0; s < st.S; ++s)
    for (int i = 0; i < st.n; ++i) st.a_stacked[static_cast<std::size_t>(s) * st.n + i] = b.a[i];
  NoiseStream base = NoiseStream(o.seed, "posterior-sampling");
  Matrix u = draw_noise_stacked(st.n, p.dims.d_z, st.S, base);
  auto [mean, lstd] = infer_posterior_batch(p, b.x, b.a);
  st.z = reparam_stacked(mean, lstd, u, st.S);
  st.t_rep = mlp_forward(p.t_net.trunk, st.z);
  st.y_rep = mlp_forward(p.y_net.trunk, st.z);
  st.flipped = o.abduct_flipped_a && p.variant == FcvaeVariant::V1;
  if (st.flipped) {
    for (int arm = 0; arm < 2; ++arm) {
      std::vector<int> a_arm(st.n, arm);
      auto [m2, l2] = infer_posterior_batch(p, b.x, a_arm);
      st.z_arm[arm] = reparam_stacked(m2, l2, u, st.S);
      st.t_rep_arm[arm] = mlp_forward(p.t_net.trunk, st.z_arm[arm]);
      st.y_rep_arm[arm] = mlp_forward(p.y_net.trunk, st.z_arm[arm]);
    }
  }
  return st;
}

inline std::vector<double> head_pi_t(const FcvaeParams& p, const Matrix& rep, int a_do) {
  Matrix logit = mlp_forward(p.t_net.heads[a_do], rep);
  std::vector<double> v(static_cast<std::size_t>(logit.rows()));
  for (Index i = 0; i < logit.rows(); ++i) v[i] = floor_prob(sigmoid(logit(i, 0)));
  return v;
}

inline std::vector<double> head_mu_y(const FcvaeParams& p, const Matrix& rep, int a_do,
                                     int t_do) {
  Matrix out = mlp_forward(p.y_net.heads[2 * a_do + t_do], rep);
  std::vector<double> v(static_cast<std::size_t>(out.rows()));
  for (Index i = 0; i < out.rows(); ++i)
    v[i] = p.y_kind == YKind::Binary ? floor_prob(sigmoid(out(i, 0))) : out(i, 0);
  return v;
}

// Interventional value under do(A = arm): E_z[p * mu_1 + (1-p) * mu_0].
inline std::vector<double> fcvae_value_do_a(const FcvaeParams& p, const FcvaeState& st,
                                            int arm) {
  const Matrix& t_rep = st.flipped ? st.t_rep_arm[arm] : st.t_rep;
  const Matrix& y_rep = st.flipped ? st.y_rep_arm[arm] : st.y_rep;
  auto pi = head_pi_t(p, t_rep, arm);
  auto mu0 = head_mu_y(p, y_rep, arm, 0);
  auto mu1 = head_mu_y(p, y_rep, arm, 1);
  std::vector<double> v(pi.size());
  for (std::size_t i = 0; i < pi.size(); ++i) v[i] = mu0[i] + pi[i] * (mu1[i] - mu0[i]);
  return average_samples(v, st.n, st.S);
}

struct CvaeState {
  int n = 0, S = 0;
  Matrix z_fact;           // encoder fed the factual a
  Matrix z_arm[2];         // encoder fed a = 0 / a = 1
  Matrix y_rep_fact;
  Matrix y_rep_arm[2];
};

inline CvaeState make_state(const CvaeAParams& p, const DatasetBundle& b,
                            const EffectOptions& o) {
  check_finite(p);
  CvaeState st;
  st.n = b.n();
  st.S = o.n_posterior_samples;
  NoiseStream base = NoiseStream(o.seed, "posterior-sampling");
  Matrix u = draw_noise_stacked(st.n, p.dims.d_z, st.S, base);
  auto [mean, lstd] = infer_posterior_batch(p, b.x, b.a);
  st.z_fact = reparam_stacked(mean, lstd, u, st.S);
  st.y_rep_fact = mlp_forward(p.y_net.trunk, st.z_fact);
  for (int arm = 0; arm < 2; ++arm) {
    std::vector<int> a_arm(st.n, arm);
    auto [m2, l2] = infer_posterior_batch(p, b.x, a_arm);
    st.z_arm[arm] = reparam_stacked(m2, l2, u, st.S);
    st.y_rep_arm[arm] = mlp_forward(p.y_net.trunk, st.z_arm[arm]);
  }
  return st;
}

inline std::vector<double> cvae_mu_y(const CvaeAParams& p, const Matrix& rep, int t_do) {
  Matrix out = mlp_forward(p.y_net.heads[t_do], rep);
  std::vector<double> v(static_cast<std::size_t>(out.rows()));
  for (Index i = 0; i < out.rows(); ++i)
    v[i] = p.y_kind == YKind::Binary ? floor_prob(sigmoid(out(i, 0))) : out(i, 0);
  return v;
}

inline std::vector<double> cvae_value_do_a(const CvaeAParams& p, const CvaeState& st, int arm) {
  auto pi = decode_t_batch(p, st.z_arm[arm]);
  auto mu0 = cvae_mu_y(p, st.y_rep_arm[arm], 0);
  auto mu1 = cvae_mu_y(p, st.y_rep_arm[arm], 1);
  std::vector<double> v(pi.size());
  for (std::size_t i = 0; i < pi.size(); ++i) v[i] = mu0[i] + pi[i] * (mu1[i] - mu0[i]);
  return average_samples(v, st.n, st.S);
}

// per-row a (factual) variants of the baseline batch predictors
inline std::vector<double> cfmlp_predict_rows(const CfmlpParams& p, const Matrix& x,
                                              const std::vector<int>& a, double t_val) {
  Matrix in = append_const_column(append_bit_column(x, a), t_val);
  return to_vector(mlp_forward(p.outcome, in));
}

inline std::vector<double> cf4mlp_predict_rows(const Cf4mlpParams& p, const Matrix& x,
                                               const std::vector<int>& a, int t_do) {
  std::vector<double> out(static_cast<std::size_t>(x.rows()));
  for (int arm = 0; arm < 2; ++arm) {
    std::vector<int> rows;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i] == arm) rows.push_back(static_cast<int>(i));
    if (rows.empty()) continue;
    Matrix xa(static_cast<Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) xa.row(static_cast<Index>(i)) = x.row(rows[i]);
    Matrix pred = mlp_forward(p.outcome[2 * arm + t_do], xa);
    for (std::size_t i = 0; i < rows.size(); ++i) out[rows[i]] = pred(static_cast<Index>(i), 0);
  }
  return out;
}

}  // namespace detail_eff

// ---- the three estimators ----------------------------------------------------

inline EffectEstimates compute_effects(const ModelParams& model, const DatasetBundle& b,
                                       const EffectOptions& o) {
  EffectEstimates e;
  e.n_posterior_samples = o.n_posterior_samples;
  e.ie_ty_true = true_ie_ty(b);
  e.ie_at_true = true_ie_at(b);
  e.ie_ay_true = true_ie_ay(b);
  const int n = b.n();

  if (const auto* p = std::get_if<FcvaeParams>(&model)) {
    auto st = detail_eff::make_state(*p, b, o);
    // T -> Y at the factual a: group stacked rows by a
    std::vector<double> mu0(st.a_stacked.size()), mu1(st.a_stacked.size());
    for (int arm = 0; arm < 2; ++arm) {
      auto m0 = detail_eff::head_mu_y(*p, st.y_rep, arm, 0);
      auto m1 = detail_eff::head_mu_y(*p, st.y_rep, arm, 1);
      for (std::size_t r = 0; r < st.a_stacked.size(); ++r)
        if (st.a_stacked[r] == arm) {
          mu0[r] = m0[r];
          mu1[r] = m1[r];
        }
    }
    std::vector<double> d(mu0.size());
    for (std::size_t r = 0; r < d.size(); ++r) d[r] = mu1[r] - mu0[r];
    e.ie_ty_hat = average_samples(d, n, st.S);

    // A -> T: head swap on the shared posterior samples
    {
      const Matrix& rep0 = st.flipped ? st.t_rep_arm[0] : st.t_rep;
      const Matrix& rep1 = st.flipped ? st.t_rep_arm[1] : st.t_rep;
      auto p0 = detail_eff::head_pi_t(*p, rep0, 0);
      auto p1 = detail_eff::head_pi_t(*p, rep1, 1);
      std::vector<double> dt(p0.size());
      for (std::size_t r = 0; r < dt.size(); ++r) dt[r] = p1[r] - p0[r];
      e.ie_at_hat = average_samples(dt, n, st.S);
    }

    // A -> Y: mixture over T inside each do arm
    auto v1 = detail_eff::fcvae_value_do_a(*p, st, 1);
    auto v0 = detail_eff::fcvae_value_do_a(*p, st, 0);
    e.ie_ay_hat.resize(n);
    for (int i = 0; i < n; ++i) e.ie_ay_hat[i] = v1[i] - v0[i];
  } else if (const auto* p = std::get_if<CvaeAParams>(&model)) {
    auto st = detail_eff::make_state(*p, b, o);
    auto m0 = detail_eff::cvae_mu_y(*p, st.y_rep_fact, 0);
    auto m1 = detail_eff::cvae_mu_y(*p, st.y_rep_fact, 1);
    std::vector<double> d(m0.size());
    for (std::size_t r = 0; r < d.size(); ++r) d[r] = m1[r] - m0[r];
    e.ie_ty_hat = average_samples(d, n, st.S);

    auto p0 = decode_t_batch(*p, st.z_arm[0]);
    auto p1 = decode_t_batch(*p, st.z_arm[1]);
    std::vector<double> dt(p0.size());
    for (std::size_t r = 0; r < dt.size(); ++r) dt[r] = p1[r] - p0[r];
    e.ie_at_hat = average_samples(dt, n, st.S);

    auto v1 = detail_eff::cvae_value_do_a(*p, st, 1);
    auto v0 = detail_eff::cvae_value_do_a(*p, st, 0);
    e.ie_ay_hat.resize(n);
    for (int i = 0; i < n; ++i) e.ie_ay_hat[i] = v1[i] - v0[i];
  } else if (const auto* p = std::get_if<CfmlpParams>(&model)) {
    detail_eff::check_finite(*p);
    auto y1 = detail_eff::cfmlp_predict_rows(*p, b.x, b.a, 1.0);
    auto y0 = detail_eff::cfmlp_predict_rows(*p, b.x, b.a, 0.0);
    e.ie_ty_hat.resize(n);
    for (int i = 0; i < n; ++i) e.ie_ty_hat[i] = y1[i] - y0[i];

    auto p1 = cfmlp_treat_batch(*p, b.x, 1);
    auto p0 = cfmlp_treat_batch(*p, b.x, 0);
    e.ie_at_hat.resize(n);
    for (int i = 0; i < n; ++i) e.ie_at_hat[i] = p1[i] - p0[i];

    e.ie_ay_hat.resize(n);
    std::array<std::vector<double>, 2> val;
    for (int arm = 0; arm < 2; ++arm) {
      auto pt = cfmlp_treat_batch(*p, b.x, arm);
      val[arm].resize(n);
      if (o.plug_in_treatment) {
        // feed the expected treatment as the t coordinate
        Matrix in = append_bit_column(b.x, std::vector<int>(n, arm));
        Matrix in_t(in.rows(), in.cols() + 1);
        in_t.leftCols(in.cols()) = in;
        for (int i = 0; i < n; ++i) in_t(i, in.cols()) = pt[i];
        Matrix pred = mlp_forward(p->outcome, in_t);
        for (int i = 0; i < n; ++i) val[arm][i] = pred(i, 0);
      } else {
        auto y1a = cfmlp_predict_batch(*p, b.x, arm, 1);
        auto y0a = cfmlp_predict_batch(*p, b.x, arm, 0);
        for (int i = 0; i < n; ++i) val[arm][i] = y0a[i] + pt[i] * (y1a[i] - y0a[i]);
      }
    }
    for (int i = 0; i < n; ++i) e.ie_ay_hat[i] = val[1][i] - val[0][i];
  } else {
    const auto& p4 = std::get<Cf4mlpParams>(model);
    detail_eff::check_finite(p4);
    auto y1 = detail_eff::cf4mlp_predict_rows(p4, b.x, b.a, 1);
    auto y0 = detail_eff::cf4mlp_predict_rows(p4, b.x, b.a, 0);
    e.ie_ty_hat.resize(n);
    for (int i = 0; i < n; ++i) e.ie_ty_hat[i] = y1[i] - y0[i];

    auto p1 = cf4mlp_treat_batch(p4, b.x, 1);
    auto p0 = cf4mlp_treat_batch(p4, b.x, 0);
    e.ie_at_hat.resize(n);
    for (int i = 0; i < n; ++i) e.ie_at_hat[i] = p1[i] - p0[i];

    e.ie_ay_hat.resize(n);
    std::array<std::vector<double>, 2> val;
    for (int arm = 0; arm < 2; ++arm) {
      auto pt = cf4mlp_treat_batch(p4, b.x, arm);
      auto y1a = cf4mlp_predict_batch(p4, b.x, arm, 1);
      auto y0a = cf4mlp_predict_batch(p4, b.x, arm, 0);
      val[arm].resize(n);
      for (int i = 0; i < n; ++i) val[arm][i] = y0a[i] + pt[i] * (y1a[i] - y0a[i]);
    }
    for (int i = 0; i < n; ++i) e.ie_ay_hat[i] = val[1][i] - val[0][i];
  }
  return e;
}

inline std::vector<double> estimate_ie_ty(const ModelParams& m, const DatasetBundle& b,
                                          const EffectOptions& o) {
  return compute_effects(m, b, o).ie_ty_hat;
}
inline std::vector<double> estimate_ie_at(const ModelParams& m, const DatasetBundle& b,
                                          const EffectOptions& o) {
  return compute_effects(m, b, o).ie_at_hat;
}
inline std::vector<double> estimate_ie_ay(const ModelParams& m, const DatasetBundle& b,
                                          const EffectOptions& o) {
  return compute_effects(m, b, o).ie_ay_hat;
}

// Predicted outcome means under do(T=0) and do(T=1) at the factual a, shared
// posterior samples across both arms. Policy derivation builds on this.
inline std::pair<std::vector<double>, std::vector<double>> predict_mu_y_both_t(
    const ModelParams& model, const DatasetBundle& b, const EffectOptions& o) {
  const int n = b.n();
  std::vector<double> mu0(n), mu1(n);
  if (const auto* p = std::get_if<FcvaeParams>(&model)) {
    auto st = detail_eff::make_state(*p, b, o);
    std::vector<double> s0(st.a_stacked.size()), s1(st.a_stacked.size());
    for (int arm = 0; arm < 2; ++arm) {
      auto m0 = detail_eff::head_mu_y(*p, st.y_rep, arm, 0);
      auto m1 = detail_eff::head_mu_y(*p, st.y_rep, arm, 1);
      for (std::size_t r = 0; r < st.a_stacked.size(); ++r)
        if (st.a_stacked[r] == arm) {
          s0[r] = m0[r];
          s1[r] = m1[r];
        }
    }
    mu0 = average_samples(s0, n, st.S);
    mu1 = average_samples(s1, n, st.S);
  } else if (const auto* p = std::get_if<CvaeAParams>(&model)) {
    auto st = detail_eff::make_state(*p, b, o);
    mu0 = average_samples(detail_eff::cvae_mu_y(*p, st.y_rep_fact, 0), n, st.S);
    mu1 = average_samples(detail_eff::cvae_mu_y(*p, st.y_rep_fact, 1), n, st.S);
  } else if (const auto* p = std::get_if<CfmlpParams>(&model)) {
    detail_eff::check_finite(*p);
    mu0 = detail_eff::cfmlp_predict_rows(*p, b.x, b.a, 0.0);
    mu1 = detail_eff::cfmlp_predict_rows(*p, b.x, b.a, 1.0);
  } else {
    const auto& p4 = std::get<Cf4mlpParams>(model);
    detail_eff::check_finite(p4);
    mu0 = detail_eff::cf4mlp_predict_rows(p4, b.x, b.a, 0);
    mu1 = detail_eff::cf4mlp_predict_rows(p4, b.x, b.a, 1);
  }
  return {mu0, mu1};
}

// ---- single-example posterior-mean prediction --------------------------------

struct HeadQuery {
  enum class Kind { PiT, MuY } kind = Kind::MuY;
  int a = 0;
  int t = 0;
};

// Average of the queried head over n samples from q(z | x, a_factual). The
// posterior always conditions on the factual a (abduction), whatever the
// query intervenes on.
inline double posterior_mean_prediction(const ModelParams& model, const std::vector<double>& x,
                                        int a_factual, const HeadQuery& q, int n_samples,
                                        NoiseStream& noise) {
  if (const auto* p = std::get_if<FcvaeParams>(&model)) {
    detail_eff::check_finite(*p);
    auto post = infer_posterior(*p, x, a_factual);
    double acc = 0.0;
    for (int s = 0; s < n_samples; ++s) {
      auto z = gaussian_sample_reparam(post.mean, post.log_std, noise);
      if (q.kind == HeadQuery::Kind::PiT) {
        acc += decode_t(*p, z, q.a);
      } else {
        acc += decode_y(*p, z, q.a, q.t).mean;
      }
    }
    return acc / n_samples;
  }
  if (const auto* p = std::get_if<CvaeAParams>(&model)) {
    detail_eff::check_finite(*p);
    auto post = infer_posterior(*p, x, a_factual);
    double acc = 0.0;
    for (int s = 0; s < n_samples; ++s) {
      auto zv = gaussian_sample_reparam(post.mean, post.log_std, noise);
      Matrix zm(1, static_cast<Index>(zv.size()));
      for (std::size_t j = 0; j < zv.size(); ++j) zm(0, j) = zv[j];
      if (q.kind == HeadQuery::Kind::PiT) {
        acc += decode_t_batch(*p, zm)[0];
      } else {
        acc += detail_eff::cvae_mu_y(*p, mlp_forward(p->y_net.trunk, zm), q.t)[0];
      }
    }
    return acc / n_samples;
  }
  if (const auto* p = std::get_if<CfmlpParams>(&model)) {
    detail_eff::check_finite(*p);
    return q.kind == HeadQuery::Kind::PiT ? cfmlp_treat(*p, x, q.a)
                                          : cfmlp_predict(*p, x, q.a, q.t);
  }
  const auto& p4 = std::get<Cf4mlpParams>(model);
  detail_eff::check_finite(p4);
  return q.kind == HeadQuery::Kind::PiT ? cf4mlp_treat(p4, x, q.a)
                                        : cf4mlp_predict(p4, x, q.a, q.t);
}

inline void write_effects_csv(const EffectEstimates& e, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << "row_id,ie_at_hat,ie_ay_hat,ie_ty_hat,ie_at_true,ie_ay_true,ie_ty_true\n";
  for (std::size_t i = 0; i < e.ie_at_hat.size(); ++i) {
    out << i << ',' << format_g17(e.ie_at_hat[i]) << ',' << format_g17(e.ie_ay_hat[i]) << ','
        << format_g17(e.ie_ty_hat[i]) << ',' << format_g17(e.ie_at_true[i]) << ','
        << format_g17(e.ie_ay_true[i]) << ',' << format_g17(e.ie_ty_true[i]) << "\n";
  }
}

// ---- discrete exact-inference oracle -----------------------------------------

// Finite-support SCM with the same factorization as the generative model:
// p(z) p(a) p(x|z,a) p(t|z,a) p(y|z,a,t). Conditional tables are row-
// stochastic over their last index.
struct DiscreteScm {
  int nz = 0, na = 2, nx = 0, nt = 2, ny = 0;
  std::vector<double> y_values;       // ny outcome values
  std::vector<double> p_z;            // [z]
  std::vector<double> p_a;            // [a]
  std::vector<double> p_x_given_za;   // [z][a][x]
  std::vector<double> p_t_given_za;   // [z][a][t]
  std::vector<double> p_y_given_zat;  // [z][a][t][y]

  double px(int z, int a, int x) const { return p_x_given_za[(z * na + a) * nx + x]; }
  double pt(int z, int a, int t) const { return p_t_given_za[(z * na + a) * nt + t]; }
  double py(int z, int a, int t, int y) const {
    return p_y_given_zat[((z * na + a) * nt + t) * ny + y];
  }

  void validate() const {
    auto check_rows = [](const std::vector<double>& tab, int width, const char* name) {
      require(width > 0 && tab.size() % width == 0, std::string(name) + ": bad table shape");
      for (std::size_t r = 0; r < tab.size() / width; ++r) {
        double s = 0.0;
        for (int k = 0; k < width; ++k) s += tab[r * width + k];
        require(std::abs(s - 1.0) < 1e-9, std::string(name) + ": row does not sum to 1");
      }
    };
    check_rows(p_z, nz, "p_z");
    check_rows(p_a, na, "p_a");
    check_rows(p_x_given_za, nx, "p_x_given_za");
    check_rows(p_t_given_za, nt, "p_t_given_za");
    check_rows(p_y_given_zat, ny, "p_y_given_zat");
    require(static_cast<int>(y_values.size()) == ny, "y_values: wrong length");
  }
};

// E[Y | do(T=t), X=x, A=a] as the abduction integral: posterior over Z given
// the observed (x, a), then the conditional outcome mean at the forced t.
inline double discrete_do_t(const DiscreteScm& m, int t_do, int x, int a) {
  double norm = 0.0;
  std::vector<double> w(m.nz);
  for (int z = 0; z < m.nz; ++z) {
    w[z] = m.p_z[z] * m.px(z, a, x);
    norm += w[z];
  }
  if (norm <= 0.0)
    throw std::runtime_error("discrete_do_t: conditioning event (x, a) has zero probability");
  double e = 0.0;
  for (int z = 0; z < m.nz; ++z) {
    double ey = 0.0;
    for (int y = 0; y < m.ny; ++y) ey += m.y_values[y] * m.py(z, a, t_do, y);
    e += (w[z] / norm) * ey;
  }
  return e;
}

// Same quantity by brute force: enumerate the truncated-graph joint with T
// pinned, then take the conditional expectation given (x, a).
inline double discrete_do_t_truncated(const DiscreteScm& m, int t_do, int x, int a) {
  double num = 0.0, den = 0.0;
  for (int z = 0; z < m.nz; ++z)
    for (int a2 = 0; a2 < m.na; ++a2)
      for (int x2 = 0; x2 < m.nx; ++x2)
        for (int y = 0; y < m.ny; ++y) {
          double pj = m.p_z[z] * m.p_a[a2] * m.px(z, a2, x2) * m.py(z, a2, t_do, y);
          if (a2 == a && x2 == x) {
            num += pj * m.y_values[y];
            den += pj;
          }
        }
  if (den <= 0.0)
    throw std::runtime_error(
        "discrete_do_t_truncated: conditioning event (x, a) has zero probability");
  return num / den;
}

// E[Y | do(A=a'), X=x]: abduct Z from x alone, then marginalize T through its
// intervened mechanism, as the mixture estimator does.
inline double discrete_do_a(const DiscreteScm& m, int a_do, int x) {
  double norm = 0.0;
  std::vector<double> w(m.nz, 0.0);
  for (int z = 0; z < m.nz; ++z) {
    for (int a = 0; a < m.na; ++a) w[z] += m.p_z[z] * m.p_a[a] * m.px(z, a, x);
    norm += w[z];
  }
  if (norm <= 0.0)
    throw std::runtime_error("discrete_do_a: conditioning event x has zero probability");
  double e = 0.0;
  for (int z = 0; z < m.nz; ++z) {
    double ez = 0.0;
    for (int t = 0; t < m.nt; ++t) {
      double ey = 0.0;
      for (int y = 0; y < m.ny; ++y) ey += m.y_values[y] * m.py(z, a_do, t, y);
      ez += m.pt(z, a_do, t) * ey;
    }
    e += (w[z] / norm) * ez;
  }
  return e;
}

// Brute-force twin of discrete_do_a: the abduction weights come from the full
// factual joint, the outcome from an explicitly enumerated mutilated joint.
inline double discrete_do_a_truncated(const DiscreteScm& m, int a_do, int x) {
  std::vector<double> w(m.nz, 0.0);
  double norm = 0.0;
  for (int z = 0; z < m.nz; ++z) {
    for (int a = 0; a < m.na; ++a)
      for (int x2 = 0; x2 < m.nx; ++x2)
        for (int t = 0; t < m.nt; ++t)
          for (int y = 0; y < m.ny; ++y) {
            double pj = m.p_z[z] * m.p_a[a] * m.px(z, a, x2) * m.pt(z, a, t) * m.py(z, a, t, y);
            if (x2 == x) w[z] += pj;
          }
    norm += w[z];
  }
  if (norm <= 0.0)
    throw std::runtime_error(
        "discrete_do_a_truncated: conditioning event x has zero probability");
  double e = 0.0;
  for (int z = 0; z < m.nz; ++z) {
    double ez = 0.0;
    for (int t = 0; t < m.nt; ++t)
      for (int y = 0; y < m.ny; ++y)
        ez += m.pt(z, a_do, t) * m.py(z, a_do, t, y) * m.y_values[y];
    e += (w[z] / norm) * ez;
  }
  return e;
}

}  // namespace fcvae
