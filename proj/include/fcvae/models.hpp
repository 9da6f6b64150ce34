#pragma once

#include <array>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "fcvae/datagen.hpp"
#include "fcvae/dist.hpp"
#include "fcvae/matrix.hpp"
#include "fcvae/nn.hpp"
#include "fcvae/rng.hpp"
#include "fcvae/tape.hpp"

namespace fcvae {

enum class FcvaeVariant { V1, V2 };  // V1 feeds A to encoder and X-decoder, V2 does not
enum class YKind { Binary, Continuous };

enum class ModelKind { Cfmlp, Cf4mlp, CvaeA, Fcvae1, Fcvae2 };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Cfmlp: return "cfmlp";
    case ModelKind::Cf4mlp: return "cf4mlp";
    case ModelKind::CvaeA: return "cvae_a";
    case ModelKind::Fcvae1: return "fcvae_1";
    case ModelKind::Fcvae2: return "fcvae_2";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "cfmlp") return ModelKind::Cfmlp;
  if (s == "cf4mlp") return ModelKind::Cf4mlp;
  if (s == "cvae_a") return ModelKind::CvaeA;
  if (s == "fcvae_1") return ModelKind::Fcvae1;
  if (s == "fcvae_2") return ModelKind::Fcvae2;
  throw std::invalid_argument("unknown model kind: " + s);
}

struct PosteriorGaussian {
  std::vector<double> mean;
  std::vector<double> log_std;
};

// Network widths. Defaults: latent size 10, encoder/decoder hidden 20,
// TARNet hidden 100 with a 20-unit shared representation.
struct FcvaeDims {
  int d_x = 0;
  int d_z = 10;
  int xz_hidden = 20;
  int tarnet_hidden = 100;
  int rep = 20;
};

struct TarnetParams {
  MlpParams trunk;               // input -> rep
  std::vector<MlpParams> heads;  // rep -> head output, gated by the intervention value
};

struct FcvaeParams {
  FcvaeVariant variant = FcvaeVariant::V2;
  YKind y_kind = YKind::Continuous;
  bool heteroscedastic_y = true;
  double sigma_x = 1.0;
  FcvaeDims dims;
  MlpParams enc_mean, enc_log_std;  // x (+a for V1) -> d_z
  MlpParams dec_x;                  // z (+a for V1) -> d_x
  TarnetParams t_net;               // heads indexed by a
  TarnetParams y_net;               // heads indexed by 2a + t
  double pi_a = 0.5;
};

// A enters only concatenated to X: the encoder reads [x, a] and the decoder
// reconstructs the augmented vector. T and Y see Z alone; Y keeps TARNet
// gating over T only.
struct CvaeAParams {
  YKind y_kind = YKind::Continuous;
  bool heteroscedastic_y = true;
  double sigma_x = 1.0;
  FcvaeDims dims;
  MlpParams enc_mean, enc_log_std;  // [x, a] -> d_z
  MlpParams dec_x;                  // z -> d_x + 1
  MlpParams t_net;                  // z -> logit
  TarnetParams y_net;               // heads indexed by t
  double pi_a = 0.5;
};

struct CfmlpParams {
  MlpParams outcome;  // [x, a, t] -> y
  MlpParams treat;    // [x, a] -> logit
};

struct Cf4mlpParams {
  std::array<MlpParams, 4> outcome;  // index 2a + t, each x -> y
  std::array<MlpParams, 2> treat;    // index a, each x -> logit
};

using ModelParams = std::variant<CfmlpParams, Cf4mlpParams, CvaeAParams, FcvaeParams>;

inline ModelKind kind_of(const ModelParams& m) {
  if (std::holds_alternative<CfmlpParams>(m)) return ModelKind::Cfmlp;
  if (std::holds_alternative<Cf4mlpParams>(m)) return ModelKind::Cf4mlp;
  if (std::holds_alternative<CvaeAParams>(m)) return ModelKind::CvaeA;
  return std::get<FcvaeParams>(m).variant == FcvaeVariant::V1 ? ModelKind::Fcvae1
                                                              : ModelKind::Fcvae2;
}

inline int y_head_width(YKind kind, bool hetero) {
  return (kind == YKind::Continuous && hetero) ? 2 : 1;
}

// Zero the final layer so the net starts out emitting 0: posterior log-stds
// and heteroscedastic log-sigma outputs start at scale 1 instead of the wild
// values a Glorot draw can produce through exp().
inline void zero_last_layer(MlpParams& p) {
  p.weights.back().setZero();
  p.biases.back().setZero();
}

inline void zero_log_std_column(MlpParams& head) {
  head.weights.back().col(1).setZero();
  head.biases.back()(0, 1) = 0.0;
}

// ---- factories -------------------------------------------------------------

inline FcvaeParams make_fcvae(const FcvaeDims& dims, FcvaeVariant variant, YKind y_kind,
                              bool heteroscedastic_y, double sigma_x, double pi_a,
                              NoiseStream& init) {
  FcvaeParams p;
  p.variant = variant;
  p.y_kind = y_kind;
  p.heteroscedastic_y = heteroscedastic_y;
  p.sigma_x = sigma_x;
  p.dims = dims;
  p.pi_a = pi_a;
  int enc_in = dims.d_x + (variant == FcvaeVariant::V1 ? 1 : 0);
  int dec_in = dims.d_z + (variant == FcvaeVariant::V1 ? 1 : 0);
  p.enc_mean = make_mlp({enc_in, dims.xz_hidden, dims.d_z}, init);
  p.enc_log_std = make_mlp({enc_in, dims.xz_hidden, dims.d_z}, init);
  zero_last_layer(p.enc_log_std);
  p.dec_x = make_mlp({dec_in, dims.xz_hidden, dims.d_x}, init);
  p.t_net.trunk = make_mlp({dims.d_z, dims.tarnet_hidden, dims.rep}, init);
  for (int h = 0; h < 2; ++h)
    p.t_net.heads.push_back(make_mlp({dims.rep, dims.tarnet_hidden, 1}, init));
  p.y_net.trunk = make_mlp({dims.d_z, dims.tarnet_hidden, dims.rep}, init);
  int yw = y_head_width(y_kind, heteroscedastic_y);
  for (int h = 0; h < 4; ++h) {
    p.y_net.heads.push_back(make_mlp({dims.rep, dims.tarnet_hidden, yw}, init));
    if (yw == 2) zero_log_std_column(p.y_net.heads.back());
  }
  return p;
}

inline CvaeAParams make_cvae_a(const FcvaeDims& dims, YKind y_kind, bool heteroscedastic_y,
                               double sigma_x, double pi_a, NoiseStream& init) {
  CvaeAParams p;
  p.y_kind = y_kind;
  p.heteroscedastic_y = heteroscedastic_y;
  p.sigma_x = sigma_x;
  p.dims = dims;
  p.pi_a = pi_a;
  p.enc_mean = make_mlp({dims.d_x + 1, dims.xz_hidden, dims.d_z}, init);
  p.enc_log_std = make_mlp({dims.d_x + 1, dims.xz_hidden, dims.d_z}, init);
  zero_last_layer(p.enc_log_std);
  p.dec_x = make_mlp({dims.d_z, dims.xz_hidden, dims.d_x + 1}, init);
  p.t_net = make_mlp({dims.d_z, dims.tarnet_hidden, 1}, init);
  p.y_net.trunk = make_mlp({dims.d_z, dims.tarnet_hidden, dims.rep}, init);
  int yw = y_head_width(y_kind, heteroscedastic_y);
  for (int h = 0; h < 2; ++h) {
    p.y_net.heads.push_back(make_mlp({dims.rep, dims.tarnet_hidden, yw}, init));
    if (yw == 2) zero_log_std_column(p.y_net.heads.back());
  }
  return p;
}

inline CfmlpParams make_cfmlp(int d_x, int hidden, NoiseStream& init) {
  CfmlpParams p;
  p.outcome = make_mlp({d_x + 2, hidden, 1}, init);
  p.treat = make_mlp({d_x + 1, hidden, 1}, init);
  return p;
}

inline Cf4mlpParams make_cf4mlp(int d_x, int hidden, NoiseStream& init) {
  Cf4mlpParams p;
  for (int k = 0; k < 4; ++k) p.outcome[k] = make_mlp({d_x, hidden, 1}, init);
  for (int k = 0; k < 2; ++k) p.treat[k] = make_mlp({d_x, hidden, 1}, init);
  return p;
}

// ---- parameter enumeration (pack order) ------------------------------------

template <class P, class F>
void for_each_net(P& p, F&& f);

template <class F>
void for_each_net_impl(FcvaeParams& p, F&& f) {
  f(p.enc_mean);
  f(p.enc_log_std);
  f(p.dec_x);
  f(p.t_net.trunk);
  for (auto& h : p.t_net.heads) f(h);
  f(p.y_net.trunk);
  for (auto& h : p.y_net.heads) f(h);
}

template <class F>
void for_each_net_impl(CvaeAParams& p, F&& f) {
  f(p.enc_mean);
  f(p.enc_log_std);
  f(p.dec_x);
  f(p.t_net);
  f(p.y_net.trunk);
  for (auto& h : p.y_net.heads) f(h);
}

template <class F>
void for_each_net_impl(CfmlpParams& p, F&& f) {
  f(p.outcome);
  f(p.treat);
}

template <class F>
void for_each_net_impl(Cf4mlpParams& p, F&& f) {
  for (auto& n : p.outcome) f(n);
  for (auto& n : p.treat) f(n);
}

template <class P, class F>
void for_each_net(P& p, F&& f) {
  for_each_net_impl(p, std::forward<F>(f));
}
template <class P, class F>
void for_each_net(const P& p, F&& f) {
  for_each_net_impl(const_cast<P&>(p), [&](MlpParams& net) { f(const_cast<const MlpParams&>(net)); });
}

template <class P>
std::size_t params_count(const P& p) {
  std::size_t n = 0;
  for_each_net(p, [&](const MlpParams& net) { n += param_count(net); });
  return n;
}

template <class P>
std::vector<double> pack_params(const P& p) {
  std::vector<double> flat(params_count(p));
  double* dst = flat.data();
  for_each_net(p, [&](const MlpParams& net) {
    pack_into(net, dst);
    dst += param_count(net);
  });
  return flat;
}

template <class P>
void unpack_params(P& p, const std::vector<double>& flat) {
  require(flat.size() == params_count(p), "unpack_params: size mismatch");
  const double* src = flat.data();
  for_each_net(p, [&](MlpParams& net) {
    unpack_from(net, src);
    src += param_count(net);
  });
}

inline std::size_t params_count_any(const ModelParams& m) {
  return std::visit([](const auto& p) { return params_count(p); }, m);
}
inline std::vector<double> pack_params_any(const ModelParams& m) {
  return std::visit([](const auto& p) { return pack_params(p); }, m);
}
inline void unpack_params_any(ModelParams& m, const std::vector<double>& flat) {
  std::visit([&](auto& p) { unpack_params(p, flat); }, m);
}

template <class P>
bool params_finite(const P& p) {
  bool ok = true;
  for_each_net(p, [&](const MlpParams& net) {
    for (std::size_t l = 0; l < net.weights.size(); ++l)
      ok = ok && all_finite(net.weights[l]) && all_finite(net.biases[l]);
  });
  return ok;
}

// ---- batches ---------------------------------------------------------------

struct Batch {
  Matrix x;
  std::vector<int> a;
  std::vector<int> t;
  std::vector<double> y;
  int n() const { return static_cast<int>(a.size()); }
};

inline Batch batch_from_bundle(const DatasetBundle& b, const std::vector<int>& rows) {
  Batch out;
  out.x.resize(static_cast<Index>(rows.size()), b.x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.x.row(static_cast<Index>(i)) = b.x.row(rows[i]);
    out.a.push_back(b.a[rows[i]]);
    out.t.push_back(b.t_factual[rows[i]]);
    out.y.push_back(b.y_factual[rows[i]]);
  }
  return out;
}

inline Batch batch_from_bundle(const DatasetBundle& b) {
  std::vector<int> rows(b.n());
  std::iota(rows.begin(), rows.end(), 0);
  return batch_from_bundle(b, rows);
}

inline Matrix append_bit_column(const Matrix& x, const std::vector<int>& bits) {
  require(x.rows() == static_cast<Index>(bits.size()), "append_bit_column: length mismatch");
  Matrix out(x.rows(), x.cols() + 1);
  out.leftCols(x.cols()) = x;
  for (Index i = 0; i < out.rows(); ++i) out(i, x.cols()) = bits[i];
  return out;
}

inline Matrix append_const_column(const Matrix& x, double v) {
  Matrix out(x.rows(), x.cols() + 1);
  out.leftCols(x.cols()) = x;
  out.col(x.cols()).setConstant(v);
  return out;
}

// ---- plain (tape-free) forward passes --------------------------------------

inline std::pair<Matrix, Matrix> infer_posterior_batch(const FcvaeParams& p, const Matrix& x,
                                                       const std::vector<int>& a) {
  Matrix in = p.variant == FcvaeVariant::V1 ? append_bit_column(x, a) : x;
  return {mlp_forward(p.enc_mean, in), mlp_forward(p.enc_log_std, in)};
}

inline std::pair<Matrix, Matrix> infer_posterior_batch(const CvaeAParams& p, const Matrix& x,
                                                       const std::vector<int>& a) {
  Matrix in = append_bit_column(x, a);
  return {mlp_forward(p.enc_mean, in), mlp_forward(p.enc_log_std, in)};
}

template <class P>
PosteriorGaussian infer_posterior(const P& p, const std::vector<double>& x_row, int a) {
  Matrix x(1, static_cast<Index>(x_row.size()));
  for (std::size_t j = 0; j < x_row.size(); ++j) x(0, j) = x_row[j];
  auto [mean, log_std] = infer_posterior_batch(p, x, std::vector<int>{a});
  return {to_vector(mean), to_vector(log_std)};
}

inline Matrix decode_x_batch(const FcvaeParams& p, const Matrix& z, const std::vector<int>& a) {
  Matrix in = p.variant == FcvaeVariant::V1 ? append_bit_column(z, a) : z;
  return mlp_forward(p.dec_x, in);
}

inline Matrix decode_x_batch(const CvaeAParams& p, const Matrix& z) {
  return mlp_forward(p.dec_x, z);
}

// Exactly one head is evaluated; the other head's parameters cannot affect
// the output.
inline std::vector<double> decode_t_batch(const FcvaeParams& p, const Matrix& z, int a_do) {
  Matrix rep = mlp_forward(p.t_net.trunk, z);
  Matrix logit = mlp_forward(p.t_net.heads[a_do], rep);
  std::vector<double> out(static_cast<std::size_t>(logit.rows()));
  for (Index i = 0; i < logit.rows(); ++i) out[i] = floor_prob(sigmoid(logit(i, 0)));
  return out;
}

inline std::vector<double> decode_t_batch(const CvaeAParams& p, const Matrix& z) {
  Matrix logit = mlp_forward(p.t_net, z);
  std::vector<double> out(static_cast<std::size_t>(logit.rows()));
  for (Index i = 0; i < logit.rows(); ++i) out[i] = floor_prob(sigmoid(logit(i, 0)));
  return out;
}

struct YBatch {
  std::vector<double> mean;     // mu for continuous, pi for binary
  std::vector<double> log_std;  // continuous only; zeros when fixed
};

inline YBatch apply_y_head(const MlpParams& head, const Matrix& rep, YKind kind, bool hetero) {
  Matrix out = mlp_forward(head, rep);
  YBatch y;
  y.mean.resize(static_cast<std::size_t>(out.rows()));
  y.log_std.assign(static_cast<std::size_t>(out.rows()), 0.0);
  for (Index i = 0; i < out.rows(); ++i) {
    if (kind == YKind::Binary) {
      y.mean[i] = floor_prob(sigmoid(out(i, 0)));
    } else {
      y.mean[i] = out(i, 0);
      if (hetero) y.log_std[i] = out(i, 1);
    }
  }
  return y;
}

inline YBatch decode_y_batch(const FcvaeParams& p, const Matrix& z, int a_do, int t_do) {
  Matrix rep = mlp_forward(p.y_net.trunk, z);
  return apply_y_head(p.y_net.heads[2 * a_do + t_do], rep, p.y_kind, p.heteroscedastic_y);
}

inline YBatch decode_y_batch(const CvaeAParams& p, const Matrix& z, int t_do) {
  Matrix rep = mlp_forward(p.y_net.trunk, z);
  return apply_y_head(p.y_net.heads[t_do], rep, p.y_kind, p.heteroscedastic_y);
}

// Scalar views of the batched decoders.
inline double decode_t(const FcvaeParams& p, const std::vector<double>& z, int a) {
  Matrix zm(1, static_cast<Index>(z.size()));
  for (std::size_t j = 0; j < z.size(); ++j) zm(0, j) = z[j];
  return decode_t_batch(p, zm, a)[0];
}

struct OutcomeDist {
  YKind kind;
  double mean = 0.0;     // mu (continuous) or pi (binary)
  double log_std = 0.0;  // continuous only
};

inline OutcomeDist decode_y(const FcvaeParams& p, const std::vector<double>& z, int a, int t) {
  Matrix zm(1, static_cast<Index>(z.size()));
  for (std::size_t j = 0; j < z.size(); ++j) zm(0, j) = z[j];
  YBatch y = decode_y_batch(p, zm, a, t);
  return {p.y_kind, y.mean[0], y.log_std[0]};
}

inline std::vector<double> decode_x(const FcvaeParams& p, const std::vector<double>& z, int a) {
  Matrix zm(1, static_cast<Index>(z.size()));
  for (std::size_t j = 0; j < z.size(); ++j) zm(0, j) = z[j];
  return to_vector(decode_x_batch(p, zm, std::vector<int>{a}));
}

// ---- baseline predictors ----------------------------------------------------

inline std::vector<double> cfmlp_predict_batch(const CfmlpParams& p, const Matrix& x, int a_do,
                                               int t_do) {
  Matrix in = append_const_column(append_const_column(x, a_do), t_do);
  Matrix out = mlp_forward(p.outcome, in);
  return to_vector(out);
}

inline std::vector<double> cfmlp_treat_batch(const CfmlpParams& p, const Matrix& x, int a_do) {
  Matrix in = append_const_column(x, a_do);
  Matrix out = mlp_forward(p.treat, in);
  std::vector<double> v(static_cast<std::size_t>(out.rows()));
  for (Index i = 0; i < out.rows(); ++i) v[i] = floor_prob(sigmoid(out(i, 0)));
  return v;
}

inline double cfmlp_predict(const CfmlpParams& p, const std::vector<double>& x, int a, int t) {
  Matrix xm(1, static_cast<Index>(x.size()));
  for (std::size_t j = 0; j < x.size(); ++j) xm(0, j) = x[j];
  return cfmlp_predict_batch(p, xm, a, t)[0];
}

inline double cfmlp_treat(const CfmlpParams& p, const std::vector<double>& x, int a) {
  Matrix xm(1, static_cast<Index>(x.size()));
  for (std::size_t j = 0; j < x.size(); ++j) xm(0, j) = x[j];
  return cfmlp_treat_batch(p, xm, a)[0];
}

inline std::vector<double> cf4mlp_predict_batch(const Cf4mlpParams& p, const Matrix& x, int a_do,
                                                int t_do) {
  Matrix out = mlp_forward(p.outcome[2 * a_do + t_do], x);
  return to_vector(out);
}

inline std::vector<double> cf4mlp_treat_batch(const Cf4mlpParams& p, const Matrix& x, int a_do) {
  Matrix out = mlp_forward(p.treat[a_do], x);
  std::vector<double> v(static_cast<std::size_t>(out.rows()));
  for (Index i = 0; i < out.rows(); ++i) v[i] = floor_prob(sigmoid(out(i, 0)));
  return v;
}

inline double cf4mlp_predict(const Cf4mlpParams& p, const std::vector<double>& x, int a, int t) {
  Matrix xm(1, static_cast<Index>(x.size()));
  for (std::size_t j = 0; j < x.size(); ++j) xm(0, j) = x[j];
  return cf4mlp_predict_batch(p, xm, a, t)[0];
}

inline double cf4mlp_treat(const Cf4mlpParams& p, const std::vector<double>& x, int a) {
  Matrix xm(1, static_cast<Index>(x.size()));
  for (std::size_t j = 0; j < x.size(); ++j) xm(0, j) = x[j];
  return cf4mlp_treat_batch(p, xm, a)[0];
}

// ---- ELBO graphs -----------------------------------------------------------

namespace graph {

// log N(target | mean, sigma^2 I), summed over columns, one value per row.
inline Var gaussian_lpdf_rows_fixed(Tape& t, Var target, Var mean, double sigma) {
  Var d = t.sub(target, mean);
  Var sq = t.mul(d, d);
  Index cols = t.value(target).cols();
  double inv_var = 1.0 / (sigma * sigma);
  Var rs = t.scale(t.row_sum(sq), -0.5 * inv_var);
  return t.add_scalar(rs, -static_cast<double>(cols) * (std::log(sigma) + 0.5 * kLogTwoPi));
}

inline Var gaussian_lpdf_rows_hetero(Tape& t, Var target, Var mean, Var log_std) {
  Var d = t.sub(target, mean);
  Var w = t.mul(d, t.exp(t.scale(log_std, -1.0)));
  Var quad = t.scale(t.row_sum(t.mul(w, w)), -0.5);
  Var lp = t.sub(quad, t.row_sum(log_std));
  Index cols = t.value(target).cols();
  return t.add_scalar(lp, -0.5 * kLogTwoPi * static_cast<double>(cols));
}

// bits in {0,1} as a constant column; logits n x 1.
inline Var bernoulli_lpmf_rows(Tape& t, Var bits, Var logits) {
  Var p = t.clamp(t.sigmoid(logits), kProbFloor, 1.0 - kProbFloor);
  Var one_minus_p = t.add_scalar(t.scale(p, -1.0), 1.0);
  Var one_minus_bits = t.add_scalar(t.scale(bits, -1.0), 1.0);
  return t.add(t.mul(bits, t.log(p)), t.mul(one_minus_bits, t.log(one_minus_p)));
}

// Stacked-row index lists for gating: stacked layout is sample-major, S
// blocks of B rows.
inline std::vector<std::vector<int>> gate_groups(const std::vector<int>& key, int n_groups,
                                                 int S) {
  std::vector<std::vector<int>> groups(n_groups);
  int B = static_cast<int>(key.size());
  for (int s = 0; s < S; ++s)
    for (int i = 0; i < B; ++i) groups[key[i]].push_back(s * B + i);
  return groups;
}

}  // namespace graph

struct ElboGraph {
  std::vector<MlpVars> nets;  // registration order = pack order
  Var post_mean, post_log_std;
  Var lp_x, lp_t, lp_y, lp_z, neg_lq;  // B x 1, sample-averaged
  Var per_example;                     // B x 1
  Var total;                           // 1 x 1
};

namespace detail_elbo {

struct Common {
  Var z;        // (S*B) x d_z
  Var mean_t;   // tiled posterior mean
  Var lstd_t;   // tiled posterior log-std
  Var lp_z;     // (S*B) x 1
  Var neg_lq;   // (S*B) x 1
};

inline Common sample_latent(Tape& t, Var mean, Var log_std, int S, int d_z, NoiseStream& noise) {
  Common c;
  c.mean_t = t.tile_rows(mean, S);
  c.lstd_t = t.tile_rows(log_std, S);
  Index rows = t.value(c.mean_t).rows();
  Matrix u(rows, d_z);
  for (Index i = 0; i < u.size(); ++i) u.data()[i] = noise.normal();
  c.z = t.add(c.mean_t, t.mul(t.exp(c.lstd_t), t.constant(std::move(u))));

  // log p(z) under the standard-normal prior
  c.lp_z = t.add_scalar(t.scale(t.row_sum(t.mul(c.z, c.z)), -0.5),
                        -0.5 * kLogTwoPi * static_cast<double>(d_z));
  // -log q(z | .) at the sampled z
  Var d = t.sub(c.z, c.mean_t);
  Var w = t.mul(d, t.exp(t.scale(c.lstd_t, -1.0)));
  Var lq = t.add_scalar(t.sub(t.scale(t.row_sum(t.mul(w, w)), -0.5), t.row_sum(c.lstd_t)),
                        -0.5 * kLogTwoPi * static_cast<double>(d_z));
  c.neg_lq = t.scale(lq, -1.0);
  return c;
}

// Gated y log-likelihood over stacked rows; groups index heads.
inline Var gated_y_loglik(Tape& t, const std::vector<MlpVars>& heads, Var rep,
                          const std::vector<std::vector<int>>& groups, const Matrix& y_stacked,
                          YKind kind, bool hetero, int total_rows) {
  Var lp_y = t.constant(Matrix::Zero(total_rows, 1));
  for (std::size_t g = 0; g < heads.size(); ++g) {
    if (groups[g].empty()) continue;
    Var rep_g = t.select_rows(rep, groups[g]);
    Var out = mlp_forward(t, heads[g], rep_g);
    Matrix y_g(static_cast<Index>(groups[g].size()), 1);
    for (std::size_t i = 0; i < groups[g].size(); ++i) y_g(static_cast<Index>(i), 0) =
        y_stacked(groups[g][i], 0);
    Var y_const = t.constant(std::move(y_g));
    Var lp_g;
    if (kind == YKind::Binary) {
      lp_g = graph::bernoulli_lpmf_rows(t, y_const, out);
    } else if (hetero) {
      lp_g = graph::gaussian_lpdf_rows_hetero(t, y_const, t.cols(out, 0, 1), t.cols(out, 1, 1));
    } else {
      lp_g = graph::gaussian_lpdf_rows_fixed(t, y_const, out, 1.0);
    }
    lp_y = t.add(lp_y, t.scatter_rows(lp_g, groups[g], total_rows));
  }
  return lp_y;
}

inline Matrix stack_column(const std::vector<int>& v, int S) {
  int B = static_cast<int>(v.size());
  Matrix m(static_cast<Index>(S) * B, 1);
  for (int s = 0; s < S; ++s)
    for (int i = 0; i < B; ++i) m(s * B + i, 0) = v[i];
  return m;
}

inline Matrix stack_column(const std::vector<double>& v, int S) {
  int B = static_cast<int>(v.size());
  Matrix m(static_cast<Index>(S) * B, 1);
  for (int s = 0; s < S; ++s)
    for (int i = 0; i < B; ++i) m(s * B + i, 0) = v[i];
  return m;
}

}  // namespace detail_elbo

// Eq.-style per-example ELBO, n_samples posterior draws averaged per example.
inline ElboGraph build_elbo_graph(Tape& t, const FcvaeParams& p, const Batch& batch,
                                  int n_samples, NoiseStream& noise) {
  require(n_samples >= 1, "elbo: need at least one posterior sample");
  const int B = batch.n();
  const int S = n_samples;
  const int SB = S * B;
  ElboGraph g;

  MlpVars enc_mean = register_mlp(t, p.enc_mean);
  MlpVars enc_log_std = register_mlp(t, p.enc_log_std);
  MlpVars dec_x = register_mlp(t, p.dec_x);
  MlpVars t_trunk = register_mlp(t, p.t_net.trunk);
  std::vector<MlpVars> t_heads;
  for (auto& h : p.t_net.heads) t_heads.push_back(register_mlp(t, h));
  MlpVars y_trunk = register_mlp(t, p.y_net.trunk);
  std::vector<MlpVars> y_heads;
  for (auto& h : p.y_net.heads) y_heads.push_back(register_mlp(t, h));
  g.nets = {enc_mean, enc_log_std, dec_x, t_trunk};
  g.nets.insert(g.nets.end(), t_heads.begin(), t_heads.end());
  g.nets.push_back(y_trunk);
  g.nets.insert(g.nets.end(), y_heads.begin(), y_heads.end());

  bool with_a = p.variant == FcvaeVariant::V1;
  Matrix enc_in_m = with_a ? append_bit_column(batch.x, batch.a) : batch.x;
  Var enc_in = t.constant(std::move(enc_in_m));
  g.post_mean = mlp_forward(t, enc_mean, enc_in);
  g.post_log_std = mlp_forward(t, enc_log_std, enc_in);

  auto c = detail_elbo::sample_latent(t, g.post_mean, g.post_log_std, S, p.dims.d_z, noise);

  // x reconstruction
  Var dec_in = c.z;
  if (with_a) {
    Matrix a_col = detail_elbo::stack_column(batch.a, S);
    dec_in = t.concat_cols(c.z, t.constant(std::move(a_col)));
  }
  Var x_mean = mlp_forward(t, dec_x, dec_in);
  Matrix x_stacked(SB, batch.x.cols());
  for (int s = 0; s < S; ++s) x_stacked.middleRows(s * B, B) = batch.x;
  Var lp_x = graph::gaussian_lpdf_rows_fixed(t, t.constant(std::move(x_stacked)), x_mean,
                                             p.sigma_x);

  // t, gated by factual a
  auto a_groups = graph::gate_groups(batch.a, 2, S);
  Var t_rep = mlp_forward(t, t_trunk, c.z);
  Matrix t_stacked = detail_elbo::stack_column(batch.t, S);
  Var lp_t = t.constant(Matrix::Zero(SB, 1));
  for (int a = 0; a < 2; ++a) {
    if (a_groups[a].empty()) continue;
    Var rep_a = t.select_rows(t_rep, a_groups[a]);
    Var logit = mlp_forward(t, t_heads[a], rep_a);
    Matrix bits(static_cast<Index>(a_groups[a].size()), 1);
    for (std::size_t i = 0; i < a_groups[a].size(); ++i)
      bits(static_cast<Index>(i), 0) = t_stacked(a_groups[a][i], 0);
    Var lp = graph::bernoulli_lpmf_rows(t, t.constant(std::move(bits)), logit);
    lp_t = t.add(lp_t, t.scatter_rows(lp, a_groups[a], SB));
  }

  // y, gated by factual (a, t): head index 2a + t
  std::vector<int> at_key(B);
  for (int i = 0; i < B; ++i) at_key[i] = 2 * batch.a[i] + batch.t[i];
  auto at_groups = graph::gate_groups(at_key, 4, S);
  Var y_rep = mlp_forward(t, y_trunk, c.z);
  Matrix y_stacked = detail_elbo::stack_column(batch.y, S);
  Var lp_y = detail_elbo::gated_y_loglik(t, y_heads, y_rep, at_groups, y_stacked, p.y_kind,
                                         p.heteroscedastic_y, SB);

  Var per_row = t.add(t.add(t.add(lp_x, lp_t), t.add(lp_y, c.lp_z)), c.neg_lq);
  g.lp_x = t.sample_average(lp_x, S);
  g.lp_t = t.sample_average(lp_t, S);
  g.lp_y = t.sample_average(lp_y, S);
  g.lp_z = t.sample_average(c.lp_z, S);
  g.neg_lq = t.sample_average(c.neg_lq, S);
  g.per_example = t.sample_average(per_row, S);
  g.total = t.sum(g.per_example);
  return g;
}

inline ElboGraph build_elbo_graph(Tape& t, const CvaeAParams& p, const Batch& batch,
                                  int n_samples, NoiseStream& noise) {
  require(n_samples >= 1, "elbo: need at least one posterior sample");
  const int B = batch.n();
  const int S = n_samples;
  const int SB = S * B;
  ElboGraph g;

  MlpVars enc_mean = register_mlp(t, p.enc_mean);
  MlpVars enc_log_std = register_mlp(t, p.enc_log_std);
  MlpVars dec_x = register_mlp(t, p.dec_x);
  MlpVars t_net = register_mlp(t, p.t_net);
  MlpVars y_trunk = register_mlp(t, p.y_net.trunk);
  std::vector<MlpVars> y_heads;
  for (auto& h : p.y_net.heads) y_heads.push_back(register_mlp(t, h));
  g.nets = {enc_mean, enc_log_std, dec_x, t_net, y_trunk};
  g.nets.insert(g.nets.end(), y_heads.begin(), y_heads.end());

  Matrix xa = append_bit_column(batch.x, batch.a);
  Var enc_in = t.constant(xa);
  g.post_mean = mlp_forward(t, enc_mean, enc_in);
  g.post_log_std = mlp_forward(t, enc_log_std, enc_in);

  auto c = detail_elbo::sample_latent(t, g.post_mean, g.post_log_std, S, p.dims.d_z, noise);

  // the decoder reconstructs the augmented vector [x, a]
  Var x_mean = mlp_forward(t, dec_x, c.z);
  Matrix xa_stacked(SB, xa.cols());
  for (int s = 0; s < S; ++s) xa_stacked.middleRows(s * B, B) = xa;
  Var lp_x = graph::gaussian_lpdf_rows_fixed(t, t.constant(std::move(xa_stacked)), x_mean,
                                             p.sigma_x);

  Var logit = mlp_forward(t, t_net, c.z);
  Matrix t_stacked = detail_elbo::stack_column(batch.t, S);
  Var lp_t = graph::bernoulli_lpmf_rows(t, t.constant(t_stacked), logit);

  auto t_groups = graph::gate_groups(batch.t, 2, S);
  Var y_rep = mlp_forward(t, y_trunk, c.z);
  Matrix y_stacked = detail_elbo::stack_column(batch.y, S);
  Var lp_y = detail_elbo::gated_y_loglik(t, y_heads, y_rep, t_groups, y_stacked, p.y_kind,
                                         p.heteroscedastic_y, SB);

  Var per_row = t.add(t.add(t.add(lp_x, lp_t), t.add(lp_y, c.lp_z)), c.neg_lq);
  g.lp_x = t.sample_average(lp_x, S);
  g.lp_t = t.sample_average(lp_t, S);
  g.lp_y = t.sample_average(lp_y, S);
  g.lp_z = t.sample_average(c.lp_z, S);
  g.neg_lq = t.sample_average(c.neg_lq, S);
  g.per_example = t.sample_average(per_row, S);
  g.total = t.sum(g.per_example);
  return g;
}

struct ElboTerms {
  std::vector<double> log_px, log_pt, log_py, log_pz, neg_log_q;
  std::vector<double> per_example;
  double total = 0.0;
};

template <class P>
ElboTerms elbo(const P& p, const Batch& batch, int n_samples, NoiseStream& noise) {
  Tape t;
  ElboGraph g = build_elbo_graph(t, p, batch, n_samples, noise);
  ElboTerms out;
  out.log_px = to_vector(t.value(g.lp_x));
  out.log_pt = to_vector(t.value(g.lp_t));
  out.log_py = to_vector(t.value(g.lp_y));
  out.log_pz = to_vector(t.value(g.lp_z));
  out.neg_log_q = to_vector(t.value(g.neg_lq));
  out.per_example = to_vector(t.value(g.per_example));
  out.total = t.value(g.total)(0, 0);
  return out;
}

// ---- baseline losses (squared error + treatment log-loss) -------------------

struct LossGraph {
  std::vector<MlpVars> nets;
  Var total;  // to minimize
};

inline LossGraph build_loss_graph(Tape& t, const CfmlpParams& p, const Batch& batch,
                                  int /*n_samples*/, NoiseStream& /*noise*/) {
  LossGraph g;
  MlpVars outcome = register_mlp(t, p.outcome);
  MlpVars treat = register_mlp(t, p.treat);
  g.nets = {outcome, treat};

  Matrix xat = append_bit_column(append_bit_column(batch.x, batch.a), batch.t);
  Var pred = mlp_forward(t, outcome, t.constant(std::move(xat)));
  Var y_const = t.constant(detail_elbo::stack_column(batch.y, 1));
  Var d = t.sub(pred, y_const);
  Var sq = t.sum(t.mul(d, d));

  Matrix xa = append_bit_column(batch.x, batch.a);
  Var logit = mlp_forward(t, treat, t.constant(std::move(xa)));
  Var bits = t.constant(detail_elbo::stack_column(batch.t, 1));
  Var lp = t.sum(graph::bernoulli_lpmf_rows(t, bits, logit));

  g.total = t.sub(sq, lp);
  return g;
}

inline LossGraph build_loss_graph(Tape& t, const Cf4mlpParams& p, const Batch& batch,
                                  int /*n_samples*/, NoiseStream& /*noise*/) {
  LossGraph g;
  std::vector<MlpVars> outcome, treat;
  for (auto& n : p.outcome) outcome.push_back(register_mlp(t, n));
  for (auto& n : p.treat) treat.push_back(register_mlp(t, n));
  g.nets = outcome;
  g.nets.insert(g.nets.end(), treat.begin(), treat.end());

  const int B = batch.n();
  Var x_const = t.constant(batch.x);
  std::vector<int> at_key(B), a_key(B);
  for (int i = 0; i < B; ++i) {
    at_key[i] = 2 * batch.a[i] + batch.t[i];
    a_key[i] = batch.a[i];
  }
  auto at_groups = graph::gate_groups(at_key, 4, 1);
  auto a_groups = graph::gate_groups(a_key, 2, 1);

  Var total = t.constant(Matrix::Zero(1, 1));
  for (int k = 0; k < 4; ++k) {
    if (at_groups[k].empty()) continue;
    Var xg = t.select_rows(x_const, at_groups[k]);
    Var pred = mlp_forward(t, outcome[k], xg);
    Matrix yk(static_cast<Index>(at_groups[k].size()), 1);
    for (std::size_t i = 0; i < at_groups[k].size(); ++i) yk(static_cast<Index>(i), 0) =
        batch.y[at_groups[k][i]];
    Var d = t.sub(pred, t.constant(std::move(yk)));
    total = t.add(total, t.sum(t.mul(d, d)));
  }
  for (int a = 0; a < 2; ++a) {
    if (a_groups[a].empty()) continue;
    Var xg = t.select_rows(x_const, a_groups[a]);
    Var logit = mlp_forward(t, treat[a], xg);
    Matrix bits(static_cast<Index>(a_groups[a].size()), 1);
    for (std::size_t i = 0; i < a_groups[a].size(); ++i) bits(static_cast<Index>(i), 0) =
        batch.t[a_groups[a][i]];
    total = t.sub(total, t.sum(graph::bernoulli_lpmf_rows(t, t.constant(std::move(bits)), logit)));
  }
  g.total = total;
  return g;
}

// Unified objective for the trainer: "higher is better". Variational models
// return the ELBO, baselines the negated loss.
template <class P>
struct is_variational : std::bool_constant<std::is_same_v<P, FcvaeParams> ||
                                           std::is_same_v<P, CvaeAParams>> {};

template <class P>
std::pair<Var, std::vector<MlpVars>> build_objective(Tape& t, const P& p, const Batch& batch,
                                                     int n_samples, NoiseStream& noise) {
  if constexpr (is_variational<P>::value) {
    ElboGraph g = build_elbo_graph(t, p, batch, n_samples, noise);
    return {g.total, g.nets};
  } else {
    LossGraph g = build_loss_graph(t, p, batch, n_samples, noise);
    return {t.scale(g.total, -1.0), g.nets};
  }
}

}  // namespace fcvae
