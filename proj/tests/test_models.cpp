#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fcvae/gradcheck.hpp"
#include "fcvae/models.hpp"

using namespace fcvae;

namespace {

FcvaeDims toy_dims(int d_x = 3) {
  FcvaeDims d;
  d.d_x = d_x;
  d.d_z = 2;
  d.xz_hidden = 4;
  d.tarnet_hidden = 5;
  d.rep = 3;
  return d;
}

template <class P>
void zero_all(P& p) {
  for_each_net(p, [](MlpParams& net) {
    for (auto& w : net.weights) w.setZero();
    for (auto& b : net.biases) b.setZero();
  });
}

Batch toy_batch(int n, int d_x, std::uint64_t seed) {
  NoiseStream s(seed, "batch");
  Batch b;
  b.x.resize(n, d_x);
  for (Index i = 0; i < b.x.size(); ++i) b.x.data()[i] = s.normal();
  for (int i = 0; i < n; ++i) {
    b.a.push_back(s.uniform() < 0.5 ? 1 : 0);
    b.t.push_back(s.uniform() < 0.5 ? 1 : 0);
    b.y.push_back(s.normal() * 2.0 + 1.0);
  }
  // make sure both a groups appear
  if (n >= 2) {
    b.a[0] = 0;
    b.a[1] = 1;
  }
  return b;
}

// straight-line re-computation, independent of Matrix machinery
double oracle_forward(const MlpParams& p, std::vector<double> h) {
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    std::vector<double> z(static_cast<std::size_t>(p.weights[l].cols()), 0.0);
    for (std::size_t j = 0; j < z.size(); ++j) {
      double acc = p.biases[l](0, static_cast<Index>(j));
      for (std::size_t i = 0; i < h.size(); ++i)
        acc += h[i] * p.weights[l](static_cast<Index>(i), static_cast<Index>(j));
      z[j] = acc;
    }
    if (l + 1 < p.weights.size())
      for (auto& v : z) v = v >= 0.0 ? v : std::exp(v) - 1.0;
    h = std::move(z);
  }
  return h[0];
}

}  // namespace

TEST_CASE("infer_posterior zero-weight encoder is the prior") {
  NoiseStream init(1, "init");
  auto p = make_fcvae(toy_dims(), FcvaeVariant::V1, YKind::Continuous, true, 1.0, 0.5, init);
  zero_all(p);
  auto post = infer_posterior(p, {1.0, -2.0, 0.7}, 1);
  for (double m : post.mean) CHECK(m == 0.0);
  for (double s : post.log_std) CHECK(s == 0.0);
}

TEST_CASE("FCVAE-2 posterior and decoder ignore a; FCVAE-1 does not") {
  NoiseStream init(2, "init");
  auto p2 = make_fcvae(toy_dims(), FcvaeVariant::V2, YKind::Continuous, true, 1.0, 0.5, init);
  std::vector<double> x{0.4, -0.9, 1.3};
  auto q0 = infer_posterior(p2, x, 0);
  auto q1 = infer_posterior(p2, x, 1);
  CHECK(q0.mean == q1.mean);
  CHECK(q0.log_std == q1.log_std);
  std::vector<double> z{0.3, -0.8};
  CHECK(decode_x(p2, z, 0) == decode_x(p2, z, 1));

  NoiseStream init2(3, "init");
  auto p1 = make_fcvae(toy_dims(), FcvaeVariant::V1, YKind::Continuous, true, 1.0, 0.5, init2);
  auto r0 = infer_posterior(p1, x, 0);
  auto r1 = infer_posterior(p1, x, 1);
  CHECK(r0.mean != r1.mean);
  CHECK(decode_x(p1, z, 0) != decode_x(p1, z, 1));
}

TEST_CASE("decode_x zero weights and closed-form log-lik") {
  FcvaeDims dims;
  dims.d_x = 25;
  NoiseStream init(4, "init");
  auto p = make_fcvae(dims, FcvaeVariant::V2, YKind::Continuous, true, 1.0, 0.5, init);
  zero_all(p);
  std::vector<double> z(dims.d_z, 0.3);
  auto mean = decode_x(p, z, 0);
  REQUIRE(mean.size() == 25);
  for (double m : mean) CHECK(m == 0.0);
  std::vector<double> zero_ls(25, 0.0);
  double ll = gaussian_log_pdf(mean, mean, zero_ls);
  CHECK_THAT(ll, Catch::Matchers::WithinAbs(25.0 * -0.918939, 1e-4));
}

TEST_CASE("decode_x batch equals per-row") {
  NoiseStream init(5, "init");
  auto p = make_fcvae(toy_dims(4), FcvaeVariant::V1, YKind::Continuous, true, 1.0, 0.5, init);
  NoiseStream zs(6, "z");
  Matrix z(7, 2);
  for (Index i = 0; i < z.size(); ++i) z.data()[i] = zs.normal();
  std::vector<int> a(7, 1);
  Matrix batch = decode_x_batch(p, z, a);
  for (Index r = 0; r < z.rows(); ++r) {
    auto row = decode_x(p, {z(r, 0), z(r, 1)}, 1);
    for (Index c = 0; c < batch.cols(); ++c)
      CHECK_THAT(batch(r, c), Catch::Matchers::WithinRel(row[c], 1e-13));
  }
}

TEST_CASE("decode_t gating: unselected head has exactly zero influence") {
  NoiseStream init(7, "init");
  auto p = make_fcvae(toy_dims(), FcvaeVariant::V1, YKind::Continuous, true, 1.0, 0.5, init);
  std::vector<double> z{0.5, -0.2};
  double before = decode_t(p, z, 0);
  for (auto& w : p.t_net.heads[1].weights) w.array() += 13.7;
  for (auto& b : p.t_net.heads[1].biases) b.array() -= 4.2;
  double after = decode_t(p, z, 0);
  CHECK(before == after);

  double other = decode_t(p, z, 1);
  CHECK(before != other);
}

TEST_CASE("decode_t zero weights gives one half") {
  NoiseStream init(8, "init");
  auto p = make_fcvae(toy_dims(), FcvaeVariant::V2, YKind::Continuous, true, 1.0, 0.5, init);
  zero_all(p);
  CHECK(decode_t(p, {0.1, 0.2}, 0) == 0.5);
  CHECK(decode_t(p, {0.1, 0.2}, 1) == 0.5);
}

TEST_CASE("decode_y gating and zero-weight defaults") {
  NoiseStream init(9, "init");
  auto p = make_fcvae(toy_dims(), FcvaeVariant::V2, YKind::Continuous, true, 1.0, 0.5, init);
  std::vector<double> z{0.5, -0.4};
  auto before = decode_y(p, z, 0, 0);
  for (int h = 1; h < 4; ++h) {
    for (auto& w : p.y_net.heads[h].weights) w.array() += 3.3;
  }
  auto after = decode_y(p, z, 0, 0);
  CHECK(before.mean == after.mean);
  CHECK(before.log_std == after.log_std);

  zero_all(p);
  auto d = decode_y(p, z, 1, 1);
  CHECK(d.mean == 0.0);
  CHECK(d.log_std == 0.0);  // variance 1

  NoiseStream init2(10, "init");
  auto pb = make_fcvae(toy_dims(), FcvaeVariant::V2, YKind::Binary, false, 1.0, 0.5, init2);
  zero_all(pb);
  auto db = decode_y(pb, z, 0, 1);
  CHECK(db.mean == 0.5);  // pi
}

TEST_CASE("elbo with prior encoder: z terms vanish, total is the data log-lik") {
  NoiseStream init(11, "init");
  auto p = make_fcvae(toy_dims(), FcvaeVariant::V1, YKind::Continuous, true, 1.0, 0.5, init);
  // zero only the encoder so q(z|.) = N(0, I) = p(z)
  for (auto& w : p.enc_mean.weights) w.setZero();
  for (auto& b : p.enc_mean.biases) b.setZero();
  for (auto& w : p.enc_log_std.weights) w.setZero();
  for (auto& b : p.enc_log_std.biases) b.setZero();

  Batch b = toy_batch(6, 3, 21);
  NoiseStream noise(22, "posterior-sampling");
  auto terms = elbo(p, b, 10, noise);
  for (int i = 0; i < b.n(); ++i) {
    CHECK(terms.log_pz[i] + terms.neg_log_q[i] == 0.0);
    CHECK_THAT(terms.per_example[i],
               Catch::Matchers::WithinAbs(terms.log_px[i] + terms.log_pt[i] + terms.log_py[i],
                                          1e-9));
  }
  double sum = 0.0;
  for (double v : terms.per_example) sum += v;
  CHECK_THAT(terms.total, Catch::Matchers::WithinRel(sum, 1e-12));
}

namespace {

// 1-D trapezoid marginal log-likelihood for a d_z = 1 model.
template <class P>
double quadrature_marginal(const P& p, const std::vector<double>& x, int a, int t_obs,
                           double y_obs) {
  const int pts = 4001;
  const double lo = -10.0, hi = 10.0;
  const double h = (hi - lo) / (pts - 1);
  double acc = 0.0;
  Matrix zm(1, 1);
  for (int k = 0; k < pts; ++k) {
    double z = lo + k * h;
    zm(0, 0) = z;
    double lp = -0.5 * z * z - 0.5 * kLogTwoPi;  // prior
    // x likelihood
    std::vector<double> xa = x;
    Matrix mean_x;
    if constexpr (std::is_same_v<P, FcvaeParams>) {
      mean_x = decode_x_batch(p, zm, std::vector<int>{a});
    } else {
      mean_x = decode_x_batch(p, zm);
      xa.push_back(static_cast<double>(a));
    }
    for (std::size_t j = 0; j < xa.size(); ++j)
      lp += gaussian_log_pdf(xa[j], mean_x(0, static_cast<Index>(j)), std::log(p.sigma_x));
    // t likelihood
    double pt;
    if constexpr (std::is_same_v<P, FcvaeParams>) {
      pt = decode_t_batch(p, zm, a)[0];
    } else {
      pt = decode_t_batch(p, zm)[0];
    }
    lp += bernoulli_log_pmf(t_obs, pt);
    // y likelihood
    YBatch yb;
    if constexpr (std::is_same_v<P, FcvaeParams>) {
      yb = decode_y_batch(p, zm, a, t_obs);
    } else {
      yb = decode_y_batch(p, zm, t_obs);
    }
    lp += gaussian_log_pdf(y_obs, yb.mean[0], yb.log_std[0]);
    double w = (k == 0 || k == pts - 1) ? 0.5 * h : h;
    acc += w * std::exp(lp);
  }
  return std::log(acc);
}

}  // namespace

TEST_CASE("ELBO never exceeds the quadrature marginal (d_z = 1 toy)") {
  for (int trial = 0; trial < 20; ++trial) {
    FcvaeDims dims = toy_dims(2);
    dims.d_z = 1;
    NoiseStream init(400 + trial, "init");
    auto p = make_fcvae(dims, FcvaeVariant::V1, YKind::Continuous, true, 1.0, 0.5, init);

    Batch b;
    NoiseStream ex(500 + trial, "example");
    b.x.resize(1, 2);
    b.x << ex.normal(), ex.normal();
    b.a = {trial % 2};
    b.t = {(trial / 2) % 2};
    b.y = {ex.normal()};

    double marginal = quadrature_marginal(p, {b.x(0, 0), b.x(0, 1)}, b.a[0], b.t[0], b.y[0]);

    // Monte-Carlo ELBO: repeated single-sample estimates
    const int reps = 400;
    double sum = 0.0, sumsq = 0.0;
    NoiseStream noise(600 + trial, "posterior-sampling");
    for (int r = 0; r < reps; ++r) {
      NoiseStream sub = noise.substream(static_cast<std::uint64_t>(r));
      double e = elbo(p, b, 1, sub).per_example[0];
      sum += e;
      sumsq += e * e;
    }
    double mean = sum / reps;
    double se = std::sqrt((sumsq / reps - mean * mean) / reps);
    INFO("trial " << trial << " elbo " << mean << " marginal " << marginal << " se " << se);
    CHECK(mean <= marginal + 3.0 * se);
  }
}

TEST_CASE("elbo sample counts agree in expectation") {
  NoiseStream init(13, "init");
  auto p = make_fcvae(toy_dims(), FcvaeVariant::V1, YKind::Continuous, true, 1.0, 0.5, init);
  Batch b = toy_batch(3, 3, 31);
  NoiseStream base(37, "posterior-sampling");
  const int reps = 1000;
  double s1 = 0.0, sq1 = 0.0, s10 = 0.0, sq10 = 0.0;
  for (int r = 0; r < reps; ++r) {
    NoiseStream n1 = base.substream(static_cast<std::uint64_t>(2 * r));
    NoiseStream n10 = base.substream(static_cast<std::uint64_t>(2 * r + 1));
    double e1 = elbo(p, b, 1, n1).total;
    double e10 = elbo(p, b, 10, n10).total;
    s1 += e1;
    sq1 += e1 * e1;
    s10 += e10;
    sq10 += e10 * e10;
  }
  double m1 = s1 / reps, m10 = s10 / reps;
  double v1 = sq1 / reps - m1 * m1, v10 = sq10 / reps - m10 * m10;
  double se = std::sqrt(v1 / reps + v10 / reps);
  CHECK_THAT(m1 - m10, Catch::Matchers::WithinAbs(0.0, 3.0 * se));
}

TEST_CASE("cfmlp flip semantics and forward oracle") {
  NoiseStream init(17, "init");
  auto p = make_cfmlp(3, 8, init);
  std::vector<double> x{0.2, -1.0, 0.8};
  // zero weights: constant over all (a, t)
  auto pz = p;
  for (auto& w : pz.outcome.weights) w.setZero();
  for (auto& b : pz.outcome.biases) b.setZero();
  CHECK(cfmlp_predict(pz, x, 0, 0) == cfmlp_predict(pz, x, 1, 1));

  // random params match a straight-line oracle on the concatenated input
  double got = cfmlp_predict(p, x, 1, 0);
  double want = oracle_forward(p.outcome, {0.2, -1.0, 0.8, 1.0, 0.0});
  CHECK_THAT(got, Catch::Matchers::WithinAbs(want, 1e-12));

  double gt = cfmlp_treat(p, x, 1);
  double wt = floor_prob(sigmoid(oracle_forward(p.treat, {0.2, -1.0, 0.8, 1.0})));
  CHECK_THAT(gt, Catch::Matchers::WithinAbs(wt, 1e-12));

  CHECK(cfmlp_predict(p, x, 1, 0) != cfmlp_predict(p, x, 1, 1));
}

TEST_CASE("cf4mlp routing is disjoint and exhaustive") {
  NoiseStream init(19, "init");
  auto p = make_cf4mlp(2, 6, init);
  std::vector<double> x{0.5, -0.5};
  double base00 = cf4mlp_predict(p, x, 0, 0);
  for (auto& w : p.outcome[3].weights) w.array() += 9.0;
  CHECK(cf4mlp_predict(p, x, 0, 0) == base00);

  for (int a = 0; a < 2; ++a)
    for (int t = 0; t < 2; ++t) {
      double got = cf4mlp_predict(p, x, a, t);
      double want = oracle_forward(p.outcome[2 * a + t], x);
      CHECK_THAT(got, Catch::Matchers::WithinAbs(want, 1e-12));
    }

  auto pz = p;
  for (auto& n : pz.outcome) {
    for (auto& w : n.weights) w.setZero();
    for (auto& b : n.biases) b.setZero();
  }
  for (int a = 0; a < 2; ++a)
    for (int t = 0; t < 2; ++t) CHECK(cf4mlp_predict(pz, x, a, t) == 0.0);
}

namespace {

template <class P>
double elbo_grad_check(P params, const Batch& batch, int n_samples, std::uint64_t noise_seed) {
  std::vector<double> theta = pack_params(params);
  LossWithGrad f = [&](std::span<const double> w) {
    P local = params;
    unpack_params(local, std::vector<double>(w.begin(), w.end()));
    Tape t;
    NoiseStream frozen(noise_seed, "grad-check");
    auto [objective, nets] = build_objective(t, local, batch, n_samples, frozen);
    t.backward(objective);
    LossEval e;
    e.value = t.value(objective)(0, 0);
    e.grad.resize(w.size());
    double* dst = e.grad.data();
    for (auto& net : nets) {
      read_grads(t, net, dst);
      std::size_t n = 0;
      for (std::size_t l = 0; l < net.weights.size(); ++l)
        n += static_cast<std::size_t>(t.value(net.weights[l]).size() +
                                      t.value(net.biases[l]).size());
      dst += n;
    }
    return e;
  };
  return grad_check(f, theta);
}

}  // namespace

TEST_CASE("full ELBO gradient check, all variational models") {
  Batch b = toy_batch(4, 3, 71);
  {
    NoiseStream init(73, "init");
    auto p = make_fcvae(toy_dims(), FcvaeVariant::V1, YKind::Continuous, true, 1.0, 0.5, init);
    CHECK(elbo_grad_check(p, b, 2, 74) < 1e-4);
  }
  {
    NoiseStream init(75, "init");
    auto p = make_fcvae(toy_dims(), FcvaeVariant::V2, YKind::Continuous, true, 1.0, 0.5, init);
    CHECK(elbo_grad_check(p, b, 2, 76) < 1e-4);
  }
  {
    NoiseStream init(77, "init");
    auto p = make_cvae_a(toy_dims(), YKind::Continuous, true, 1.0, 0.5, init);
    CHECK(elbo_grad_check(p, b, 2, 78) < 1e-4);
  }
}

TEST_CASE("binary-outcome ELBO gradient check") {
  Batch b = toy_batch(4, 3, 81);
  for (auto& y : b.y) y = y > 1.0 ? 1.0 : 0.0;
  NoiseStream init(83, "init");
  auto p = make_fcvae(toy_dims(), FcvaeVariant::V1, YKind::Binary, false, 1.0, 0.5, init);
  CHECK(elbo_grad_check(p, b, 2, 84) < 1e-4);
}

TEST_CASE("baseline loss gradient checks") {
  Batch b = toy_batch(6, 3, 91);
  {
    NoiseStream init(93, "init");
    auto p = make_cfmlp(3, 5, init);
    CHECK(elbo_grad_check(p, b, 1, 94) < 1e-4);
  }
  {
    NoiseStream init(95, "init");
    auto p = make_cf4mlp(3, 5, init);
    // ensure every (a, t) cell is populated so all nets get gradient
    b.a = {0, 0, 1, 1, 0, 1};
    b.t = {0, 1, 0, 1, 1, 0};
    CHECK(elbo_grad_check(p, b, 1, 96) < 1e-4);
  }
}

TEST_CASE("ELBO gradient of unselected heads is exactly zero") {
  Batch b = toy_batch(4, 3, 97);
  b.a = {0, 0, 0, 0};  // only head a=0 selected
  b.t = {1, 0, 1, 0};
  NoiseStream init(98, "init");
  auto p = make_fcvae(toy_dims(), FcvaeVariant::V1, YKind::Continuous, true, 1.0, 0.5, init);
  Tape t;
  NoiseStream frozen(99, "grad-check");
  auto [objective, nets] = build_objective(t, p, b, 3, frozen);
  t.backward(objective);
  // nets order: enc_mean enc_log_std dec_x t_trunk t_h0 t_h1 y_trunk y_h0..3
  const MlpVars& t_h1 = nets[5];
  CHECK(t.grad(t_h1.weights[0]).isZero(0.0));
  // heads for a=1: indices 2*1+0=2 and 2*1+1=3 of y heads, i.e. nets[9], nets[10]
  CHECK(t.grad(nets[9].weights[0]).isZero(0.0));
  CHECK(t.grad(nets[10].weights[0]).isZero(0.0));
  // selected heads do receive gradient
  CHECK_FALSE(t.grad(nets[4].weights[0]).isZero(0.0));
}
