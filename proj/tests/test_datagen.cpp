#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <numeric>

#include "fcvae/datagen.hpp"

using namespace fcvae;

namespace {

std::string temp_path(const std::string& name) {
  return std::string("/tmp/fcvae_test_") + name;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / v.size();
}

}  // namespace

TEST_CASE("clip") {
  CHECK(clip(1.2, 0.0, 1.0) == 1.0);
  CHECK(clip(0.5, 0.0, 1.0) == 0.5);
  CHECK(clip(-3.0, 0.0, 1.0) == 0.0);
  CHECK_THROWS_AS(clip(0.5, 1.0, 0.0), std::invalid_argument);
}

TEST_CASE("load_covariates_csv well-formed") {
  auto path = temp_path("cov_ok.csv");
  write_file(path, "u,v\n1,0.5\n0,2.5\n1,0\n");
  auto t = load_covariates_csv(path);
  CHECK(t.n == 3);
  CHECK(t.d() == 2);
  CHECK(t.is_binary[0]);
  CHECK_FALSE(t.is_binary[1]);
  CHECK(t.values(1, 1) == 2.5);
}

TEST_CASE("load_covariates_csv blank cell names the row") {
  auto path = temp_path("cov_blank.csv");
  write_file(path, "u,v\n1,0.5\n0,\n");
  CHECK_THROWS_WITH(load_covariates_csv(path), Catch::Matchers::ContainsSubstring("row 2"));
}

TEST_CASE("load_covariates_csv binary typing rule") {
  auto path = temp_path("cov_type.csv");
  write_file(path, "p,q\n0,0.2\n1,1\n0,0\n");
  auto t = load_covariates_csv(path);
  CHECK(t.is_binary[0]);
  CHECK_FALSE(t.is_binary[1]);
}

TEST_CASE("synth_covariates correlation profile (Monte-Carlo oracle)") {
  NoiseStream noise(91, "datagen");
  auto t = synth_covariates(1000, 6, 2, ConfounderProfile{}, noise);
  REQUIRE(t.d() == 8);
  auto col = [&](int j) {
    std::vector<double> v(t.n);
    for (int i = 0; i < t.n; ++i) v[i] = t.values(i, j);
    return v;
  };
  auto conf = col(0);
  double c1 = std::abs(detail::pearson(col(1), conf));
  double c2 = std::abs(detail::pearson(col(2), conf));
  CHECK(c1 > 0.6);
  CHECK(c1 < 0.95);
  CHECK(c1 > c2);
  double rest_max = 0.0;
  for (int j = 3; j < t.d(); ++j) rest_max = std::max(rest_max, std::abs(detail::pearson(col(j), conf)));
  CHECK(c2 > rest_max);
}

TEST_CASE("synth_covariates determinism and d_binary=0") {
  NoiseStream n1(5, "datagen"), n2(5, "datagen");
  auto a = synth_covariates(50, 4, 2, ConfounderProfile{}, n1);
  auto b = synth_covariates(50, 4, 2, ConfounderProfile{}, n2);
  CHECK(a.values == b.values);

  NoiseStream n3(5, "datagen");
  auto c = synth_covariates(50, 4, 0, ConfounderProfile{}, n3);
  CHECK(c.d() == 4);
  for (bool bin : c.is_binary) CHECK_FALSE(bin);
}

TEST_CASE("normalize closed form, idempotence, constant column") {
  CovariateTable t;
  t.n = 3;
  t.names = {"c"};
  t.is_binary = {false};
  t.values.resize(3, 1);
  t.values << 1.0, 2.0, 3.0;
  auto normed = normalize(t);
  CHECK_THAT(normed.values(0, 0), Catch::Matchers::WithinAbs(-1.2247, 1e-4));
  CHECK_THAT(normed.values(1, 0), Catch::Matchers::WithinAbs(0.0, 1e-12));
  CHECK_THAT(normed.values(2, 0), Catch::Matchers::WithinAbs(1.2247, 1e-4));

  auto twice = normalize(normed);
  CHECK((twice.values - normed.values).cwiseAbs().maxCoeff() < 1e-12);

  CovariateTable c;
  c.n = 3;
  c.names = {"flat"};
  c.is_binary = {false};
  c.values = Matrix::Constant(3, 1, 7.0);
  CHECK_THROWS_WITH(normalize(c), Catch::Matchers::ContainsSubstring("flat"));
}

TEST_CASE("sample_beta categorical fractions (Monte-Carlo oracle)") {
  GenConfig cfg;
  NoiseStream noise(123, "datagen");
  const int draws = 100000;
  int zeros = 0;
  double bin_sum = 0.0;
  for (int i = 0; i < draws; ++i) {
    auto beta = sample_beta({false, true}, cfg, noise);
    if (beta[0] == 0.0) ++zeros;
    bin_sum += beta[1];
    CHECK((beta[2] == 0.4 || beta[2] == 0.6));
  }
  CHECK_THAT(zeros / double(draws), Catch::Matchers::WithinAbs(0.5, 0.01));
  // binary mean: 0*0.6 + (0.1+0.2+0.3+0.4)*0.1 = 0.10
  CHECK_THAT(bin_sum / draws, Catch::Matchers::WithinAbs(0.10, 0.005));
}

TEST_CASE("generate_outcomes means at beta = 0") {
  GenConfig cfg;  // beta_a 6, omega -11
  Matrix x = Matrix::Zero(4, 2);
  std::vector<double> z{0.0, 0.0, 0.0, 0.0};
  std::vector<double> beta{0.0, 0.0, 0.0};
  NoiseStream noise(7, "datagen");
  const int reps = 20000;
  double m[4] = {0, 0, 0, 0};
  for (int r = 0; r < reps / 4; ++r) {
    Matrix y = generate_outcomes(x, z, beta, cfg, noise);
    for (int i = 0; i < 4; ++i)
      for (int c = 0; c < 4; ++c) m[c] += y(i, c);
  }
  for (int c = 0; c < 4; ++c) m[c] /= reps;
  // exp(0) = 1; -omega = 11; +beta_a on the A=1 surfaces
  CHECK_THAT(m[0], Catch::Matchers::WithinAbs(1.0, 0.03));
  CHECK_THAT(m[1], Catch::Matchers::WithinAbs(11.0, 0.03));
  CHECK_THAT(m[2], Catch::Matchers::WithinAbs(7.0, 0.03));
  CHECK_THAT(m[3], Catch::Matchers::WithinAbs(17.0, 0.03));
}

TEST_CASE("generate_outcomes fixed-row mean and unit noise (Monte-Carlo oracle)") {
  GenConfig cfg;
  const int n = 100000;
  Matrix x = Matrix::Constant(n, 2, 0.5);
  std::vector<double> z(n, -0.25);
  std::vector<double> beta{0.3, 0.1, 0.4};
  NoiseStream noise(11, "datagen");
  Matrix y = generate_outcomes(x, z, beta, cfg, noise);
  double lin = 0.5 * 0.3 + 0.5 * 0.1 + (-0.25) * 0.4;
  double want10 = lin + 11.0;
  double got = y.col(1).mean();
  CHECK_THAT(got, Catch::Matchers::WithinAbs(want10, 0.02));
  double sd = std::sqrt((y.col(1).array() - got).square().sum() / n);
  CHECK_THAT(sd, Catch::Matchers::WithinAbs(1.0, 0.02));
}

TEST_CASE("generate_outcomes rejects exp overflow") {
  GenConfig cfg;
  Matrix x = Matrix::Constant(1, 1, 100.0);
  std::vector<double> z{0.0};
  std::vector<double> beta{1.0, 0.0};
  NoiseStream noise(3, "datagen");
  // exp((100 + 0.5) * 1) ~ 6e43
  CHECK_THROWS_WITH(generate_outcomes(x, z, beta, cfg, noise),
                    Catch::Matchers::ContainsSubstring("row 0"));
}

TEST_CASE("generate_treatments probabilities") {
  GenConfig cfg;
  NoiseStream noise(13, "datagen");
  const int n = 100000;
  std::vector<double> z(n, 0.0);
  auto t = generate_treatments(z, cfg, noise);
  double m0 = std::accumulate(t.t_a0.begin(), t.t_a0.end(), 0.0) / n;
  double m1 = std::accumulate(t.t_a1.begin(), t.t_a1.end(), 0.0) / n;
  CHECK_THAT(m0, Catch::Matchers::WithinAbs(0.70, 0.005));
  CHECK_THAT(m1, Catch::Matchers::WithinAbs(0.40, 0.005));

  // clamp branch: z so large the probability saturates at 1
  NoiseStream noise2(17, "datagen");
  std::vector<double> zbig(200, 10.0);
  auto tb = generate_treatments(zbig, cfg, noise2);
  CHECK(std::accumulate(tb.t_a0.begin(), tb.t_a0.end(), 0) == 200);
}

TEST_CASE("generate_ihdp removes exactly the designated proxies") {
  NoiseStream noise(19, "datagen");
  auto table = synth_covariates(400, 6, 2, ConfounderProfile{}, noise);
  GenConfig cfg;
  cfg.features_to_remove = 2;
  NoiseStream gen(19, "gen");
  auto b = generate_ihdp(table, cfg, gen);
  REQUIRE(b.removed_columns.size() == 2);
  // correlation-ranking oracle: recompute rankings independently
  std::vector<double> conf(table.n);
  for (int i = 0; i < table.n; ++i) conf[i] = table.values(i, 0);
  std::vector<std::pair<double, std::string>> ranked;
  for (int j = 1; j < table.d(); ++j) {
    if (table.names[j] == "sensitive") continue;
    std::vector<double> col(table.n);
    for (int i = 0; i < table.n; ++i) col[i] = table.values(i, j);
    ranked.emplace_back(std::abs(detail::pearson(col, conf)), table.names[j]);
  }
  std::sort(ranked.begin(), ranked.end(), [](auto& a, auto& b) { return a.first > b.first; });
  CHECK(b.removed_columns[0] == ranked[0].second);
  CHECK(b.removed_columns[1] == ranked[1].second);
  CHECK(b.removed_columns[0] == "proxy_a");
  CHECK(b.removed_columns[1] == "proxy_b");
}

TEST_CASE("generate_ihdp factual consistency") {
  NoiseStream noise(23, "datagen");
  auto table = synth_covariates(200, 5, 3, ConfounderProfile{}, noise);
  GenConfig cfg;
  NoiseStream gen(23, "gen");
  auto b = generate_ihdp(table, cfg, gen);
  for (int i = 0; i < b.n(); ++i) {
    CHECK(b.t_factual[i] == b.t_at(i, b.a[i]));
    CHECK(b.y_factual[i] == b.y_at(i, b.t_factual[i], b.a[i]));
  }
}

TEST_CASE("generate_ihdp step-1 filter semantics") {
  // toy table, 10 rows, 2 of them sensitive=0 with original treatment=1
  CovariateTable t;
  t.n = 10;
  t.names = {"confounder", "f1", "sensitive", "orig_t"};
  t.is_binary = {false, false, true, true};
  t.values.resize(10, 4);
  NoiseStream noise(29, "datagen");
  for (int i = 0; i < 10; ++i) {
    t.values(i, 0) = noise.normal();
    t.values(i, 1) = noise.normal();
    t.values(i, 2) = i < 5 ? 0.0 : 1.0;
    t.values(i, 3) = (i == 1 || i == 3) ? 1.0 : 0.0;  // two offending rows
  }
  GenConfig cfg;
  cfg.apply_step1_filter = true;
  cfg.original_treatment_column = "orig_t";
  NoiseStream gen(29, "gen");
  auto b = generate_ihdp(t, cfg, gen);
  CHECK(b.n() == 8);

  GenConfig no_filter = cfg;
  no_filter.apply_step1_filter = false;
  NoiseStream gen2(29, "gen");
  auto b2 = generate_ihdp(t, no_filter, gen2);
  CHECK(b2.n() == 10);
}

TEST_CASE("generate_ihdp rejects missing designations") {
  NoiseStream noise(31, "datagen");
  auto table = synth_covariates(50, 4, 1, ConfounderProfile{}, noise);
  GenConfig cfg;
  cfg.sensitive_column = "nope";
  NoiseStream gen(31, "gen");
  CHECK_THROWS_WITH(generate_ihdp(table, cfg, gen), Catch::Matchers::ContainsSubstring("nope"));
}

TEST_CASE("bundle csv round-trip and schema errors") {
  NoiseStream noise(37, "datagen");
  auto table = synth_covariates(40, 4, 2, ConfounderProfile{}, noise);
  GenConfig cfg;
  cfg.features_to_remove = 1;
  NoiseStream gen(37, "gen");
  auto b = generate_ihdp(table, cfg, gen);
  auto path = temp_path("bundle_rt.csv");
  write_bundle_csv(b, path);
  auto r = read_bundle_csv(path);
  CHECK(r.n() == b.n());
  CHECK(r.x == b.x);
  CHECK(r.a == b.a);
  CHECK(r.t_factual == b.t_factual);
  CHECK(r.y_factual == b.y_factual);
  CHECK(r.y_cf == b.y_cf);
  CHECK(r.t_a0 == b.t_a0);
  CHECK(r.t_a1 == b.t_a1);
  CHECK(r.z_hidden == b.z_hidden);
  CHECK(r.beta == b.beta);
  CHECK(r.removed_columns == b.removed_columns);

  // drop the t_a1 column from the header
  auto text = slurp(path);
  auto pos = text.find(",t_a1");
  REQUIRE(pos != std::string::npos);
  text.erase(pos, 5);
  auto bad = temp_path("bundle_bad.csv");
  write_file(bad, text);
  CHECK_THROWS_WITH(read_bundle_csv(bad), Catch::Matchers::ContainsSubstring("t_a1"));
}

TEST_CASE("ground-truth A->Y effect at beta = 0 is beta_a (Monte-Carlo)") {
  const int n = 100000;
  NoiseStream noise(41, "datagen");
  Matrix x = Matrix::Zero(n, 1);
  std::vector<double> z(n, 0.0);
  std::vector<double> beta{0.0, 0.0};
  GenConfig cfg;
  Matrix y = generate_outcomes(x, z, beta, cfg, noise);
  // matched-t differences, both arms
  std::vector<double> diffs;
  diffs.reserve(2 * n);
  for (int i = 0; i < n; ++i) {
    diffs.push_back(y(i, 2) - y(i, 0));
    diffs.push_back(y(i, 3) - y(i, 1));
  }
  double m = mean_of(diffs);
  double var = 0.0;
  for (double d : diffs) var += (d - m) * (d - m);
  var /= diffs.size();
  double se = std::sqrt(var / diffs.size());
  CHECK_THAT(m, Catch::Matchers::WithinAbs(6.0, 3.0 * se));
}

TEST_CASE("ground-truth A->T effect at Z=0 is alpha1 - alpha0 (Monte-Carlo)") {
  const int n = 100000;
  NoiseStream noise(43, "datagen");
  std::vector<double> z(n, 0.0);
  GenConfig cfg;
  auto t = generate_treatments(z, cfg, noise);
  std::vector<double> diffs(n);
  for (int i = 0; i < n; ++i) diffs[i] = t.t_a1[i] - t.t_a0[i];
  double m = mean_of(diffs);
  double var = 0.0;
  for (double d : diffs) var += (d - m) * (d - m);
  var /= n;
  double se = std::sqrt(var / n);
  CHECK_THAT(m, Catch::Matchers::WithinAbs(-0.3, 3.0 * se));
}

TEST_CASE("feature removal never changes ground truth") {
  NoiseStream noise(47, "datagen");
  auto table = synth_covariates(300, 6, 2, ConfounderProfile{}, noise);
  GenConfig c0, c2;
  c0.features_to_remove = 0;
  c2.features_to_remove = 2;
  NoiseStream g0(77, "gen"), g2(77, "gen");
  auto b0 = generate_ihdp(table, c0, g0);
  auto b2 = generate_ihdp(table, c2, g2);
  CHECK(b0.z_hidden == b2.z_hidden);
  CHECK(b0.a == b2.a);
  CHECK(b0.y_cf == b2.y_cf);
  CHECK(b0.t_a0 == b2.t_a0);
  CHECK(b0.t_a1 == b2.t_a1);
  CHECK(b0.beta == b2.beta);
  CHECK(b0.x.cols() == b2.x.cols() + 2);
}

TEST_CASE("full pipeline determinism: byte-identical bundle files") {
  GenConfig cfg;
  cfg.features_to_remove = 1;
  auto make = [&](const std::string& path) {
    NoiseStream noise(53, "datagen");
    auto table = synth_covariates(120, 5, 2, ConfounderProfile{}, noise);
    NoiseStream gen(53, "gen");
    auto b = generate_ihdp(table, cfg, gen);
    write_bundle_csv(b, path);
  };
  auto p1 = temp_path("det1.csv"), p2 = temp_path("det2.csv");
  make(p1);
  make(p2);
  CHECK(slurp(p1) == slurp(p2));
}
