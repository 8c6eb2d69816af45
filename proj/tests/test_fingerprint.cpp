#include <doctest.h>

#include "ganprint/encoder.hpp"
#include "ganprint/fingerprint.hpp"

#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <set>

using namespace ganprint;
using namespace ganprint::fingerprint;

namespace {


Eigen::MatrixXd fixture(int n, int d, std::uint64_t seed) {
  RngStream rng(seed);
  Eigen::MatrixXd m(n, d);
  for (int j = 0; j < d; ++j) {
    const double scale = 4.0 / (1 + j);  // distinct spectrum
    for (int i = 0; i < n; ++i) m(i, j) = scale * rng.normal() + 0.5 * j;
  }
  return m;
}

// Compare against the oracle: singular values and sign-normalised directions.
void check_against_oracle(const Eigen::MatrixXd& x, const SvdBasis& basis) {
  const Eigen::VectorXd mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd c = x.rowwise() - mean.transpose();
  const Eigen::MatrixXd cov = c.transpose() * c;
  std::vector<std::vector<double>> a(static_cast<std::size_t>(cov.rows()), std::vector<double>(static_cast<std::size_t>(cov.cols())));
  for (Eigen::Index i = 0; i < cov.rows(); ++i)
    for (Eigen::Index j = 0; j < cov.cols(); ++j) a[i][j] = cov(i, j);
  std::vector<double> values;
  std::vector<std::vector<double>> vectors;
  oracle::jacobi_eigen(a, values, vectors);
  for (Eigen::Index k = 0; k < basis.dim(); ++k) {
    CHECK(basis.singular_values(k) == doctest::Approx(std::sqrt(values[k])).epsilon(1e-6));
    auto v = vectors[k];
    std::size_t arg = 0;
    for (std::size_t i = 0; i < v.size(); ++i)
      if (std::abs(v[i]) > std::abs(v[arg])) arg = i;
    if (v[arg] < 0)
      for (auto& e : v) e = -e;
    double worst = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) worst = std::max(worst, std::abs(basis.components(k, i) - v[i]));
    CHECK(worst < 1e-6);
  }
  for (Eigen::Index i = 0; i < mean.size(); ++i) CHECK(basis.mean(i) == doctest::Approx(mean(i)).epsilon(1e-12));
}

}  // namespace

TEST_CASE("SVD basis matches an independent Jacobi eigensolver (covariance side)") {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto x = fixture(20, 6, seed);
    const auto basis = fit_svd(x, SvdPolicy::fixed(6));
    REQUIRE(basis.dim() == 6);
    check_against_oracle(x, basis);
    const Eigen::MatrixXd gram = basis.components * basis.components.transpose();
    CHECK((gram - Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("SVD via the sample Gram matrix agrees with the oracle (dim > n)") {
  const auto x = fixture(5, 8, 11);
  const auto basis = fit_svd(x, SvdPolicy::fixed(8));
  CHECK(basis.dim() == 4);  // rank of 5 centred samples
  CHECK_FALSE(basis.warnings.empty());
  check_against_oracle(x, basis);
}

TEST_CASE("variance target picks the smallest sufficient prefix") {
  const auto x = fixture(40, 6, 5);
  const auto full = fit_svd(x, SvdPolicy::fixed(6));
  double cum = 0;
  int expect = 0;
  for (double r : full.explained_variance_ratios) {
    cum += r;
    ++expect;
    if (cum >= 0.9) break;
  }
  CHECK(fit_svd(x, SvdPolicy::variance(0.9)).dim() == expect);
  CHECK(fit_svd(x, SvdPolicy::variance(1.0)).dim() == 6);
  double total = 0;
  for (double r : full.explained_variance_ratios) total += r;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(std::is_sorted(full.explained_variance_ratios.rbegin(), full.explained_variance_ratios.rend()));
}

TEST_CASE("SVD input validation") {
  CHECK_THROWS_AS(fit_svd(fixture(1, 3, 1), SvdPolicy::fixed(1)), UsageError);
  CHECK_THROWS_AS(SvdPolicy{}.validate(), UsageError);
  CHECK_THROWS_AS((SvdPolicy{0.9, 3}.validate()), UsageError);
  CHECK_THROWS_AS(SvdPolicy::variance(1.5).validate(), UsageError);
  auto bad = fixture(4, 3, 1);
  bad(0, 0) = std::nan("");
  CHECK_THROWS_AS(fit_svd(bad, SvdPolicy::fixed(1)), NumericalFailure);
  const auto flat = fit_svd(Eigen::MatrixXd::Ones(5, 3), SvdPolicy::fixed(2));
  CHECK(flat.dim() == 0);
  CHECK_FALSE(flat.warnings.empty());
}

TEST_CASE("projection is centred and linear") {
  const auto x = fixture(30, 5, 8);
  const auto basis = fit_svd(x, SvdPolicy::fixed(3));
  const Eigen::VectorXd mean = basis.mean;
  CHECK(project(basis, mean).values.norm() < 1e-12);
  const Eigen::VectorXd row = x.row(0).transpose();
  const auto fp = project(basis, row, "img", std::string("m"));
  CHECK(fp.values.size() == 3);
  CHECK(fp.model_id == "m");
  CHECK(fp.source_image_id == "img");
  const Eigen::VectorXd expect = basis.components * (row - mean);
  CHECK((fp.values - expect).norm() < 1e-12);
  // Projection of the centred training data has diagonal scatter equal to sigma^2.
  Eigen::MatrixXd p(30, 3);
  for (int i = 0; i < 30; ++i) p.row(i) = project(basis, Eigen::VectorXd(x.row(i).transpose())).values.transpose();
  const Eigen::MatrixXd scatter = p.transpose() * p;
  for (int k = 0; k < 3; ++k) CHECK(scatter(k, k) == doctest::Approx(basis.singular_values(k) * basis.singular_values(k)));
  CHECK(std::abs(scatter(0, 1)) < 1e-8 * scatter(0, 0));
  CHECK_THROWS_AS(project(basis, Eigen::VectorXd::Zero(4)), UsageError);
}

TEST_CASE("float and double input paths agree") {
  std::vector<std::vector<float>> rows;
  RngStream rng(3);
  for (int i = 0; i < 12; ++i) {
    std::vector<float> r(4);
    for (auto& v : r) v = static_cast<float>(rng.normal());
    rows.push_back(r);
  }
  Eigen::MatrixXd m(12, 4);
  for (int i = 0; i < 12; ++i)
    for (int j = 0; j < 4; ++j) m(i, j) = rows[i][j];
  const auto a = fit_svd(rows, SvdPolicy::fixed(2));
  const auto b = fit_svd(m, SvdPolicy::fixed(2));
  CHECK(a.checksum() == b.checksum());
  rows[3].pop_back();
  CHECK_THROWS_AS(fit_svd(rows, SvdPolicy::fixed(2)), UsageError);
}

TEST_CASE("stratified subset keeps every model and is seeded") {
  std::vector<std::string> ids;
  for (int i = 0; i < 50; ++i) ids.push_back(i < 40 ? "a" : (i < 48 ? "b" : "c"));
  const auto s = stratified_subset(ids, 0.25, 9);
  CHECK(std::is_sorted(s.begin(), s.end()));
  CHECK(std::set<std::size_t>(s.begin(), s.end()).size() == s.size());
  int na = 0, nb = 0, nc = 0;
  for (auto i : s) (ids[i] == "a" ? na : ids[i] == "b" ? nb : nc)++;
  CHECK(na == 10);
  CHECK(nb == 2);
  CHECK(nc == 1);  // rounds to 0.5 -> at least one
  CHECK(stratified_subset(ids, 0.25, 9) == s);
  CHECK(stratified_subset(ids, 0.25, 10) != s);
  CHECK(stratified_subset(ids, 1.0, 1).size() == ids.size());
  CHECK_THROWS_AS(stratified_subset(ids, 0.0, 1), UsageError);
}

TEST_CASE("activation extraction returns the L1 output") {
  const auto net = encoder::init_encoder(encoder::EncoderSpec{}, 4);
  Image img(32, 32, 3);
  RngStream rng(2);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  const auto act = extract_activation(net, img);
  CHECK(act.size() == 16u * 32 * 32);
  CHECK(act == encoder::forward(net, img).activations[0]);
  CHECK_THROWS_AS(extract_activation(net, Image(16, 16, 3)), UsageError);
}
