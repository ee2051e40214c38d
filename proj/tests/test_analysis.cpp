#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "analysis.hpp"
#include "datagen.hpp"
#include "philox.hpp"

#include <Eigen/QR>

#include <cmath>
#include <numeric>

using namespace flab;
using doctest::Approx;

namespace {

Mat gaussian(int rows, int cols, std::uint64_t seed) {
  PhiloxStream rng(seed, 0);
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

Mat orthonormal(int d, int k, std::uint64_t seed) {
  Eigen::HouseholderQR<Mat> qr(gaussian(d, k, seed));
  return qr.householderQ() * Mat::Identity(d, k);
}

SpectrumReport spectrum_of(std::vector<double> ev) {
  SpectrumReport s;
  s.eigenvalues = std::move(ev);
  for (double v : s.eigenvalues) s.total += v;
  return s;
}

SubspaceBasis basis(const Mat& q, int factor = 0) {
  SubspaceBasis b;
  b.factor = factor;
  b.q = q;
  return b;
}

int matrix_rank(const Mat& m) {
  Eigen::FullPivLU<Mat> lu(m);
  lu.setThreshold(1e-9);
  return static_cast<int>(lu.rank());
}

}  // namespace

TEST_CASE("pca spectrum basics") {
  PhiloxStream rng(1, 0);
  Mat line(200, 3);
  const RowVec dir = (RowVec(3) << 1.0, -2.0, 0.5).finished();
  for (int i = 0; i < 200; ++i) line.row(i) = rng.normal() * dir + RowVec::Constant(3, 4.0);
  const auto s = pca_spectrum(line);
  CHECK(s.dim() == 3);
  CHECK(s.n_samples == 200);
  CHECK(numerical_rank(s, 1e-10) == 1);
  CHECK(s.eigenvalues[0] >= s.eigenvalues[1]);
  CHECK(s.eigenvalues[2] >= 0.0);

  const auto iso = pca_spectrum(gaussian(40000, 5, 2));
  for (double v : iso.eigenvalues) CHECK(v == Approx(1.0).epsilon(0.05));

  const Mat base = gaussian(300, 6, 3) * gaussian(6, 6, 4);
  Mat doubled(600, 6);
  doubled << base, base;
  const auto a = cev_curve(pca_spectrum(base));
  const auto b = cev_curve(pca_spectrum(doubled));
  const auto c = cev_curve(pca_spectrum(base * 37.0));
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(a[k] == Approx(b[k]).epsilon(1e-3));
    CHECK(a[k] == Approx(c[k]).epsilon(1e-12));
    if (k > 0) CHECK(a[k] >= a[k - 1]);
  }
  CHECK(a.back() == Approx(1.0));

  const auto unc = pca_spectrum(line, false);
  CHECK_FALSE(unc.centered);
  CHECK(numerical_rank(unc, 1e-10) == 2);

  CHECK_THROWS_AS(pca_spectrum(Mat::Ones(1, 3)), Error);
  CHECK_THROWS_AS(cev(pca_spectrum(Mat::Ones(5, 3)), 1), Error);
}

TEST_CASE("streaming covariance matches the batch spectrum") {
  Mat rows = gaussian(1000, 7, 5) * gaussian(7, 7, 6);
  rows.rowwise() += RowVec::Constant(7, 1e6);
  CovarianceAccumulator acc(7);
  acc.add_rows(rows.topRows(400));
  for (int i = 400; i < 1000; ++i) {
    const RowVec r = rows.row(i);
    acc.add(r.data());
  }
  const Mat centered = rows.rowwise() - rows.colwise().mean();
  const Mat expect = centered.transpose() * centered / 999.0;
  CHECK((acc.covariance(true) - expect).cwiseAbs().maxCoeff() < 1e-6);
  const auto s1 = acc.spectrum();
  const auto s2 = pca_spectrum(rows);
  for (int j = 0; j < 7; ++j) CHECK(s1.eigenvalues[static_cast<std::size_t>(j)] == Approx(s2.eigenvalues[static_cast<std::size_t>(j)]).epsilon(1e-8));
  const Mat raw = rows.transpose() * rows / 1000.0;
  CHECK(((acc.covariance(false) - raw).cwiseAbs().maxCoeff() / raw.cwiseAbs().maxCoeff()) < 1e-12);
  CHECK_THROWS_AS(acc.add_rows(Mat::Zero(2, 3)), Error);
}

TEST_CASE("cev and effective dimension") {
  const auto flat = spectrum_of({2, 2, 2, 2});
  for (int k = 0; k <= 4; ++k) CHECK(cev(flat, k) == Approx(k / 4.0));
  CHECK(cev(flat, 0) == 0.0);
  CHECK_THROWS_AS(cev(flat, 5), Error);
  CHECK(effective_dim(spectrum_of({0.96, 0.04}), 0.95) == 1);
  CHECK(effective_dim(spectrum_of({0.5, 0.3, 0.2}), 0.95) == 3);
  CHECK(effective_dim(flat, 1.0) == 4);
  CHECK_THROWS_AS(effective_dim(flat, 0.0), Error);
  CHECK_THROWS_AS(effective_dim(spectrum_of({0, 0}), 0.5), Error);

  // Moving mass toward the front never increases k*.
  PhiloxStream rng(8, 0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> ev(8);
    for (auto& v : ev) v = rng.uniform();
    std::sort(ev.rbegin(), ev.rend());
    const int j = static_cast<int>(rng.below(7));
    auto moved = ev;
    const double t = moved[static_cast<std::size_t>(j + 1)] * rng.uniform();
    moved[static_cast<std::size_t>(j)] += t;
    moved[static_cast<std::size_t>(j + 1)] -= t;
    for (double p : {0.5, 0.8, 0.95}) CHECK(effective_dim(spectrum_of(moved), p) <= effective_dim(spectrum_of(ev), p));
  }
}

TEST_CASE("ground-truth factored targets span ten dimensions") {
  const auto p = independent_product(reference_independent_factors());
  const auto b = sample_sequences(p, 4000, 8, 21, true, 2);
  const auto t = ground_truth_targets(p, b, false, 2);
  const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> y(
      t.factored.data(), static_cast<Eigen::Index>(t.n_seqs) * t.length, t.factored_dim);
  const auto s = pca_spectrum(y);
  CHECK(numerical_rank(s, 1e-8) == 10);
  CHECK(cev(s, 10) == Approx(1.0).epsilon(1e-9));
}

TEST_CASE("linear readout") {
  const Mat a = gaussian(500, 20, 10);
  const Mat w = gaussian(20, 4, 11);
  RowVec bias(4);
  bias << 1, -2, 3, 0.5;
  const Mat y = (a * w).rowwise() + bias;

  SUBCASE("exact targets") {
    const auto fit = fit_linear_readout(a, y, {2, 2});
    CHECK(fit.rmse < 1e-10);
    CHECK(fit.r2 > 1 - 1e-12);
    CHECK(fit.r2 <= 1.0);
    CHECK(std::find(fit.grid.begin(), fit.grid.end(), fit.rcond) != fit.grid.end());
    CHECK(fit.cv_mse.size() == fit.grid.size());
    CHECK(fit.fold_mse.front().size() == 10);
    CHECK((fit.weights - w).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((fit.intercept - bias).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(fit.block_rmse.size() == 2);
    CHECK(fit.block_r2[1] > 1 - 1e-12);
    CHECK((fit.predict(a) - y).cwiseAbs().maxCoeff() < 1e-9);
  }

  SUBCASE("noisy targets") {
    const Mat a2 = gaussian(1000, 20, 12);
    const Mat y2 = a2 * w + 1e-3 * gaussian(1000, 4, 13);
    const auto fit = fit_linear_readout(a2, y2);
    CHECK(fit.r2 > 0.999);
    CHECK(fit.rmse == Approx(1e-3).epsilon(0.1));
  }

  SUBCASE("translation of activations") {
    const Mat y2 = y + 0.1 * gaussian(500, 4, 14);
    const auto f1 = fit_linear_readout(a, y2);
    const Mat shifted = a.rowwise() + RowVec::LinSpaced(20, -5, 5);
    const auto f2 = fit_linear_readout(shifted, y2);
    CHECK((f1.predict(a) - f2.predict(shifted)).cwiseAbs().maxCoeff() < 1e-8);
  }

  SUBCASE("duplicate columns") {
    const Mat y2 = y + 0.05 * gaussian(500, 4, 15);
    Mat dup(500, 30);
    dup << a, a.leftCols(10);
    const auto f_dup = fit_linear_readout(dup, y2);
    const auto f_ref = fit_linear_readout(a, y2);
    CHECK(f_dup.rmse == Approx(f_ref.rmse).epsilon(1e-8));
    CHECK((f_dup.predict(dup) - f_ref.predict(a)).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(f_dup.rcond >= 1e-15);
  }

  SUBCASE("constant target column") {
    Mat y3 = y;
    y3.col(0).setConstant(2.0);
    const auto fit = fit_linear_readout(a, y3, {1, 3});
    CHECK(std::isnan(fit.block_r2[0]));
    CHECK(fit.block_rmse[0] < 1e-10);
  }

  CHECK_THROWS_AS(fit_linear_readout(a, y.topRows(10)), Error);
  CHECK_THROWS_AS(fit_linear_readout(a, y, {3, 3}), Error);
  CHECK_THROWS_AS(fit_linear_readout(a.topRows(5), y.topRows(5), {}, kDefaultRcondGrid, 10), Error);
}

TEST_CASE("vary-one subspace recovery") {
  const int d = 30;
  const Mat q_true = orthonormal(d, 2, 20);
  const Mat others = orthonormal(d, 6, 21);
  PhiloxStream rng(22, 0);
  const int groups = 40, variants = 16;
  Mat acts(groups * variants, d);
  std::vector<int> group_of_row;
  for (int g = 0; g < groups; ++g) {
    ColVec c(6);
    for (int j = 0; j < 6; ++j) c(j) = 3.0 * rng.normal();
    for (int v = 0; v < variants; ++v) {
      ColVec s(2);
      s << rng.normal(), 0.5 * rng.normal();
      ColVec row = others * c + q_true * s;
      for (int j = 0; j < d; ++j) row(j) += 1e-6 * rng.normal();
      acts.row(g * variants + v) = row.transpose();
      group_of_row.push_back(g);
    }
  }
  const auto sb = vary_one_subspace(acts, group_of_row, 3);
  CHECK(sb.factor == 3);
  CHECK(sb.k() == 2);
  CHECK((sb.q.transpose() * sb.q - Mat::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(subspace_overlap(sb, basis(q_true)).score > 0.99);
  CHECK(sb.variance[0] >= sb.variance[1]);

  const auto by_var = vary_one_subspace(acts, group_of_row, 3, 0, 0.95);
  CHECK(by_var.k() == 2);

  CHECK_THROWS_AS(vary_one_subspace(Mat::Constant(20, 4, 1.5), std::vector<int>(20, 0), 0), Error);
  std::vector<int> singletons(static_cast<std::size_t>(acts.rows()));
  std::iota(singletons.begin(), singletons.end(), 0);
  CHECK_THROWS_AS(vary_one_subspace(acts, singletons, 0), Error);
  CHECK_THROWS_AS(vary_one_subspace(acts, std::vector<int>(3, 0), 0), Error);
}

TEST_CASE("regression subspaces") {
  RegressionFit fit;
  fit.weights = Mat::Zero(10, 6);
  fit.blocks = {3, 3};
  const Mat q = orthonormal(10, 4, 30);
  fit.weights.col(0) = q.col(0);
  fit.weights.col(1) = q.col(0);
  fit.weights.col(2) = 2 * q.col(0);
  fit.weights.col(3) = q.col(1) + q.col(2);
  fit.weights.col(4) = q.col(2) - q.col(3);
  fit.weights.col(5) = q.col(1);
  const auto subs = regression_subspaces(fit);
  REQUIRE(subs.size() == 2);
  CHECK(subs[0].k() == 1);
  CHECK(subs[1].k() == 3);
  CHECK(subs[1].factor == 1);
  CHECK(subspace_overlap(subs[0], subs[1]).score < 1e-10);
  fit.weights.leftCols(3).setZero();
  CHECK_THROWS_AS(regression_subspaces(fit), Error);
}

TEST_CASE("subspace overlap") {
  const Mat q = orthonormal(12, 3, 40);
  CHECK(subspace_overlap(basis(q), basis(q)).score == Approx(1.0));
  CHECK(subspace_overlap(basis(q.leftCols(1)), basis(q)).score == Approx(1.0));
  const Mat e = Mat::Identity(6, 6);
  const auto orth = subspace_overlap(basis(e.leftCols(2)), basis(e.middleCols(2, 2)));
  CHECK(orth.score == Approx(0.0));
  CHECK(orth.sigmas.size() == 2);

  // Rotating either basis leaves the score unchanged; exact symmetry for equal k.
  const Mat a = orthonormal(12, 2, 41), b = orthonormal(12, 2, 42);
  const double th = 0.7;
  Mat r(2, 2);
  r << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
  const double s_ab = subspace_overlap(basis(a), basis(b)).score;
  CHECK(subspace_overlap(basis(a * r), basis(b)).score == Approx(s_ab).epsilon(1e-12));
  CHECK(subspace_overlap(basis(b), basis(a)).score == Approx(s_ab).epsilon(1e-12));
  for (double s : subspace_overlap(basis(a), basis(b)).sigmas) {
    CHECK(s >= 0.0);
    CHECK(s <= 1.0 + 1e-8);
  }

  double total = 0.0;
  for (int t = 0; t < 1000; ++t) {
    total += subspace_overlap(basis(orthonormal(120, 2, 1000 + 2 * t)), basis(orthonormal(120, 2, 1001 + 2 * t))).score;
  }
  CHECK(std::abs(total / 1000 - 4.0 / 240.0) < 0.003);

  std::vector<SubspaceBasis> bases{basis(e.leftCols(2), 0), basis(e.middleCols(2, 2), 1), basis(e.middleCols(1, 2), 2)};
  const auto pairs = pairwise_overlaps(bases);
  CHECK(pairs.size() == 3);
  CHECK(pairs[0].a == 0);
  CHECK(pairs[0].b == 1);
  CHECK(pairs[1].score == Approx(0.5));
  CHECK(mean_score(pairs) == Approx((0.0 + 0.5 + 0.5) / 3));
  CHECK_THROWS_AS(subspace_overlap(basis(e.leftCols(2)), basis(q)), Error);
}

TEST_CASE("dimensionality additivity") {
  PhiloxStream rng(50, 0);
  const auto cloud = [&](const Mat& span, int n) {
    Mat rows(n, span.rows());
    for (int i = 0; i < n; ++i) {
      ColVec c(span.cols());
      for (int j = 0; j < span.cols(); ++j) c(j) = rng.normal();
      rows.row(i) = (span * c).transpose();
    }
    return rows;
  };

  for (int shared = 0; shared <= 2; ++shared) {
    for (int trial = 0; trial < 20; ++trial) {
      const std::uint64_t seed = 500 + static_cast<std::uint64_t>(shared * 100 + trial);
      const Mat base = orthonormal(12, 6, seed);
      const Mat a = base.leftCols(3);
      Mat b(12, 3);
      b << base.leftCols(shared), base.middleCols(3, 3 - shared);
      const Mat ra = cloud(a, 200), rb = cloud(b, 200);
      Mat both(400, 12);
      both << ra, rb;
      const auto rep = dimensionality_additivity({pca_spectrum(ra), pca_spectrum(rb)}, pca_spectrum(both), 1.0);
      Mat stacked(12, 6);
      stacked << a, b;
      const int oracle = 6 - matrix_rank(stacked);
      CHECK(rep.per_factor == std::vector<int>{3, 3});
      CHECK(rep.sum == 6);
      CHECK(rep.gap == oracle);
      CHECK(rep.gap == shared);
      CHECK(rep.union_dim == 6 - shared);
    }
  }
  CHECK_THROWS_AS(dimensionality_additivity({spectrum_of({1, 1})}, spectrum_of({1, 1, 1}), 0.9), Error);
}

TEST_CASE("embedding attribution") {
  const TokenCodec codec({3, 3, 4});
  const std::vector<double> scale{1.0, 2.5, 5.0};
  Mat e = Mat::Zero(codec.n_tokens(), 10);
  for (int t = 0; t < codec.n_tokens(); ++t) {
    const auto z = codec.decode(t);
    e(t, z[0]) = scale[0];
    e(t, 3 + z[1]) = scale[1];
    e(t, 6 + z[2]) = scale[2];
  }
  const auto rep = embedding_factor_attribution(e, codec);
  CHECK(rep.attribution.cols() == 3);
  const double top = rep.singular_values.front();
  int live = 0;
  std::vector<int> per_factor(3, 0);
  for (Eigen::Index j = 0; j < rep.attribution.rows(); ++j) {
    for (Eigen::Index n = 0; n < 3; ++n) {
      CHECK(rep.attribution(j, n) >= -1e-12);
      CHECK(rep.attribution(j, n) <= 1 + 1e-12);
    }
    if (rep.singular_values[static_cast<std::size_t>(j)] < 1e-8 * top) continue;
    ++live;
    Eigen::Index best;
    CHECK(rep.attribution.row(j).maxCoeff(&best) >= 0.99);
    ++per_factor[static_cast<std::size_t>(best)];
  }
  CHECK(live == 7);
  CHECK(per_factor == std::vector<int>{2, 2, 3});

  const TokenCodec big({3, 3, 3, 4, 4});
  const auto rnd = embedding_factor_attribution(0.02 * gaussian(432, 120, 60), big);
  CHECK(rnd.attribution.maxCoeff() < 0.1);
  CHECK(rnd.singular_values.front() / rnd.singular_values.back() < 5.0);
  CHECK_THROWS_AS(embedding_factor_attribution(Mat::Zero(10, 4), big), Error);
}
