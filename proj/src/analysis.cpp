#include "analysis.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace flab {

CovarianceAccumulator::CovarianceAccumulator(int dim)
    : shift_(ColVec::Zero(dim)), sum_(ColVec::Zero(dim)), cross_(Mat::Zero(dim, dim)) {
  require(dim >= 1, ErrorCode::kInvalidArgument, "covariance dimension must be positive");
}

void CovarianceAccumulator::add(const double* row) {
  const Eigen::Map<const ColVec> x(row, dim());
  if (!have_shift_) {
    shift_ = x;
    have_shift_ = true;
  }
  const ColVec dx = x - shift_;
  sum_ += dx;
  cross_.selfadjointView<Eigen::Lower>().rankUpdate(dx);
  ++n_;
}

void CovarianceAccumulator::add_rows(const Mat& rows) {
  require(rows.cols() == dim(), ErrorCode::kShapeMismatch, "row width does not match accumulator");
  if (rows.rows() == 0) return;
  if (!have_shift_) {
    shift_ = rows.row(0).transpose();
    have_shift_ = true;
  }
  const Mat dx = rows.rowwise() - shift_.transpose();
  sum_ += dx.colwise().sum().transpose();
  cross_.selfadjointView<Eigen::Lower>().rankUpdate(dx.transpose());
  n_ += rows.rows();
}

ColVec CovarianceAccumulator::mean() const {
  require(n_ > 0, ErrorCode::kInvalidArgument, "no rows accumulated");
  return shift_ + sum_ / static_cast<double>(n_);
}

Mat CovarianceAccumulator::covariance(bool center) const {
  require(n_ >= 2, ErrorCode::kInvalidArgument, "PCA needs at least two rows");
  const double n = static_cast<double>(n_);
  Mat c = cross_.selfadjointView<Eigen::Lower>();
  if (center) {
    c -= sum_ * sum_.transpose() / n;
    return c / (n - 1.0);
  }
  // undo the shift: sum (d + s)(d + s)^T
  c += sum_ * shift_.transpose() + shift_ * sum_.transpose() + n * shift_ * shift_.transpose();
  return c / n;
}

namespace {

SpectrumReport spectrum_of(const Mat& cov, long long n, bool center) {
  Eigen::SelfAdjointEigenSolver<Mat> es(cov, Eigen::EigenvaluesOnly);
  require(es.info() == Eigen::Success, ErrorCode::kInternal, "eigen-decomposition failed");
  SpectrumReport s;
  s.n_samples = n;
  s.centered = center;
  const auto& ev = es.eigenvalues();
  for (Eigen::Index i = ev.size(); i-- > 0;) s.eigenvalues.push_back(std::max(0.0, ev(i)));
  s.total = std::accumulate(s.eigenvalues.begin(), s.eigenvalues.end(), 0.0);
  return s;
}

}  // namespace

SpectrumReport CovarianceAccumulator::spectrum(bool center) const { return spectrum_of(covariance(center), n_, center); }

SpectrumReport pca_spectrum(const Mat& rows, bool center) {
  require(rows.rows() >= 2, ErrorCode::kInvalidArgument, "PCA needs at least two rows");
  CovarianceAccumulator acc(static_cast<int>(rows.cols()));
  acc.add_rows(rows);
  return acc.spectrum(center);
}

double cev(const SpectrumReport& s, int k) {
  require(k >= 0 && k <= s.dim(), ErrorCode::kOutOfRange, "component count outside [0, d]");
  require(s.total > 0.0, ErrorCode::kDegenerateSpectrum, "spectrum has zero total variance");
  if (k == s.dim()) return 1.0;
  return std::accumulate(s.eigenvalues.begin(), s.eigenvalues.begin() + k, 0.0) / s.total;
}

std::vector<double> cev_curve(const SpectrumReport& s) {
  require(s.total > 0.0, ErrorCode::kDegenerateSpectrum, "spectrum has zero total variance");
  std::vector<double> out(static_cast<std::size_t>(s.dim()));
  double acc = 0.0;
  for (int j = 0; j < s.dim(); ++j) {
    acc += s.eigenvalues[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(j)] = j + 1 == s.dim() ? 1.0 : acc / s.total;
  }
  return out;
}

int effective_dim(const SpectrumReport& s, double p) {
  require(p > 0.0 && p <= 1.0, ErrorCode::kInvalidArgument, "p must lie in (0, 1]");
  const auto curve = cev_curve(s);
  // Tolerance for sums that land exactly on p.
  constexpr double kSlack = 1e-12;
  for (std::size_t k = 0; k < curve.size(); ++k) {
    if (curve[k] >= p - kSlack) return static_cast<int>(k) + 1;
  }
  return s.dim();
}

int numerical_rank(const SpectrumReport& s, double rel_tol) {
  return static_cast<int>(std::count_if(s.eigenvalues.begin(), s.eigenvalues.end(),
                                        [&](double l) { return l > rel_tol * s.total; }));
}

namespace {

Mat augment(const Mat& a) {
  Mat x(a.rows(), a.cols() + 1);
  x.col(0).setOnes();
  x.rightCols(a.cols()) = a;
  return x;
}

struct SvdSolver {
  Eigen::BDCSVD<Mat> svd;
  Mat uty;  // U^T Y

  SvdSolver(const Mat& x, const Mat& y) : svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV) {
    uty = svd.matrixU().transpose() * y;
  }
  Mat solve(double rcond) const {
    const auto& s = svd.singularValues();
    const double cut = rcond * (s.size() ? s(0) : 0.0);
    Mat scaled = uty;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      if (s(i) > cut && s(i) > 0.0) {
        scaled.row(i) /= s(i);
      } else {
        scaled.row(i).setZero();
      }
    }
    return svd.matrixV() * scaled;
  }
};

void score(const Mat& y, const Mat& pred, double& rmse, double& r2) {
  const double sse = (y - pred).squaredNorm();
  const RowVec mean = y.colwise().mean();
  const double sst = (y.rowwise() - mean).squaredNorm();
  rmse = std::sqrt(sse / static_cast<double>(y.size()));
  r2 = sst > 0.0 ? 1.0 - sse / sst : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

Mat RegressionFit::predict(const Mat& a) const {
  require(a.cols() == weights.rows(), ErrorCode::kShapeMismatch, "activation width does not match the fit");
  Mat out = a * weights;
  out.rowwise() += intercept;
  return out;
}

RegressionFit fit_linear_readout(const Mat& a, const Mat& y, const std::vector<int>& blocks,
                                 const std::vector<double>& grid, int folds) {
  require(a.rows() == y.rows(), ErrorCode::kShapeMismatch,
          "activations have " + std::to_string(a.rows()) + " rows but targets have " + std::to_string(y.rows()));
  require(folds >= 2 && a.rows() > folds, ErrorCode::kInvalidArgument, "need more rows than folds and folds >= 2");
  require(!grid.empty(), ErrorCode::kInvalidArgument, "empty rcond grid");
  if (!blocks.empty()) {
    require(std::accumulate(blocks.begin(), blocks.end(), 0) == y.cols(), ErrorCode::kShapeMismatch,
            "factor blocks do not cover the target columns");
  }
  const Mat x = augment(a);
  const Eigen::Index m = x.rows();

  RegressionFit fit;
  fit.grid = grid;
  fit.blocks = blocks.empty() ? std::vector<int>{static_cast<int>(y.cols())} : blocks;
  fit.fold_mse.assign(grid.size(), std::vector<double>(static_cast<std::size_t>(folds), 0.0));
  for (int f = 0; f < folds; ++f) {
    const Eigen::Index lo = m * f / folds, hi = m * (f + 1) / folds;
    Mat xt(m - (hi - lo), x.cols()), yt(m - (hi - lo), y.cols());
    xt << x.topRows(lo), x.bottomRows(m - hi);
    yt << y.topRows(lo), y.bottomRows(m - hi);
    const SvdSolver solver(xt, yt);
    for (std::size_t g = 0; g < grid.size(); ++g) {
      const Mat w = solver.solve(grid[g]);
      const Mat resid = y.middleRows(lo, hi - lo) - x.middleRows(lo, hi - lo) * w;
      fit.fold_mse[g][static_cast<std::size_t>(f)] = resid.squaredNorm() / static_cast<double>(resid.size());
    }
  }
  std::size_t best = 0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const auto& e = fit.fold_mse[g];
    fit.cv_mse.push_back(std::accumulate(e.begin(), e.end(), 0.0) / static_cast<double>(e.size()));
    if (fit.cv_mse[g] < fit.cv_mse[best]) best = g;
  }
  fit.rcond = grid[best];

  const Mat w = SvdSolver(x, y).solve(fit.rcond);
  fit.intercept = w.row(0);
  fit.weights = w.bottomRows(w.rows() - 1);
  const Mat pred = x * w;
  score(y, pred, fit.rmse, fit.r2);
  int col = 0;
  for (int width : fit.blocks) {
    double rm = 0.0, r2 = 0.0;
    score(y.middleCols(col, width), pred.middleCols(col, width), rm, r2);
    fit.block_rmse.push_back(rm);
    fit.block_r2.push_back(r2);
    col += width;
  }
  return fit;
}

Mat center_groups(const Mat& acts, const std::vector<int>& group_of_row) {
  require(static_cast<Eigen::Index>(group_of_row.size()) == acts.rows(), ErrorCode::kShapeMismatch,
          "one group id per activation row required");
  std::vector<int> ids = group_of_row;
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  std::vector<int> size(ids.size(), 0);
  Mat means = Mat::Zero(static_cast<Eigen::Index>(ids.size()), acts.cols());
  auto slot = [&](int g) {
    return static_cast<Eigen::Index>(std::lower_bound(ids.begin(), ids.end(), g) - ids.begin());
  };
  for (Eigen::Index r = 0; r < acts.rows(); ++r) {
    const auto s = slot(group_of_row[static_cast<std::size_t>(r)]);
    means.row(s) += acts.row(r);
    ++size[static_cast<std::size_t>(s)];
  }
  for (std::size_t s = 0; s < ids.size(); ++s) {
    require(size[s] >= 2, ErrorCode::kInvalidArgument, "group " + std::to_string(ids[s]) + " has a single row");
    means.row(static_cast<Eigen::Index>(s)) /= size[s];
  }
  Mat centered = acts;
  for (Eigen::Index r = 0; r < acts.rows(); ++r) centered.row(r) -= means.row(slot(group_of_row[static_cast<std::size_t>(r)]));
  return centered;
}

SubspaceBasis vary_one_subspace(const Mat& acts, const std::vector<int>& group_of_row, int factor, int k,
                                double var_fraction) {
  require(k >= 0 && k <= acts.cols(), ErrorCode::kInvalidArgument, "component count outside [0, d]");
  const Mat centered = center_groups(acts, group_of_row);

  const Mat cov = centered.transpose() * centered / static_cast<double>(centered.rows());
  Eigen::SelfAdjointEigenSolver<Mat> es(cov);
  require(es.info() == Eigen::Success, ErrorCode::kInternal, "eigen-decomposition failed");
  const ColVec ev = es.eigenvalues().reverse().cwiseMax(0.0);
  const double total = ev.sum();
  require(total > 0.0, ErrorCode::kDegenerateSpectrum, "activations are constant within every group");
  int keep = k;
  if (keep == 0) {
    double acc = 0.0;
    while (keep < ev.size() && acc < var_fraction * total * (1.0 - 1e-12)) acc += ev(keep++);
  }
  SubspaceBasis out;
  out.factor = factor;
  out.q = es.eigenvectors().rowwise().reverse().leftCols(keep);
  for (int i = 0; i < keep; ++i) out.variance.push_back(ev(i));
  return out;
}

std::vector<SubspaceBasis> regression_subspaces(const RegressionFit& fit, double rel_tol) {
  std::vector<SubspaceBasis> out;
  int col = 0;
  for (std::size_t n = 0; n < fit.blocks.size(); ++n) {
    const int width = fit.blocks[n];
    const Mat w = fit.weights.middleCols(col, width);
    col += width;
    Eigen::JacobiSVD<Mat> svd(w, Eigen::ComputeThinU);
    const auto& s = svd.singularValues();
    int r = 0;
    while (r < s.size() && s(0) > 0.0 && s(r) > rel_tol * s(0)) ++r;
    require(r > 0, ErrorCode::kDegenerateSpectrum, "regression block " + std::to_string(n) + " is zero");
    SubspaceBasis b;
    b.factor = static_cast<int>(n);
    b.q = svd.matrixU().leftCols(r);
    for (int i = 0; i < r; ++i) b.variance.push_back(s(i) * s(i));
    out.push_back(std::move(b));
  }
  return out;
}

OverlapReport subspace_overlap(const SubspaceBasis& a, const SubspaceBasis& b) {
  require(a.q.rows() == b.q.rows(), ErrorCode::kShapeMismatch, "subspaces live in different ambient spaces");
  require(a.k() >= 1 && b.k() >= 1, ErrorCode::kInvalidArgument, "empty subspace");
  OverlapReport r;
  r.a = a.factor;
  r.b = b.factor;
  r.k_a = a.k();
  r.k_b = b.k();
  const Mat m = a.q.transpose() * b.q;
  Eigen::JacobiSVD<Mat> svd(m);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i) {
    const double s = svd.singularValues()(i);
    r.sigmas.push_back(s);
    acc += s * s;
  }
  r.score = acc / std::min(r.k_a, r.k_b);
  return r;
}

std::vector<OverlapReport> pairwise_overlaps(const std::vector<SubspaceBasis>& bases) {
  std::vector<OverlapReport> out;
  for (std::size_t i = 0; i < bases.size(); ++i)
    for (std::size_t j = i + 1; j < bases.size(); ++j) out.push_back(subspace_overlap(bases[i], bases[j]));
  return out;
}

double mean_score(const std::vector<OverlapReport>& reports) {
  require(!reports.empty(), ErrorCode::kInvalidArgument, "no overlap pairs");
  double acc = 0.0;
  for (const auto& r : reports) acc += r.score;
  return acc / static_cast<double>(reports.size());
}

AdditivityReport dimensionality_additivity(const std::vector<SpectrumReport>& per_factor, const SpectrumReport& joint,
                                           double p) {
  AdditivityReport r;
  for (const auto& s : per_factor) {
    require(s.dim() == joint.dim(), ErrorCode::kShapeMismatch, "spectra come from different ambient spaces");
    r.per_factor.push_back(effective_dim(s, p));
    r.sum += r.per_factor.back();
  }
  r.union_dim = effective_dim(joint, p);
  r.gap = r.sum - r.union_dim;
  return r;
}

AttributionReport embedding_factor_attribution(const Mat& e, const TokenCodec& codec) {
  require(e.rows() == codec.n_tokens(), ErrorCode::kShapeMismatch,
          "embedding has " + std::to_string(e.rows()) + " rows, expected " + std::to_string(codec.n_tokens()) +
              " (BOS excluded)");
  const Mat centered = e.rowwise() - e.colwise().mean();
  Eigen::BDCSVD<Mat> svd(centered, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const int nf = codec.n_factors();
  const Eigen::Index n_dir = sv.size();
  const double n = static_cast<double>(e.rows());

  std::vector<std::vector<int>> sub(static_cast<std::size_t>(e.rows()));
  for (int t = 0; t < e.rows(); ++t) sub[static_cast<std::size_t>(t)] = codec.decode(t);

  AttributionReport rep;
  rep.attribution = Mat::Zero(n_dir, nf);
  for (Eigen::Index j = 0; j < n_dir; ++j) {
    rep.singular_values.push_back(sv(j));
    const ColVec proj = centered * svd.matrixV().col(j);
    const double total = proj.squaredNorm() / n;
    if (total <= 0.0) continue;
    for (int f = 0; f < nf; ++f) {
      const int groups = codec.radices()[static_cast<std::size_t>(f)];
      std::vector<double> sum(static_cast<std::size_t>(groups), 0.0);
      std::vector<int> count(static_cast<std::size_t>(groups), 0);
      for (int t = 0; t < e.rows(); ++t) {
        const int g = sub[static_cast<std::size_t>(t)][static_cast<std::size_t>(f)];
        sum[static_cast<std::size_t>(g)] += proj(t);
        ++count[static_cast<std::size_t>(g)];
      }
      double between = 0.0;
      for (int g = 0; g < groups; ++g) {
        if (count[static_cast<std::size_t>(g)] == 0) continue;
        const double mu = sum[static_cast<std::size_t>(g)] / count[static_cast<std::size_t>(g)];
        between += count[static_cast<std::size_t>(g)] * mu * mu;
      }
      rep.attribution(j, f) = between / n / total;
    }
  }
  return rep;
}

}  // namespace flab
