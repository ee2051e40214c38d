#pragma once

#include "compose.hpp"

#include <vector>

namespace flab {

struct SpectrumReport {
  std::vector<double> eigenvalues;  // descending, clipped at 0
  double total = 0.0;
  long long n_samples = 0;
  bool centered = true;

  int dim() const { return static_cast<int>(eigenvalues.size()); }
};

// Streaming second moments for PCA over more rows than fit in memory. Rows are
// shifted by the first row seen to keep the centered covariance accurate.
class CovarianceAccumulator {
 public:
  explicit CovarianceAccumulator(int dim);
  void add(const double* row);
  void add_rows(const Mat& rows);
  long long count() const { return n_; }
  int dim() const { return static_cast<int>(sum_.size()); }
  Mat covariance(bool center) const;
  ColVec mean() const;
  SpectrumReport spectrum(bool center = true) const;

 private:
  ColVec shift_, sum_;
  Mat cross_;
  long long n_ = 0;
  bool have_shift_ = false;
};

SpectrumReport pca_spectrum(const Mat& rows, bool center = true);

double cev(const SpectrumReport& s, int k);
std::vector<double> cev_curve(const SpectrumReport& s);
int effective_dim(const SpectrumReport& s, double p);
// Eigenvalues above rel_tol * Lambda.
int numerical_rank(const SpectrumReport& s, double rel_tol = 1e-8);

inline const std::vector<double> kDefaultRcondGrid = {1e-15, 1e-10, 1e-8, 1e-6, 1e-4, 1e-2};

struct RegressionFit {
  Mat weights;        // d x t
  RowVec intercept;   // 1 x t
  double rcond = 0.0;
  std::vector<double> grid;
  std::vector<double> cv_mse;                   // mean held-out MSE per grid value
  std::vector<std::vector<double>> fold_mse;    // [grid][fold]
  double rmse = 0.0;
  double r2 = 0.0;
  std::vector<int> blocks;                      // target columns per factor
  std::vector<double> block_rmse, block_r2;

  Mat predict(const Mat& a) const;
};

// Least squares on [1|A] through an SVD whose singular values below
// rcond * sigma_max are dropped; rcond picked by contiguous k-fold CV.
RegressionFit fit_linear_readout(const Mat& a, const Mat& y, const std::vector<int>& blocks = {},
                                 const std::vector<double>& grid = kDefaultRcondGrid, int folds = 10);

struct SubspaceBasis {
  int factor = -1;
  Mat q;                         // d x k, orthonormal columns
  std::vector<double> variance;  // per retained component

  int k() const { return static_cast<int>(q.cols()); }
};

// Subtracts each group's mean from its rows; every group needs two rows.
Mat center_groups(const Mat& acts, const std::vector<int>& group_of_row);

// Rows sharing a group id are centered on their group mean, pooled and passed
// through PCA. k > 0 keeps k components; k == 0 keeps enough for var_fraction.
SubspaceBasis vary_one_subspace(const Mat& acts, const std::vector<int>& group_of_row, int factor, int k = 2,
                                double var_fraction = 0.95);

// Column span of each factor's block of W, via its left singular vectors.
std::vector<SubspaceBasis> regression_subspaces(const RegressionFit& fit, double rel_tol = 1e-8);

struct OverlapReport {
  int a = -1, b = -1;
  int k_a = 0, k_b = 0;
  std::vector<double> sigmas;  // cosines of the principal angles
  double score = 0.0;
};

OverlapReport subspace_overlap(const SubspaceBasis& a, const SubspaceBasis& b);
std::vector<OverlapReport> pairwise_overlaps(const std::vector<SubspaceBasis>& bases);
double mean_score(const std::vector<OverlapReport>& reports);

struct AdditivityReport {
  std::vector<int> per_factor;
  int sum = 0;
  int union_dim = 0;
  int gap = 0;
};

AdditivityReport dimensionality_additivity(const std::vector<SpectrumReport>& per_factor, const SpectrumReport& joint,
                                           double p = 0.95);

struct AttributionReport {
  std::vector<double> singular_values;
  Mat attribution;  // n_directions x n_factors, each entry in [0,1]
};

// E holds one row per non-BOS token id. Token rows are column-centered, then
// for every right singular direction the projections are split by each
// factor's sub-token (one-way ANOVA: between-group over total variance).
AttributionReport embedding_factor_attribution(const Mat& e, const TokenCodec& codec);

}  // namespace flab
