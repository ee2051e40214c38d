#pragma once

#include "common.hpp"

#include <map>
#include <span>
#include <string>
#include <vector>

namespace flab {

// HMMs have nonnegative operators and an all-ones right eigenvector; generalized
// processes (e.g. the Bloch Walk) may carry signed entries.
enum class GhmmKind { kHmm, kGeneralized };

struct Mess3Params {
  double alpha = 0.6;
  double x = 0.15;
  double beta() const { return (1.0 - alpha) / 2.0; }
  double y() const { return 1.0 - 2.0 * x; }
};

struct BlochWalkParams {
  double alpha = 1.0;
  double beta = 3.0;
  double gamma() const;
};

struct SnsParams {
  double p = 0.5;
  double q = 0.5;
};

enum class ProcessKind { kMess3, kBlochWalk, kSns };

// Serializable description of one elementary generator.
struct FactorSpec {
  ProcessKind kind = ProcessKind::kMess3;
  Mess3Params mess3;
  BlochWalkParams bloch;
  SnsParams sns;

  static FactorSpec mess3_of(double alpha, double x);
  static FactorSpec bloch_of(double alpha, double beta);
  static FactorSpec sns_of(double p, double q);
};

class Ghmm {
 public:
  Ghmm(std::vector<Mat> operators, RowVec initial, ColVec right_one, GhmmKind kind);

  int alphabet_size() const { return static_cast<int>(operators_.size()); }
  int dim() const { return static_cast<int>(initial_.size()); }
  GhmmKind kind() const { return kind_; }
  const Mat& op(int token) const;
  const std::vector<Mat>& operators() const { return operators_; }
  const Mat& net_operator() const { return net_; }
  const RowVec& initial() const { return initial_; }
  const ColVec& right_one() const { return right_one_; }
  const RowVec& stationary() const { return stationary_; }

 private:
  std::vector<Mat> operators_;
  Mat net_;
  RowVec initial_;
  ColVec right_one_;
  RowVec stationary_;
  GhmmKind kind_;
};

Ghmm make_mess3(const Mess3Params& params);
Ghmm make_bloch_walk(const BlochWalkParams& params);
Ghmm make_sns(const SnsParams& params);
Ghmm make_factor(const FactorSpec& spec);

// eta^(0) T^(x1) ... T^(xl) 1; the empty sequence has probability 1.
double sequence_probability(const Ghmm& g, std::span<const int> seq);

// Bayesian update (s T^(x)) / (s T^(x) 1). Throws kZeroProbabilityToken when
// the token has probability <= kZeroProbabilityTol under s.
RowVec update_predictive(const Ghmm& g, const RowVec& state, int token);

// Entry x is s T^(x) 1.
RowVec next_token_distribution(const Ghmm& g, const RowVec& state);

using ContextStates = std::map<std::vector<int>, RowVec>;

// Breadth-first over all contexts up to max_len, skipping zero-probability
// branches. The empty context maps to the initial vector.
ContextStates enumerate_predictive_states(const Ghmm& g, int max_len,
                                          std::int64_t cap = 1'000'000);

}  // namespace flab
