#include "ghmm.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <deque>

namespace flab {

const char* error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kOk: return "ok";
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kOutOfRange: return "out_of_range";
    case ErrorCode::kZeroProbabilityToken: return "zero_probability_token";
    case ErrorCode::kEnumerationTooLarge: return "enumeration_too_large";
    case ErrorCode::kNonClassicalState: return "non_classical_state";
    case ErrorCode::kDegenerateSpectrum: return "degenerate_spectrum";
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kTrainingDiverged: return "training_diverged";
    case ErrorCode::kUnsupported: return "unsupported";
    case ErrorCode::kInternal: return "internal";
  }
  return "unknown";
}

double BlochWalkParams::gamma() const { return 1.0 / (2.0 * std::sqrt(alpha * alpha + beta * beta)); }

FactorSpec FactorSpec::mess3_of(double alpha, double x) {
  FactorSpec s;
  s.kind = ProcessKind::kMess3;
  s.mess3 = {alpha, x};
  return s;
}

FactorSpec FactorSpec::bloch_of(double alpha, double beta) {
  FactorSpec s;
  s.kind = ProcessKind::kBlochWalk;
  s.bloch = {alpha, beta};
  return s;
}

FactorSpec FactorSpec::sns_of(double p, double q) {
  FactorSpec s;
  s.kind = ProcessKind::kSns;
  s.sns = {p, q};
  return s;
}

namespace {

constexpr double kInvariantTol = 1e-10;

// Left eigenvector of the net operator for the eigenvalue nearest 1,
// normalized so that pi . 1 = 1.
RowVec stationary_of(const Mat& net, const ColVec& right_one) {
  Eigen::EigenSolver<Eigen::MatrixXd> solver(net.transpose());
  require(solver.info() == Eigen::Success, ErrorCode::kInternal, "eigen-decomposition of net operator failed");
  const auto& values = solver.eigenvalues();
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < values.size(); ++i) {
    if (std::abs(values[i] - 1.0) < std::abs(values[best] - 1.0)) best = i;
  }
  require(std::abs(values[best] - 1.0) < 1e-8, ErrorCode::kInvalidArgument,
          "net operator has no unit eigenvalue");
  RowVec pi = solver.eigenvectors().col(best).real().transpose();
  const double mass = pi.dot(right_one.transpose());
  require(std::abs(mass) > 1e-14, ErrorCode::kInvalidArgument, "stationary vector is orthogonal to 1");
  return pi / mass;
}

}  // namespace

Ghmm::Ghmm(std::vector<Mat> operators, RowVec initial, ColVec right_one, GhmmKind kind)
    : operators_(std::move(operators)),
      initial_(std::move(initial)),
      right_one_(std::move(right_one)),
      kind_(kind) {
  require(!operators_.empty(), ErrorCode::kInvalidArgument, "GHMM needs at least one token operator");
  const Eigen::Index d = initial_.size();
  require(d > 0 && right_one_.size() == d, ErrorCode::kShapeMismatch, "initial/right_one dimension mismatch");
  net_ = Mat::Zero(d, d);
  for (const auto& t : operators_) {
    require(t.rows() == d && t.cols() == d, ErrorCode::kShapeMismatch, "token operator has wrong shape");
    if (kind_ == GhmmKind::kHmm) {
      require(t.minCoeff() >= 0.0, ErrorCode::kInvalidArgument, "HMM operator has a negative entry");
    }
    net_ += t;
  }
  require(((net_ * right_one_) - right_one_).cwiseAbs().maxCoeff() <= kInvariantTol, ErrorCode::kInvalidArgument,
          "net operator does not preserve right_one");
  require(std::abs(initial_.dot(right_one_.transpose()) - 1.0) <= kInvariantTol, ErrorCode::kInvalidArgument,
          "initial vector is not normalized against right_one");
  if (kind_ == GhmmKind::kHmm) {
    require((right_one_.array() == 1.0).all(), ErrorCode::kInvalidArgument, "HMM right_one must be all ones");
  }
  stationary_ = stationary_of(net_, right_one_);
  if (kind_ == GhmmKind::kHmm) {
    require(stationary_.minCoeff() >= -1e-12, ErrorCode::kInvalidArgument, "HMM stationary vector is not nonnegative");
    stationary_ = stationary_.cwiseMax(0.0);
    stationary_ /= stationary_.sum();
  }
}

const Mat& Ghmm::op(int token) const {
  require(token >= 0 && token < alphabet_size(), ErrorCode::kOutOfRange,
          "token " + std::to_string(token) + " outside alphabet of size " + std::to_string(alphabet_size()));
  return operators_[static_cast<std::size_t>(token)];
}

Ghmm make_mess3(const Mess3Params& params) {
  const double a = params.alpha, x = params.x;
  require(a > 0.0 && a < 1.0, ErrorCode::kInvalidArgument, "Mess3 alpha must lie in (0,1)");
  require(x > 0.0 && x <= 0.5, ErrorCode::kInvalidArgument, "Mess3 x must lie in (0,0.5]");
  const double b = params.beta(), y = params.y();
  std::vector<Mat> ops(3, Mat(3, 3));
  // Column z of T^(z) carries the alpha weight; the diagonal carries y.
  for (int z = 0; z < 3; ++z) {
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        const double w = (j == z) ? a : b;
        ops[z](i, j) = w * ((i == j) ? y : x);
      }
    }
  }
  return Ghmm(std::move(ops), RowVec::Constant(3, 1.0 / 3.0), ColVec::Ones(3), GhmmKind::kHmm);
}

Ghmm make_bloch_walk(const BlochWalkParams& params) {
  require(params.alpha > 0.0, ErrorCode::kInvalidArgument, "Bloch Walk alpha must be positive");
  const double g2 = params.gamma() * params.gamma();
  const double off = 2.0 * params.alpha * params.beta * g2;
  const double shrink = (params.alpha * params.alpha - params.beta * params.beta) * g2;
  std::vector<Mat> ops(4, Mat::Zero(3, 3));
  for (int z = 0; z < 2; ++z) {
    const double s = z == 0 ? off : -off;
    ops[z] << 0.25, 0.0, s, 0.0, shrink, 0.0, s, 0.0, 0.25;
  }
  for (int z = 2; z < 4; ++z) {
    const double s = z == 2 ? off : -off;
    ops[z] << 0.25, s, 0.0, s, 0.25, 0.0, 0.0, 0.0, shrink;
  }
  RowVec e0 = RowVec::Zero(3);
  e0[0] = 1.0;
  return Ghmm(std::move(ops), e0, e0.transpose(), GhmmKind::kGeneralized);
}

Ghmm make_sns(const SnsParams& params) {
  const double p = params.p, q = params.q;
  require(p > 0.0 && p < 1.0 && q > 0.0 && q < 1.0, ErrorCode::kInvalidArgument, "SNS p and q must lie in (0,1)");
  std::vector<Mat> ops(2, Mat(2, 2));
  ops[0] << 0.0, 0.0, q, 0.0;
  ops[1] << 1.0 - p, p, 0.0, 1.0 - q;
  RowVec pi(2);
  pi << q / (p + q), p / (p + q);
  return Ghmm(std::move(ops), pi, ColVec::Ones(2), GhmmKind::kHmm);
}

Ghmm make_factor(const FactorSpec& spec) {
  switch (spec.kind) {
    case ProcessKind::kMess3: return make_mess3(spec.mess3);
    case ProcessKind::kBlochWalk: return make_bloch_walk(spec.bloch);
    case ProcessKind::kSns: return make_sns(spec.sns);
  }
  fail(ErrorCode::kInvalidArgument, "unknown process kind");
}

double sequence_probability(const Ghmm& g, std::span<const int> seq) {
  RowVec v = g.initial();
  for (int x : seq) v = v * g.op(x);
  return v.dot(g.right_one().transpose());
}

RowVec update_predictive(const Ghmm& g, const RowVec& state, int token) {
  RowVec next = state * g.op(token);
  const double mass = next.dot(g.right_one().transpose());
  if (mass <= kZeroProbabilityTol) {
    fail(ErrorCode::kZeroProbabilityToken, "token " + std::to_string(token) + " has zero probability in this state");
  }
  return next / mass;
}

RowVec next_token_distribution(const Ghmm& g, const RowVec& state) {
  RowVec probs(g.alphabet_size());
  for (int x = 0; x < g.alphabet_size(); ++x) probs[x] = (state * g.op(x)).dot(g.right_one().transpose());
  return probs;
}

ContextStates enumerate_predictive_states(const Ghmm& g, int max_len, std::int64_t cap) {
  require(max_len >= 0, ErrorCode::kInvalidArgument, "max_len must be nonnegative");
  double bound = 0.0;
  for (int l = 0; l <= max_len; ++l) bound += std::pow(static_cast<double>(g.alphabet_size()), l);
  if (bound > static_cast<double>(cap)) {
    fail(ErrorCode::kEnumerationTooLarge, "enumeration would visit up to " + std::to_string(bound) +
                                              " contexts (cap " + std::to_string(cap) + ")");
  }
  ContextStates out;
  std::deque<std::vector<int>> frontier{{}};
  out.emplace(std::vector<int>{}, g.initial());
  while (!frontier.empty()) {
    std::vector<int> ctx = std::move(frontier.front());
    frontier.pop_front();
    if (static_cast<int>(ctx.size()) == max_len) continue;
    const RowVec& s = out.at(ctx);
    for (int x = 0; x < g.alphabet_size(); ++x) {
      const RowVec raw = s * g.op(x);
      if (raw.dot(g.right_one().transpose()) <= kZeroProbabilityTol) continue;
      std::vector<int> child = ctx;
      child.push_back(x);
      out.emplace(child, update_predictive(g, s, x));
      frontier.push_back(std::move(child));
    }
  }
  return out;
}

}  // namespace flab
