#include "compose.hpp"

#include <cmath>

namespace flab {

TokenCodec::TokenCodec(std::vector<int> radices) : radices_(std::move(radices)) {
  require(!radices_.empty(), ErrorCode::kInvalidArgument, "codec needs at least one factor");
  for (int r : radices_) {
    require(r >= 1, ErrorCode::kInvalidArgument, "codec radix must be positive");
    n_tokens_ *= r;
  }
}

int TokenCodec::encode(std::span<const int> subtokens) const {
  require(subtokens.size() == radices_.size(), ErrorCode::kShapeMismatch, "wrong number of sub-tokens");
  int token = 0;
  int place = 1;
  for (std::size_t n = 0; n < radices_.size(); ++n) {
    require(subtokens[n] >= 0 && subtokens[n] < radices_[n], ErrorCode::kOutOfRange,
            "sub-token " + std::to_string(subtokens[n]) + " out of range for factor " + std::to_string(n));
    token += subtokens[n] * place;
    place *= radices_[n];
  }
  return token;
}

void TokenCodec::decode_into(int token, std::span<int> out) const {
  require(token >= 0 && token < n_tokens_, ErrorCode::kOutOfRange,
          token == n_tokens_ ? std::string("BOS has no sub-token decoding")
                             : "token " + std::to_string(token) + " out of range");
  for (std::size_t n = 0; n < radices_.size(); ++n) {
    out[n] = token % radices_[n];
    token /= radices_[n];
  }
}

std::vector<int> TokenCodec::decode(int token) const {
  std::vector<int> out(radices_.size());
  decode_into(token, out);
  return out;
}

const char* regime_name(Regime r) {
  switch (r) {
    case Regime::kIndependent: return "independent";
    case Regime::kChain: return "chain";
    case Regime::kNoisy: return "noisy";
  }
  return "?";
}

namespace {

std::vector<int> radices_of(const std::vector<std::vector<Ghmm>>& variants) {
  std::vector<int> r;
  for (const auto& v : variants) r.push_back(v.front().alphabet_size());
  return r;
}

std::vector<std::vector<Ghmm>> build_variants(const ComposedSpec& spec) {
  require(!spec.factors.empty(), ErrorCode::kInvalidArgument, "composed process needs at least one factor");
  std::vector<std::vector<Ghmm>> out;
  for (const auto& f : spec.factors) {
    require(!f.variant_specs.empty(), ErrorCode::kInvalidArgument, "factor without variants");
    std::vector<Ghmm> vs;
    for (const auto& s : f.variant_specs) vs.push_back(make_factor(s));
    for (const auto& g : vs) {
      require(g.alphabet_size() == vs.front().alphabet_size() && g.dim() == vs.front().dim(),
              ErrorCode::kInvalidArgument, "variants of one factor must share alphabet and dimension");
      require((g.right_one() - vs.front().right_one()).cwiseAbs().maxCoeff() < 1e-12, ErrorCode::kInvalidArgument,
              "variants of one factor must share right_one");
    }
    out.push_back(std::move(vs));
  }
  return out;
}

}  // namespace

ComposedProcess::ComposedProcess(ComposedSpec spec, std::size_t operator_cache_cap)
    : spec_(std::move(spec)), variants_(build_variants(spec_)), codec_(radices_of(variants_)) {
  for (const auto& v : variants_) {
    dims_.push_back(v.front().dim());
    joint_dim_ *= v.front().dim();
  }
  if (spec_.regime == Regime::kChain) {
    require(variants_.front().size() == 1, ErrorCode::kInvalidArgument, "chain root factor must be unconditioned");
    for (std::size_t n = 1; n < variants_.size(); ++n) {
      const int controls = codec_.radices()[n - 1];
      if (static_cast<int>(variants_[n].size()) != controls) {
        fail(ErrorCode::kInvalidArgument, "variant table of factor " + std::to_string(n) + " has " +
                                              std::to_string(variants_[n].size()) + " entries, needs " +
                                              std::to_string(controls));
      }
    }
  } else {
    for (const auto& v : variants_) {
      require(v.size() == 1, ErrorCode::kInvalidArgument, "only chain factors may carry variants");
    }
    for (const auto& v : variants_) net_ops_.push_back(v.front().net_operator());
  }
  if (spec_.regime == Regime::kNoisy) {
    require(spec_.epsilon >= 0.0 && spec_.epsilon <= 1.0, ErrorCode::kInvalidArgument, "epsilon must lie in [0,1]");
    require(codec_.n_tokens() >= 2, ErrorCode::kInvalidArgument, "noisy channel needs at least two tokens");
  }
  cache_ = std::make_unique<OperatorCache>();
  cache_->cap = operator_cache_cap;
}

int ComposedProcess::factored_dim() const {
  int s = 0;
  for (int d : dims_) s += d;
  return s;
}

int ComposedProcess::fwh_dim() const { return factored_dim() - n_factors(); }

bool ComposedProcess::all_classical() const {
  for (const auto& v : variants_) {
    for (const auto& g : v) {
      if (g.kind() != GhmmKind::kHmm) return false;
    }
  }
  return true;
}

const Ghmm& ComposedProcess::factor(int n, int control) const {
  const auto& v = variants_.at(static_cast<std::size_t>(n));
  if (v.size() == 1) return v.front();
  require(control >= 0 && control < static_cast<int>(v.size()), ErrorCode::kOutOfRange, "control value out of range");
  return v[static_cast<std::size_t>(control)];
}

FactoredState ComposedProcess::initial_factored() const {
  FactoredState s;
  for (const auto& v : variants_) s.push_back(v.front().initial());
  return s;
}

JointState ComposedProcess::initial_joint() const { return kron_rows(initial_factored()); }

ColVec ComposedProcess::joint_right_one() const {
  std::vector<RowVec> ones;
  for (int n = 0; n < n_factors(); ++n) ones.push_back(factor_right_one(n).transpose());
  return kron_rows(ones).transpose();
}

std::vector<const Mat*> ComposedProcess::factor_operators(int x) const {
  std::vector<int> z(static_cast<std::size_t>(n_factors()));
  codec_.decode_into(x, z);
  std::vector<const Mat*> ops;
  for (int n = 0; n < n_factors(); ++n) {
    const int control = (n > 0 && n_variants(n) > 1) ? z[static_cast<std::size_t>(n - 1)] : 0;
    ops.push_back(&factor(n, control).op(z[static_cast<std::size_t>(n)]));
  }
  return ops;
}

RowVec ComposedProcess::apply_kron(const RowVec& s, std::span<const Mat* const> ops) const {
  RowVec cur = s;
  RowVec next(s.size());
  Eigen::Index right = joint_dim_;
  Eigen::Index left = 1;
  for (std::size_t n = 0; n < ops.size(); ++n) {
    const Mat& t = *ops[n];
    const Eigen::Index d = t.rows();
    right /= d;
    for (Eigen::Index l = 0; l < left; ++l) {
      for (Eigen::Index j = 0; j < d; ++j) {
        for (Eigen::Index r = 0; r < right; ++r) {
          double acc = 0.0;
          for (Eigen::Index i = 0; i < d; ++i) acc += cur[(l * d + i) * right + r] * t(i, j);
          next[(l * d + j) * right + r] = acc;
        }
      }
    }
    std::swap(cur, next);
    left *= d;
  }
  return cur;
}

RowVec ComposedProcess::apply_joint(const RowVec& s, int x) const {
  require(s.size() == joint_dim_, ErrorCode::kShapeMismatch, "joint state has wrong dimension");
  const auto ops = factor_operators(x);
  RowVec clean = apply_kron(s, ops);
  if (spec_.regime != Regime::kNoisy) return clean;
  // (1-eps) C^(x) + eps/(K-1) (Net - C^(x))
  const double k = codec_.n_tokens();
  const double w_rest = spec_.epsilon / (k - 1.0);
  std::vector<const Mat*> nets;
  for (const auto& m : net_ops_) nets.push_back(&m);
  return (1.0 - spec_.epsilon - w_rest) * clean + w_rest * apply_kron(s, nets);
}

Mat ComposedProcess::build_joint_operator(int x) const {
  const auto ops = factor_operators(x);
  Mat clean = *ops.front();
  for (std::size_t n = 1; n < ops.size(); ++n) clean = kron(clean, *ops[n]);
  if (spec_.regime != Regime::kNoisy) return clean;
  const double k = codec_.n_tokens();
  const double w_rest = spec_.epsilon / (k - 1.0);
  Mat net = net_ops_.front();
  for (std::size_t n = 1; n < net_ops_.size(); ++n) net = kron(net, net_ops_[n]);
  return (1.0 - spec_.epsilon - w_rest) * clean + w_rest * net;
}

std::shared_ptr<const Mat> ComposedProcess::joint_operator(int x) const {
  require(x >= 0 && x < codec_.n_tokens(), ErrorCode::kOutOfRange, "joint_operator needs a non-BOS token");
  auto& c = *cache_;
  {
    std::lock_guard lock(c.mu);
    if (auto it = c.entries.find(x); it != c.entries.end()) {
      c.order.splice(c.order.begin(), c.order, it->second.second);
      return it->second.first;
    }
  }
  auto built = std::make_shared<const Mat>(build_joint_operator(x));
  if (c.cap == 0) return built;
  std::lock_guard lock(c.mu);
  if (auto it = c.entries.find(x); it != c.entries.end()) return it->second.first;
  c.order.push_front(x);
  c.entries.emplace(x, std::make_pair(built, c.order.begin()));
  while (c.entries.size() > c.cap) {
    c.entries.erase(c.order.back());
    c.order.pop_back();
  }
  return built;
}

Mat ComposedProcess::joint_net_operator() const {
  if (spec_.regime != Regime::kChain) {
    Mat net = net_ops_.front();
    for (std::size_t n = 1; n < net_ops_.size(); ++n) net = kron(net, net_ops_[n]);
    return net;
  }
  Mat net = Mat::Zero(joint_dim_, joint_dim_);
  for (int x = 0; x < codec_.n_tokens(); ++x) net += build_joint_operator(x);
  return net;
}

double ComposedProcess::sequence_probability(std::span<const int> tokens) const {
  RowVec v = initial_joint();
  for (int x : tokens) v = apply_joint(v, x);
  return v.dot(joint_right_one().transpose());
}

ComposedProcess independent_product(const std::vector<FactorSpec>& factors) {
  ComposedSpec spec;
  spec.regime = Regime::kIndependent;
  for (const auto& f : factors) spec.factors.push_back({{f}});
  return ComposedProcess(std::move(spec));
}

ComposedProcess conditional_chain(const std::vector<ChainedFactor>& factors) {
  ComposedSpec spec;
  spec.regime = Regime::kChain;
  spec.factors = factors;
  return ComposedProcess(std::move(spec));
}

ComposedProcess noisy_channel(const ComposedProcess& base, double epsilon) {
  require(base.regime() == Regime::kIndependent, ErrorCode::kUnsupported, "noisy channel requires an independent base");
  require(epsilon >= 0.0 && epsilon <= 1.0, ErrorCode::kInvalidArgument, "epsilon must lie in [0,1]");
  ComposedSpec spec = base.spec();
  spec.regime = Regime::kNoisy;
  spec.epsilon = epsilon;
  return ComposedProcess(std::move(spec));
}

RowVec kron_rows(std::span<const RowVec> parts) {
  require(!parts.empty(), ErrorCode::kInvalidArgument, "kron of nothing");
  RowVec out = parts.front();
  for (std::size_t n = 1; n < parts.size(); ++n) {
    const RowVec& b = parts[n];
    RowVec next(out.size() * b.size());
    for (Eigen::Index i = 0; i < out.size(); ++i) next.segment(i * b.size(), b.size()) = out[i] * b;
    out = std::move(next);
  }
  return out;
}

Mat kron(const Mat& a, const Mat& b) {
  Mat out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  }
  return out;
}

FactoredState factored_update(const ComposedProcess& p, const FactoredState& s, int x) {
  require(p.product_preserving(), ErrorCode::kUnsupported, "factored update is undefined for the noisy regime");
  require(static_cast<int>(s.size()) == p.n_factors(), ErrorCode::kShapeMismatch, "factored state has wrong arity");
  const auto z = p.codec().decode(x);
  FactoredState out;
  out.reserve(s.size());
  for (int n = 0; n < p.n_factors(); ++n) {
    const int control = (n > 0 && p.n_variants(n) > 1) ? z[static_cast<std::size_t>(n - 1)] : 0;
    out.push_back(update_predictive(p.factor(n, control), s[static_cast<std::size_t>(n)], z[static_cast<std::size_t>(n)]));
  }
  return out;
}

JointState joint_update(const ComposedProcess& p, const JointState& s, int x) {
  RowVec next = p.apply_joint(s, x);
  const double mass = next.dot(p.joint_right_one().transpose());
  if (mass <= kZeroProbabilityTol) {
    fail(ErrorCode::kZeroProbabilityToken, "token " + std::to_string(x) + " has zero probability in this joint state");
  }
  return next / mass;
}

RowVec reduced_state(const ComposedProcess& p, const JointState& s, int n) {
  require(n >= 0 && n < p.n_factors(), ErrorCode::kOutOfRange, "factor index out of range");
  require(s.size() == p.joint_dim(), ErrorCode::kShapeMismatch, "joint state has wrong dimension");
  const auto& dims = p.factor_dims();
  RowVec out = RowVec::Zero(dims[static_cast<std::size_t>(n)]);
  std::vector<int> idx(dims.size(), 0);
  for (Eigen::Index flat = 0; flat < s.size(); ++flat) {
    double w = s[flat];
    for (int m = 0; m < p.n_factors(); ++m) {
      if (m != n) w *= p.factor_right_one(m)[idx[static_cast<std::size_t>(m)]];
    }
    out[idx[static_cast<std::size_t>(n)]] += w;
    // Advance the mixed-radix index, last factor fastest.
    for (int m = p.n_factors() - 1; m >= 0; --m) {
      if (++idx[static_cast<std::size_t>(m)] < dims[static_cast<std::size_t>(m)]) break;
      idx[static_cast<std::size_t>(m)] = 0;
    }
  }
  const double mass = out.dot(p.factor_right_one(n).transpose());
  require(std::abs(mass) > kZeroProbabilityTol, ErrorCode::kInvalidArgument, "reduced state has zero mass");
  return out / mass;
}

FactoredState reduced_states(const ComposedProcess& p, const JointState& s) {
  FactoredState out;
  for (int n = 0; n < p.n_factors(); ++n) out.push_back(reduced_state(p, s, n));
  return out;
}

double total_correlation(const ComposedProcess& p, const JointState& s) {
  if (!p.all_classical()) {
    fail(ErrorCode::kNonClassicalState, "total correlation requires every factor to be an HMM");
  }
  const RowVec q = kron_rows(reduced_states(p, s));
  double kl = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s[i] <= 0.0) continue;
    kl += s[i] * std::log(s[i] / q[i]);
  }
  return std::max(kl, 0.0);
}

double off_manifold_distance(const ComposedProcess& p, const JointState& s) {
  return (s - kron_rows(reduced_states(p, s))).norm();
}

FwhMap::FwhMap(const ComposedProcess& p) {
  offsets_.push_back(0);
  for (int n = 0; n < p.n_factors(); ++n) {
    const int d = p.factor_dim(n);
    const ColVec one = p.factor_right_one(n);
    Mat basis(d, d);
    int filled = 0;
    auto push = [&](ColVec v) {
      for (int k = 0; k < filled; ++k) v -= basis.col(k).dot(v) * basis.col(k);
      const double norm = v.norm();
      if (norm < 1e-10 || filled == d) return;
      basis.col(filled++) = v / norm;
    };
    push(one);
    for (int i = 0; i < d; ++i) push(ColVec::Unit(d, i));
    require(filled == d, ErrorCode::kInternal, "Gram-Schmidt did not complete a basis");
    bases_.push_back(basis);
    one_norm_.push_back(one.norm());
    offsets_.push_back(offsets_.back() + d - 1);
  }
}

FwhEmbedding FwhMap::embed(const FactoredState& s) const {
  require(s.size() == bases_.size(), ErrorCode::kShapeMismatch, "factored state has wrong arity");
  FwhEmbedding e(dim());
  for (std::size_t n = 0; n < bases_.size(); ++n) {
    const Mat& b = bases_[n];
    const RowVec coeffs = s[n] * b;
    e.segment(offsets_[n], b.cols() - 1) = coeffs.tail(b.cols() - 1);
  }
  return e;
}

FactoredState FwhMap::decode(const FwhEmbedding& e) const {
  require(e.size() == dim(), ErrorCode::kShapeMismatch, "embedding has wrong dimension");
  FactoredState out;
  for (std::size_t n = 0; n < bases_.size(); ++n) {
    const Mat& b = bases_[n];
    RowVec coeffs(b.cols());
    // Normalization s . 1_n = 1 fixes the coefficient on the first basis vector.
    coeffs[0] = 1.0 / one_norm_[n];
    coeffs.tail(b.cols() - 1) = e.segment(offsets_[n], b.cols() - 1);
    out.push_back(coeffs * b.transpose());
  }
  return out;
}

FwhEmbedding FwhMap::joint_to_factored(const ComposedProcess& p, const JointState& s) const {
  return embed(reduced_states(p, s));
}

JointState product_reconstruct(const FactoredState& s) {
  return kron_rows(s);
}

JointState product_reconstruct(const FwhMap& map, const FwhEmbedding& e) { return kron_rows(map.decode(e)); }

std::vector<FactorSpec> reference_independent_factors() {
  const auto m = FactorSpec::mess3_of(0.6, 0.15);
  const auto b = FactorSpec::bloch_of(1.0, 3.0);
  return {m, m, m, b, b};
}

std::vector<ChainedFactor> reference_chain_factors() {
  const auto m1 = FactorSpec::mess3_of(0.60, 0.15);
  const auto m2 = FactorSpec::mess3_of(0.79, 0.11);
  const auto m3 = FactorSpec::mess3_of(0.60, 0.50);
  const auto b1 = FactorSpec::bloch_of(1.0, 2.0);
  const auto b2 = FactorSpec::bloch_of(1.0, 2.5);
  const auto b3 = FactorSpec::bloch_of(1.0, 3.0);
  const auto b4 = FactorSpec::bloch_of(1.0, 3.5);
  return {{{m1}}, {{m1, m2, m3}}, {{m1, m2, m3}}, {{b1, b2, b3}}, {{b1, b2, b3, b4}}};
}

}  // namespace flab
