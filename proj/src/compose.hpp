#pragma once

#include "ghmm.hpp"

#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

namespace flab {

// Mixed-radix codec between per-factor sub-tokens and token ids. Factor 0 is
// the least significant digit; BOS, when enabled, takes id = product of radices.
class TokenCodec {
 public:
  explicit TokenCodec(std::vector<int> radices);

  int n_factors() const { return static_cast<int>(radices_.size()); }
  const std::vector<int>& radices() const { return radices_; }
  int n_tokens() const { return n_tokens_; }  // excludes BOS
  int vocab_with_bos() const { return n_tokens_ + 1; }
  int bos_id() const { return n_tokens_; }

  int encode(std::span<const int> subtokens) const;
  std::vector<int> decode(int token) const;
  void decode_into(int token, std::span<int> out) const;

 private:
  std::vector<int> radices_;
  int n_tokens_ = 1;
};

enum class Regime { kIndependent, kChain, kNoisy };

const char* regime_name(Regime r);

// One slot of a composed process. A root (or independent) factor has a single
// variant; a chained factor has one variant per sub-token value of its
// immediate predecessor.
struct ChainedFactor {
  std::vector<FactorSpec> variant_specs;
};

struct ComposedSpec {
  Regime regime = Regime::kIndependent;
  double epsilon = 0.0;
  std::vector<ChainedFactor> factors;
};

using FactoredState = std::vector<RowVec>;
using JointState = RowVec;
using FwhEmbedding = RowVec;

class ComposedProcess {
 public:
  explicit ComposedProcess(ComposedSpec spec, std::size_t operator_cache_cap = 64);
  // Copies start with an empty operator cache.
  ComposedProcess(const ComposedProcess& other) : ComposedProcess(other.spec_, other.cache_->cap) {}
  ComposedProcess(ComposedProcess&&) noexcept = default;
  ComposedProcess& operator=(const ComposedProcess& other) {
    if (this != &other) *this = ComposedProcess(other);
    return *this;
  }
  ComposedProcess& operator=(ComposedProcess&&) noexcept = default;

  const ComposedSpec& spec() const { return spec_; }
  Regime regime() const { return spec_.regime; }
  double epsilon() const { return spec_.epsilon; }
  int n_factors() const { return static_cast<int>(variants_.size()); }
  const TokenCodec& codec() const { return codec_; }
  int factor_dim(int n) const { return dims_.at(static_cast<std::size_t>(n)); }
  const std::vector<int>& factor_dims() const { return dims_; }
  int joint_dim() const { return joint_dim_; }
  int factored_dim() const;  // sum of d_n
  int fwh_dim() const;       // sum of (d_n - 1)
  const ColVec& factor_right_one(int n) const { return variants_.at(static_cast<std::size_t>(n)).front().right_one(); }
  bool all_classical() const;
  bool product_preserving() const { return spec_.regime != Regime::kNoisy; }

  // Variant of factor n selected by the predecessor's current sub-token.
  const Ghmm& factor(int n, int control = 0) const;
  int n_variants(int n) const { return static_cast<int>(variants_.at(static_cast<std::size_t>(n)).size()); }

  FactoredState initial_factored() const;
  JointState initial_joint() const;
  ColVec joint_right_one() const;

  // Per-factor operators selected by token x (chain controls resolved).
  std::vector<const Mat*> factor_operators(int x) const;

  // Dense joint operator, LRU-cached.
  std::shared_ptr<const Mat> joint_operator(int x) const;
  // Net joint operator sum_x T^(x).
  Mat joint_net_operator() const;
  // s T^(x) without materializing the Kronecker product.
  RowVec apply_joint(const RowVec& s, int x) const;

  double sequence_probability(std::span<const int> tokens) const;

 private:
  RowVec apply_kron(const RowVec& s, std::span<const Mat* const> ops) const;
  Mat build_joint_operator(int x) const;

  ComposedSpec spec_;
  std::vector<std::vector<Ghmm>> variants_;
  std::vector<Mat> net_ops_;  // per factor, independent/noisy only
  TokenCodec codec_;
  std::vector<int> dims_;
  int joint_dim_ = 1;

  struct OperatorCache {
    std::size_t cap;
    std::mutex mu;
    std::list<int> order;  // front = most recent
    std::unordered_map<int, std::pair<std::shared_ptr<const Mat>, std::list<int>::iterator>> entries;
  };
  mutable std::unique_ptr<OperatorCache> cache_;
};

ComposedProcess independent_product(const std::vector<FactorSpec>& factors);
ComposedProcess conditional_chain(const std::vector<ChainedFactor>& factors);
ComposedProcess noisy_channel(const ComposedProcess& base, double epsilon);

// Kronecker product of row vectors, factor 0 most significant.
RowVec kron_rows(std::span<const RowVec> parts);
Mat kron(const Mat& a, const Mat& b);

FactoredState factored_update(const ComposedProcess& p, const FactoredState& s, int x);
JointState joint_update(const ComposedProcess& p, const JointState& s, int x);

// Contract every slot except n against its right_one vector; normalized.
RowVec reduced_state(const ComposedProcess& p, const JointState& s, int n);
FactoredState reduced_states(const ComposedProcess& p, const JointState& s);

// KL divergence (nats) from s to the product of its reduced states. Only
// defined when every factor is an HMM.
double total_correlation(const ComposedProcess& p, const JointState& s);
// Euclidean distance from s to the product of its reduced states; usable for
// generalized factors where KL is undefined.
double off_manifold_distance(const ComposedProcess& p, const JointState& s);

// Orthonormal per-factor bases whose first element is proportional to 1_n.
class FwhMap {
 public:
  explicit FwhMap(const ComposedProcess& p);

  int dim() const { return offsets_.back(); }
  const Mat& basis(int n) const { return bases_.at(static_cast<std::size_t>(n)); }

  FwhEmbedding embed(const FactoredState& s) const;
  FactoredState decode(const FwhEmbedding& e) const;
  FwhEmbedding joint_to_factored(const ComposedProcess& p, const JointState& s) const;

 private:
  std::vector<Mat> bases_;       // columns are basis vectors
  std::vector<double> one_norm_; // |1_n|
  std::vector<int> offsets_;
};

JointState product_reconstruct(const FactoredState& s);
JointState product_reconstruct(const FwhMap& map, const FwhEmbedding& e);

// Five-factor reference configurations: three Mess3 plus two Bloch Walk
// factors, and the chained variant tables built from the same families.
std::vector<FactorSpec> reference_independent_factors();
std::vector<ChainedFactor> reference_chain_factors();

}  // namespace flab
