#pragma once

#include "../common.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace flab::nn {

template <typename T>
using MatT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapT = Eigen::Map<MatT<T>>;
template <typename T>
using ConstMapT = Eigen::Map<const MatT<T>>;
// Fixed base alignment keeps Eigen's reduction order identical across runs.
template <typename T>
using ParamVec = std::vector<T, Eigen::aligned_allocator<T>>;

enum class Arch { kTransformer, kRnn, kLstm };

const char* arch_name(Arch a);
Arch arch_from_name(const std::string& name);

struct ModelConfig {
  Arch arch = Arch::kTransformer;
  int n_layers = 2;
  int n_heads = 3;
  int d_model = 48;
  int vocab = 10;
  int context = 9;  // positions, including BOS when present
  std::uint64_t seed = 0;

  int d_ff() const { return 4 * d_model; }
  int d_head() const { return d_model / n_heads; }
  void validate() const;
};

// Row-major block of token ids, rows = sequences.
struct TokenBlock {
  int rows = 0;
  int cols = 0;
  std::span<const std::int32_t> ids;

  std::int32_t at(int r, int c) const { return ids[static_cast<std::size_t>(r) * cols + c]; }
};

struct ParamInfo {
  std::string name;
  std::size_t offset;
  int rows;
  int cols;
};

// All parameters live in one flat buffer so the optimizer, checkpointing and
// gradient checks can treat them uniformly.
template <typename T>
class ParamStore {
 public:
  int add(std::string name, int rows, int cols);
  void finalize();

  MapT<T> value(int id) { return view(values_, id); }
  ConstMapT<T> value(int id) const { return cview(values_, id); }
  MapT<T> grad(int id) { return view(grads_, id); }

  ParamVec<T>& values() { return values_; }
  const ParamVec<T>& values() const { return values_; }
  ParamVec<T>& grads() { return grads_; }
  const std::vector<ParamInfo>& infos() const { return infos_; }
  int find(const std::string& name) const;
  std::size_t size() const { return total_; }
  void zero_grad() { std::fill(grads_.begin(), grads_.end(), T(0)); }

 private:
  MapT<T> view(ParamVec<T>& buf, int id) {
    const auto& i = infos_.at(static_cast<std::size_t>(id));
    return MapT<T>(buf.data() + i.offset, i.rows, i.cols);
  }
  ConstMapT<T> cview(const ParamVec<T>& buf, int id) const {
    const auto& i = infos_.at(static_cast<std::size_t>(id));
    return ConstMapT<T>(buf.data() + i.offset, i.rows, i.cols);
  }

  std::vector<ParamInfo> infos_;
  ParamVec<T> values_;
  ParamVec<T> grads_;
  std::size_t total_ = 0;
};

// Names: embed, resid_post.<k>, final_prenorm, logits.
bool is_capture_point(const std::string& name, const ModelConfig& cfg);

template <typename T>
struct ForwardOutput {
  int batch = 0;
  int positions = 0;
  MatT<T> logits;                            // (batch*positions) x vocab, row = b*positions + t
  std::map<std::string, MatT<T>> captures;  // same row convention
};

// Opaque per-architecture activation cache kept between forward and backward.
struct ActivationCache {
  virtual ~ActivationCache() = default;
};

template <typename T>
class SequenceModel {
 public:
  explicit SequenceModel(ModelConfig cfg) : cfg_(cfg) {}
  virtual ~SequenceModel() = default;

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  // Reentrant for concurrent readers; captures never alter the logits.
  ForwardOutput<T> forward(const TokenBlock& tokens, const std::vector<std::string>& captures = {}) const;

  // Mean next-token cross-entropy over positions 0..cols-2; gradients are
  // overwritten, not accumulated.
  double loss_and_grad(const TokenBlock& tokens);
  double loss(const TokenBlock& tokens) const;

  // Learned token embedding (vocab x d_model), positional embeddings excluded.
  MatT<T> embedding_matrix() const;

 protected:
  using Sink = std::map<std::string, MatT<T>>;
  virtual MatT<T> run_forward(const TokenBlock& tokens, ActivationCache* cache, Sink* sink,
                              const std::vector<std::string>& wanted) const = 0;
  virtual std::unique_ptr<ActivationCache> make_cache() const = 0;
  virtual void run_backward(const TokenBlock& tokens, const ActivationCache& cache, const MatT<T>& dlogits) = 0;

  void check_tokens(const TokenBlock& tokens) const;
  void init_normal(double stddev);

  ModelConfig cfg_;
  ParamStore<T> params_;
  int wte_ = -1;
};

template <typename T>
std::unique_ptr<SequenceModel<T>> build_model(const ModelConfig& cfg);

// Mean cross-entropy and its gradient w.r.t. logits for next-token targets.
template <typename T>
double cross_entropy(const MatT<T>& logits, const TokenBlock& tokens, MatT<T>* dlogits);

// Maximum relative error between analytic and central-difference gradients
// over a random subset of parameters.
struct GradCheckResult {
  double max_rel_error = 0.0;
  int checked = 0;
};
GradCheckResult grad_check(SequenceModel<double>& m, const TokenBlock& tokens, double fd_epsilon,
                           int max_params = 400, std::uint64_t seed = 7);

}  // namespace flab::nn
