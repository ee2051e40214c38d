#include "model.hpp"

#include "../philox.hpp"
#include "recurrent.hpp"
#include "transformer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace flab::nn {

const char* arch_name(Arch a) {
  switch (a) {
    case Arch::kTransformer: return "transformer";
    case Arch::kRnn: return "rnn";
    case Arch::kLstm: return "lstm";
  }
  return "?";
}

Arch arch_from_name(const std::string& name) {
  if (name == "transformer") return Arch::kTransformer;
  if (name == "rnn") return Arch::kRnn;
  if (name == "lstm") return Arch::kLstm;
  fail(ErrorCode::kConfig, "unknown architecture '" + name + "'");
}

void ModelConfig::validate() const {
  require(n_layers >= 1, ErrorCode::kInvalidArgument, "n_layers must be >= 1");
  require(d_model >= 1 && vocab >= 1 && context >= 1, ErrorCode::kInvalidArgument,
          "d_model, vocab and context must be positive");
  if (arch == Arch::kTransformer) {
    require(n_heads >= 1 && d_model % n_heads == 0, ErrorCode::kInvalidArgument,
            "d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" + std::to_string(n_heads) + ")");
  }
}

template <typename T>
int ParamStore<T>::add(std::string name, int rows, int cols) {
  require(values_.empty(), ErrorCode::kInternal, "parameters added after finalize");
  infos_.push_back({std::move(name), total_, rows, cols});
  total_ += static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  return static_cast<int>(infos_.size()) - 1;
}

template <typename T>
void ParamStore<T>::finalize() {
  values_.assign(total_, T(0));
  grads_.assign(total_, T(0));
}

template <typename T>
int ParamStore<T>::find(const std::string& name) const {
  for (std::size_t i = 0; i < infos_.size(); ++i) {
    if (infos_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

bool is_capture_point(const std::string& name, const ModelConfig& cfg) {
  if (name == "embed" || name == "final_prenorm" || name == "logits") return true;
  constexpr std::string_view prefix = "resid_post.";
  if (name.rfind(prefix, 0) != 0) return false;
  const std::string rest = name.substr(prefix.size());
  if (rest.empty() || !std::all_of(rest.begin(), rest.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    return false;
  }
  const int k = std::stoi(rest);
  return k >= 0 && k < cfg.n_layers;
}

template <typename T>
void SequenceModel<T>::check_tokens(const TokenBlock& tokens) const {
  require(tokens.rows >= 1 && tokens.cols >= 1, ErrorCode::kInvalidArgument, "empty token block");
  require(tokens.cols <= cfg_.context, ErrorCode::kInvalidArgument,
          "sequence length " + std::to_string(tokens.cols) + " exceeds context " + std::to_string(cfg_.context));
  require(tokens.ids.size() == static_cast<std::size_t>(tokens.rows) * tokens.cols, ErrorCode::kShapeMismatch,
          "token block size mismatch");
  for (auto id : tokens.ids) {
    require(id >= 0 && id < cfg_.vocab, ErrorCode::kOutOfRange, "token id " + std::to_string(id) + " outside vocab");
  }
}

template <typename T>
void SequenceModel<T>::init_normal(double stddev) {
  PhiloxStream rng(mix_seed(cfg_.seed, 0x1417), 0);
  for (const auto& info : params_.infos()) {
    const auto dot = info.name.rfind('.');
    const std::string leaf = dot == std::string::npos ? info.name : info.name.substr(dot + 1);
    auto v = params_.value(params_.find(info.name));
    if (leaf == "g") {
      v.setOnes();
    } else if (leaf == "b" || leaf.rfind("b_", 0) == 0) {
      v.setZero();
    } else {
      for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = static_cast<T>(stddev * rng.normal());
    }
  }
}

template <typename T>
ForwardOutput<T> SequenceModel<T>::forward(const TokenBlock& tokens, const std::vector<std::string>& captures) const {
  check_tokens(tokens);
  for (const auto& c : captures) {
    require(is_capture_point(c, cfg_), ErrorCode::kInvalidArgument, "unknown capture point '" + c + "'");
  }
  ForwardOutput<T> out;
  out.batch = tokens.rows;
  out.positions = tokens.cols;
  Sink sink;
  out.logits = run_forward(tokens, nullptr, captures.empty() ? nullptr : &sink, captures);
  if (std::find(captures.begin(), captures.end(), "logits") != captures.end()) sink["logits"] = out.logits;
  out.captures = std::move(sink);
  return out;
}

template <typename T>
double cross_entropy(const MatT<T>& logits, const TokenBlock& tokens, MatT<T>* dlogits) {
  const int S = tokens.cols;
  require(S >= 2, ErrorCode::kInvalidArgument, "need at least two positions for next-token loss");
  const int V = static_cast<int>(logits.cols());
  const double count = static_cast<double>(tokens.rows) * (S - 1);
  if (dlogits) dlogits->setZero(logits.rows(), logits.cols());
  double total = 0.0;
  for (int b = 0; b < tokens.rows; ++b) {
    for (int t = 0; t + 1 < S; ++t) {
      const Eigen::Index r = static_cast<Eigen::Index>(b) * S + t;
      const int target = tokens.at(b, t + 1);
      const T mx = logits.row(r).maxCoeff();
      double z = 0.0;
      for (int v = 0; v < V; ++v) z += std::exp(static_cast<double>(logits(r, v) - mx));
      const double lse = std::log(z) + static_cast<double>(mx);
      total += lse - static_cast<double>(logits(r, target));
      if (dlogits) {
        for (int v = 0; v < V; ++v) {
          (*dlogits)(r, v) = static_cast<T>(std::exp(static_cast<double>(logits(r, v)) - lse) / count);
        }
        (*dlogits)(r, target) -= static_cast<T>(1.0 / count);
      }
    }
  }
  return total / count;
}

namespace {

// Sequences per forward/backward pass; keeps the activations cache-resident.
constexpr int kChunkRows = 64;

TokenBlock rows_of(const TokenBlock& tb, int lo, int hi) {
  const std::size_t w = static_cast<std::size_t>(tb.cols);
  return {hi - lo, tb.cols, tb.ids.subspan(static_cast<std::size_t>(lo) * w, static_cast<std::size_t>(hi - lo) * w)};
}

}  // namespace

template <typename T>
double SequenceModel<T>::loss_and_grad(const TokenBlock& tokens) {
  check_tokens(tokens);
  params_.zero_grad();
  double total = 0.0;
  for (int lo = 0; lo < tokens.rows; lo += kChunkRows) {
    const int hi = std::min(tokens.rows, lo + kChunkRows);
    const TokenBlock part = rows_of(tokens, lo, hi);
    const double weight = static_cast<double>(hi - lo) / tokens.rows;
    auto cache = make_cache();
    const MatT<T> logits = run_forward(part, cache.get(), nullptr, {});
    MatT<T> dlogits;
    total += weight * cross_entropy<T>(logits, part, &dlogits);
    dlogits *= static_cast<T>(weight);
    run_backward(part, *cache, dlogits);
  }
  return total;
}

template <typename T>
double SequenceModel<T>::loss(const TokenBlock& tokens) const {
  check_tokens(tokens);
  double total = 0.0;
  for (int lo = 0; lo < tokens.rows; lo += kChunkRows) {
    const int hi = std::min(tokens.rows, lo + kChunkRows);
    const TokenBlock part = rows_of(tokens, lo, hi);
    total += static_cast<double>(hi - lo) / tokens.rows *
             cross_entropy<T>(run_forward(part, nullptr, nullptr, {}), part, nullptr);
  }
  return total;
}

template <typename T>
MatT<T> SequenceModel<T>::embedding_matrix() const {
  return params_.value(wte_);
}

template <typename T>
std::unique_ptr<SequenceModel<T>> build_model(const ModelConfig& cfg) {
  cfg.validate();
  switch (cfg.arch) {
    case Arch::kTransformer: return std::make_unique<Transformer<T>>(cfg);
    case Arch::kRnn: return std::make_unique<RecurrentModel<T>>(cfg, false);
    case Arch::kLstm: return std::make_unique<RecurrentModel<T>>(cfg, true);
  }
  fail(ErrorCode::kInvalidArgument, "unknown architecture");
}

GradCheckResult grad_check(SequenceModel<double>& m, const TokenBlock& tokens, double fd_epsilon, int max_params,
                           std::uint64_t seed) {
  m.loss_and_grad(tokens);
  const ParamVec<double> analytic = m.params().grads();
  auto& values = m.params().values();
  const std::size_t n = values.size();

  std::vector<std::size_t> picks;
  if (static_cast<std::size_t>(max_params) >= n) {
    picks.resize(n);
    std::iota(picks.begin(), picks.end(), std::size_t{0});
  } else {
    PhiloxStream rng(seed, 0);
    std::unordered_set<std::size_t> seen;
    while (picks.size() < static_cast<std::size_t>(max_params)) {
      const std::size_t i = rng.below(static_cast<std::uint32_t>(n));
      if (seen.insert(i).second) picks.push_back(i);
    }
  }

  GradCheckResult res;
  for (std::size_t i : picks) {
    const double saved = values[i];
    values[i] = saved + fd_epsilon;
    const double up = m.loss(tokens);
    values[i] = saved - fd_epsilon;
    const double down = m.loss(tokens);
    values[i] = saved;
    const double numeric = (up - down) / (2.0 * fd_epsilon);
    const double a = analytic[i];
    // Gradients below 1e-6 in magnitude are compared on an absolute scale.
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
    res.max_rel_error = std::max(res.max_rel_error, rel);
    ++res.checked;
  }
  return res;
}

template class ParamStore<float>;
template class ParamStore<double>;
template class SequenceModel<float>;
template class SequenceModel<double>;
template std::unique_ptr<SequenceModel<float>> build_model<float>(const ModelConfig&);
template std::unique_ptr<SequenceModel<double>> build_model<double>(const ModelConfig&);
template double cross_entropy<float>(const MatT<float>&, const TokenBlock&, MatT<float>*);
template double cross_entropy<double>(const MatT<double>&, const TokenBlock&, MatT<double>*);

}  // namespace flab::nn
