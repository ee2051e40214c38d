#pragma once

#include "model.hpp"

namespace flab::nn {

// Pre-norm decoder-only transformer with learned positional embeddings:
// x = wte[tok] + wpe[pos]; per block x += attn(ln1(x)); x += mlp(ln2(x));
// logits = ln_f(x) W_u + b_u.
template <typename T>
class Transformer final : public SequenceModel<T> {
 public:
  explicit Transformer(const ModelConfig& cfg);

 protected:
  using typename SequenceModel<T>::Sink;
  MatT<T> run_forward(const TokenBlock& tokens, ActivationCache* cache, Sink* sink,
                      const std::vector<std::string>& wanted) const override;
  std::unique_ptr<ActivationCache> make_cache() const override;
  void run_backward(const TokenBlock& tokens, const ActivationCache& cache, const MatT<T>& dlogits) override;

 private:
  struct Block {
    int ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o, ln2_g, ln2_b, w_fc, b_fc, w_proj, b_proj;
  };
  std::vector<Block> blocks_;
  int wpe_, lnf_g_, lnf_b_, w_u_, b_u_;
};

}  // namespace flab::nn
