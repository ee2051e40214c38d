#pragma once

#include "model.hpp"

namespace flab::nn {

// Stacked Elman (tanh) or LSTM network with hidden width d_model and a linear
// readout. LSTM gate order is i, f, g, o.
template <typename T>
class RecurrentModel final : public SequenceModel<T> {
 public:
  RecurrentModel(const ModelConfig& cfg, bool lstm);

  bool is_lstm() const { return lstm_; }

 protected:
  using typename SequenceModel<T>::Sink;
  MatT<T> run_forward(const TokenBlock& tokens, ActivationCache* cache, Sink* sink,
                      const std::vector<std::string>& wanted) const override;
  std::unique_ptr<ActivationCache> make_cache() const override;
  void run_backward(const TokenBlock& tokens, const ActivationCache& cache, const MatT<T>& dlogits) override;

 private:
  struct Layer {
    int w_ih, w_hh, b;
  };
  bool lstm_;
  std::vector<Layer> layers_;
  int w_u_, b_u_;
};

}  // namespace flab::nn
