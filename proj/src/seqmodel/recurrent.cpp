#include "recurrent.hpp"

#include "layers.hpp"

#include <algorithm>

namespace flab::nn {

namespace {

// All matrices are time-major: row = t * batch + b.
template <typename T>
struct LayerCache {
  MatT<T> input, h, gates, c;
};

template <typename T>
struct RecurrentCache final : ActivationCache {
  std::vector<LayerCache<T>> layers;
};

template <typename T>
MatT<T> to_time_major(const MatT<T>& m, int B, int S) {
  MatT<T> out(m.rows(), m.cols());
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < S; ++t) out.row(static_cast<Eigen::Index>(t) * B + b) = m.row(static_cast<Eigen::Index>(b) * S + t);
  return out;
}

template <typename T>
MatT<T> to_batch_major(const MatT<T>& m, int B, int S) {
  MatT<T> out(m.rows(), m.cols());
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < S; ++t) out.row(static_cast<Eigen::Index>(b) * S + t) = m.row(static_cast<Eigen::Index>(t) * B + b);
  return out;
}

}  // namespace

template <typename T>
RecurrentModel<T>::RecurrentModel(const ModelConfig& cfg, bool lstm) : SequenceModel<T>(cfg), lstm_(lstm) {
  auto& ps = this->params_;
  const int D = cfg.d_model, G = lstm ? 4 * D : D;
  this->wte_ = ps.add("wte", cfg.vocab, D);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    layers_.push_back({ps.add(p + "w_ih", D, G), ps.add(p + "w_hh", D, G), ps.add(p + "b", 1, G)});
  }
  w_u_ = ps.add("readout.w", D, cfg.vocab);
  b_u_ = ps.add("readout.b", 1, cfg.vocab);
  ps.finalize();
  this->init_normal(0.02);
}

template <typename T>
std::unique_ptr<ActivationCache> RecurrentModel<T>::make_cache() const {
  return std::make_unique<RecurrentCache<T>>();
}

template <typename T>
MatT<T> RecurrentModel<T>::run_forward(const TokenBlock& tokens, ActivationCache* cache_base, Sink* sink,
                                       const std::vector<std::string>& wanted) const {
  const auto& ps = this->params_;
  const int B = tokens.rows, S = tokens.cols, D = this->cfg_.d_model;
  auto* cache = static_cast<RecurrentCache<T>*>(cache_base);
  auto want = [&](const std::string& n) { return sink && std::find(wanted.begin(), wanted.end(), n) != wanted.end(); };

  const auto wte = ps.value(this->wte_);
  MatT<T> x(static_cast<Eigen::Index>(B) * S, D);
  for (int t = 0; t < S; ++t)
    for (int b = 0; b < B; ++b) x.row(static_cast<Eigen::Index>(t) * B + b) = wte.row(tokens.at(b, t));
  if (want("embed")) (*sink)["embed"] = to_batch_major<T>(x, B, S);
  if (cache) cache->layers.resize(layers_.size());

  LayerCache<T> local;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& ly = layers_[l];
    LayerCache<T>& c = cache ? cache->layers[l] : local;
    c.input = x;
    // input projection for all steps at once
    c.gates.noalias() = x * ps.value(ly.w_ih);
    c.gates.rowwise() += ps.value(ly.b).row(0);
    c.h.resize(x.rows(), D);
    if (lstm_) c.c.resize(x.rows(), D);
    const auto w_hh = ps.value(ly.w_hh);
    MatT<T> h_prev = MatT<T>::Zero(B, D), c_prev = MatT<T>::Zero(B, D);
    for (int t = 0; t < S; ++t) {
      auto g = c.gates.middleRows(static_cast<Eigen::Index>(t) * B, B);
      if (t > 0) g.noalias() += h_prev * w_hh;
      if (!lstm_) {
        g = g.unaryExpr([](T v) { return std::tanh(v); });
        h_prev = g;
      } else {
        g.leftCols(2 * D) = g.leftCols(2 * D).unaryExpr([](T v) { return sigmoid(v); });
        g.middleCols(2 * D, D) = g.middleCols(2 * D, D).unaryExpr([](T v) { return std::tanh(v); });
        g.rightCols(D) = g.rightCols(D).unaryExpr([](T v) { return sigmoid(v); });
        c_prev = g.middleCols(D, D).cwiseProduct(c_prev) + g.leftCols(D).cwiseProduct(g.middleCols(2 * D, D));
        h_prev = g.rightCols(D).cwiseProduct(c_prev.unaryExpr([](T v) { return std::tanh(v); }));
        c.c.middleRows(static_cast<Eigen::Index>(t) * B, B) = c_prev;
      }
      c.h.middleRows(static_cast<Eigen::Index>(t) * B, B) = h_prev;
    }
    x = c.h;
    const std::string name = "resid_post." + std::to_string(l);
    if (want(name)) (*sink)[name] = to_batch_major<T>(x, B, S);
  }
  if (want("final_prenorm")) (*sink)["final_prenorm"] = to_batch_major<T>(x, B, S);
  MatT<T> logits = x * ps.value(w_u_);
  logits.rowwise() += ps.value(b_u_).row(0);
  return to_batch_major<T>(logits, B, S);
}

template <typename T>
void RecurrentModel<T>::run_backward(const TokenBlock& tokens, const ActivationCache& cache_base,
                                     const MatT<T>& dlogits_bm) {
  auto& ps = this->params_;
  const auto& cache = static_cast<const RecurrentCache<T>&>(cache_base);
  const int B = tokens.rows, S = tokens.cols, D = this->cfg_.d_model;
  const MatT<T> dlogits = to_time_major<T>(dlogits_bm, B, S);

  const MatT<T>& top = cache.layers.back().h;
  ps.grad(w_u_).noalias() += top.transpose() * dlogits;
  ps.grad(b_u_) += dlogits.colwise().sum();
  MatT<T> dh_all = dlogits * ps.value(w_u_).transpose();

  for (std::size_t li = layers_.size(); li-- > 0;) {
    const Layer& ly = layers_[li];
    const LayerCache<T>& c = cache.layers[li];
    const auto w_hh = ps.value(ly.w_hh);
    MatT<T> dpre(c.gates.rows(), c.gates.cols());
    MatT<T> dh_next = MatT<T>::Zero(B, D), dc_next = MatT<T>::Zero(B, D);
    for (int t = S - 1; t >= 0; --t) {
      const Eigen::Index r = static_cast<Eigen::Index>(t) * B;
      const MatT<T> dh = dh_all.middleRows(r, B) + dh_next;
      const auto g = c.gates.middleRows(r, B);
      auto dp = dpre.middleRows(r, B);
      if (!lstm_) {
        dp = dh.cwiseProduct((T(1) - g.array().square()).matrix());
      } else {
        const auto ig = g.leftCols(D), fg = g.middleCols(D, D), gg = g.middleCols(2 * D, D), og = g.rightCols(D);
        const MatT<T> tc = c.c.middleRows(r, B).unaryExpr([](T v) { return std::tanh(v); });
        const MatT<T> dc = dc_next + dh.cwiseProduct(og).cwiseProduct((T(1) - tc.array().square()).matrix());
        const MatT<T> c_prev = t > 0 ? MatT<T>(c.c.middleRows(r - B, B)) : MatT<T>::Zero(B, D);
        dp.leftCols(D) = dc.cwiseProduct(gg).cwiseProduct((ig.array() * (T(1) - ig.array())).matrix());
        dp.middleCols(D, D) = dc.cwiseProduct(c_prev).cwiseProduct((fg.array() * (T(1) - fg.array())).matrix());
        dp.middleCols(2 * D, D) = dc.cwiseProduct(ig).cwiseProduct((T(1) - gg.array().square()).matrix());
        dp.rightCols(D) = dh.cwiseProduct(tc).cwiseProduct((og.array() * (T(1) - og.array())).matrix());
        dc_next = dc.cwiseProduct(fg);
      }
      if (t > 0) {
        dh_next.noalias() = dp * w_hh.transpose();
        ps.grad(ly.w_hh).noalias() += c.h.middleRows(r - B, B).transpose() * dp;
      }
    }
    ps.grad(ly.w_ih).noalias() += c.input.transpose() * dpre;
    ps.grad(ly.b) += dpre.colwise().sum();
    dh_all = dpre * ps.value(ly.w_ih).transpose();
  }

  auto dwte = ps.grad(this->wte_);
  for (int t = 0; t < S; ++t)
    for (int b = 0; b < B; ++b) dwte.row(tokens.at(b, t)) += dh_all.row(static_cast<Eigen::Index>(t) * B + b);
}

template class RecurrentModel<float>;
template class RecurrentModel<double>;

}  // namespace flab::nn
