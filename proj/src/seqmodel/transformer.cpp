#include "transformer.hpp"

#include "layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace flab::nn {

namespace {

template <typename T>
struct BlockCache {
  MatT<T> xhat1, h1, qkv, probs, y, x_mid, xhat2, h2, fc, fc_tanh, act;
  VecT<T> rstd1, rstd2;
};

template <typename T>
struct TransformerCache final : ActivationCache {
  std::vector<BlockCache<T>> blocks;
  MatT<T> xhat_f, h_f;
  VecT<T> rstd_f;
};

bool wants(const std::vector<std::string>& wanted, const std::string& name) {
  return std::find(wanted.begin(), wanted.end(), name) != wanted.end();
}

}  // namespace

template <typename T>
Transformer<T>::Transformer(const ModelConfig& cfg) : SequenceModel<T>(cfg) {
  auto& ps = this->params_;
  const int D = cfg.d_model, F = cfg.d_ff(), V = cfg.vocab;
  this->wte_ = ps.add("wte", V, D);
  wpe_ = ps.add("wpe", cfg.context, D);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    Block b{};
    b.ln1_g = ps.add(p + "ln1.g", 1, D);
    b.ln1_b = ps.add(p + "ln1.b", 1, D);
    b.w_qkv = ps.add(p + "attn.w_qkv", D, 3 * D);
    b.b_qkv = ps.add(p + "attn.b_qkv", 1, 3 * D);
    b.w_o = ps.add(p + "attn.w_o", D, D);
    b.b_o = ps.add(p + "attn.b_o", 1, D);
    b.ln2_g = ps.add(p + "ln2.g", 1, D);
    b.ln2_b = ps.add(p + "ln2.b", 1, D);
    b.w_fc = ps.add(p + "mlp.w_fc", D, F);
    b.b_fc = ps.add(p + "mlp.b_fc", 1, F);
    b.w_proj = ps.add(p + "mlp.w_proj", F, D);
    b.b_proj = ps.add(p + "mlp.b_proj", 1, D);
    blocks_.push_back(b);
  }
  lnf_g_ = ps.add("ln_f.g", 1, D);
  lnf_b_ = ps.add("ln_f.b", 1, D);
  w_u_ = ps.add("unembed.w", D, V);
  b_u_ = ps.add("unembed.b", 1, V);
  ps.finalize();
  this->init_normal(0.02);
}

template <typename T>
std::unique_ptr<ActivationCache> Transformer<T>::make_cache() const {
  return std::make_unique<TransformerCache<T>>();
}

template <typename T>
MatT<T> Transformer<T>::run_forward(const TokenBlock& tokens, ActivationCache* cache_base, Sink* sink,
                                    const std::vector<std::string>& wanted) const {
  const auto& cfg = this->cfg_;
  const auto& ps = this->params_;
  const int B = tokens.rows, S = tokens.cols, D = cfg.d_model, H = cfg.n_heads, dh = cfg.d_head();
  const Eigen::Index N = static_cast<Eigen::Index>(B) * S;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  auto* cache = static_cast<TransformerCache<T>*>(cache_base);

  MatT<T> x(N, D);
  const auto wte = ps.value(this->wte_);
  const auto wpe = ps.value(wpe_);
  for (int b = 0; b < B; ++b) {
    for (int t = 0; t < S; ++t) x.row(static_cast<Eigen::Index>(b) * S + t) = wte.row(tokens.at(b, t)) + wpe.row(t);
  }
  if (sink && wants(wanted, "embed")) (*sink)["embed"] = x;
  if (cache) cache->blocks.resize(blocks_.size());

  BlockCache<T> local;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const Block& blk = blocks_[l];
    BlockCache<T>& c = cache ? cache->blocks[l] : local;
    layer_norm_forward<T>(x, ps.value(blk.ln1_g), ps.value(blk.ln1_b), c.xhat1, c.rstd1, c.h1);
    c.qkv.noalias() = c.h1 * ps.value(blk.w_qkv);
    c.qkv.rowwise() += ps.value(blk.b_qkv).row(0);

    c.probs.setZero(static_cast<Eigen::Index>(B) * H * S, S);
    c.y.setZero(N, D);
    const Eigen::Index ld = c.qkv.cols();
    std::vector<T> srow(static_cast<std::size_t>(S));
    for (int b = 0; b < B; ++b) {
      const T* base = c.qkv.data() + static_cast<Eigen::Index>(b) * S * ld;
      for (int h = 0; h < H; ++h) {
        T* p = c.probs.data() + (static_cast<Eigen::Index>(b) * H + h) * S * S;
        for (int i = 0; i < S; ++i) {
          const T* q = base + i * ld + h * dh;
          T mx = -std::numeric_limits<T>::infinity();
          for (int j = 0; j <= i; ++j) {
            const T* k = base + j * ld + D + h * dh;
            T acc = 0;
            for (int d = 0; d < dh; ++d) acc += q[d] * k[d];
            srow[j] = acc * scale;
            mx = std::max(mx, srow[j]);
          }
          T z = 0;
          for (int j = 0; j <= i; ++j) z += (srow[j] = std::exp(srow[j] - mx));
          T* y = c.y.data() + (static_cast<Eigen::Index>(b) * S + i) * D + h * dh;
          for (int j = 0; j <= i; ++j) {
            const T pij = srow[j] / z;
            p[i * S + j] = pij;
            const T* v = base + j * ld + 2 * D + h * dh;
            for (int d = 0; d < dh; ++d) y[d] += pij * v[d];
          }
        }
      }
    }
    c.x_mid = x;
    c.x_mid.noalias() += c.y * ps.value(blk.w_o);
    c.x_mid.rowwise() += ps.value(blk.b_o).row(0);

    layer_norm_forward<T>(c.x_mid, ps.value(blk.ln2_g), ps.value(blk.ln2_b), c.xhat2, c.rstd2, c.h2);
    c.fc.noalias() = c.h2 * ps.value(blk.w_fc);
    c.fc.rowwise() += ps.value(blk.b_fc).row(0);
    gelu_forward<T>(c.fc, c.fc_tanh, c.act);
    x = c.x_mid;
    x.noalias() += c.act * ps.value(blk.w_proj);
    x.rowwise() += ps.value(blk.b_proj).row(0);
    if (sink) {
      const std::string name = "resid_post." + std::to_string(l);
      if (wants(wanted, name)) (*sink)[name] = x;
    }
  }
  if (sink && wants(wanted, "final_prenorm")) (*sink)["final_prenorm"] = x;

  MatT<T> xhat_f, h_f;
  VecT<T> rstd_f;
  layer_norm_forward<T>(x, ps.value(lnf_g_), ps.value(lnf_b_), xhat_f, rstd_f, h_f);
  MatT<T> logits = h_f * ps.value(w_u_);
  logits.rowwise() += ps.value(b_u_).row(0);
  if (cache) {
    cache->xhat_f = std::move(xhat_f);
    cache->h_f = std::move(h_f);
    cache->rstd_f = std::move(rstd_f);
  }
  return logits;
}

template <typename T>
void Transformer<T>::run_backward(const TokenBlock& tokens, const ActivationCache& cache_base,
                                  const MatT<T>& dlogits) {
  const auto& cfg = this->cfg_;
  auto& ps = this->params_;
  const auto& cps = this->params_;
  const auto& cache = static_cast<const TransformerCache<T>&>(cache_base);
  const int B = tokens.rows, S = tokens.cols, D = cfg.d_model, H = cfg.n_heads, dh = cfg.d_head();
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  ps.grad(w_u_).noalias() += cache.h_f.transpose() * dlogits;
  ps.grad(b_u_) += dlogits.colwise().sum();
  const MatT<T> dh_f = dlogits * ps.value(w_u_).transpose();
  MatT<T> dx;
  layer_norm_backward<T>(dh_f, cache.xhat_f, cache.rstd_f, cps.value(lnf_g_), ps.grad(lnf_g_), ps.grad(lnf_b_), dx);

  MatT<T> dln, dact, dfc, dy, dqkv, dres;
  std::vector<T> dsrow(static_cast<std::size_t>(S));
  for (std::size_t li = blocks_.size(); li-- > 0;) {
    const Block& blk = blocks_[li];
    const BlockCache<T>& c = cache.blocks[li];

    // MLP branch: x = x_mid + gelu(h2 W_fc + b_fc) W_proj + b_proj
    ps.grad(blk.w_proj).noalias() += c.act.transpose() * dx;
    ps.grad(blk.b_proj) += dx.colwise().sum();
    dact.noalias() = dx * ps.value(blk.w_proj).transpose();
    gelu_backward<T>(dact, c.fc, c.fc_tanh, dfc);
    ps.grad(blk.w_fc).noalias() += c.h2.transpose() * dfc;
    ps.grad(blk.b_fc) += dfc.colwise().sum();
    dln.noalias() = dfc * ps.value(blk.w_fc).transpose();
    layer_norm_backward<T>(dln, c.xhat2, c.rstd2, cps.value(blk.ln2_g), ps.grad(blk.ln2_g), ps.grad(blk.ln2_b), dres);
    dx += dres;

    // Attention branch: x_mid = x_in + attn(h1) W_o + b_o
    ps.grad(blk.w_o).noalias() += c.y.transpose() * dx;
    ps.grad(blk.b_o) += dx.colwise().sum();
    dy.noalias() = dx * ps.value(blk.w_o).transpose();
    dqkv.setZero(c.qkv.rows(), c.qkv.cols());
    const Eigen::Index ld = c.qkv.cols();
    for (int b = 0; b < B; ++b) {
      const T* base = c.qkv.data() + static_cast<Eigen::Index>(b) * S * ld;
      T* dbase = dqkv.data() + static_cast<Eigen::Index>(b) * S * ld;
      for (int h = 0; h < H; ++h) {
        const T* p = c.probs.data() + (static_cast<Eigen::Index>(b) * H + h) * S * S;
        for (int i = 0; i < S; ++i) {
          const T* dyi = dy.data() + (static_cast<Eigen::Index>(b) * S + i) * D + h * dh;
          T dot = 0;
          for (int j = 0; j <= i; ++j) {
            const T* v = base + j * ld + 2 * D + h * dh;
            T* dv = dbase + j * ld + 2 * D + h * dh;
            const T pij = p[i * S + j];
            T acc = 0;
            for (int d = 0; d < dh; ++d) {
              acc += dyi[d] * v[d];
              dv[d] += pij * dyi[d];
            }
            dsrow[j] = acc;
            dot += acc * pij;
          }
          // softmax backward, then through the scaled q.k scores
          const T* q = base + i * ld + h * dh;
          T* dq = dbase + i * ld + h * dh;
          for (int j = 0; j <= i; ++j) {
            const T ds = p[i * S + j] * (dsrow[j] - dot) * scale;
            const T* k = base + j * ld + D + h * dh;
            T* dk = dbase + j * ld + D + h * dh;
            for (int d = 0; d < dh; ++d) {
              dq[d] += ds * k[d];
              dk[d] += ds * q[d];
            }
          }
        }
      }
    }
    ps.grad(blk.w_qkv).noalias() += c.h1.transpose() * dqkv;
    ps.grad(blk.b_qkv) += dqkv.colwise().sum();
    dln.noalias() = dqkv * ps.value(blk.w_qkv).transpose();
    layer_norm_backward<T>(dln, c.xhat1, c.rstd1, cps.value(blk.ln1_g), ps.grad(blk.ln1_g), ps.grad(blk.ln1_b), dres);
    dx += dres;
  }

  auto dwte = ps.grad(this->wte_);
  auto dwpe = ps.grad(wpe_);
  for (int b = 0; b < B; ++b) {
    for (int t = 0; t < S; ++t) {
      const auto row = dx.row(static_cast<Eigen::Index>(b) * S + t);
      dwte.row(tokens.at(b, t)) += row;
      dwpe.row(t) += row;
    }
  }
}

template class Transformer<float>;
template class Transformer<double>;

}  // namespace flab::nn
