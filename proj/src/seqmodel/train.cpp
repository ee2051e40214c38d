#include "train.hpp"

#include "../datagen.hpp"
#include "../philox.hpp"
#include "../tensor_io.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <future>
#include <set>

namespace flab::nn {

void TrainConfig::validate() const {
  require(lr >= 0.0 && std::isfinite(lr), ErrorCode::kConfig, "lr must be a finite non-negative number");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, ErrorCode::kConfig, "Adam betas must lie in [0,1)");
  require(adam_eps > 0.0, ErrorCode::kConfig, "Adam epsilon must be positive");
  require(weight_decay >= 0.0, ErrorCode::kConfig, "weight_decay must be non-negative");
  require(batch >= 1 && steps >= 0 && seq_len >= 1, ErrorCode::kConfig, "batch, steps and seq_len must be positive");
  for (int s : checkpoints) {
    require(s >= 0 && s <= steps, ErrorCode::kConfig, "checkpoint step " + std::to_string(s) + " outside [0, steps]");
  }
  require(!checkpoints.empty() || n_checkpoints >= 2, ErrorCode::kConfig, "need at least two checkpoints");
}

std::vector<int> log_spaced_steps(int steps, int count) {
  std::set<int> out{0, steps};
  if (steps > 1 && count > 2) {
    const double top = std::log(static_cast<double>(steps));
    for (int i = 0; i < count - 2; ++i) {
      const double f = static_cast<double>(i) / (count - 2);
      out.insert(static_cast<int>(std::lround(std::exp(f * top))));
    }
  }
  return {out.begin(), out.end()};
}

std::vector<int> TrainConfig::checkpoint_steps() const {
  if (checkpoints.empty()) return log_spaced_steps(steps, n_checkpoints);
  std::set<int> s(checkpoints.begin(), checkpoints.end());
  return {s.begin(), s.end()};
}

bool uses_bos(Arch arch) { return arch == Arch::kTransformer; }

template <typename T>
Adam<T>::Adam(const TrainConfig& tc, std::size_t n)
    : lr_(tc.lr), b1_(tc.beta1), b2_(tc.beta2), eps_(tc.adam_eps), wd_(tc.weight_decay), m_(n, T(0)), v_(n, T(0)) {}

template <typename T>
void Adam<T>::step(ParamVec<T>& w, const ParamVec<T>& g) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  const T step = static_cast<T>(lr_ / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T b1 = static_cast<T>(b1_), b2 = static_cast<T>(b2_), eps = static_cast<T>(eps_), wd = static_cast<T>(wd_);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const T gi = g[i] + wd * w[i];
    m_[i] = b1 * m_[i] + (T(1) - b1) * gi;
    v_[i] = b2 * v_[i] + (T(1) - b2) * gi * gi;
    w[i] -= step * m_[i] / (std::sqrt(v_[i] * inv_c2) + eps);
  }
}

template <typename T>
std::vector<CheckpointRecord> train(SequenceModel<T>& m, const ComposedProcess& p, const TrainConfig& tc,
                                    const CheckpointFn<T>& on_checkpoint, const std::string& diag_path) {
  tc.validate();
  const ModelConfig& mc = m.config();
  const bool bos = uses_bos(mc.arch);
  const TokenCodec& codec = p.codec();
  const int want_vocab = bos ? codec.vocab_with_bos() : codec.n_tokens();
  require(mc.vocab == want_vocab, ErrorCode::kConfig,
          "model vocab " + std::to_string(mc.vocab) + " does not match process vocab " + std::to_string(want_vocab) +
              (bos ? " (including BOS)" : ""));
  const int width = tc.seq_len + (bos ? 1 : 0);
  require(width <= mc.context, ErrorCode::kConfig,
          "sequence width " + std::to_string(width) + " exceeds model context " + std::to_string(mc.context));

  const std::vector<int> ckpts = tc.checkpoint_steps();
  std::size_t next_ckpt = 0;
  Adam<T> opt(tc, m.params().size());
  std::vector<CheckpointRecord> rows;
  const auto t0 = std::chrono::steady_clock::now();

  auto sample = [&](int step) {
    return sample_sequences(p, tc.batch, tc.seq_len, mix_seed(tc.seed, static_cast<std::uint64_t>(step)), bos,
                            std::max(1, tc.threads - 1));
  };
  // One batch of look-ahead: the next step's data is drawn while this step trains.
  std::future<SequenceBatch> pending;
  SequenceBatch current = sample(0);
  for (int step = 0; step <= tc.steps; ++step) {
    if (tc.threads > 1 && step < tc.steps) pending = std::async(std::launch::async, sample, step + 1);
    const TokenBlock tb{current.n_seqs, current.width(), current.tokens};
    const bool is_ckpt = next_ckpt < ckpts.size() && ckpts[next_ckpt] == step;
    const double loss = step < tc.steps ? m.loss_and_grad(tb) : m.loss(tb);
    if (!std::isfinite(loss)) {
      if (pending.valid()) pending.wait();
      if (!diag_path.empty()) save_checkpoint(diag_path, m, step, loss);
      fail(ErrorCode::kTrainingDiverged, "non-finite loss at step " + std::to_string(step) +
                                             (diag_path.empty() ? "" : "; model written to " + diag_path));
    }
    if (is_ckpt) {
      CheckpointRecord rec;
      rec.step = step;
      rec.loss = loss;
      rec.lr = tc.lr;
      rec.wall_ms = tc.deterministic
                        ? 0.0
                        : std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      rows.push_back(rec);
      if (on_checkpoint) on_checkpoint(rec, m);
      ++next_ckpt;
    }
    if (step == tc.steps) break;
    opt.step(m.params().values(), m.params().grads());
    current = pending.valid() ? pending.get() : sample(step + 1);
  }
  return rows;
}

namespace {

nlohmann::json config_json(const ModelConfig& c) {
  return {{"arch", arch_name(c.arch)}, {"n_layers", c.n_layers}, {"n_heads", c.n_heads}, {"d_model", c.d_model},
          {"vocab", c.vocab},          {"context", c.context},   {"seed", c.seed}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.arch = arch_from_name(j.at("arch").get<std::string>());
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.vocab = j.at("vocab").get<int>();
    c.context = j.at("context").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kIo, std::string("malformed checkpoint model header: ") + e.what());
  }
  return c;
}

}  // namespace

template <typename T>
void save_checkpoint(std::ostream& os, const SequenceModel<T>& m, int step, double loss) {
  nlohmann::json head = {{"name", "__model__"}, {"shape", {0}}, {"model", config_json(m.config())}, {"step", step}};
  head["loss"] = std::isfinite(loss) ? nlohmann::json(loss) : nlohmann::json(nullptr);
  write_f64(os, head, {});
  const auto& ps = m.params();
  for (const auto& info : ps.infos()) {
    nlohmann::json h = {{"name", info.name}, {"shape", {info.rows, info.cols}}};
    const auto v = ps.value(ps.find(info.name));
    if constexpr (std::is_same_v<T, float>) {
      write_f32(os, h, std::span<const float>(v.data(), static_cast<std::size_t>(v.size())));
    } else {
      write_f64(os, h, std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
    }
  }
}

template <typename T>
void save_checkpoint(const std::string& path, const SequenceModel<T>& m, int step, double loss) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorCode::kIo, "cannot open " + path + " for writing");
  save_checkpoint(os, m, step, loss);
  require(static_cast<bool>(os), ErrorCode::kIo, "write failed for " + path);
}

template <typename T>
std::unique_ptr<SequenceModel<T>> load_checkpoint(std::istream& is, LoadedCheckpoint* info) {
  const auto entries = read_dump(is);
  require(!entries.empty() && entries[0].header.value("name", "") == "__model__", ErrorCode::kIo,
          "checkpoint does not start with a __model__ entry");
  const auto& head = entries[0].header;
  const ModelConfig cfg = config_from_json(head.at("model"));
  auto m = build_model<T>(cfg);
  auto& ps = m->params();
  std::vector<bool> seen(ps.infos().size(), false);
  for (std::size_t i = 1; i < entries.size(); ++i) {
    const std::string name = entries[i].header.value("name", "");
    const int id = ps.find(name);
    require(id >= 0, ErrorCode::kIo, "checkpoint has unknown tensor '" + name + "'");
    auto dst = ps.value(id);
    const auto shape = entries[i].shape();
    require(shape.size() == 2 && shape[0] == dst.rows() && shape[1] == dst.cols(), ErrorCode::kShapeMismatch,
            "shape mismatch for tensor '" + name + "'");
    const auto src = entries[i].as_doubles();
    for (Eigen::Index k = 0; k < dst.size(); ++k) dst.data()[k] = static_cast<T>(src[static_cast<std::size_t>(k)]);
    seen[static_cast<std::size_t>(id)] = true;
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    require(seen[i], ErrorCode::kIo, "checkpoint is missing tensor '" + ps.infos()[i].name + "'");
  }
  if (info) {
    info->config = cfg;
    info->step = head.value("step", 0);
    info->loss = head.contains("loss") && head["loss"].is_number() ? head["loss"].get<double>() : std::nan("");
  }
  return m;
}

template <typename T>
std::unique_ptr<SequenceModel<T>> load_checkpoint(const std::string& path, LoadedCheckpoint* info) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorCode::kIo, "cannot open " + path);
  return load_checkpoint<T>(is, info);
}

template class Adam<float>;
template class Adam<double>;
template std::vector<CheckpointRecord> train<float>(SequenceModel<float>&, const ComposedProcess&, const TrainConfig&,
                                                    const CheckpointFn<float>&, const std::string&);
template std::vector<CheckpointRecord> train<double>(SequenceModel<double>&, const ComposedProcess&,
                                                     const TrainConfig&, const CheckpointFn<double>&,
                                                     const std::string&);
template void save_checkpoint<float>(std::ostream&, const SequenceModel<float>&, int, double);
template void save_checkpoint<double>(std::ostream&, const SequenceModel<double>&, int, double);
template void save_checkpoint<float>(const std::string&, const SequenceModel<float>&, int, double);
template void save_checkpoint<double>(const std::string&, const SequenceModel<double>&, int, double);
template std::unique_ptr<SequenceModel<float>> load_checkpoint<float>(std::istream&, LoadedCheckpoint*);
template std::unique_ptr<SequenceModel<double>> load_checkpoint<double>(std::istream&, LoadedCheckpoint*);
template std::unique_ptr<SequenceModel<float>> load_checkpoint<float>(const std::string&, LoadedCheckpoint*);
template std::unique_ptr<SequenceModel<double>> load_checkpoint<double>(const std::string&, LoadedCheckpoint*);

}  // namespace flab::nn
