#pragma once

#include "../compose.hpp"
#include "model.hpp"

#include <functional>
#include <iosfwd>

namespace flab::nn {

struct TrainConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  int batch = 1024;
  int steps = 1000;
  int seq_len = 8;              // L, tokens per sequence excluding BOS
  std::vector<int> checkpoints; // explicit steps; empty means log-spaced
  int n_checkpoints = 16;
  std::uint64_t seed = 0;
  int threads = 1;
  bool deterministic = false;   // wall times recorded as 0

  void validate() const;
  std::vector<int> checkpoint_steps() const;
};

// 0, steps and count-2 roughly geometric steps in between (deduplicated).
std::vector<int> log_spaced_steps(int steps, int count);

// Transformers read a BOS-prefixed context; recurrent models do not.
bool uses_bos(Arch arch);

template <typename T>
class Adam {
 public:
  Adam(const TrainConfig& tc, std::size_t n);
  void step(ParamVec<T>& w, const ParamVec<T>& g);
  long long t() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_, wd_;
  long long t_ = 0;
  std::vector<T> m_, v_;
};

struct CheckpointRecord {
  int step = 0;
  double loss = 0.0;  // on this step's batch, before its update
  double lr = 0.0;
  double wall_ms = 0.0;
};

template <typename T>
using CheckpointFn = std::function<void(const CheckpointRecord&, const SequenceModel<T>&)>;

// Step s samples batch s (seed mix_seed(tc.seed, s)); the checkpoint labelled s
// holds parameters after s updates. A non-finite loss writes the current model
// to diag_path (when non-empty) and throws kTrainingDiverged.
template <typename T>
std::vector<CheckpointRecord> train(SequenceModel<T>& m, const ComposedProcess& p, const TrainConfig& tc,
                                    const CheckpointFn<T>& on_checkpoint = {}, const std::string& diag_path = {});

template <typename T>
void save_checkpoint(std::ostream& os, const SequenceModel<T>& m, int step, double loss);
template <typename T>
void save_checkpoint(const std::string& path, const SequenceModel<T>& m, int step, double loss);

struct LoadedCheckpoint {
  ModelConfig config;
  int step = 0;
  double loss = 0.0;
};
template <typename T>
std::unique_ptr<SequenceModel<T>> load_checkpoint(std::istream& is, LoadedCheckpoint* info = nullptr);
template <typename T>
std::unique_ptr<SequenceModel<T>> load_checkpoint(const std::string& path, LoadedCheckpoint* info = nullptr);

}  // namespace flab::nn
