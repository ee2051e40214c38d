#pragma once

#include "compose.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace flab {

struct SequenceBatch {
  int n_seqs = 0;
  int length = 0;  // L, excluding BOS
  bool bos = false;
  std::uint64_t seed = 0;
  std::string fingerprint;
  std::vector<std::int32_t> tokens;  // n_seqs x width, row-major

  int width() const { return length + (bos ? 1 : 0); }
  std::int32_t at(int seq, int col) const {
    return tokens[static_cast<std::size_t>(seq) * static_cast<std::size_t>(width()) + static_cast<std::size_t>(col)];
  }
  // Token at data position l in [1, L].
  std::int32_t token(int seq, int l) const { return at(seq, bos ? l : l - 1); }
};

struct TargetBatch {
  int n_seqs = 0;
  int length = 0;
  int factored_dim = 0;
  int joint_dim = 0;            // 0 when joint targets were not requested
  std::vector<double> factored; // n_seqs x length x factored_dim
  std::vector<double> joint;    // n_seqs x length x joint_dim

  const double* factored_row(int seq, int pos) const {
    return factored.data() + (static_cast<std::size_t>(seq) * length + pos) * factored_dim;
  }
  const double* joint_row(int seq, int pos) const {
    return joint.data() + (static_cast<std::size_t>(seq) * length + pos) * joint_dim;
  }
};

// I.i.d. sequences. Sequence i draws from its own counter-based stream, so the
// result is independent of the thread count.
SequenceBatch sample_sequences(const ComposedProcess& p, int n_seqs, int length, std::uint64_t seed, bool bos,
                               int threads = 1);

TargetBatch ground_truth_targets(const ComposedProcess& p, const SequenceBatch& batch, bool include_joint,
                                 int threads = 1);

struct VaryOneDataset {
  int factor = 0;
  int n_groups = 0;
  int n_variants = 0;
  int length = 0;
  bool bos = false;
  std::vector<std::int32_t> tokens;  // (group, variant) rows, each of width()

  int width() const { return length + (bos ? 1 : 0); }
  int n_rows() const { return n_groups * n_variants; }
  SequenceBatch as_batch() const;
};

// Per group: one frozen draw for every factor m != n, then n_variants
// independent draws of factor n's sub-token stream.
VaryOneDataset vary_one_dataset(const ComposedProcess& p, int factor, int n_groups, int n_variants, int length,
                                std::uint64_t seed, bool bos = true);

// Single-entry dumps in the tensor_io format; the header carries the process
// fingerprint and seed.
void write_batch(std::ostream& os, const SequenceBatch& b);
void write_targets(std::ostream& os, const TargetBatch& t, const SequenceBatch& source, bool joint);

}  // namespace flab
