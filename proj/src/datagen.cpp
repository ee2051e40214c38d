#include "datagen.hpp"

#include "parallel.hpp"
#include "philox.hpp"
#include "process_json.hpp"
#include "tensor_io.hpp"

#include <algorithm>

namespace flab {

namespace {

constexpr std::uint64_t kSampleDomain = 1;
constexpr std::uint64_t kVaryOneDomain = 2;

// Draw one sub-token from state s under g and advance s in place.
int draw_and_update(const Ghmm& g, RowVec& s, PhiloxStream& rng) {
  const ColVec& one = g.right_one();
  const double u = rng.uniform();
  double cum = 0.0;
  int chosen = -1;
  int last_possible = 0;
  RowVec next;
  for (int z = 0; z < g.alphabet_size(); ++z) {
    RowVec cand = s * g.op(z);
    const double pz = std::max(0.0, cand.dot(one.transpose()));
    if (pz > kZeroProbabilityTol) last_possible = z;
    cum += pz;
    if (chosen < 0 && u < cum && pz > kZeroProbabilityTol) {
      chosen = z;
      next = std::move(cand);
    }
  }
  if (chosen < 0) {
    chosen = last_possible;
    next = s * g.op(chosen);
  }
  s = next / next.dot(one.transpose());
  return chosen;
}

}  // namespace

SequenceBatch sample_sequences(const ComposedProcess& p, int n_seqs, int length, std::uint64_t seed, bool bos,
                               int threads) {
  require(n_seqs >= 1 && length >= 1, ErrorCode::kInvalidArgument, "need at least one sequence of length >= 1");
  SequenceBatch b;
  b.n_seqs = n_seqs;
  b.length = length;
  b.bos = bos;
  b.seed = seed;
  b.fingerprint = process_fingerprint(p.spec());
  b.tokens.assign(static_cast<std::size_t>(n_seqs) * static_cast<std::size_t>(b.width()), 0);
  const std::uint64_t key = mix_seed(seed, kSampleDomain);
  const int n_factors = p.n_factors();
  const bool noisy = p.regime() == Regime::kNoisy;
  const int n_tokens = p.codec().n_tokens();

  parallel_for(n_seqs, threads, [&](int lo, int hi) {
    std::vector<int> z(static_cast<std::size_t>(n_factors));
    for (int i = lo; i < hi; ++i) {
      PhiloxStream rng(key, static_cast<std::uint64_t>(i));
      FactoredState s = p.initial_factored();
      std::int32_t* row = b.tokens.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(b.width());
      int col = 0;
      if (bos) row[col++] = p.codec().bos_id();
      for (int l = 0; l < length; ++l) {
        for (int n = 0; n < n_factors; ++n) {
          const int control = (n > 0 && p.n_variants(n) > 1) ? z[static_cast<std::size_t>(n - 1)] : 0;
          z[static_cast<std::size_t>(n)] = draw_and_update(p.factor(n, control), s[static_cast<std::size_t>(n)], rng);
        }
        int x = p.codec().encode(z);
        if (noisy) {
          // Latent states follow the clean sub-tokens; only the record is corrupted.
          if (rng.uniform() < p.epsilon()) {
            const int r = static_cast<int>(rng.below(static_cast<std::uint32_t>(n_tokens - 1)));
            x = r < x ? r : r + 1;
          }
        }
        row[col++] = x;
      }
    }
  });
  return b;
}

TargetBatch ground_truth_targets(const ComposedProcess& p, const SequenceBatch& batch, bool include_joint,
                                 int threads) {
  TargetBatch t;
  t.n_seqs = batch.n_seqs;
  t.length = batch.length;
  t.factored_dim = p.factored_dim();
  t.joint_dim = include_joint ? p.joint_dim() : 0;
  t.factored.assign(static_cast<std::size_t>(t.n_seqs) * t.length * t.factored_dim, 0.0);
  if (include_joint) t.joint.assign(static_cast<std::size_t>(t.n_seqs) * t.length * t.joint_dim, 0.0);
  const bool product = p.product_preserving();

  parallel_for(batch.n_seqs, threads, [&](int lo, int hi) {
    for (int i = lo; i < hi; ++i) {
      FactoredState fs = p.initial_factored();
      JointState js;
      if (!product) js = p.initial_joint();
      for (int l = 1; l <= batch.length; ++l) {
        const int x = batch.token(i, l);
        if (product) {
          fs = factored_update(p, fs, x);
        } else {
          js = joint_update(p, js, x);
          fs = reduced_states(p, js);
        }
        double* out = t.factored.data() + (static_cast<std::size_t>(i) * t.length + (l - 1)) * t.factored_dim;
        for (const auto& part : fs) {
          std::copy(part.data(), part.data() + part.size(), out);
          out += part.size();
        }
        if (include_joint) {
          const RowVec joint = product ? kron_rows(fs) : js;
          std::copy(joint.data(), joint.data() + joint.size(),
                    t.joint.data() + (static_cast<std::size_t>(i) * t.length + (l - 1)) * t.joint_dim);
        }
      }
    }
  });
  return t;
}

SequenceBatch VaryOneDataset::as_batch() const {
  SequenceBatch b;
  b.n_seqs = n_rows();
  b.length = length;
  b.bos = bos;
  b.tokens = tokens;
  return b;
}

VaryOneDataset vary_one_dataset(const ComposedProcess& p, int factor, int n_groups, int n_variants, int length,
                                std::uint64_t seed, bool bos) {
  require(p.regime() == Regime::kIndependent, ErrorCode::kUnsupported,
          "vary-one datasets need independent factors; use regression subspaces for other regimes");
  require(factor >= 0 && factor < p.n_factors(), ErrorCode::kOutOfRange, "factor index out of range");
  require(n_groups >= 1 && n_variants >= 1 && length >= 1, ErrorCode::kInvalidArgument, "empty vary-one request");
  VaryOneDataset d;
  d.factor = factor;
  d.n_groups = n_groups;
  d.n_variants = n_variants;
  d.length = length;
  d.bos = bos;
  d.tokens.resize(static_cast<std::size_t>(d.n_rows()) * static_cast<std::size_t>(d.width()));
  const std::uint64_t key = mix_seed(seed, kVaryOneDomain);
  const int n_factors = p.n_factors();
  const auto L = static_cast<std::size_t>(length);

  for (int g = 0; g < n_groups; ++g) {
    const auto base_stream = static_cast<std::uint64_t>(g) * static_cast<std::uint64_t>(n_variants + 1);
    // frozen[n][l]: sub-token of factor n at step l
    std::vector<std::vector<int>> frozen(static_cast<std::size_t>(n_factors), std::vector<int>(L));
    {
      PhiloxStream rng(key, base_stream);
      FactoredState s = p.initial_factored();
      for (std::size_t l = 0; l < L; ++l) {
        for (int n = 0; n < n_factors; ++n) {
          frozen[static_cast<std::size_t>(n)][l] = draw_and_update(p.factor(n), s[static_cast<std::size_t>(n)], rng);
        }
      }
    }
    for (int v = 0; v < n_variants; ++v) {
      PhiloxStream rng(key, base_stream + 1 + static_cast<std::uint64_t>(v));
      RowVec s = p.factor(factor).initial();
      std::int32_t* row = d.tokens.data() + static_cast<std::size_t>(g * n_variants + v) * d.width();
      int col = 0;
      if (bos) row[col++] = p.codec().bos_id();
      std::vector<int> z(static_cast<std::size_t>(n_factors));
      for (std::size_t l = 0; l < L; ++l) {
        for (int n = 0; n < n_factors; ++n) z[static_cast<std::size_t>(n)] = frozen[static_cast<std::size_t>(n)][l];
        z[static_cast<std::size_t>(factor)] = draw_and_update(p.factor(factor), s, rng);
        row[col++] = p.codec().encode(z);
      }
    }
  }
  return d;
}

void write_batch(std::ostream& os, const SequenceBatch& b) {
  nlohmann::json h{{"shape", {b.n_seqs, b.width()}}, {"process", b.fingerprint}, {"seed", b.seed}, {"bos", b.bos}};
  write_i32(os, std::move(h), b.tokens);
}

void write_targets(std::ostream& os, const TargetBatch& t, const SequenceBatch& source, bool joint) {
  require(!joint || t.joint_dim > 0, ErrorCode::kInvalidArgument, "joint targets were not generated");
  const int d = joint ? t.joint_dim : t.factored_dim;
  const auto& src = joint ? t.joint : t.factored;
  const std::vector<float> v(src.begin(), src.end());
  nlohmann::json h{{"shape", {t.n_seqs, t.length, d}},
                   {"process", source.fingerprint},
                   {"seed", source.seed},
                   {"kind", joint ? "joint" : "factored"}};
  write_f32(os, std::move(h), v);
}

}  // namespace flab
