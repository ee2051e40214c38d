#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "datagen.hpp"
#include "process_json.hpp"
#include "tensor_io.hpp"

#include <cmath>
#include <map>
#include <sstream>

using namespace flab;

namespace {

ComposedProcess mess3_pair(double eps = -1.0) {
  auto p = independent_product({FactorSpec::mess3_of(0.6, 0.15), FactorSpec::mess3_of(0.79, 0.11)});
  return eps < 0 ? p : noisy_channel(p, eps);
}

// Counts within 3 binomial sigma of M * prob.
bool within_3sigma(double count, double m, double prob) {
  const double sd = std::sqrt(m * prob * (1.0 - prob));
  return std::abs(count - m * prob) <= 3.0 * sd + 1e-9;
}

}  // namespace

TEST_CASE("single mess3 token frequencies") {
  const auto p = independent_product({FactorSpec::mess3_of(0.6, 0.15)});
  const int m = 1000000;
  const auto b = sample_sequences(p, m, 1, 11, false, 4);
  std::array<double, 3> counts{};
  for (int i = 0; i < m; ++i) counts[static_cast<std::size_t>(b.token(i, 1))] += 1;
  for (double c : counts) CHECK(within_3sigma(c, m, 1.0 / 3.0));
}

TEST_CASE("two sns length-2 frequencies") {
  const auto p = independent_product({FactorSpec::sns_of(0.5, 0.5), FactorSpec::sns_of(0.3, 0.6)});
  const int m = 200000;
  const auto b = sample_sequences(p, m, 2, 5, true, 2);
  std::map<std::pair<int, int>, double> counts;
  for (int i = 0; i < m; ++i) counts[{b.token(i, 1), b.token(i, 2)}] += 1;
  double total_prob = 0.0;
  for (int a = 0; a < 4; ++a) {
    for (int c = 0; c < 4; ++c) {
      const std::vector<int> seq{a, c};
      const double prob = p.sequence_probability(seq);
      total_prob += prob;
      CHECK(within_3sigma(counts[{a, c}], m, prob));
    }
  }
  CHECK(total_prob == doctest::Approx(1.0));
}

TEST_CASE("batch layout and thread independence") {
  const auto p = independent_product(reference_independent_factors());
  const auto a = sample_sequences(p, 300, 8, 42, true, 1);
  const auto b = sample_sequences(p, 300, 8, 42, true, 4);
  CHECK(a.tokens == b.tokens);
  CHECK(a.fingerprint == process_fingerprint(p.spec()));
  CHECK(a.width() == 9);
  for (int i = 0; i < a.n_seqs; ++i) {
    CHECK(a.at(i, 0) == 432);
    for (int l = 1; l <= 8; ++l) {
      CHECK(a.token(i, l) >= 0);
      CHECK(a.token(i, l) < 432);
    }
  }
  const auto c = sample_sequences(p, 300, 8, 43, true, 1);
  CHECK(c.tokens != a.tokens);
  const auto nb = sample_sequences(p, 300, 8, 42, false, 3);
  CHECK(nb.width() == 8);

  // Prefix stability: sequence i does not depend on the batch size.
  const auto small = sample_sequences(p, 10, 8, 42, true, 1);
  CHECK(std::equal(small.tokens.begin(), small.tokens.end(), a.tokens.begin()));

  const auto ta = ground_truth_targets(p, a, true, 1);
  const auto tb = ground_truth_targets(p, b, true, 3);
  CHECK(ta.factored == tb.factored);
  CHECK(ta.joint == tb.joint);
  CHECK_THROWS_AS(sample_sequences(p, 0, 8, 1, true), Error);
  CHECK_THROWS_AS(sample_sequences(p, 1, 0, 1, true), Error);
}

TEST_CASE("targets match per-factor trackers") {
  for (const auto& p : {independent_product(reference_independent_factors()), conditional_chain(reference_chain_factors())}) {
    const auto b = sample_sequences(p, 200, 8, 9, true, 2);
    const auto t = ground_truth_targets(p, b, false, 2);
    CHECK(t.factored_dim == 15);
    CHECK(t.joint_dim == 0);
    double worst = 0.0, worst_norm = 0.0;
    for (int i = 0; i < b.n_seqs; ++i) {
      std::vector<RowVec> s;
      for (int n = 0; n < p.n_factors(); ++n) s.push_back(p.factor(n).initial());
      std::vector<int> prev(5, 0);
      for (int l = 1; l <= 8; ++l) {
        const auto z = p.codec().decode(b.token(i, l));
        const double* row = t.factored_row(i, l - 1);
        int off = 0;
        for (int n = 0; n < p.n_factors(); ++n) {
          const int control = n > 0 && p.n_variants(n) > 1 ? z[static_cast<std::size_t>(n - 1)] : 0;
          auto& sn = s[static_cast<std::size_t>(n)];
          sn = update_predictive(p.factor(n, control), sn, z[static_cast<std::size_t>(n)]);
          double dot = 0.0;
          for (int k = 0; k < p.factor_dim(n); ++k) {
            worst = std::max(worst, std::abs(row[off + k] - sn(k)));
            dot += row[off + k] * p.factor_right_one(n)(k);
          }
          worst_norm = std::max(worst_norm, std::abs(dot - 1.0));
          off += p.factor_dim(n);
        }
      }
    }
    CHECK(worst < 1e-12);
    CHECK(worst_norm < 1e-10);
  }
}

TEST_CASE("first target is a single update from the initial state") {
  const auto p = mess3_pair();
  const auto b = sample_sequences(p, 50, 3, 1, true);
  const auto t = ground_truth_targets(p, b, false);
  for (int i = 0; i < 50; ++i) {
    const auto z = p.codec().decode(b.token(i, 1));
    const RowVec u0 = update_predictive(p.factor(0), p.factor(0).initial(), z[0]);
    const RowVec u1 = update_predictive(p.factor(1), p.factor(1).initial(), z[1]);
    const double* row = t.factored_row(i, 0);
    for (int k = 0; k < 3; ++k) {
      CHECK(row[k] == doctest::Approx(u0(k)).epsilon(1e-14));
      CHECK(row[3 + k] == doctest::Approx(u1(k)).epsilon(1e-14));
    }
  }
}

TEST_CASE("noisy targets") {
  SUBCASE("zero noise keeps the product structure") {
    const auto p = mess3_pair(0.0);
    const auto b = sample_sequences(p, 100, 8, 3, true);
    const auto t = ground_truth_targets(p, b, true);
    CHECK(t.joint_dim == 9);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      for (int l = 0; l < 8; ++l) {
        const double* f = t.factored_row(i, l);
        RowVec a(3), c(3);
        for (int k = 0; k < 3; ++k) {
          a(k) = f[k];
          c(k) = f[3 + k];
        }
        const RowVec prod = product_reconstruct(FactoredState{a, c});
        for (int k = 0; k < 9; ++k) worst = std::max(worst, std::abs(prod(k) - t.joint_row(i, l)[k]));
      }
    }
    CHECK(worst < 1e-12);
  }
  SUBCASE("noise makes joint targets leave the product manifold") {
    const auto p = mess3_pair(0.2);
    const auto b = sample_sequences(p, 100, 8, 3, true);
    const auto t = ground_truth_targets(p, b, true);
    double worst_norm = 0.0, max_tc = 0.0;
    for (int i = 0; i < 100; ++i) {
      for (int l = 0; l < 8; ++l) {
        const double* j = t.joint_row(i, l);
        const RowVec js = Eigen::Map<const RowVec>(j, 9);
        worst_norm = std::max(worst_norm, std::abs(js.sum() - 1.0));
        max_tc = std::max(max_tc, total_correlation(p, js));
        const auto r = reduced_states(p, js);
        for (int k = 0; k < 3; ++k) CHECK(t.factored_row(i, l)[k] == doctest::Approx(r[0](k)).epsilon(1e-12));
      }
    }
    CHECK(worst_norm < 1e-10);
    CHECK(max_tc > 1e-4);
  }
}

TEST_CASE("per-position marginals match the exact distribution") {
  for (const auto& p : {mess3_pair(0.2), conditional_chain({{{FactorSpec::sns_of(0.5, 0.5)}},
                                                           {{FactorSpec::mess3_of(0.6, 0.15), FactorSpec::mess3_of(0.79, 0.11)}}})}) {
    const int m = 100000, len = 3;
    const auto b = sample_sequences(p, m, len, 77, true, 4);
    const int k = p.codec().n_tokens();
    RowVec state = p.initial_joint();
    const Mat net = p.joint_net_operator();
    const ColVec one = p.joint_right_one();
    for (int l = 1; l <= len; ++l) {
      std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
      for (int i = 0; i < m; ++i) counts[static_cast<std::size_t>(b.token(i, l))] += 1;
      for (int x = 0; x < k; ++x) {
        const double prob = (state * *p.joint_operator(x) * one)(0);
        CHECK(within_3sigma(counts[static_cast<std::size_t>(x)], m, prob));
      }
      state = state * net;
    }
  }
}

TEST_CASE("vary-one datasets") {
  const auto p = independent_product(reference_independent_factors());
  for (int n = 0; n < 5; ++n) {
    const auto d = vary_one_dataset(p, n, 6, 5, 8, 13);
    CHECK(d.n_rows() == 30);
    CHECK(d.width() == 9);
    int varied_groups = 0;
    for (int g = 0; g < d.n_groups; ++g) {
      bool varied = false;
      const auto row = [&](int v, int l) { return d.tokens[static_cast<std::size_t>((g * d.n_variants + v) * d.width() + l)]; };
      for (int v = 0; v < d.n_variants; ++v) {
        CHECK(row(v, 0) == 432);
        for (int l = 1; l <= 8; ++l) {
          const auto z0 = p.codec().decode(row(0, l));
          const auto zv = p.codec().decode(row(v, l));
          for (int m = 0; m < 5; ++m) {
            if (m != n) CHECK(z0[static_cast<std::size_t>(m)] == zv[static_cast<std::size_t>(m)]);
          }
          if (z0[static_cast<std::size_t>(n)] != zv[static_cast<std::size_t>(n)]) varied = true;
        }
      }
      varied_groups += varied ? 1 : 0;
    }
    CHECK(varied_groups > 0);
  }
  const auto single = vary_one_dataset(p, 2, 4, 1, 8, 1, false);
  CHECK(single.n_rows() == 4);
  CHECK(single.width() == 8);
  CHECK(vary_one_dataset(p, 1, 3, 4, 8, 5).tokens == vary_one_dataset(p, 1, 3, 4, 8, 5).tokens);
  const auto batch = vary_one_dataset(p, 1, 3, 4, 8, 5).as_batch();
  CHECK(batch.n_seqs == 12);
  CHECK_NOTHROW(ground_truth_targets(p, batch, false));

  CHECK_THROWS_AS(vary_one_dataset(conditional_chain(reference_chain_factors()), 0, 2, 2, 8, 1), Error);
  CHECK_THROWS_AS(vary_one_dataset(p, 5, 2, 2, 8, 1), Error);
}

TEST_CASE("dumps round trip") {
  const auto p = mess3_pair(0.1);
  const auto b = sample_sequences(p, 7, 4, 99, true);
  const auto t = ground_truth_targets(p, b, true);
  std::stringstream ss;
  write_batch(ss, b);
  write_targets(ss, t, b, false);
  write_targets(ss, t, b, true);
  const auto entries = read_dump(ss);
  REQUIRE(entries.size() == 3);
  CHECK(entries[0].dtype() == "i32le");
  CHECK(entries[0].shape() == std::vector<std::int64_t>{7, 5});
  CHECK(entries[0].as_ints() == b.tokens);
  CHECK(entries[0].header.at("process") == b.fingerprint);
  CHECK(entries[0].header.at("seed") == 99);
  CHECK(entries[1].shape() == std::vector<std::int64_t>{7, 4, 6});
  CHECK(entries[2].shape() == std::vector<std::int64_t>{7, 4, 9});
  const auto f = entries[1].as_floats();
  for (std::size_t i = 0; i < f.size(); ++i) CHECK(f[i] == static_cast<float>(t.factored[i]));

  const auto t2 = ground_truth_targets(p, b, false);
  std::stringstream s2;
  CHECK_THROWS_AS(write_targets(s2, t2, b, true), Error);
}
