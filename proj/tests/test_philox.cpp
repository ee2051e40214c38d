#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "philox.hpp"

#include <cmath>
#include <set>

using flab::PhiloxStream;
using flab::philox4x32_10;

// Known-answer vectors of the Random123 reference implementation.
TEST_CASE("philox4x32-10 known answers") {
  using A4 = std::array<std::uint32_t, 4>;
  CHECK(philox4x32_10({0, 0, 0, 0}, {0, 0}) == A4{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
  CHECK(philox4x32_10({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}) ==
        A4{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
  CHECK(philox4x32_10({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}) ==
        A4{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("streams are pure functions of seed and stream id") {
  PhiloxStream a(42, 7), b(42, 7), c(42, 8), d(43, 7);
  bool differ_c = false, differ_d = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u32();
    CHECK(x == b.next_u32());
    differ_c |= x != c.next_u32();
    differ_d |= x != d.next_u32();
  }
  CHECK(differ_c);
  CHECK(differ_d);
}

TEST_CASE("first draws come from counter zero") {
  PhiloxStream s(0, 0);
  CHECK(s.next_u32() == 0x6627e8d5u);
  CHECK(s.next_u32() == 0xe169c58du);
}

TEST_CASE("uniform and bounded draws") {
  PhiloxStream s(1, 0);
  const int n = 200000;
  double sum = 0.0;
  std::array<int, 7> hist{};
  for (int i = 0; i < n; ++i) {
    const double u = s.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
    ++hist[s.below(7)];
  }
  CHECK(std::abs(sum / n - 0.5) < 4.0 * std::sqrt(1.0 / 12.0 / n));
  const double p = 1.0 / 7.0, sd = std::sqrt(n * p * (1 - p));
  for (int c : hist) CHECK(std::abs(c - n * p) < 4.0 * sd);
}

TEST_CASE("normal draws have unit variance") {
  PhiloxStream s(9, 3);
  const int n = 200000;
  double m1 = 0.0, m2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = s.normal();
    m1 += z;
    m2 += z * z;
  }
  m1 /= n;
  m2 /= n;
  CHECK(std::abs(m1) < 4.0 / std::sqrt(n));
  CHECK(std::abs(m2 - 1.0) < 4.0 * std::sqrt(2.0 / n));
}

TEST_CASE("mix_seed separates tags") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t seed = 0; seed < 50; ++seed)
    for (std::uint64_t tag = 0; tag < 50; ++tag) seen.insert(flab::mix_seed(seed, tag));
  CHECK(seen.size() == 2500);
}
