#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "tensor_io.hpp"

#include <sstream>

using namespace flab;

TEST_CASE("header line then little-endian payload") {
  std::ostringstream os;
  const std::vector<std::int32_t> v{1, -2, 258};
  write_i32(os, {{"shape", {3}}, {"seed", 5}}, v);
  const std::string s = os.str();
  const auto nl = s.find('\n');
  REQUIRE(nl != std::string::npos);
  const auto head = nlohmann::json::parse(s.substr(0, nl));
  CHECK(head["dtype"] == "i32le");
  CHECK(head["seed"] == 5);
  const std::string payload = s.substr(nl + 1);
  REQUIRE(payload.size() == 12);
  const unsigned char expect[12] = {1, 0, 0, 0, 0xfe, 0xff, 0xff, 0xff, 2, 1, 0, 0};
  for (int i = 0; i < 12; ++i) CHECK(static_cast<unsigned char>(payload[i]) == expect[i]);
}

TEST_CASE("round trip of concatenated entries") {
  std::stringstream ss;
  const std::vector<float> f{1.5f, -0.25f, 3.0f, 4.0f};
  const std::vector<double> d{0.1, 1e-300};
  write_f32(ss, {{"shape", {2, 2}}, {"name", "a"}}, f);
  write_f64(ss, {{"shape", {2}}, {"name", "b"}}, d);
  write_f64(ss, {{"shape", {0}}, {"name", "empty"}}, {});
  const auto entries = read_dump(ss);
  REQUIRE(entries.size() == 3);
  CHECK(entries[0].shape() == std::vector<std::int64_t>{2, 2});
  CHECK(entries[0].as_floats() == f);
  CHECK(entries[1].as_doubles() == d);
  CHECK(entries[2].as_doubles().empty());
  CHECK(entries[1].header["name"] == "b");
}

TEST_CASE("shape mismatch and truncation are errors") {
  std::ostringstream os;
  const std::vector<double> d{1, 2, 3};
  CHECK_THROWS_AS(write_f64(os, {{"shape", {2}}}, d), Error);
  std::stringstream ss;
  write_f64(ss, {{"shape", {3}}}, d);
  std::string s = ss.str();
  s.pop_back();
  std::istringstream bad(s);
  CHECK_THROWS_AS(read_dump(bad), Error);
  std::istringstream garbage("not json\n");
  CHECK_THROWS_AS(read_dump(garbage), Error);
}
