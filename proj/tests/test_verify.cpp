#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "common.hpp"
#include "verify.hpp"

using namespace flab;

TEST_CASE("groups map to criteria") {
  CHECK(verify::criteria_for("oracles") == std::vector<int>{1, 2, 3, 5, 6, 7, 8});
  CHECK(verify::criteria_for("ground-truth-dims") == std::vector<int>{4});
  CHECK(verify::criteria_for("train-smoke") == std::vector<int>{9, 10});
  CHECK(verify::criteria_for("all").size() == 10);
  CHECK_THROWS_AS(verify::criteria_for("nope"), Error);
  CHECK_THROWS_AS(verify::criterion_name(11), Error);
}

TEST_CASE("fast oracles pass and serialize") {
  std::vector<int> seen;
  const auto res = verify::run_checks({3, 7}, {}, [&](const verify::CheckResult& r) { seen.push_back(r.id); });
  CHECK(seen == std::vector<int>{3, 7});
  for (const auto& r : res) {
    CAPTURE(verify::format_line(r));
    CHECK(r.pass);
  }
  const auto j = verify::to_json(res);
  CHECK(j["all_pass"] == true);
  CHECK(j["criteria"].size() == 2);
  CHECK(j["criteria"][0]["measured"]["states"] == 1000);
}

TEST_CASE("a failing training run is a failed check, not an exception") {
  verify::VerifyOptions opt;
  opt.work_dir = "/proc/verify-cannot-write";
  opt.steps = 1;
  opt.seeds = {0};
  const auto res = verify::run_checks({9, 10}, opt);
  REQUIRE(res.size() == 2);
  CHECK_FALSE(res[0].pass);
  CHECK_FALSE(res[1].pass);
  CHECK(res[0].detail.find("error") != std::string::npos);
}
