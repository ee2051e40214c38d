#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace flab::verify {

struct CheckResult {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;        // human-readable measured values
  nlohmann::json measured;   // same values, machine-readable
  double seconds = 0.0;
};

struct VerifyOptions {
  int threads = 1;
  bool deterministic = false;
  std::filesystem::path work_dir = "runs/verify";  // training runs for 9 and 10
  std::optional<int> steps;                        // overrides the train-smoke step count
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::ostream* log = nullptr;
};

// oracles (1-3, 5-8), ground-truth-dims (4), train-smoke (9, 10), all.
std::vector<std::string> group_names();
std::vector<int> criteria_for(const std::string& group);
std::string criterion_name(int id);

// A criterion that throws is reported as failed with the error in detail.
std::vector<CheckResult> run_checks(const std::vector<int>& ids, const VerifyOptions& opt,
                                    const std::function<void(const CheckResult&)>& on_result = {});

nlohmann::json to_json(const std::vector<CheckResult>& results);
std::string format_line(const CheckResult& r);

}  // namespace flab::verify
