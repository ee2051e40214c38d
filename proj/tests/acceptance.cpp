// One line per acceptance criterion; exit status 0 only when all ten pass.
#include "verify.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

int main(int argc, char** argv) {
  flab::verify::VerifyOptions opt;
  opt.threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  opt.deterministic = true;
  opt.work_dir = argc > 1 ? argv[1] : "acceptance-runs";
  if (const char* t = std::getenv("FLAB_THREADS")) opt.threads = std::max(1, std::atoi(t));

  const auto results = flab::verify::run_checks(flab::verify::criteria_for("all"), opt, [](const auto& r) {
    std::printf("%s\n", flab::verify::format_line(r).c_str());
    std::fflush(stdout);
  });
  int passed = 0;
  for (const auto& r : results) passed += r.pass;
  std::printf("%d/%zu criteria passed\n", passed, results.size());

  std::filesystem::create_directories(opt.work_dir);
  std::ofstream(opt.work_dir / "acceptance.json") << flab::verify::to_json(results).dump(2) << "\n";
  return passed == static_cast<int>(results.size()) ? 0 : 1;
}
