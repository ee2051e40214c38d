#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "datagen.hpp"
#include "lab.hpp"
#include "tensor_io.hpp"

#include <unistd.h>

#include <fstream>
#include <sstream>

using namespace flab;
using namespace flab::lab;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("flab_lab_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig tiny(const std::string& name) {
  auto c = preset("train-smoke");
  c.name = name;
  c.model.n_layers = 1;
  c.model.d_model = 12;
  c.train.steps = 30;
  c.train.batch = 32;
  c.train.n_checkpoints = 4;
  c.analysis.eval_seqs = 200;
  c.analysis.vary_groups = 8;
  c.analysis.vary_variants = 4;
  c.seeds = {3};
  return c;
}

std::string config_error(const json& j) {
  try {
    config_from_json(j);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kConfig);
    return e.what();
  }
  FAIL("expected a config error");
  return {};
}

}  // namespace

TEST_CASE("presets round-trip through json") {
  for (const auto& name : preset_names()) {
    const auto c = preset(name);
    const json j = config_to_json(c);
    CHECK(config_to_json(config_from_json(j)) == j);
  }
  CHECK_THROWS_AS(preset("nope"), Error);
  const auto grid = preset("noisy-grid");
  CHECK(grid.epsilons == std::vector<double>{0, 0.001, 0.01, 0.05, 0.1, 0.2, 0.3, 0.5});
  const auto smoke = resolve(preset("train-smoke"), {});
  CHECK(smoke.model.vocab == 10);
  CHECK(smoke.model.context == 9);
  CHECK(smoke.train.steps == 10000);
  CHECK(smoke.train.batch == 1024);
  CHECK(smoke.train.lr == 5e-4);
  const auto desk = resolve(preset("independent-desk"), {});
  CHECK(desk.model.vocab == 433);
  CHECK(desk.model.d_model == 120);
  CHECK(desk.train.weight_decay == 0.0);
}

TEST_CASE("config errors carry field paths") {
  json j = config_to_json(preset("train-smoke"));
  {
    json b = j;
    b["train"]["lr"] = "fast";
    CHECK(config_error(b).find("config.train.lr") != std::string::npos);
  }
  {
    json b = j;
    b["model"]["depth"] = 3;
    CHECK(config_error(b).find("config.model.depth: unknown key") != std::string::npos);
  }
  {
    json b = j;
    b["process"]["factors"][1]["alpha"] = true;
    CHECK(config_error(b).find("config.process.factors[1]") != std::string::npos);
  }
  {
    json b = j;
    b["seeds"] = {1, -2};
    CHECK(config_error(b).find("config.seeds[1]") != std::string::npos);
  }
  {
    json b = j;
    b.erase("process");
    CHECK(config_error(b).find("config.process") != std::string::npos);
  }
  {
    json b = j;
    b["model"]["arch"] = "mamba";
    CHECK(config_error(b).find("config.model.arch") != std::string::npos);
  }
  auto c = preset("train-smoke");
  c.model.vocab = 11;
  try {
    resolve(c, {});
    FAIL("vocab mismatch accepted");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("config.model.vocab") != std::string::npos);
  }
  c = preset("train-smoke");
  c.model.n_heads = 5;
  CHECK_THROWS_AS(resolve(c, {}), Error);
  c = preset("chain-desk");
  c.analysis.subspaces = "vary-one";
  CHECK_THROWS_AS(resolve(c, {}), Error);
  c = preset("chain-desk");
  c.epsilons = {0.1};
  CHECK_THROWS_AS(resolve(c, {}), Error);

  c = preset("train-smoke");
  c.model.arch = nn::Arch::kLstm;
  const auto r = resolve(c, {});
  CHECK(r.model.vocab == 9);
  CHECK(r.model.context == 8);
}

TEST_CASE("config files") {
  const fs::path dir = scratch("cfg");
  fs::create_directories(dir);
  std::ofstream(dir / "bad.json") << "{ \"name\": ";
  CHECK_THROWS_AS(load_config(dir / "bad.json"), Error);
  CHECK_THROWS_AS(load_config(dir / "missing.json"), Error);
  std::ofstream(dir / "ok.json") << config_to_json(tiny("x")).dump(2);
  CHECK(load_config(dir / "ok.json").model.d_model == 12);
}

TEST_CASE("run units") {
  RunOptions o;
  o.output_dir = "out";
  const auto grid = expand_units(resolve(preset("noisy-grid"), o));
  REQUIRE(grid.size() == 8);
  CHECK(grid[1].label == "eps-0.001");
  CHECK(grid[1].dir == fs::path("out") / "eps-0.001");
  CHECK(grid[1].cfg.process.regime == Regime::kNoisy);
  CHECK(grid[1].cfg.process.epsilon == 0.001);
  const auto seeds = expand_units(resolve(preset("train-smoke"), o));
  REQUIRE(seeds.size() == 3);
  CHECK(seeds[2].dir == fs::path("out") / "seed-2");
  CHECK(seeds[2].cfg.train.seed == 2);
  CHECK(seeds[2].cfg.model.seed == 2);
  o.seed = 9;
  const auto one = expand_units(resolve(preset("train-smoke"), o));
  REQUIRE(one.size() == 1);
  CHECK(one[0].dir == fs::path("out"));
}

TEST_CASE("pipeline end to end") {
  const fs::path a = scratch("run_a"), b = scratch("run_b");
  RunOptions o;
  o.threads = 2;
  o.deterministic = true;
  o.output_dir = a.string();
  CHECK(run_experiment(tiny("tiny"), o) == a);
  o.output_dir = b.string();
  o.threads = 1;
  run_experiment(tiny("tiny"), o);

  for (const char* f : {"training.csv", "cev.csv", "kstar.csv", "regression.csv", "overlap.csv", "additivity.csv",
                        "attribution.csv", "ground_truth.csv", "config.json"}) {
    CAPTURE(f);
    REQUIRE(fs::exists(a / f));
    CHECK(slurp(a / f) == slurp(b / f));
  }
  CHECK(fs::exists(a / "checkpoints" / "step_00000000.ckpt"));
  CHECK(fs::exists(a / "checkpoints" / "step_00000030.ckpt"));

  const auto training = read_csv(a / "training.csv");
  CHECK(training.columns == std::vector<std::string>{"step", "loss", "lr", "wall_ms"});
  CHECK(training.rows.size() == 4);
  CHECK(training.num(0, "wall_ms") == 0.0);
  const auto reg = read_csv(a / "regression.csv");
  CHECK(reg.columns == std::vector<std::string>{"step", "rmse_total", "r2_total", "rmse_f0", "rmse_f1", "r2_f0", "r2_f1", "rcond"});
  const auto ov = read_csv(a / "overlap.csv");
  CHECK(ov.rows.size() == 4);
  CHECK(ov.num(0, "k") == 2);
  const auto gt = read_csv(a / "ground_truth.csv");
  CHECK(gt.rows.size() == 6 + 9);
  const auto cev = read_csv(a / "cev.csv");
  CHECK(cev.rows.size() == 4 * 12);

  std::ifstream mf(a / "manifest.json");
  const json manifest = json::parse(mf);
  CHECK(manifest.at("status") == "analyzed");
  CHECK(manifest.at("config_hash").get<std::string>().size() == 64);
  CHECK(manifest.at("subspace_method") == "vary-one");
  int listed = 0;
  for (const auto& f : manifest.at("files")) {
    CHECK(sha256_file(a / f.at("path").get<std::string>()) == f.at("sha256"));
    ++listed;
  }
  int on_disk = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) on_disk += e.is_regular_file() ? 1 : 0;
  CHECK(listed == on_disk - 1);

  const auto s = summarize_unit(a);
  CHECK(s.final_step == 30);
  CHECK(s.seed == 3);
  CHECK(s.r2.size() == 2);
  CHECK(s.kstar_factored == 4);
  CHECK(s.has_overlap);

  std::map<std::string, std::string> before;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (e.is_regular_file()) before[e.path().string()] = sha256_file(e.path());
  }
  report(a);
  for (const auto& [path, hash] : before) CHECK(sha256_file(path) == hash);
  for (const char* f : {"loss.svg", "cev.svg", "kstar.svg", "regression.svg", "overlap.svg", "attribution.svg",
                        "summary.csv", "summary.md"}) {
    CAPTURE(f);
    CHECK(fs::exists(a / "report" / f));
  }
  CHECK(slurp(a / "report" / "cev.svg").find("stroke-dasharray") != std::string::npos);
  const auto summary = read_csv(a / "report" / "summary.csv");
  CHECK(summary.rows.size() == 1);
  CHECK(summary.num(0, "k_star_factored") == 4);

  // Analysis can be rerun from checkpoints alone.
  fs::remove(b / "cev.csv");
  analyze_run(b, {});
  CHECK(slurp(a / "cev.csv") == slurp(b / "cev.csv"));
}

TEST_CASE("report lists missing files") {
  const fs::path empty = scratch("empty");
  fs::create_directories(empty);
  try {
    report(empty);
    FAIL("report accepted an empty run");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("training.csv") != std::string::npos);
    CHECK(msg.find("cev.csv") != std::string::npos);
    CHECK(msg.find("overlap.csv") != std::string::npos);
  }
  CHECK_THROWS_AS(analyze_run(empty, {}), Error);
}

TEST_CASE("sweeps, chains and recurrent models") {
  const fs::path root = scratch("sweep");
  auto c = tiny("sweep");
  c.epsilons = {0.0, 0.2};
  c.seeds = {0, 1};
  c.analysis.joint_reference = false;
  RunOptions o;
  o.output_dir = root.string();
  o.deterministic = true;
  run_experiment(c, o);
  const auto units = run_units(root);
  REQUIRE(units.size() == 4);
  CHECK(units[3] == root / "eps-0.2" / "seed-1");
  std::ifstream mf(units[3] / "manifest.json");
  CHECK(json::parse(mf).at("subspace_method") == "regression");
  report(root);
  CHECK(fs::exists(root / "report" / "kstar_units.svg"));
  CHECK(fs::exists(root / "report" / "eps-0.2" / "seed-1" / "cev.svg"));
  CHECK(read_csv(root / "report" / "summary.csv").rows.size() == 4);
  CHECK(summarize_unit(units[3]).epsilon == 0.2);

  const fs::path chain_dir = scratch("chain");
  auto ch = tiny("chain");
  ch.process = conditional_chain({{{FactorSpec::sns_of(0.5, 0.5)}},
                                  {{FactorSpec::mess3_of(0.6, 0.15), FactorSpec::mess3_of(0.79, 0.11)}}})
                   .spec();
  o.output_dir = chain_dir.string();
  run_experiment(ch, o);
  const auto ov = read_csv(chain_dir / "overlap.csv");
  CHECK(ov.rows.size() == 4);
  CHECK(read_csv(chain_dir / "additivity.csv").rows.empty());

  const fs::path rnn_dir = scratch("rnn");
  auto rn = tiny("rnn");
  rn.model.arch = nn::Arch::kRnn;
  o.output_dir = rnn_dir.string();
  run_experiment(rn, o);
  CHECK(summarize_unit(rnn_dir).final_step == 30);
}

TEST_CASE("generate writes dumps") {
  const fs::path dir = scratch("gen");
  RunOptions o;
  o.seed = 5;
  generate(tiny("gen"), dir, 64, true, o);
  std::ifstream in(dir / "data" / "tokens.bin", std::ios::binary);
  const auto tokens = read_dump(in);
  REQUIRE(tokens.size() == 1);
  const auto p = ComposedProcess(tiny("gen").process);
  CHECK(tokens[0].as_ints() == sample_sequences(p, 64, 8, 5, true).tokens);
  std::ifstream tin(dir / "data" / "targets.bin", std::ios::binary);
  const auto targets = read_dump(tin);
  REQUIRE(targets.size() == 2);
  CHECK(targets[1].shape() == std::vector<std::int64_t>{64, 8, 9});
  CHECK(fs::exists(dir / "manifest.json"));
}
