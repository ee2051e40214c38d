#include "factorlab/factorlab.h"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

struct Common {
  std::optional<std::uint64_t> seed;
  std::string out;
  bool deterministic = false;
  int threads = 1;
  bool verbose = false;
};

struct Source {
  std::string config;
  std::string preset;
  std::optional<int> steps;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--seed", c.seed, "Replace the config's seed list with this seed");
  app->add_option("--out", c.out, "Output directory");
  app->add_flag("--deterministic", c.deterministic, "Zero wall-clock columns so reruns are byte-identical");
  app->add_option("--threads", c.threads, "Worker threads")->check(CLI::PositiveNumber);
  app->add_flag("-v,--verbose", c.verbose, "Progress on stderr");
}

void add_source(CLI::App* app, Source& s) {
  auto* cfg = app->add_option("--config", s.config, "Experiment config (JSON, comments allowed)");
  auto* pre = app->add_option("--preset", s.preset, "Named preset");
  cfg->excludes(pre);
  app->add_option("--steps", s.steps, "Override train.steps")->check(CLI::PositiveNumber);
}

int report_error(flab_status s) {
  std::fprintf(stderr, "flab: error (%s): %s\n", flab_status_name(s), flab_last_error());
  return 1;
}

flab_run_options run_options(const Common& c, const Source* s) {
  flab_run_options o;
  flab_run_options_init(&o);
  o.threads = c.threads;
  o.deterministic = c.deterministic ? 1 : 0;
  if (c.seed) {
    o.has_seed = 1;
    o.seed = *c.seed;
  }
  if (s && s->steps) o.steps = *s->steps;
  o.output_dir = c.out.empty() ? nullptr : c.out.c_str();
  o.verbose = c.verbose ? 1 : 0;
  return o;
}

flab_status load(const Source& s, flab_config** cfg) {
  if (!s.config.empty()) return flab_config_load(s.config.c_str(), cfg);
  if (!s.preset.empty()) return flab_config_from_preset(s.preset.c_str(), cfg);
  std::fprintf(stderr, "flab: one of --config or --preset is required\n");
  return FLAB_INVALID_ARGUMENT;
}

std::string take(char* s) {
  std::string out = s ? s : "";
  flab_string_free(s);
  return out;
}

void print_line(const char* line, void*) {
  std::printf("%s\n", line);
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Factored-belief lab: synthetic processes, sequence models and their analysis"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(flab_version()));

  Common gen_c, train_c, analyze_c, report_c, verify_c, rep_c, run_c, cfg_c;
  Source gen_s, train_s, run_s, cfg_s;

  auto* gen = app.add_subcommand("generate", "Sample token sequences and ground-truth belief targets");
  add_common(gen, gen_c);
  add_source(gen, gen_s);
  int n_seqs = 1000;
  bool joint = false;
  gen->add_option("-n,--n-seqs", n_seqs, "Sequences to sample")->check(CLI::PositiveNumber);
  gen->add_flag("--joint", joint, "Also write joint targets");

  auto* train = app.add_subcommand("train", "Train every unit of an experiment and write checkpoints");
  add_common(train, train_c);
  add_source(train, train_s);

  std::string analyze_dir;
  auto* analyze = app.add_subcommand("analyze", "Analyze the checkpoints of a trained run");
  add_common(analyze, analyze_c);
  analyze->add_option("run_dir", analyze_dir, "Run directory")->required();

  std::string report_dir;
  auto* rep = app.add_subcommand("report", "Render figures and summary tables for an analyzed run");
  add_common(rep, report_c);
  rep->add_option("run_dir", report_dir, "Run directory")->required();

  auto* run = app.add_subcommand("run", "Train, analyze and report in one go");
  add_common(run, run_c);
  add_source(run, run_s);

  std::string group = "all";
  std::string json_path;
  std::optional<int> verify_steps;
  std::vector<std::uint64_t> verify_seeds;
  auto* ver = app.add_subcommand("verify", "Run acceptance checks: oracles, ground-truth-dims, train-smoke or all");
  add_common(ver, verify_c);
  ver->add_option("group", group, "Check group")
      ->check(CLI::IsMember({"oracles", "ground-truth-dims", "train-smoke", "all"}));
  ver->add_option("--json", json_path, "Write machine-readable results here");
  ver->add_option("--steps", verify_steps, "Override the train-smoke step count")->check(CLI::PositiveNumber);
  ver->add_option("--seeds", verify_seeds, "Seeds for the train-smoke runs")->delimiter(',');

  std::string which;
  auto* replicate = app.add_subcommand("replicate", "Run a named experiment end to end");
  add_common(replicate, rep_c);
  std::optional<int> rep_steps;
  replicate->add_option("experiment", which, "independent, chain or noisy-grid")
      ->required()
      ->check(CLI::IsMember({"independent", "chain", "noisy-grid"}));
  replicate->add_option("--steps", rep_steps, "Override train.steps")->check(CLI::PositiveNumber);

  auto* config = app.add_subcommand("config", "Print a resolved config, or list presets");
  add_common(config, cfg_c);
  add_source(config, cfg_s);
  bool list = false;
  config->add_flag("--list", list, "List preset names");

  CLI11_PARSE(app, argc, argv);

  flab_status st = FLAB_OK;

  if (*gen) {
    flab_config* cfg = nullptr;
    if ((st = load(gen_s, &cfg)) != FLAB_OK) return report_error(st);
    const auto o = run_options(gen_c, &gen_s);
    char* dir = nullptr;
    st = flab_generate(cfg, &o, n_seqs, joint ? 1 : 0, &dir);
    flab_config_free(cfg);
    if (st != FLAB_OK) return report_error(st);
    std::printf("%s\n", take(dir).c_str());
    return 0;
  }

  if (*train || *run) {
    const Common& c = *train ? train_c : run_c;
    const Source& s = *train ? train_s : run_s;
    flab_config* cfg = nullptr;
    if ((st = load(s, &cfg)) != FLAB_OK) return report_error(st);
    const auto o = run_options(c, &s);
    char* dir = nullptr;
    st = *train ? flab_train(cfg, &o, &dir) : flab_run(cfg, &o, &dir);
    flab_config_free(cfg);
    if (st != FLAB_OK) return report_error(st);
    const std::string root = take(dir);
    if (*run && (st = flab_report(root.c_str())) != FLAB_OK) return report_error(st);
    std::printf("%s\n", root.c_str());
    return 0;
  }

  if (*analyze) {
    const auto o = run_options(analyze_c, nullptr);
    if ((st = flab_analyze(analyze_dir.c_str(), &o)) != FLAB_OK) return report_error(st);
    return 0;
  }

  if (*rep) {
    if ((st = flab_report(report_dir.c_str())) != FLAB_OK) return report_error(st);
    std::printf("%s/report\n", report_dir.c_str());
    return 0;
  }

  if (*ver) {
    flab_verify_options vo;
    flab_verify_options_init(&vo);
    vo.threads = verify_c.threads;
    vo.deterministic = verify_c.deterministic ? 1 : 0;
    vo.work_dir = verify_c.out.empty() ? nullptr : verify_c.out.c_str();
    if (verify_steps) vo.steps = *verify_steps;
    if (verify_c.seed && verify_seeds.empty()) verify_seeds.push_back(*verify_c.seed);
    vo.seeds = verify_seeds.data();
    vo.n_seeds = verify_seeds.size();
    vo.verbose = verify_c.verbose ? 1 : 0;
    char* js = nullptr;
    int all = 0;
    if ((st = flab_verify(group.c_str(), &vo, print_line, nullptr, &js, &all)) != FLAB_OK) return report_error(st);
    const std::string text = take(js);
    if (!json_path.empty()) {
      std::ofstream f(json_path);
      f << text << "\n";
      if (!f) {
        std::fprintf(stderr, "flab: error (io): cannot write %s\n", json_path.c_str());
        return 1;
      }
    }
    std::printf("%s\n", all ? "all checks passed" : "some checks failed");
    return all ? 0 : 1;
  }

  if (*replicate) {
    flab_config* cfg = nullptr;
    if ((st = flab_config_from_preset(which.c_str(), &cfg)) != FLAB_OK) return report_error(st);
    Source s;
    s.steps = rep_steps;
    const auto o = run_options(rep_c, &s);
    char* dir = nullptr;
    st = flab_run(cfg, &o, &dir);
    flab_config_free(cfg);
    if (st != FLAB_OK) return report_error(st);
    const std::string root = take(dir);
    if ((st = flab_report(root.c_str())) != FLAB_OK) return report_error(st);
    std::printf("%s\n", root.c_str());
    return 0;
  }

  if (*config) {
    if (list) {
      char* names = nullptr;
      if ((st = flab_preset_names(&names)) != FLAB_OK) return report_error(st);
      std::printf("%s", take(names).c_str());
      return 0;
    }
    flab_config* cfg = nullptr;
    if ((st = load(cfg_s, &cfg)) != FLAB_OK) return report_error(st);
    const auto o = run_options(cfg_c, &cfg_s);
    char* js = nullptr;
    st = flab_config_resolve(cfg, &o, &js);
    flab_config_free(cfg);
    if (st != FLAB_OK) return report_error(st);
    std::printf("%s\n", take(js).c_str());
    return 0;
  }
  return 0;
}
