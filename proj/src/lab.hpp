#pragma once

#include "analysis.hpp"
#include "compose.hpp"
#include "seqmodel/train.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace flab::lab {

namespace fs = std::filesystem;

struct AnalysisConfig {
  int eval_seqs = 1000;             // contexts for CEV and regression
  std::uint64_t eval_seed = 12345;
  std::string subspaces = "auto";   // auto | vary-one | regression | none
  int vary_groups = 32;
  int vary_variants = 16;
  int overlap_k = 2;
  double cev_p = 0.95;
  int folds = 10;
  std::vector<double> rcond_grid = kDefaultRcondGrid;
  bool attribution = true;
  bool joint_reference = true;      // PCA of exact joint targets in ground_truth.csv
};

struct ExperimentConfig {
  std::string name = "experiment";
  ComposedSpec process;
  std::vector<double> epsilons;  // noise sweep applied to the process; empty = none
  nn::ModelConfig model;         // vocab and context follow from process and train.seq_len
  nn::TrainConfig train;
  AnalysisConfig analysis;
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir;        // empty: runs/<name>
};

nlohmann::json config_to_json(const ExperimentConfig& c);
// Unknown keys and type errors are reported with their field path.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const fs::path& path);

std::vector<std::string> preset_names();
ExperimentConfig preset(const std::string& name);

struct RunOptions {
  int threads = 1;
  bool deterministic = false;
  std::optional<std::uint64_t> seed;  // replaces the seed list
  std::optional<int> steps;
  std::string output_dir;
  std::ostream* log = nullptr;
};

// Applies overrides and derives model vocab/context; throws kConfig on
// inconsistent settings.
ExperimentConfig resolve(ExperimentConfig cfg, const RunOptions& opt);

// One (epsilon, seed) cell of a resolved config.
struct RunUnit {
  std::string label;
  ExperimentConfig cfg;  // single seed, no sweep
  fs::path dir;
};
std::vector<RunUnit> expand_units(const ExperimentConfig& cfg);
fs::path output_root(const ExperimentConfig& cfg);

// data/tokens.bin and data/targets.bin (factored, then joint when requested).
void generate(const ExperimentConfig& cfg, const fs::path& dir, int n_seqs, bool joint, const RunOptions& opt);

// config.json, training.csv, checkpoints/ and manifest.json.
void train_run(const RunUnit& unit, const RunOptions& opt);
// Reads config.json and checkpoints/, writes ground_truth.csv, cev.csv,
// kstar.csv, regression.csv, overlap.csv, additivity.csv, attribution.csv.
void analyze_run(const fs::path& dir, const RunOptions& opt);
// Every unit of cfg: train then analyze. Returns the root directory.
fs::path run_experiment(const ExperimentConfig& cfg, const RunOptions& opt);
// The two halves of run_experiment.
fs::path train_experiment(const ExperimentConfig& cfg, const RunOptions& opt);
void analyze_experiment(const fs::path& root, const RunOptions& opt);

// Unit directories below a run root (the root itself for single runs).
std::vector<fs::path> run_units(const fs::path& root);

struct UnitSummary {
  std::string label;
  double epsilon = 0.0;
  std::uint64_t seed = 0;
  int final_step = 0;
  double final_loss = 0.0;
  int kstar = 0;              // final checkpoint activations
  int kstar_factored = 0;     // exact targets
  int kstar_joint = 0;
  std::vector<double> r2;     // per factor, final checkpoint
  double r2_total = 0.0;
  double overlap_init = 0.0;  // mean pairwise, first checkpoint
  double overlap_final = 0.0;
  bool has_overlap = false;
};
UnitSummary summarize_unit(const fs::path& dir);

// report/ under the run root: SVG figures plus summary.csv and summary.md.
// Missing inputs are listed in the thrown error.
void report(const fs::path& root);

const char* code_version();
void write_manifest(const fs::path& dir, const nlohmann::json& extra);
std::string sha256_file(const fs::path& path);

// Minimal CSV reader for the files this module writes.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  int col(const std::string& name) const;
  double num(std::size_t row, const std::string& name) const;
};
Table read_csv(const fs::path& path);

}  // namespace flab::lab
