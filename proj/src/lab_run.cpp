#include "lab.hpp"

#include "datagen.hpp"
#include "parallel.hpp"
#include "philox.hpp"
#include "process_json.hpp"
#include "tensor_io.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#ifndef FLAB_VERSION
#define FLAB_VERSION "0.0.0"
#endif

namespace flab::lab {

using nlohmann::json;

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string now_utc() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCode::kIo, "cannot write " + path.string());
  out << text;
  require(out.good(), ErrorCode::kIo, "write failed for " + path.string());
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCode::kIo, "cannot write " + path.string());
  return out;
}

void log_line(const RunOptions& opt, const std::string& msg) {
  if (opt.log) *opt.log << msg << std::endl;
}

std::string checkpoint_name(int step) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "step_%08d.ckpt", step);
  return buf;
}

std::vector<fs::path> list_checkpoints(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string n = e.path().filename().string();
    if (n.rfind("step_", 0) == 0 && e.path().extension() == ".ckpt") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string config_hash(const ExperimentConfig& cfg) { return sha256_hex(config_to_json(cfg).dump()); }

// Final-block residual activations at data positions 1..L, one row per
// (sequence, position) in target order.
Mat final_block_activations(const nn::SequenceModel<float>& m, std::span<const std::int32_t> tokens, int n_seqs,
                            int width, int length, bool bos) {
  const std::string name = "resid_post." + std::to_string(m.config().n_layers - 1);
  Mat out(static_cast<Eigen::Index>(n_seqs) * length, m.config().d_model);
  constexpr int kChunk = 256;
  for (int lo = 0; lo < n_seqs; lo += kChunk) {
    const int hi = std::min(n_seqs, lo + kChunk);
    const nn::TokenBlock tb{hi - lo, width,
                            tokens.subspan(static_cast<std::size_t>(lo) * width, static_cast<std::size_t>(hi - lo) * width)};
    const auto fo = m.forward(tb, {name});
    const auto& act = fo.captures.at(name);
    for (int s = 0; s < hi - lo; ++s) {
      for (int l = 1; l <= length; ++l) {
        const int col = bos ? l : l - 1;
        out.row(static_cast<Eigen::Index>(lo + s) * length + (l - 1)) =
            act.row(static_cast<Eigen::Index>(s) * width + col).cast<double>();
      }
    }
  }
  return out;
}

struct VarySet {
  VaryOneDataset data;
  std::vector<int> groups;  // per activation row: group * L + position
};

struct CheckpointAnalysis {
  int step = 0;
  SpectrumReport spectrum;
  RegressionFit fit;
  std::vector<OverlapReport> overlaps;
  std::optional<AdditivityReport> additivity;
  std::optional<AttributionReport> attribution;
};

std::string resolve_method(const ExperimentConfig& cfg) {
  if (cfg.analysis.subspaces != "auto") return cfg.analysis.subspaces;
  return cfg.process.regime == Regime::kIndependent ? "vary-one" : "regression";
}

}  // namespace

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::kIo, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

const char* code_version() { return FLAB_VERSION; }

void write_manifest(const fs::path& dir, const json& extra) {
  const fs::path path = dir / "manifest.json";
  json m = json::object();
  if (fs::exists(path)) {
    std::ifstream in(path);
    try {
      m = json::parse(in);
    } catch (const json::exception&) {
      m = json::object();
    }
  }
  for (const auto& item : extra.items()) m[item.key()] = item.value();
  m["code_version"] = code_version();
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), dir);
    if (rel.filename() == "manifest.json" || *rel.begin() == "report") continue;
    files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  json inv = json::array();
  for (const auto& rel : files) {
    inv.push_back({{"path", rel.generic_string()},
                   {"bytes", fs::file_size(dir / rel)},
                   {"sha256", sha256_file(dir / rel)}});
  }
  m["files"] = inv;
  write_text(path, m.dump(2) + "\n");
}

void generate(const ExperimentConfig& cfg0, const fs::path& dir, int n_seqs, bool joint, const RunOptions& opt) {
  RunOptions o = opt;
  o.output_dir = dir.string();
  const ExperimentConfig cfg = resolve(cfg0, o);
  const bool bos = nn::uses_bos(cfg.model.arch);
  for (const auto& u : expand_units(cfg)) {
    const ComposedProcess p(u.cfg.process);
    fs::create_directories(u.dir / "data");
    const std::string started = now_utc();
    const auto batch = sample_sequences(p, n_seqs, u.cfg.train.seq_len, u.cfg.seeds.front(), bos, o.threads);
    const auto targets = ground_truth_targets(p, batch, joint, o.threads);
    {
      auto out = open_out(u.dir / "data" / "tokens.bin");
      write_batch(out, batch);
    }
    {
      auto out = open_out(u.dir / "data" / "targets.bin");
      write_targets(out, targets, batch, false);
      if (joint) write_targets(out, targets, batch, true);
    }
    ExperimentConfig saved = u.cfg;
    saved.output_dir.clear();
    write_text(u.dir / "config.json", config_to_json(saved).dump(2) + "\n");
    write_manifest(u.dir, {{"name", u.cfg.name},
                           {"config_hash", config_hash(saved)},
                           {"process", batch.fingerprint},
                           {"seed", u.cfg.seeds.front()},
                           {"status", "generated"},
                           {"started", started},
                           {"finished", now_utc()}});
    log_line(opt, "[" + u.label + "] wrote " + std::to_string(n_seqs) + " sequences to " + (u.dir / "data").string());
  }
}

void train_run(const RunUnit& unit, const RunOptions& opt) {
  ExperimentConfig cfg = unit.cfg;
  cfg.output_dir.clear();
  const fs::path dir = unit.dir;
  fs::create_directories(dir / "checkpoints");
  for (const auto& old : list_checkpoints(dir / "checkpoints")) fs::remove(old);
  write_text(dir / "config.json", config_to_json(cfg).dump(2) + "\n");
  const std::string started = now_utc();
  json base{{"name", cfg.name},
            {"label", unit.label},
            {"config_hash", config_hash(cfg)},
            {"process", process_fingerprint(cfg.process)},
            {"seed", cfg.seeds.front()},
            {"deterministic", cfg.train.deterministic},
            {"started", started}};
  json pending = base;
  pending["status"] = "training";
  write_manifest(dir, pending);

  const ComposedProcess p(cfg.process);
  auto model = nn::build_model<float>(cfg.model);
  auto csv = open_out(dir / "training.csv");
  csv << "step,loss,lr,wall_ms\n";
  const auto on_checkpoint = [&](const nn::CheckpointRecord& r, const nn::SequenceModel<float>& m) {
    nn::save_checkpoint((dir / "checkpoints" / checkpoint_name(r.step)).string(), m, r.step, r.loss);
    csv << r.step << ',' << num(r.loss) << ',' << num(r.lr) << ',' << num(r.wall_ms) << '\n';
    csv.flush();
    log_line(opt, "[" + unit.label + "] step " + std::to_string(r.step) + " loss " + num(r.loss));
  };
  try {
    nn::train<float>(*model, p, cfg.train, on_checkpoint, (dir / "checkpoints" / "diverged.ckpt").string());
  } catch (const Error& e) {
    csv.close();
    base["status"] = e.code() == ErrorCode::kTrainingDiverged ? "diverged" : "failed";
    base["error"] = e.what();
    base["finished"] = now_utc();
    write_manifest(dir, base);
    throw;
  }
  csv.close();
  base["status"] = "trained";
  base["finished"] = now_utc();
  write_manifest(dir, base);
}

void analyze_run(const fs::path& dir, const RunOptions& opt) {
  require(fs::exists(dir / "config.json"), ErrorCode::kIo, "no config.json in " + dir.string());
  const ExperimentConfig cfg = load_config(dir / "config.json");
  const auto& an = cfg.analysis;
  const ComposedProcess p(cfg.process);
  const int L = cfg.train.seq_len;
  const bool bos = nn::uses_bos(cfg.model.arch);
  const int n_factors = p.n_factors();
  const auto ckpts = list_checkpoints(dir / "checkpoints");
  require(!ckpts.empty(), ErrorCode::kIo, "no checkpoints under " + (dir / "checkpoints").string());
  const int threads = std::max(1, opt.threads);

  const auto eval = sample_sequences(p, an.eval_seqs, L, an.eval_seed, bos, threads);
  const auto targets = ground_truth_targets(p, eval, an.joint_reference, threads);
  const Mat y = Eigen::Map<const Mat>(targets.factored.data(), static_cast<Eigen::Index>(eval.n_seqs) * L,
                                      targets.factored_dim);
  {
    auto gt = open_out(dir / "ground_truth.csv");
    gt << "kind,j,lambda,cev\n";
    auto emit = [&](const char* kind, const SpectrumReport& s) {
      const auto curve = cev_curve(s);
      for (int j = 0; j < s.dim(); ++j) {
        gt << kind << ',' << j + 1 << ',' << num(s.eigenvalues[static_cast<std::size_t>(j)]) << ','
           << num(curve[static_cast<std::size_t>(j)]) << '\n';
      }
    };
    emit("factored", pca_spectrum(y));
    if (an.joint_reference) {
      emit("joint", pca_spectrum(Eigen::Map<const Mat>(targets.joint.data(), y.rows(), targets.joint_dim)));
    }
  }

  const std::string method = resolve_method(cfg);
  std::vector<VarySet> vary;
  if (method == "vary-one") {
    for (int n = 0; n < n_factors; ++n) {
      VarySet v;
      v.data = vary_one_dataset(p, n, an.vary_groups, an.vary_variants, L, mix_seed(an.eval_seed, 100 + n), bos);
      for (int g = 0; g < v.data.n_groups; ++g)
        for (int r = 0; r < v.data.n_variants; ++r)
          for (int l = 0; l < L; ++l) v.groups.push_back(g * L + l);
      vary.push_back(std::move(v));
    }
  }

  std::vector<CheckpointAnalysis> results(ckpts.size());
  parallel_for(static_cast<int>(ckpts.size()), threads, [&](int lo, int hi) {
    for (int i = lo; i < hi; ++i) {
      nn::LoadedCheckpoint info;
      const auto model = nn::load_checkpoint<float>(ckpts[static_cast<std::size_t>(i)].string(), &info);
      auto& r = results[static_cast<std::size_t>(i)];
      r.step = info.step;
      const Mat a = final_block_activations(*model, eval.tokens, eval.n_seqs, eval.width(), L, bos);
      r.spectrum = pca_spectrum(a);
      r.fit = fit_linear_readout(a, y, p.factor_dims(), an.rcond_grid, an.folds);
      std::vector<SubspaceBasis> bases;
      if (method == "vary-one") {
        std::vector<SpectrumReport> per_factor;
        CovarianceAccumulator pooled(cfg.model.d_model);
        for (int n = 0; n < n_factors; ++n) {
          const auto& v = vary[static_cast<std::size_t>(n)];
          const Mat acts = final_block_activations(*model, v.data.tokens, v.data.n_rows(), v.data.width(), L, bos);
          const Mat centered = center_groups(acts, v.groups);
          per_factor.push_back(pca_spectrum(centered, false));
          pooled.add_rows(centered);
          bases.push_back(vary_one_subspace(acts, v.groups, n, an.overlap_k));
        }
        r.additivity = dimensionality_additivity(per_factor, pooled.spectrum(false), an.cev_p);
      } else if (method == "regression") {
        bases = regression_subspaces(r.fit);
      }
      if (bases.size() >= 2) r.overlaps = pairwise_overlaps(bases);
      if (an.attribution) {
        const Mat e = model->embedding_matrix().topRows(p.codec().n_tokens()).cast<double>();
        r.attribution = embedding_factor_attribution(e, p.codec());
      }
    }
  });

  auto header = [&](std::ostream& os, const std::string& lead, const std::string& per, const std::string& tail) {
    os << lead;
    for (int n = 0; n < n_factors; ++n) os << ',' << per << n;
    os << tail << '\n';
  };
  auto cev_out = open_out(dir / "cev.csv");
  auto kstar_out = open_out(dir / "kstar.csv");
  auto reg_out = open_out(dir / "regression.csv");
  auto ov_out = open_out(dir / "overlap.csv");
  auto add_out = open_out(dir / "additivity.csv");
  auto attr_out = open_out(dir / "attribution.csv");
  cev_out << "step,j,lambda,cev\n";
  kstar_out << "step,k_star,rank\n";
  reg_out << "step,rmse_total,r2_total";
  for (int n = 0; n < n_factors; ++n) reg_out << ",rmse_f" << n;
  for (int n = 0; n < n_factors; ++n) reg_out << ",r2_f" << n;
  reg_out << ",rcond\n";
  ov_out << "step,factor_a,factor_b,k,score\n";
  header(add_out, "step", "k_f", ",sum,union,gap");
  header(attr_out, "step,sv_index,sigma", "attr_f", "");

  for (const auto& r : results) {
    const auto curve = cev_curve(r.spectrum);
    for (int j = 0; j < r.spectrum.dim(); ++j) {
      cev_out << r.step << ',' << j + 1 << ',' << num(r.spectrum.eigenvalues[static_cast<std::size_t>(j)]) << ','
              << num(curve[static_cast<std::size_t>(j)]) << '\n';
    }
    kstar_out << r.step << ',' << effective_dim(r.spectrum, an.cev_p) << ',' << numerical_rank(r.spectrum) << '\n';
    reg_out << r.step << ',' << num(r.fit.rmse) << ',' << num(r.fit.r2);
    for (double v : r.fit.block_rmse) reg_out << ',' << num(v);
    for (double v : r.fit.block_r2) reg_out << ',' << num(v);
    reg_out << ',' << num(r.fit.rcond) << '\n';
    for (const auto& o : r.overlaps) {
      ov_out << r.step << ',' << o.a << ',' << o.b << ',' << std::min(o.k_a, o.k_b) << ',' << num(o.score) << '\n';
    }
    if (r.additivity) {
      add_out << r.step;
      for (int k : r.additivity->per_factor) add_out << ',' << k;
      add_out << ',' << r.additivity->sum << ',' << r.additivity->union_dim << ',' << r.additivity->gap << '\n';
    }
    if (r.attribution) {
      const auto& at = *r.attribution;
      for (Eigen::Index j = 0; j < at.attribution.rows(); ++j) {
        attr_out << r.step << ',' << j + 1 << ',' << num(at.singular_values[static_cast<std::size_t>(j)]);
        for (int n = 0; n < n_factors; ++n) attr_out << ',' << num(at.attribution(j, n));
        attr_out << '\n';
      }
    }
  }
  for (auto* s : {&cev_out, &kstar_out, &reg_out, &ov_out, &add_out, &attr_out}) {
    s->close();
    require(!s->fail(), ErrorCode::kIo, "failed writing analysis files under " + dir.string());
  }
  write_manifest(dir, {{"status", "analyzed"}, {"subspace_method", method}, {"analyzed", now_utc()}});
  log_line(opt, "analyzed " + std::to_string(ckpts.size()) + " checkpoints in " + dir.string());
}

namespace {

std::vector<RunUnit> prepare_root(const ExperimentConfig& cfg, fs::path& root) {
  root = output_root(cfg);
  fs::create_directories(root);
  auto units = expand_units(cfg);
  if (units.size() > 1) {
    write_text(root / "config.json", config_to_json(cfg).dump(2) + "\n");
    json list = json::array();
    for (const auto& u : units) {
      list.push_back({{"label", u.label},
                      {"dir", fs::relative(u.dir, root).generic_string()},
                      {"epsilon", u.cfg.process.epsilon},
                      {"seed", u.cfg.seeds.front()}});
    }
    write_text(root / "units.json", list.dump(2) + "\n");
  }
  return units;
}

}  // namespace

fs::path run_experiment(const ExperimentConfig& cfg0, const RunOptions& opt) {
  fs::path root;
  for (const auto& u : prepare_root(resolve(cfg0, opt), root)) {
    train_run(u, opt);
    analyze_run(u.dir, opt);
  }
  return root;
}

fs::path train_experiment(const ExperimentConfig& cfg0, const RunOptions& opt) {
  fs::path root;
  for (const auto& u : prepare_root(resolve(cfg0, opt), root)) train_run(u, opt);
  return root;
}

void analyze_experiment(const fs::path& root, const RunOptions& opt) {
  require(fs::is_directory(root), ErrorCode::kIo, "no run directory at " + root.string());
  for (const auto& dir : run_units(root)) analyze_run(dir, opt);
}

std::vector<fs::path> run_units(const fs::path& root) {
  const fs::path index = root / "units.json";
  if (!fs::exists(index)) return {root};
  std::ifstream in(index);
  json list;
  try {
    list = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::kIo, index.string() + ": " + e.what());
  }
  std::vector<fs::path> out;
  for (const auto& u : list) out.push_back(root / u.at("dir").get<std::string>());
  return out;
}

}  // namespace flab::lab
